"""Graph structures for causal discovery.

Directed acyclic graphs, partially directed graphs (with conflict markers),
and missingness DAGs over substantive variables plus response indicators.
All graph values are immutable after construction; node iteration order is
fixed when the graph is built so that downstream algorithms are deterministic.
"""

from __future__ import annotations

from collections import deque
from itertools import combinations
from typing import Iterable, Mapping, Sequence


Node = str
Edge = tuple[Node, Node]


class GraphError(ValueError):
    """Raised for malformed graphs or invalid graph queries."""


def _as_nodeset(x) -> frozenset:
    if isinstance(x, str):
        return frozenset([x])
    return frozenset(x)


class Dag:
    """Directed acyclic graph over named nodes.

    Nodes keep their construction order; edges are (parent, child) pairs.
    At most one edge per unordered pair, no self loops, acyclicity checked
    on construction.
    """

    __slots__ = ("nodes", "edges", "_index", "_parents", "_children", "_order")

    def __init__(self, nodes: Sequence[Node] | None, edges: Iterable[Edge] = ()):
        edges = list(edges)
        if nodes is None:
            seen: dict[Node, None] = {}
            for a, b in edges:
                seen.setdefault(a, None)
                seen.setdefault(b, None)
            nodes = list(seen)
        nodes = list(nodes)
        if len(set(nodes)) != len(nodes):
            raise GraphError("duplicate node names")
        self.nodes: tuple[Node, ...] = tuple(nodes)
        self._index: dict[Node, int] = {v: i for i, v in enumerate(self.nodes)}
        edge_set = set()
        pairs = set()
        for a, b in edges:
            if a not in self._index or b not in self._index:
                raise GraphError(f"edge ({a}, {b}) references unknown node")
            if a == b:
                raise GraphError(f"self loop at {a}")
            key = frozenset((a, b))
            if key in pairs:
                raise GraphError(f"multiple edges between {a} and {b}")
            pairs.add(key)
            edge_set.add((a, b))
        self.edges: frozenset[Edge] = frozenset(edge_set)
        n = len(self.nodes)
        self._parents: list[list[int]] = [[] for _ in range(n)]
        self._children: list[list[int]] = [[] for _ in range(n)]
        for a, b in sorted(edge_set, key=lambda e: (self._index[e[0]], self._index[e[1]])):
            self._parents[self._index[b]].append(self._index[a])
            self._children[self._index[a]].append(self._index[b])
        self._order = self._toposort()

    def _toposort(self) -> tuple[int, ...]:
        n = len(self.nodes)
        indeg = [len(p) for p in self._parents]
        queue = deque(i for i in range(n) if indeg[i] == 0)
        order = []
        while queue:
            u = queue.popleft()
            order.append(u)
            for w in self._children[u]:
                indeg[w] -= 1
                if indeg[w] == 0:
                    queue.append(w)
        if len(order) != n:
            cyclic = [self.nodes[i] for i in range(n) if indeg[i] > 0]
            raise GraphError(f"graph contains a directed cycle among {cyclic}")
        return tuple(order)

    # -- basic queries -------------------------------------------------

    def __contains__(self, v: Node) -> bool:
        return v in self._index

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Dag)
            and set(self.nodes) == set(other.nodes)
            and self.edges == other.edges
        )

    def __hash__(self):
        return hash((frozenset(self.nodes), self.edges))

    def __repr__(self):
        return f"Dag(nodes={list(self.nodes)}, edges={sorted(self.edges)})"

    def index(self, v: Node) -> int:
        try:
            return self._index[v]
        except KeyError:
            raise GraphError(f"unknown node {v!r}") from None

    def parents(self, v: Node) -> frozenset:
        return frozenset(self.nodes[i] for i in self._parents[self.index(v)])

    def children(self, v: Node) -> frozenset:
        return frozenset(self.nodes[i] for i in self._children[self.index(v)])

    def adjacent(self, v: Node) -> frozenset:
        i = self.index(v)
        return frozenset(self.nodes[j] for j in self._parents[i] + self._children[i])

    def topological_order(self) -> tuple[Node, ...]:
        return tuple(self.nodes[i] for i in self._order)

    def subgraph(self, keep: Iterable[Node]) -> "Dag":
        keep_set = set(keep)
        nodes = [v for v in self.nodes if v in keep_set]
        edges = [(a, b) for a, b in self.edges if a in keep_set and b in keep_set]
        return Dag(nodes, edges)

    def skeleton(self) -> frozenset[frozenset]:
        return frozenset(frozenset(e) for e in self.edges)


def skeleton(g) -> frozenset[frozenset]:
    """Unordered adjacency pairs of a Dag or Pdag."""
    return g.skeleton()


# -- d-separation ------------------------------------------------------


def _ancestor_indices(g: Dag, seeds: Iterable[int]) -> set[int]:
    out: set[int] = set()
    stack = list(seeds)
    while stack:
        u = stack.pop()
        if u in out:
            continue
        out.add(u)
        stack.extend(g._parents[u])
    return out


def _reachable_indices(g: Dag, sources: Iterable[int], z: set[int]) -> set[int]:
    """Nodes reachable from ``sources`` along paths open given ``z``.

    Reachability in the Bayes-ball sense: a node is returned if an open path
    ends there in either travel direction.
    """
    anc_z = _ancestor_indices(g, z)
    # state: (node, came_from_child). Sources start as if entered from a child.
    visited: set[tuple[int, bool]] = set()
    reach: set[int] = set()
    frontier = deque((s, True) for s in sources)
    while frontier:
        u, up = frontier.popleft()
        if (u, up) in visited:
            continue
        visited.add((u, up))
        if u not in z:
            reach.add(u)
        if up:
            if u not in z:
                for p in g._parents[u]:
                    frontier.append((p, True))
                for c in g._children[u]:
                    frontier.append((c, False))
        else:
            if u not in z:
                for c in g._children[u]:
                    frontier.append((c, False))
            if u in anc_z:
                for p in g._parents[u]:
                    frontier.append((p, True))
    return reach


def d_separated(g: Dag, xs, ys, zs=()) -> bool:
    """True iff every path between ``xs`` and ``ys`` is blocked given ``zs``."""
    xs, ys, zs = _as_nodeset(xs), _as_nodeset(ys), _as_nodeset(zs)
    if xs & ys or xs & zs or ys & zs:
        raise GraphError("d-separation query requires pairwise disjoint node sets")
    xi = {g.index(v) for v in xs}
    yi = {g.index(v) for v in ys}
    zi = {g.index(v) for v in zs}
    if not xi or not yi:
        return True
    if len(yi) < len(xi):
        xi, yi = yi, xi
    reach = _reachable_indices(g, xi, zi)
    return not (reach & yi)


def d_separated_brute_force(g: Dag, xs, ys, zs=()) -> bool:
    """Path-enumeration oracle for d-separation; test use only."""
    xs, ys, zs = _as_nodeset(xs), _as_nodeset(ys), _as_nodeset(zs)
    if xs & ys or xs & zs or ys & zs:
        raise GraphError("d-separation query requires pairwise disjoint node sets")
    zi = {g.index(v) for v in zs}
    desc_cache: dict[int, set[int]] = {}

    def descendants(u: int) -> set[int]:
        if u not in desc_cache:
            out = set()
            stack = [u]
            while stack:
                w = stack.pop()
                if w in out:
                    continue
                out.add(w)
                stack.extend(g._children[w])
            desc_cache[u] = out
        return desc_cache[u]

    def path_open(path: list[int]) -> bool:
        for k in range(1, len(path) - 1):
            prev, mid, nxt = path[k - 1], path[k], path[k + 1]
            into_left = mid in g._children[prev] or prev in g._parents[mid]
            into_right = mid in g._children[nxt] or nxt in g._parents[mid]
            collider = (prev in g._parents[mid]) and (nxt in g._parents[mid])
            if collider:
                if not (descendants(mid) & zi):
                    return False
            else:
                if mid in zi:
                    return False
        return True

    adj = [set(g._parents[i]) | set(g._children[i]) for i in range(len(g.nodes))]
    targets = {g.index(v) for v in ys}

    def explore(path: list[int]) -> bool:
        u = path[-1]
        if u in targets and len(path) > 1:
            if path_open(path):
                return True
        for w in adj[u]:
            if w in path:
                continue
            path.append(w)
            if explore(path):
                path.pop()
                return True
            path.pop()
        return False

    for x in xs:
        if explore([g.index(x)]):
            return False
    return True


def markov_blanket(g: Dag, v: Node) -> frozenset:
    """Parents, children, and co-parents of ``v``'s children, excluding ``v``."""
    i = g.index(v)
    out = set(g._parents[i]) | set(g._children[i])
    for c in g._children[i]:
        out.update(g._parents[c])
    out.discard(i)
    return frozenset(g.nodes[j] for j in out)


# -- partially directed graphs ----------------------------------------


class Pdag:
    """Partially directed graph: directed, undirected and bidirected edges.

    Bidirected edges mark orientation conflicts; the three edge sets are
    disjoint on unordered pairs. A CPDAG-flagged Pdag has no bidirected edges.
    """

    __slots__ = ("nodes", "directed", "undirected", "bidirected", "is_cpdag", "_index")

    def __init__(
        self,
        nodes: Sequence[Node],
        directed: Iterable[Edge] = (),
        undirected: Iterable[Edge] = (),
        bidirected: Iterable[Edge] = (),
        is_cpdag: bool = False,
    ):
        nodes = list(nodes)
        if len(set(nodes)) != len(nodes):
            raise GraphError("duplicate node names")
        self.nodes: tuple[Node, ...] = tuple(nodes)
        self._index = {v: i for i, v in enumerate(self.nodes)}

        def norm(pairs):
            out = set()
            for a, b in pairs:
                if a not in self._index or b not in self._index:
                    raise GraphError(f"edge ({a}, {b}) references unknown node")
                if a == b:
                    raise GraphError(f"self loop at {a}")
                out.add((a, b))
            return out

        self.directed: frozenset[Edge] = frozenset(norm(directed))
        und = {self._sorted_pair(a, b) for a, b in norm(undirected)}
        bid = {self._sorted_pair(a, b) for a, b in norm(bidirected)}
        self.undirected: frozenset[Edge] = frozenset(und)
        self.bidirected: frozenset[Edge] = frozenset(bid)
        keys = [frozenset(e) for e in self.directed]
        keys += [frozenset(e) for e in und] + [frozenset(e) for e in bid]
        if len(keys) != len(set(keys)):
            raise GraphError("edge sets overlap on an unordered pair")
        if is_cpdag and self.bidirected:
            raise GraphError("a CPDAG cannot contain bidirected edges")
        self.is_cpdag = is_cpdag

    def _sorted_pair(self, a: Node, b: Node) -> Edge:
        return (a, b) if self._index[a] < self._index[b] else (b, a)

    @classmethod
    def from_dag(cls, g: Dag) -> "Pdag":
        return cls(g.nodes, directed=g.edges)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Pdag)
            and set(self.nodes) == set(other.nodes)
            and self.directed == other.directed
            and {frozenset(e) for e in self.undirected}
            == {frozenset(e) for e in other.undirected}
            and {frozenset(e) for e in self.bidirected}
            == {frozenset(e) for e in other.bidirected}
        )

    def __hash__(self):
        return hash(
            (
                frozenset(self.nodes),
                self.directed,
                frozenset(frozenset(e) for e in self.undirected),
                frozenset(frozenset(e) for e in self.bidirected),
            )
        )

    def __repr__(self):
        return (
            f"Pdag(directed={sorted(self.directed)}, undirected={sorted(self.undirected)},"
            f" bidirected={sorted(self.bidirected)})"
        )

    def skeleton(self) -> frozenset[frozenset]:
        out = {frozenset(e) for e in self.directed}
        out |= {frozenset(e) for e in self.undirected}
        out |= {frozenset(e) for e in self.bidirected}
        return frozenset(out)

    def adjacent(self, v: Node) -> frozenset:
        out = set()
        for a, b in self.directed:
            if a == v:
                out.add(b)
            elif b == v:
                out.add(a)
        for group in (self.undirected, self.bidirected):
            for a, b in group:
                if a == v:
                    out.add(b)
                elif b == v:
                    out.add(a)
        return frozenset(out)

    def edge_count(self) -> int:
        return len(self.directed) + len(self.undirected) + len(self.bidirected)


# -- Meek orientation rules --------------------------------------------

_UNDIR, _DIR, _BI = 0, 1, 2


def _marks_of(g: Pdag):
    """Mutable mark table: maps ordered pair to a mark kind.

    Directed a->b stored as marks[(a, b)] = _DIR; undirected/bidirected
    stored under both orders.
    """
    marks: dict[Edge, int] = {}
    for a, b in g.directed:
        marks[(a, b)] = _DIR
    for a, b in g.undirected:
        marks[(a, b)] = marks[(b, a)] = _UNDIR
    for a, b in g.bidirected:
        marks[(a, b)] = marks[(b, a)] = _BI
    return marks


def _pdag_from_marks(nodes, marks, is_cpdag=False) -> Pdag:
    directed, undirected, bidirected = [], [], []
    seen = set()
    for (a, b), kind in marks.items():
        key = frozenset((a, b))
        if key in seen:
            continue
        seen.add(key)
        if kind == _DIR:
            directed.append((a, b))
        elif kind == _UNDIR:
            undirected.append((a, b))
        else:
            bidirected.append((a, b))
    return Pdag(nodes, directed, undirected, bidirected, is_cpdag=is_cpdag)


def meek_orient(g: Pdag) -> Pdag:
    """Apply Meek's four orientation rules to a fixpoint.

    Bidirected (conflict) edges are never re-oriented and never trigger a
    rule, but they do count as adjacencies. No adjacency is added or removed.
    """
    marks = _marks_of(g)
    nodes = list(g.nodes)
    adj: dict[Node, set[Node]] = {v: set() for v in nodes}
    for key in g.skeleton():
        a, b = tuple(key)
        adj[a].add(b)
        adj[b].add(a)

    def is_undir(a, b):
        return marks.get((a, b)) == _UNDIR

    def is_dir(a, b):
        return marks.get((a, b)) == _DIR and (b, a) not in marks

    def orient(a, b):
        # a -- b becomes a -> b
        del marks[(b, a)]
        marks[(a, b)] = _DIR

    changed = True
    while changed:
        changed = False
        for b in nodes:
            for c in list(adj[b]):
                if not is_undir(b, c):
                    continue
                # Rule 1: a -> b -- c with a, c nonadjacent orients b -> c.
                fired = False
                for a in adj[b]:
                    if a != c and is_dir(a, b) and c not in adj[a]:
                        orient(b, c)
                        changed = fired = True
                        break
                if fired:
                    continue
                # Rule 2: b -> w -> c with b -- c orients b -> c.
                for w in adj[b]:
                    if w != c and is_dir(b, w) and is_dir(w, c):
                        orient(b, c)
                        changed = fired = True
                        break
                if fired:
                    continue
                # Rule 3: b -- c, b -- x, b -- y, x -> c, y -> c,
                # x, y nonadjacent orients b -> c.
                spouses = [
                    x for x in adj[b] if x != c and is_undir(b, x) and is_dir(x, c)
                ]
                for x, y in combinations(spouses, 2):
                    if y not in adj[x]:
                        orient(b, c)
                        changed = fired = True
                        break
                if fired:
                    continue
                # Rule 4: b -- c, b -- x, x -> w, w -> c, x, c nonadjacent
                # orients b -> c (otherwise c -> b forces a cycle or a new
                # v-structure at b).
                for x in adj[b]:
                    if x == c or not is_undir(b, x) or c in adj[x]:
                        continue
                    for w in adj[x]:
                        if w != b and w != c and is_dir(x, w) and is_dir(w, c):
                            orient(b, c)
                            changed = fired = True
                            break
                    if fired:
                        break
    return _pdag_from_marks(g.nodes, marks, is_cpdag=g.is_cpdag)


def cpdag_of(g: Dag) -> Pdag:
    """CPDAG of the Markov equivalence class of ``g``.

    Skeleton plus the v-structures of ``g``, closed under Meek's rules.
    """
    adj = {v: g.adjacent(v) for v in g.nodes}
    directed: set[Edge] = set()
    for y in g.nodes:
        pars = sorted(g.parents(y), key=g.index)
        for x, z in combinations(pars, 2):
            if z not in adj[x]:
                directed.add((x, y))
                directed.add((z, y))
    undirected = []
    for key in g.skeleton():
        a, b = sorted(key, key=g.index)
        if (a, b) not in directed and (b, a) not in directed:
            undirected.append((a, b))
    seed = Pdag(g.nodes, directed=directed, undirected=undirected)
    closed = meek_orient(seed)
    return Pdag(
        closed.nodes, closed.directed, closed.undirected, closed.bidirected, is_cpdag=True
    )


# -- missingness DAGs ---------------------------------------------------


class MissingnessDag:
    """DAG over substantive variables plus response indicators.

    ``governs`` maps each indicator node to the single substantive variable
    whose missingness it records. Directed edges from indicators into
    substantive nodes are rejected. Set-wise indicators are derived on the
    fly for queries, never stored.
    """

    __slots__ = ("base", "governs", "indicator_of")

    def __init__(self, base: Dag, governs: Mapping[Node, Node]):
        self.base = base
        self.governs = dict(governs)
        for r, v in self.governs.items():
            if r not in base or v not in base:
                raise GraphError(f"indicator mapping {r} -> {v} references unknown node")
            if v in self.governs:
                raise GraphError(f"indicator {r} governs another indicator {v}")
        if len(set(self.governs.values())) != len(self.governs):
            raise GraphError("a substantive variable has more than one indicator")
        substantive = set(base.nodes) - set(self.governs)
        for a, b in base.edges:
            if a in self.governs and b in substantive:
                raise GraphError(
                    f"response indicator {a} must not cause substantive variable {b}"
                )
        self.indicator_of = {v: r for r, v in self.governs.items()}

    @classmethod
    def from_indicator_naming(cls, base: Dag) -> "MissingnessDag":
        """Interpret nodes named ``R_<var>`` as indicators of ``<var>``."""
        governs = {}
        for v in base.nodes:
            if v.startswith("R_") and v[2:] in base:
                governs[v] = v[2:]
        return cls(base, governs)

    @property
    def substantive(self) -> tuple[Node, ...]:
        return tuple(v for v in self.base.nodes if v not in self.governs)

    @property
    def indicators(self) -> tuple[Node, ...]:
        return tuple(v for v in self.base.nodes if v in self.governs)

    def substantive_subgraph(self) -> Dag:
        return self.base.subgraph(self.substantive)

    def __eq__(self, other):
        return (
            isinstance(other, MissingnessDag)
            and self.base == other.base
            and self.governs == other.governs
        )

    def __repr__(self):
        return f"MissingnessDag(base={self.base!r}, governs={self.governs})"

    def with_setwise_indicator(self, variables) -> tuple[Dag, Node]:
        """Materialize the joint response indicator of ``variables``.

        Returns an augmented Dag containing a fresh node that is a child of
        exactly the variable-wise indicators of ``variables``, plus the name
        of that node. Intended for transient d-separation queries.
        """
        return self.with_indicator_child(setwise_indicator_parents(self, variables))

    def with_indicator_child(self, indicator_parents) -> tuple[Dag, Node]:
        """Augmented Dag with a fresh common child of the given indicators."""
        for r in indicator_parents:
            if r not in self.governs:
                raise GraphError(f"{r!r} is not a response indicator")
        name = "R*"
        while name in self.base:
            name += "*"
        nodes = list(self.base.nodes) + [name]
        edges = list(self.base.edges) + [(r, name) for r in sorted(indicator_parents)]
        return Dag(nodes, edges), name


def setwise_indicator_parents(mdag: MissingnessDag, variables) -> frozenset:
    """Variable-wise indicators governing the members of ``variables``.

    Only variables that actually carry missingness contribute; if the result
    is empty the joint indicator is the constant 1.
    """
    variables = _as_nodeset(variables)
    substantive = set(mdag.substantive)
    for v in variables:
        if v not in substantive:
            raise GraphError(f"{v!r} is not a substantive variable")
    return frozenset(
        mdag.indicator_of[v] for v in variables if v in mdag.indicator_of
    )


# -- text and DOT formats ----------------------------------------------


def format_pdag(g: Pdag) -> str:
    """One edge per line: ``A -> B``, ``A -- B``, ``A <-> B``; isolated
    nodes listed as ``node A``."""
    idx = {v: i for i, v in enumerate(g.nodes)}
    lines = []
    covered = set()
    for a, b in sorted(g.directed, key=lambda e: (idx[e[0]], idx[e[1]])):
        lines.append(f"{a} -> {b}")
        covered.update((a, b))
    for a, b in sorted(g.undirected, key=lambda e: (idx[e[0]], idx[e[1]])):
        lines.append(f"{a} -- {b}")
        covered.update((a, b))
    for a, b in sorted(g.bidirected, key=lambda e: (idx[e[0]], idx[e[1]])):
        lines.append(f"{a} <-> {b}")
        covered.update((a, b))
    for v in g.nodes:
        if v not in covered:
            lines.append(f"node {v}")
    return "\n".join(lines) + "\n"


def format_dag(g: Dag) -> str:
    return format_pdag(Pdag.from_dag(g))


def parse_pdag(text: str) -> Pdag:
    nodes: dict[Node, None] = {}
    directed, undirected, bidirected = [], [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "node" and len(parts) == 2:
            nodes.setdefault(parts[1], None)
            continue
        if len(parts) != 3:
            raise GraphError(f"line {lineno}: cannot parse {raw!r}")
        a, op, b = parts
        nodes.setdefault(a, None)
        nodes.setdefault(b, None)
        if op == "->":
            directed.append((a, b))
        elif op == "<-":
            directed.append((b, a))
        elif op == "--":
            undirected.append((a, b))
        elif op == "<->":
            bidirected.append((a, b))
        else:
            raise GraphError(f"line {lineno}: unknown edge mark {op!r}")
    return Pdag(list(nodes), directed, undirected, bidirected)


def parse_dag(text: str) -> Dag:
    g = parse_pdag(text)
    if g.undirected or g.bidirected:
        raise GraphError("expected a fully directed acyclic graph")
    return Dag(g.nodes, g.directed)


def parse_missingness_dag(text: str) -> MissingnessDag:
    """Parse the edge-list format with ``R_<var>`` indicator naming."""
    return MissingnessDag.from_indicator_naming(parse_dag(text))


def to_dot(g, name: str = "g") -> str:
    """DOT export; undirected edges as dir=none, bidirected as dir=both."""
    lines = [f"digraph {name} {{"]
    for v in g.nodes:
        lines.append(f'  "{v}";')
    if isinstance(g, Dag):
        directed, undirected, bidirected = sorted(g.edges), [], []
    else:
        idx = {v: i for i, v in enumerate(g.nodes)}
        key = lambda e: (idx[e[0]], idx[e[1]])
        directed = sorted(g.directed, key=key)
        undirected = sorted(g.undirected, key=key)
        bidirected = sorted(g.bidirected, key=key)
    for a, b in directed:
        lines.append(f'  "{a}" -> "{b}";')
    for a, b in undirected:
        lines.append(f'  "{a}" -> "{b}" [dir=none];')
    for a, b in bidirected:
        lines.append(f'  "{a}" -> "{b}" [dir=both];')
    lines.append("}")
    return "\n".join(lines) + "\n"
