"""PC-stable causal structure search.

Skeleton search with level-frozen adjacencies, v-structure orientation
with conflict markers, background-knowledge orientation (tiers and
exogenous variables), and pluggable conditional-independence handlers:
oracle d-separation, deletion-based oracles on missingness DAGs, and
data-driven tests under list-wise deletion, test-wise deletion, multiple
imputation or single imputation. Also hosts the hybrid procedure that
bootstraps imputation models from a preliminary deletion-based skeleton.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Iterable, Sequence

import numpy as np

from . import citest
from .citest import CiResult, GaussianSuffStat
from .data import Dataset, listwise_subset, response_indicator, single_impute_mean_mode
from .graphs import (
    Dag,
    GraphError,
    MissingnessDag,
    Pdag,
    d_separated,
    meek_orient,
)
from .impute import MultipleImputations, default_spec, mice, restrict_spec_to_blanket
from .missingness import oracle_ci_listwise, oracle_ci_twd
from .pooling import cg_mi, fisher_z_mi_from_suffstats, g2_mi

log = logging.getLogger("pcmiss.pc")

INDEPENDENT = "independent"
DEPENDENT = "dependent"
UNINFORMATIVE = "uninformative"

TESTS = ("fisherz", "g2", "cg")


@dataclass
class CiHandler:
    """A conditional-independence capability at a fixed alpha.

    ``query(x, y, zs)`` answers independent / dependent / uninformative;
    the descriptor documents what backs the answers.
    """

    query: Callable[[str, str, tuple], str]
    descriptor: dict

    def __call__(self, x: str, y: str, zs: tuple) -> str:
        return self.query(x, y, zs)


@dataclass(frozen=True)
class BackgroundKnowledge:
    """Ordered tiers plus exogenous (parentless) variables.

    Variables not mentioned in any tier are unconstrained. No edge may
    point from a later tier into an earlier one, and nothing may point
    into an exogenous variable.
    """

    tiers: tuple[frozenset, ...] = ()
    exogenous: frozenset = frozenset()

    @staticmethod
    def make(tiers: Sequence[Iterable[str]] = (), exogenous: Iterable[str] = ()):
        return BackgroundKnowledge(
            tuple(frozenset(t) for t in tiers), frozenset(exogenous)
        )

    def validate(self, variables: Iterable[str]) -> None:
        known = set(variables)
        seen: set[str] = set()
        for tier in self.tiers:
            unknown = tier - known
            if unknown:
                raise GraphError(f"background knowledge names unknown variables {sorted(unknown)}")
            if tier & seen:
                raise GraphError("tiers must be disjoint")
            seen |= tier
        unknown = self.exogenous - known
        if unknown:
            raise GraphError(f"background knowledge names unknown variables {sorted(unknown)}")

    def tier_of(self, v: str) -> int | None:
        for i, tier in enumerate(self.tiers):
            if v in tier:
                return i
        return None

    @property
    def empty(self) -> bool:
        return not self.tiers and not self.exogenous


@dataclass
class PcStats:
    """Per-level test accounting for run manifests."""

    tests_per_level: dict = field(default_factory=dict)
    uninformative_per_level: dict = field(default_factory=dict)
    deletions_per_level: dict = field(default_factory=dict)

    def record(self, level: int, verdict: str, deleted: bool) -> None:
        self.tests_per_level[level] = self.tests_per_level.get(level, 0) + 1
        if verdict == UNINFORMATIVE:
            self.uninformative_per_level[level] = (
                self.uninformative_per_level.get(level, 0) + 1
            )
        if deleted:
            self.deletions_per_level[level] = self.deletions_per_level.get(level, 0) + 1

    def as_dict(self) -> dict:
        return {
            "tests_per_level": dict(sorted(self.tests_per_level.items())),
            "uninformative_per_level": dict(sorted(self.uninformative_per_level.items())),
            "deletions_per_level": dict(sorted(self.deletions_per_level.items())),
        }


SepsetTable = dict  # frozenset pair -> frozenset separator


def pc_skeleton(
    variables: Sequence[str],
    handler: CiHandler,
    bk: BackgroundKnowledge | None = None,
    max_cond: int | None = None,
    stats: PcStats | None = None,
) -> tuple[set, SepsetTable]:
    """PC-stable skeleton phase.

    Starts from the complete undirected graph; at level L, every ordered
    pair (x, y) still adjacent is tested against all size-L subsets of
    adj(x) minus y, with adjacencies frozen at level start. Deletion
    happens only on an ``independent`` verdict (``uninformative`` never
    deletes); the first separating set per pair is recorded. Background
    knowledge is accepted for interface symmetry but constrains only the
    orientation phase.
    """
    del bk  # orientation-phase only
    order = {v: i for i, v in enumerate(variables)}
    if len(order) != len(variables):
        raise GraphError("duplicate variable names")
    adjacency: dict[str, set] = {v: set(variables) - {v} for v in variables}
    sepsets: SepsetTable = {}
    level = 0
    while max_cond is None or level <= max_cond:
        frozen = {v: sorted(adjacency[v], key=order.get) for v in variables}
        if not any(len(frozen[v]) >= level + 1 for v in variables):
            break
        for x in variables:
            for y in frozen[x]:
                if y not in adjacency[x]:
                    continue  # already deleted at this level
                if level == 0 and order[x] > order[y]:
                    continue  # the empty set is symmetric in (x, y)
                candidates = [v for v in frozen[x] if v != y]
                if len(candidates) < level:
                    continue
                for zs in combinations(candidates, level):
                    verdict = handler(x, y, zs)
                    deleted = verdict == INDEPENDENT
                    if stats is not None:
                        stats.record(level, verdict, deleted)
                    if deleted:
                        adjacency[x].discard(y)
                        adjacency[y].discard(x)
                        sepsets[frozenset((x, y))] = frozenset(zs)
                        break
        level += 1
    edges = {frozenset((x, y)) for x in variables for y in adjacency[x]}
    return edges, sepsets


def orient_v_structures(
    variables: Sequence[str], edges: set, sepsets: SepsetTable
) -> Pdag:
    """Orient unshielded triples whose middle node is outside the recorded
    separator; opposing demands on one edge become a bidirected marker."""
    order = {v: i for i, v in enumerate(variables)}
    adjacency: dict[str, set] = {v: set() for v in variables}
    for e in edges:
        a, b = tuple(e)
        adjacency[a].add(b)
        adjacency[b].add(a)
    demands: set[tuple[str, str]] = set()
    for y in variables:
        neigh = sorted(adjacency[y], key=order.get)
        for x, z in combinations(neigh, 2):
            if z in adjacency[x]:
                continue
            key = frozenset((x, z))
            if key not in sepsets:
                raise GraphError(f"no separating set recorded for {tuple(sorted(key))}")
            if y not in sepsets[key]:
                demands.add((x, y))
                demands.add((z, y))
    directed, bidirected, undirected = [], [], []
    for e in sorted(edges, key=lambda e: tuple(sorted(order[v] for v in e))):
        a, b = sorted(e, key=order.get)
        ab, ba = (a, b) in demands, (b, a) in demands
        if ab and ba:
            bidirected.append((a, b))
        elif ab:
            directed.append((a, b))
        elif ba:
            directed.append((b, a))
        else:
            undirected.append((a, b))
    return Pdag(list(variables), directed, undirected, bidirected)


def apply_background_knowledge(g: Pdag, bk: BackgroundKnowledge | None) -> Pdag:
    """Orient edges demanded by tiers and exogeneity, then close under
    Meek's rules.

    Cross-tier undirected edges point earlier to later; undirected edges
    at an exogenous variable point away from it. Compelled orientations
    that contradict the knowledge become bidirected conflict markers and
    are logged.
    """
    if bk is None or bk.empty:
        return meek_orient(g)
    bk.validate(g.nodes)
    directed = set(g.directed)
    undirected = set(g.undirected)
    bidirected = set(g.bidirected)

    def demote_conflict(a, b, why):
        log.warning("background-knowledge conflict on edge %s-%s: %s", a, b, why)
        directed.discard((a, b))
        bidirected.add((a, b))

    for a, b in sorted(undirected):
        ta, tb = bk.tier_of(a), bk.tier_of(b)
        a_exo, b_exo = a in bk.exogenous, b in bk.exogenous
        if a_exo and b_exo:
            undirected.discard((a, b))
            bidirected.add((a, b))
            log.warning("edge between exogenous variables %s and %s", a, b)
            continue
        if a_exo:
            undirected.discard((a, b))
            directed.add((a, b))
            continue
        if b_exo:
            undirected.discard((a, b))
            directed.add((b, a))
            continue
        if ta is not None and tb is not None and ta != tb:
            undirected.discard((a, b))
            directed.add((a, b) if ta < tb else (b, a))
    for a, b in sorted(directed):
        if b in bk.exogenous:
            demote_conflict(a, b, f"{b} is exogenous but the edge is compelled inward")
            continue
        ta, tb = bk.tier_of(a), bk.tier_of(b)
        if ta is not None and tb is not None and ta > tb:
            demote_conflict(a, b, "edge points from a later tier to an earlier one")
    combined = Pdag(g.nodes, directed, undirected, bidirected)
    return meek_orient(combined)


def pc(
    variables: Sequence[str],
    handler: CiHandler,
    bk: BackgroundKnowledge | None = None,
    max_cond: int | None = None,
    stats: PcStats | None = None,
) -> Pdag:
    """Full PC-stable pipeline: skeleton, v-structures, background
    knowledge, Meek closure."""
    edges, sepsets = pc_skeleton(variables, handler, bk, max_cond, stats)
    seed = orient_v_structures(variables, edges, sepsets)
    return apply_background_knowledge(seed, bk)


# -- handlers -----------------------------------------------------------------


def _verdict(result: CiResult, alpha: float) -> str:
    if not result.ok:
        return UNINFORMATIVE
    return INDEPENDENT if result.p_value > alpha else DEPENDENT


def _complete_data_tester(ds: Dataset, test: str, alpha: float):
    """Query function against one fixed complete dataset."""
    if test == "fisherz":
        stat = GaussianSuffStat.from_dataset(ds)

        def query(x, y, zs):
            return _verdict(stat.fisher_z_test(x, y, list(zs)), alpha)

    elif test == "g2":

        def query(x, y, zs):
            return _verdict(citest.g2_test(ds, x, y, list(zs)), alpha)

    else:

        def query(x, y, zs):
            return _verdict(citest.cg_test(ds, x, y, list(zs)), alpha)

    return query


def _testwise_tester(ds: Dataset, test: str, alpha: float):
    def query(x, y, zs):
        involved = [x, y, *zs]
        flags = response_indicator(ds, involved).flags
        if not flags.any():
            return UNINFORMATIVE
        sub = ds.take_rows(flags)
        if test == "fisherz":
            return _verdict(citest.fisher_z_test(sub, x, y, list(zs)), alpha)
        if test == "g2":
            return _verdict(citest.g2_test(sub, x, y, list(zs)), alpha)
        return _verdict(citest.cg_test(sub, x, y, list(zs)), alpha)

    return query


def _mi_tester(mi: MultipleImputations | Sequence[Dataset], test: str, alpha: float):
    datasets = list(getattr(mi, "datasets", mi))
    if len(datasets) < 2:
        raise ValueError("multiple-imputation handler needs at least 2 completions")
    if test == "fisherz":
        stats_list = [GaussianSuffStat.from_dataset(d) for d in datasets]

        def query(x, y, zs):
            return _verdict(fisher_z_mi_from_suffstats(stats_list, x, y, list(zs)), alpha)

    elif test == "g2":

        def query(x, y, zs):
            return _verdict(g2_mi(datasets, x, y, list(zs)), alpha)

    else:

        def query(x, y, zs):
            return _verdict(cg_mi(datasets, x, y, list(zs)), alpha)

    return query


def make_handler(
    mode: str,
    alpha: float = 0.05,
    *,
    dag: Dag | None = None,
    mdag: MissingnessDag | None = None,
    dataset: Dataset | None = None,
    imputations: MultipleImputations | Sequence[Dataset] | None = None,
    test: str | None = None,
) -> CiHandler:
    """Build the conditional-independence capability for one search run.

    Oracle modes answer from graphs; data modes answer from a dataset (or
    completed copies) through the chosen test at the fixed alpha.
    """
    descriptor = {"mode": mode, "alpha": alpha}
    if test is not None:
        if test not in TESTS:
            raise ValueError(f"unknown test {test!r}")
        descriptor["test"] = test
    if mode == "oracle_dsep":
        if dag is None:
            raise ValueError("oracle_dsep needs a dag")

        def query(x, y, zs):
            return INDEPENDENT if d_separated(dag, x, y, zs) else DEPENDENT

    elif mode in ("oracle_twd", "oracle_listwise"):
        if mdag is None:
            raise ValueError(f"{mode} needs a missingness dag")
        oracle = oracle_ci_twd if mode == "oracle_twd" else oracle_ci_listwise

        def query(x, y, zs):
            report = oracle(mdag, x, y, zs).oracle_report
            return INDEPENDENT if report == "independent" else DEPENDENT

    elif mode in ("listwise", "testwise", "single"):
        if dataset is None or test is None:
            raise ValueError(f"{mode} needs a dataset and a test")
        if mode == "listwise":
            complete = listwise_subset(dataset)
            descriptor["effective_n"] = complete.n
            if complete.n == 0:
                def query(x, y, zs):
                    return UNINFORMATIVE
            else:
                query = _complete_data_tester(complete, test, alpha)
        elif mode == "single":
            filled = single_impute_mean_mode(dataset)
            query = _complete_data_tester(filled, test, alpha)
        else:
            query = _testwise_tester(dataset, test, alpha)
    elif mode == "mi":
        if imputations is None or test is None:
            raise ValueError("mi needs imputations and a test")
        m = len(getattr(imputations, "datasets", imputations))
        if m < 2:
            raise ValueError("mi handler needs at least 2 imputations")
        descriptor["m"] = m
        query = _mi_tester(imputations, test, alpha)
    else:
        raise ValueError(f"unknown handler mode {mode!r}")
    return CiHandler(query, descriptor)


def default_test_for(ds: Dataset) -> str:
    """fisherz for all-continuous data, g2 for all-categorical, cg mixed."""
    kinds = {c.is_continuous for c in ds.schema}
    if kinds == {True}:
        return "fisherz"
    if kinds == {False}:
        return "g2"
    return "cg"


def hybrid_mi_pc(
    ds: Dataset,
    alpha_pre: float,
    alpha: float,
    variant: str,
    *,
    test: str | None = None,
    m: int = 10,
    iterations: int = 10,
    seed: int = 0,
    interaction_order: int = 1,
    trees: int = 100,
    bk: BackgroundKnowledge | None = None,
    max_cond: int | None = None,
    stats: PcStats | None = None,
) -> Pdag:
    """Deletion-then-imputation hybrid search.

    A preliminary skeleton is estimated with test-wise deletion at the
    looser ``alpha_pre`` (variants B and C stop after the marginal tests);
    each incomplete variable's imputation model is then restricted to its
    neighbourhood in that skeleton (variants A and B keep neighbours of
    neighbours, C only neighbours) before running the multiply-imputed
    search at ``alpha``.
    """
    if variant not in ("A", "B", "C"):
        raise ValueError("variant must be A, B or C")
    if not alpha_pre > alpha:
        raise ValueError("alpha_pre must exceed alpha")
    test = test or default_test_for(ds)
    pre_handler = make_handler("testwise", alpha_pre, dataset=ds, test=test)
    pre_max = 0 if variant in ("B", "C") else None
    edges, _ = pc_skeleton(list(ds.names), pre_handler, max_cond=pre_max)
    order = {v: i for i, v in enumerate(ds.names)}
    pre_graph = Pdag(
        list(ds.names),
        undirected=[tuple(sorted(e, key=order.get)) for e in edges],
    )
    if ds.is_complete():
        handler = make_handler("testwise", alpha, dataset=ds, test=test)
        return pc(list(ds.names), handler, bk, max_cond, stats)
    spec = default_spec(
        ds, m=m, iterations=iterations, seed=seed, interaction_order=interaction_order,
        trees=trees,
    )
    spec = restrict_spec_to_blanket(spec, pre_graph, variant)
    imputations = mice(ds, spec)
    handler = make_handler("mi", alpha, imputations=imputations, test=test)
    return pc(list(ds.names), handler, bk, max_cond, stats)
