"""Missingness machinery.

Amputation of complete datasets under MCAR, MAR and MNAR mechanisms, and
the graph-theoretic identifiability checks for deletion-based conditional
independence testing: the joint-indicator separation criterion, the
admissible-separator condition, and oracle verdicts for test-wise and
list-wise deletion.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from .data import Dataset
from .graphs import MissingnessDag, d_separated, setwise_indicator_parents

#: Every oracle verdict is conditional on this assumption: independence in
#: the tested subsample carries over to the unobserved strata.
FAITHFUL_OBSERVABILITY = "faithful-observability"

DEPENDENT = "dependent"
INDEPENDENT = "independent"


class AmputationError(ValueError):
    """Raised for unachievable or malformed amputation plans."""


# -- amputation plans ---------------------------------------------------------


@dataclass(frozen=True)
class McarSpec:
    proportion: float
    columns: tuple[str, ...] | None = None  # None means all columns

    def __post_init__(self):
        if not 0.0 <= self.proportion < 1.0:
            raise AmputationError("MCAR proportion must be in [0, 1)")


@dataclass(frozen=True)
class MarSpec:
    groups: tuple[tuple[str, ...], ...]
    spill: str
    proportion: float
    weights: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self):
        if not 0.0 < self.proportion < 1.0:
            raise AmputationError("MAR target proportion must be in (0, 1)")
        seen: set[str] = set()
        for group in self.groups:
            if not 3 <= len(group) <= 4:
                raise AmputationError("MAR groups must have 3 or 4 variables")
            if seen & set(group):
                raise AmputationError("MAR groups must be pairwise disjoint")
            seen.update(group)
        if self.spill in seen:
            raise AmputationError("spill-over variable cannot be inside a group")
        if self.weights is not None and any(
            len(w) != len(g) for w, g in zip(self.weights, self.groups)
        ):
            raise AmputationError("weights must match group shapes")


@dataclass(frozen=True)
class MnarSpec:
    key: str
    subordinates: tuple[str, ...]
    proportion: float

    def __post_init__(self):
        if not 0.0 < self.proportion < 1.0:
            raise AmputationError("MNAR target proportion must be in (0, 1)")
        if self.key in self.subordinates:
            raise AmputationError("key variable cannot be its own subordinate")


@dataclass(frozen=True)
class AmputationPlan:
    """Serializable amputation recipe: one mechanism plus a seed."""

    mechanism: McarSpec | MarSpec | MnarSpec
    seed: int = 0

    def to_json(self) -> str:
        m = self.mechanism
        if isinstance(m, McarSpec):
            body = {"kind": "mcar", "proportion": m.proportion}
            if m.columns is not None:
                body["columns"] = list(m.columns)
        elif isinstance(m, MarSpec):
            body = {
                "kind": "mar",
                "groups": [list(g) for g in m.groups],
                "spill": m.spill,
                "proportion": m.proportion,
            }
            if m.weights is not None:
                body["weights"] = [list(w) for w in m.weights]
        else:
            body = {
                "kind": "mnar",
                "key": m.key,
                "subordinates": list(m.subordinates),
                "proportion": m.proportion,
            }
        return json.dumps({"mechanism": body, "seed": self.seed}, indent=2) + "\n"

    @staticmethod
    def from_json(text: str) -> "AmputationPlan":
        doc = json.loads(text)
        body = doc["mechanism"]
        kind = body["kind"]
        if kind == "mcar":
            cols = body.get("columns")
            mech = McarSpec(body["proportion"], tuple(cols) if cols else None)
        elif kind == "mar":
            weights = body.get("weights")
            mech = MarSpec(
                tuple(tuple(g) for g in body["groups"]),
                body["spill"],
                body["proportion"],
                tuple(tuple(w) for w in weights) if weights else None,
            )
        elif kind == "mnar":
            mech = MnarSpec(
                body["key"], tuple(body["subordinates"]), body["proportion"]
            )
        else:
            raise AmputationError(f"unknown mechanism kind {kind!r}")
        return AmputationPlan(mech, int(doc.get("seed", 0)))


def ampute(ds: Dataset, plan: AmputationPlan) -> Dataset:
    m = plan.mechanism
    if isinstance(m, McarSpec):
        return ampute_mcar(ds, m.proportion, plan.seed, m.columns)
    if isinstance(m, MarSpec):
        return ampute_mar(ds, m, plan.seed)
    return ampute_mnar(ds, m.key, m.subordinates, m.proportion, plan.seed)


def ampute_mcar(ds: Dataset, proportion: float, seed, columns=None) -> Dataset:
    """Delete exactly round(proportion * cells) cells uniformly without
    replacement; optionally restricted to ``columns``."""
    if not 0.0 <= proportion < 1.0:
        raise AmputationError("proportion must be in [0, 1)")
    if not ds.is_complete():
        raise AmputationError("amputation expects complete data")
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    col_idx = (
        np.arange(len(ds.schema))
        if columns is None
        else np.array(sorted(ds.column_index(v) for v in columns))
    )
    n_cells = ds.n * col_idx.size
    k = round(proportion * n_cells)
    missing = np.array(ds.missing)
    if k:
        flat = rng.choice(n_cells, size=k, replace=False)
        rows, cols = np.unravel_index(flat, (ds.n, col_idx.size))
        missing[rows, col_idx[cols]] = True
    return Dataset(ds.schema, ds.values, missing, ds.provenance)


def _standardized(ds: Dataset, name: str) -> np.ndarray:
    """Column as z-scores; categorical columns contribute level codes."""
    x = ds.column(name).astype(float)
    sd = x.std(ddof=0)
    if sd == 0.0:
        return np.zeros_like(x)
    return (x - x.mean()) / sd


def ampute_mar(ds: Dataset, spec: MarSpec, seed) -> Dataset:
    """Group-wise MAR amputation.

    In every row exactly one member of each group goes missing; the
    selection probability of member j is the softmax over the group of the
    weighted sum of the *other* members' standardized values, so a
    member's missingness depends only on observed quantities. One
    designated spill-over variable then takes uniform deletions until the
    overall target proportion is met.
    """
    if not ds.is_complete():
        raise AmputationError("amputation expects complete data")
    for group in spec.groups:
        for v in group:
            ds.column_index(v)
    ds.column_index(spec.spill)
    rng = np.random.default_rng(seed)
    n, k_cols = ds.n, len(ds.schema)
    target_cells = round(spec.proportion * n * k_cols)
    group_cells = n * len(spec.groups)
    spill_cells = target_cells - group_cells
    if not 0 <= spill_cells <= n:
        lo = group_cells / (n * k_cols)
        hi = (group_cells + n) / (n * k_cols)
        raise AmputationError(
            f"target proportion {spec.proportion} unreachable; achievable "
            f"range with this group structure is [{lo:.4f}, {hi:.4f}]"
        )
    missing = np.array(ds.missing)
    for gi, group in enumerate(spec.groups):
        weights = (
            np.asarray(spec.weights[gi], dtype=float)
            if spec.weights is not None
            else np.ones(len(group))
        )
        z = np.column_stack([_standardized(ds, v) for v in group]) * weights
        total = z.sum(axis=1, keepdims=True)
        scores = total - z  # leave-own-value-out sums
        scores -= scores.max(axis=1, keepdims=True)
        probs = np.exp(scores)
        probs /= probs.sum(axis=1, keepdims=True)
        u = rng.random(n)
        chosen = (probs.cumsum(axis=1) > u[:, None]).argmax(axis=1)
        for j, v in enumerate(group):
            missing[chosen == j, ds.column_index(v)] = True
    if spill_cells:
        rows = rng.choice(n, size=spill_cells, replace=False)
        missing[rows, ds.column_index(spec.spill)] = True
    return Dataset(ds.schema, ds.values, missing, ds.provenance)


def ampute_mnar(
    ds: Dataset, key: str, subordinates: Iterable[str], proportion: float, seed=None
) -> Dataset:
    """Delete key and subordinate values in the rows with the largest key
    values; the affected row share is solved from the target proportion.

    Ties at the cut are broken by row index. ``seed`` is accepted for
    interface symmetry; the mechanism is deterministic.
    """
    if not ds.is_complete():
        raise AmputationError("amputation expects complete data")
    subordinates = tuple(subordinates)
    if key in subordinates:
        raise AmputationError("key variable cannot be its own subordinate")
    k_cols = len(ds.schema)
    q = proportion * k_cols / (1 + len(subordinates))
    if q >= 1.0:
        hi = (1 + len(subordinates)) / k_cols
        raise AmputationError(
            f"target proportion {proportion} needs more than 100% of rows; "
            f"the achievable maximum is {hi:.4f}"
        )
    if q < 0.0:
        raise AmputationError("proportion must be nonnegative")
    n_rows = round(q * ds.n)
    order = np.argsort(-ds.column(key), kind="stable")
    chosen = order[:n_rows]
    missing = np.array(ds.missing)
    cols = [ds.column_index(key)] + [ds.column_index(v) for v in subordinates]
    for j in cols:
        missing[chosen, j] = True
    return Dataset(ds.schema, ds.values, missing, ds.provenance)


# -- identifiability under deletion -------------------------------------------


def faithful_observability_assumed(mdag: MissingnessDag) -> tuple[str, ...]:
    """The stated (uncheckable) assumption attached to every oracle verdict."""
    return (FAITHFUL_OBSERVABILITY,)


@dataclass(frozen=True)
class TwdOracleVerdict:
    """What a deletion-based oracle test reports for one query."""

    x: str
    y: str
    zs: frozenset
    truth: str  # dependent | independent, from the substantive graph
    identified: bool
    oracle_report: str
    mode: str = "testwise"
    assumptions: tuple[str, ...] = (FAITHFUL_OBSERVABILITY,)

    def to_dict(self) -> dict:
        return {
            "x": self.x,
            "y": self.y,
            "given": sorted(self.zs),
            "truth": self.truth,
            "identified": self.identified,
            "oracle_report": self.oracle_report,
            "mode": self.mode,
            "assumptions": list(self.assumptions),
        }


VERDICT_SCHEMA = {
    "type": "object",
    "required": ["x", "y", "given", "truth", "identified", "oracle_report", "mode", "assumptions"],
    "properties": {
        "x": {"type": "string"},
        "y": {"type": "string"},
        "given": {"type": "array", "items": {"type": "string"}},
        "truth": {"enum": [DEPENDENT, INDEPENDENT]},
        "identified": {"type": "boolean"},
        "oracle_report": {"enum": [DEPENDENT, INDEPENDENT]},
        "mode": {"enum": ["testwise", "listwise"]},
        "assumptions": {
            "type": "array",
            "contains": {"const": FAITHFUL_OBSERVABILITY},
        },
    },
}


def validate_verdict_report(entries: Sequence[dict]) -> None:
    import jsonschema

    for entry in entries:
        jsonschema.validate(entry, VERDICT_SCHEMA)


def verdicts_to_json(verdicts: Sequence[TwdOracleVerdict]) -> str:
    entries = [v.to_dict() for v in verdicts]
    validate_verdict_report(entries)
    return json.dumps(entries, indent=2) + "\n"


def verdicts_to_csv(verdicts: Sequence[TwdOracleVerdict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        ["x", "y", "given", "truth", "identified", "oracle_report", "mode", "assumptions"]
    )
    for v in verdicts:
        writer.writerow(
            [
                v.x,
                v.y,
                " ".join(sorted(v.zs)),
                v.truth,
                int(v.identified),
                v.oracle_report,
                v.mode,
                " ".join(v.assumptions),
            ]
        )
    return buf.getvalue()


def _identified_given_indicators(
    mdag: MissingnessDag, indicator_parents: frozenset, x: str, y: str, zs: frozenset
) -> bool:
    if not indicator_parents:
        return True  # joint indicator is the constant 1
    aug, rname = mdag.with_indicator_child(indicator_parents)
    return d_separated(aug, rname, x, set(zs) | {y}) or d_separated(
        aug, rname, y, set(zs) | {x}
    )


def ci_identified_twd(mdag: MissingnessDag, x: str, y: str, zs=()) -> bool:
    """Is the independence of ``x`` and ``y`` given ``zs`` preserved when
    testing only rows where all involved variables are observed?

    Holds iff the joint response indicator of the involved variables is
    d-separated from one endpoint given the other endpoint and ``zs``.
    """
    zs = frozenset([zs]) if isinstance(zs, str) else frozenset(zs)
    parents = setwise_indicator_parents(mdag, {x, y} | zs)
    return _identified_given_indicators(mdag, parents, x, y, zs)


def ci_identified_listwise(mdag: MissingnessDag, x: str, y: str, zs=()) -> bool:
    """List-wise analogue: the joint indicator covers every incompletely
    observed variable, not just those in the test."""
    zs = frozenset([zs]) if isinstance(zs, str) else frozenset(zs)
    parents = frozenset(mdag.indicators)
    return _identified_given_indicators(mdag, parents, x, y, zs)


def _oracle_verdict(mdag, x, y, zs, identified, mode) -> TwdOracleVerdict:
    zs = frozenset([zs]) if isinstance(zs, str) else frozenset(zs)
    sub = mdag.substantive_subgraph()
    truth = INDEPENDENT if d_separated(sub, x, y, zs) else DEPENDENT
    if truth == DEPENDENT:
        report = DEPENDENT  # dependencies always survive deletion
    else:
        report = INDEPENDENT if identified else DEPENDENT
    return TwdOracleVerdict(
        x, y, zs, truth, identified, report, mode, faithful_observability_assumed(mdag)
    )


def oracle_ci_twd(mdag: MissingnessDag, x: str, y: str, zs=()) -> TwdOracleVerdict:
    """Verdict of the test-wise-deletion oracle for one query."""
    zs = frozenset([zs]) if isinstance(zs, str) else frozenset(zs)
    return _oracle_verdict(mdag, x, y, zs, ci_identified_twd(mdag, x, y, zs), "testwise")


def oracle_ci_listwise(mdag: MissingnessDag, x: str, y: str, zs=()) -> TwdOracleVerdict:
    """Verdict of the list-wise-deletion oracle for one query."""
    zs = frozenset([zs]) if isinstance(zs, str) else frozenset(zs)
    return _oracle_verdict(
        mdag, x, y, zs, ci_identified_listwise(mdag, x, y, zs), "listwise"
    )


@dataclass(frozen=True)
class SeparatorWitness:
    pair: tuple[str, str]
    separator: frozenset | None  # None when no admissible separator exists

    @property
    def found(self) -> bool:
        return self.separator is not None


@dataclass(frozen=True)
class AdmissibleSeparatorReport:
    holds: bool
    witnesses: tuple[SeparatorWitness, ...]

    def failing_pairs(self) -> list[tuple[str, str]]:
        return [w.pair for w in self.witnesses if not w.found]


def admissible_separator_holds(mdag: MissingnessDag) -> AdmissibleSeparatorReport:
    """Check the exact condition for oracle test-wise-deletion search
    correctness.

    For every non-adjacent substantive pair the search looks for a
    separator within one endpoint's adjacency whose joint response
    indicator is d-separated from one endpoint given the other endpoint
    and the separator. Subsets are scanned in increasing size and
    lexicographic order; the first witness is recorded.
    """
    sub = mdag.substantive_subgraph()
    order = {v: i for i, v in enumerate(sub.nodes)}
    witnesses = []
    for x, y in combinations(sub.nodes, 2):
        if y in sub.adjacent(x):
            continue
        adj_x = sorted(sub.adjacent(x) - {y}, key=order.get)
        adj_y = sorted(sub.adjacent(y) - {x}, key=order.get)
        max_size = max(len(adj_x), len(adj_y))
        witness = None
        for size in range(max_size + 1):
            candidates = {tuple(c) for c in combinations(adj_x, size)}
            candidates |= {tuple(c) for c in combinations(adj_y, size)}
            for zs in sorted(candidates, key=lambda c: tuple(order[v] for v in c)):
                zset = frozenset(zs)
                if not d_separated(sub, x, y, zset):
                    continue
                if ci_identified_twd(mdag, x, y, zset):
                    witness = zset
                    break
            if witness is not None:
                break
        witnesses.append(SeparatorWitness((x, y), witness))
    holds = all(w.found for w in witnesses)
    return AdmissibleSeparatorReport(holds, tuple(witnesses))
