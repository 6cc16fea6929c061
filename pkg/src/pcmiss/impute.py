"""Multiple imputation by chained equations.

Four elementary imputers fill the gaps of one column at a time: Bayesian
linear regression draws ("norm"), ridge-stabilized logistic draws with
configurable interaction order, random-forest draw-from-leaf, and
bootstrap-forest prediction plus noise. Chains visit incomplete columns in
schema order, refitting each column's model on the currently completed
predictors; every chain owns an independent RNG stream so completions are
bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg
from sklearn.ensemble import RandomForestClassifier, RandomForestRegressor

from .data import CATEGORICAL, CONTINUOUS, ColumnSchema, DataError, Dataset

log = logging.getLogger("pcmiss.impute")

NORM = "norm"
LOGREG = "logreg"
RF = "rf"
RF_CALIBER = "rf_caliber"
METHODS = (NORM, LOGREG, RF, RF_CALIBER)

#: Ridge penalty schedule for logistic fits: base, then two escalations.
LOGREG_RIDGE = 1e-5
LOGREG_ESCALATION = 100.0
LOGREG_MAX_ESCALATIONS = 2


class ImputationError(ValueError):
    """Raised for malformed imputation specifications."""


class ChainAbort(RuntimeError):
    """An imputation chain hit an unfittable model."""

    def __init__(self, column: str, sweep: int, chain: int, reason: str):
        self.column = column
        self.sweep = sweep
        self.chain = chain
        self.reason = reason
        super().__init__(
            f"imputation chain {chain} aborted at sweep {sweep}, column "
            f"{column!r}: {reason}"
        )


@dataclass(frozen=True)
class ColumnImputer:
    method: str
    predictors: tuple[str, ...]
    interaction_order: int = 1
    trees: int = 100

    def __post_init__(self):
        if self.method not in METHODS:
            raise ImputationError(f"unknown method {self.method!r}")
        if self.interaction_order < 1:
            raise ImputationError("interaction order must be at least 1")
        if self.trees < 1:
            raise ImputationError("tree count must be at least 1")


@dataclass(frozen=True)
class ImputationSpec:
    columns: Mapping[str, ColumnImputer]
    m: int = 10
    iterations: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise ImputationError("m must be at least 1")
        if self.iterations < 1:
            raise ImputationError("iterations must be at least 1")
        for target, imp in self.columns.items():
            if target in imp.predictors:
                raise ImputationError(f"{target!r} cannot predict itself")

    def to_json(self) -> str:
        doc = {
            "m": self.m,
            "iterations": self.iterations,
            "seed": self.seed,
            "columns": {
                name: {
                    "method": imp.method,
                    "predictors": list(imp.predictors),
                    "interaction_order": imp.interaction_order,
                    "trees": imp.trees,
                }
                for name, imp in self.columns.items()
            },
        }
        return json.dumps(doc, indent=2) + "\n"

    @staticmethod
    def from_json(text: str) -> "ImputationSpec":
        doc = json.loads(text)
        columns = {
            name: ColumnImputer(
                entry["method"],
                tuple(entry["predictors"]),
                entry.get("interaction_order", 1),
                entry.get("trees", 100),
            )
            for name, entry in doc["columns"].items()
        }
        return ImputationSpec(
            columns, doc.get("m", 10), doc.get("iterations", 10), doc.get("seed", 0)
        )


@dataclass(frozen=True)
class MultipleImputations:
    """m completed copies of a dataset plus the generating recipe."""

    datasets: tuple[Dataset, ...]
    spec: ImputationSpec
    streams: tuple[str, ...]
    chain_means: dict = field(default_factory=dict)  # column -> (m, sweeps) array

    @property
    def m(self) -> int:
        return len(self.datasets)


def default_spec(
    ds: Dataset,
    m: int = 10,
    iterations: int = 10,
    seed: int = 0,
    method: str = "auto",
    interaction_order: int = 1,
    trees: int = 100,
) -> ImputationSpec:
    """One imputer per incomplete column; predictors are all other columns.

    ``method='auto'`` routes continuous columns to Bayesian linear draws
    and categorical ones to logistic draws; the forest methods apply to
    both kinds unchanged.
    """
    columns = {}
    names = ds.names
    for col in ds.schema:
        if not ds.column_missing(col.name).any():
            continue
        if method == "auto":
            chosen = NORM if col.is_continuous else LOGREG
        elif method in (RF, RF_CALIBER):
            chosen = method
        elif method in (NORM, LOGREG):
            chosen = NORM if col.is_continuous else LOGREG
        else:
            raise ImputationError(f"unknown method {method!r}")
        predictors = tuple(v for v in names if v != col.name)
        columns[col.name] = ColumnImputer(chosen, predictors, interaction_order, trees)
    return ImputationSpec(columns, m, iterations, seed)


def restrict_spec_to_blanket(spec: ImputationSpec, graph, mode: str) -> ImputationSpec:
    """Shrink each imputation model to the target's graph neighbourhood.

    Modes A and B keep neighbours plus neighbours-of-neighbours of the
    (preliminary) graph; mode C keeps direct neighbours only. The graph
    must cover all imputed variables.
    """
    if mode not in ("A", "B", "C"):
        raise ImputationError("mode must be A, B or C")
    order = {v: i for i, v in enumerate(graph.nodes)}
    columns = {}
    for target, imp in spec.columns.items():
        if target not in order:
            raise ImputationError(f"graph does not cover variable {target!r}")
        neighbours = set(graph.adjacent(target))
        keep = set(neighbours)
        if mode in ("A", "B"):
            for v in neighbours:
                keep |= set(graph.adjacent(v))
        keep.discard(target)
        keep &= set(imp.predictors)
        columns[target] = replace(
            imp, predictors=tuple(sorted(keep, key=order.get))
        )
    return ImputationSpec(columns, spec.m, spec.iterations, spec.seed)


# -- design matrices -----------------------------------------------------------


def _predictor_blocks(ds_schema, values, names: Sequence[str], col_index):
    """Per-predictor column blocks: raw column for continuous predictors,
    drop-first indicator contrasts for categorical ones."""
    blocks = []
    for v in names:
        schema = ds_schema[col_index[v]]
        col = values[:, col_index[v]]
        if schema.is_continuous:
            blocks.append(col[:, None])
        else:
            codes = col.astype(int)
            block = np.zeros((len(col), len(schema.levels) - 1))
            for lvl in range(1, len(schema.levels)):
                block[:, lvl - 1] = codes == lvl
            blocks.append(block)
    return blocks


def build_design(
    schema: Sequence[ColumnSchema],
    values: np.ndarray,
    predictors: Sequence[str],
    interaction_order: int,
) -> np.ndarray:
    """Intercept, main effects, and products of predictor blocks up to the
    interaction cap. Continuous-by-categorical terms are products of the
    continuous column with the category contrasts."""
    col_index = {c.name: j for j, c in enumerate(schema)}
    blocks = _predictor_blocks(schema, values, predictors, col_index)
    parts = [np.ones((values.shape[0], 1))]
    parts.extend(blocks)
    for order in range(2, interaction_order + 1):
        for combo in combinations(range(len(blocks)), order):
            prod = blocks[combo[0]]
            for k in combo[1:]:
                # all pairwise column products between the two blocks
                prod = (prod[:, :, None] * blocks[k][:, None, :]).reshape(
                    values.shape[0], -1
                )
            parts.append(prod)
    return np.concatenate(parts, axis=1)


def forest_features(
    schema: Sequence[ColumnSchema], values: np.ndarray, predictors: Sequence[str]
) -> np.ndarray:
    """Feature matrix for tree methods: raw continuous columns and full
    one-hot indicators for categorical ones."""
    col_index = {c.name: j for j, c in enumerate(schema)}
    parts = []
    for v in predictors:
        s = schema[col_index[v]]
        col = values[:, col_index[v]]
        if s.is_continuous:
            parts.append(col[:, None])
        else:
            codes = col.astype(int)
            block = np.zeros((len(col), len(s.levels)))
            block[np.arange(len(col)), codes] = 1.0
            parts.append(block)
    if not parts:
        return np.zeros((values.shape[0], 0))
    return np.concatenate(parts, axis=1)


# -- elementary imputers --------------------------------------------------------


def _pivoted_rank(x: np.ndarray, max_keep: int) -> np.ndarray:
    """Indices of a well-conditioned column subset, strongest first."""
    q, r, piv = linalg.qr(x, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0.0:
        return np.array([], dtype=int)
    tol = diag[0] * max(x.shape) * np.finfo(float).eps
    rank = int((diag > tol).sum())
    rank = min(rank, max_keep)
    return piv[:rank]


def impute_norm_draw(
    y_obs: np.ndarray, x_obs: np.ndarray, x_mis: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Bayesian linear-regression draw.

    Residual variance from its scaled inverse-chi-square posterior,
    coefficients from the conditional normal posterior, imputations from
    the linear predictor plus fresh noise. Collinear design columns are
    dropped (pivoted QR); a design that cannot support one residual degree
    of freedom is unfittable.
    """
    n_obs, p = x_obs.shape
    keep = _pivoted_rank(x_obs, max_keep=n_obs - 1)
    if keep.size < p:
        log.debug("norm imputer dropped %d collinear columns", p - keep.size)
    if keep.size == 0:
        raise ImputationError("design has no usable columns")
    xk = x_obs[:, keep]
    q, r = np.linalg.qr(xk)
    beta_hat = linalg.solve_triangular(r, q.T @ y_obs, check_finite=False)
    resid = y_obs - xk @ beta_hat
    ss = float(resid @ resid)
    df = n_obs - keep.size
    sigma2 = ss / rng.chisquare(df) if ss > 0 else 0.0
    sigma = math.sqrt(sigma2)
    u = rng.standard_normal(keep.size)
    beta = beta_hat + sigma * linalg.solve_triangular(r, u, check_finite=False)
    draws = x_mis[:, keep] @ beta + sigma * rng.standard_normal(x_mis.shape[0])
    return draws


def _irls_logistic(y: np.ndarray, x: np.ndarray, ridge: float):
    """Penalized logistic fit; returns (beta, posterior covariance) or
    None on non-convergence."""
    n, p = x.shape
    beta = np.zeros(p)
    for _ in range(60):
        eta = np.clip(x @ beta, -30.0, 30.0)
        mu = 1.0 / (1.0 + np.exp(-eta))
        w = mu * (1.0 - mu) + 1e-10
        hessian = (x.T * w) @ x + ridge * np.eye(p)
        grad = x.T @ (y - mu) - ridge * beta
        try:
            step = linalg.solve(hessian, grad, assume_a="pos", check_finite=False)
        except linalg.LinAlgError:
            return None
        beta_new = beta + step
        if not np.isfinite(beta_new).all():
            return None
        if np.max(np.abs(step)) < 1e-8:
            cov = linalg.inv(hessian)
            return beta_new, cov
        beta = beta_new
    return None


def _logreg_fit_with_escalation(y, x, rng):
    # coefficients this large mean (quasi-)separation: the normal posterior
    # approximation around such a fit is useless, so escalate the ridge
    separation_cap = 10.0
    ridge = LOGREG_RIDGE
    fit = None
    for step in range(LOGREG_MAX_ESCALATIONS + 1):
        fit = _irls_logistic(y, x, ridge)
        if fit is not None:
            if np.max(np.abs(fit[0])) <= separation_cap or step == LOGREG_MAX_ESCALATIONS:
                return fit
        ridge *= LOGREG_ESCALATION
    if fit is not None:
        return fit
    raise ImputationError("logistic fit failed to converge under ridge escalation")


def impute_logreg_draw(
    y_obs_codes: np.ndarray,
    n_levels: int,
    x_obs: np.ndarray,
    x_mis: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Logistic-regression draw; multi-level targets use one-vs-rest fits
    with probability renormalization.

    Coefficients are drawn from the normal approximation to the posterior
    around the penalized fit, then levels are sampled from the implied
    class probabilities.
    """
    n_mis = x_mis.shape[0]
    keep = _pivoted_rank(x_obs, max_keep=max(x_obs.shape[0] - 1, 1))
    if keep.size == 0:
        raise ImputationError("design has no usable columns")
    xo, xm = x_obs[:, keep], x_mis[:, keep]
    if n_levels == 2:
        beta, cov = _logreg_fit_with_escalation(
            (y_obs_codes == 1).astype(float), xo, rng
        )
        draw = rng.multivariate_normal(beta, cov)
        eta = np.clip(xm @ draw, -30.0, 30.0)
        p1 = 1.0 / (1.0 + np.exp(-eta))
        return (rng.random(n_mis) < p1).astype(float)
    probs = np.zeros((n_mis, n_levels))
    for lvl in range(n_levels):
        beta, cov = _logreg_fit_with_escalation(
            (y_obs_codes == lvl).astype(float), xo, rng
        )
        draw = rng.multivariate_normal(beta, cov)
        eta = np.clip(xm @ draw, -30.0, 30.0)
        probs[:, lvl] = 1.0 / (1.0 + np.exp(-eta))
    probs /= probs.sum(axis=1, keepdims=True)
    u = rng.random(n_mis)
    return (probs.cumsum(axis=1) > u[:, None]).argmax(axis=1).astype(float)


def _forest_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**31 - 1))


def impute_rf(
    y_obs: np.ndarray,
    continuous_target: bool,
    x_obs: np.ndarray,
    x_mis: np.ndarray,
    trees: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw-from-leaf forest imputation.

    Per gap one fitted tree is chosen at random, the row is routed to its
    leaf, and the imputed value is drawn uniformly from the observed target
    values in that leaf; draws are therefore always observed values.
    """
    cls = RandomForestRegressor if continuous_target else RandomForestClassifier
    forest = cls(
        n_estimators=trees,
        min_samples_leaf=5,
        max_features="sqrt",
        bootstrap=True,
        random_state=_forest_seed(rng),
        n_jobs=1,
    )
    forest.fit(x_obs, y_obs)
    chosen = rng.integers(0, trees, size=x_mis.shape[0])
    out = np.empty(x_mis.shape[0])
    leaf_cache: dict[int, np.ndarray] = {}
    for t in np.unique(chosen):
        tree = forest.estimators_[t].tree_
        if t not in leaf_cache:
            leaf_cache[t] = tree.apply(x_obs.astype(np.float32))
        obs_leaves = leaf_cache[t]
        rows = np.flatnonzero(chosen == t)
        mis_leaves = tree.apply(x_mis[rows].astype(np.float32))
        for row, leaf in zip(rows, mis_leaves):
            pool = y_obs[obs_leaves == leaf]
            out[row] = pool[rng.integers(0, pool.size)]
    return out


def impute_caliber(
    y_obs: np.ndarray,
    continuous_target: bool,
    x_obs: np.ndarray,
    x_mis: np.ndarray,
    trees: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Bootstrap-forest imputation.

    The forest is fitted on a bootstrap sample of the observed data.
    Continuous gaps get the forest-mean prediction plus normal noise with
    the out-of-bag residual variance; categorical gaps get the prediction
    of one uniformly chosen tree.
    """
    n_obs = y_obs.shape[0]
    boot = rng.integers(0, n_obs, size=n_obs)
    xb, yb = x_obs[boot], y_obs[boot]
    if continuous_target:
        forest = RandomForestRegressor(
            n_estimators=trees,
            min_samples_leaf=5,
            max_features="sqrt",
            bootstrap=True,
            random_state=_forest_seed(rng),
            n_jobs=1,
        )
        forest.fit(xb, yb)
        # out-of-bag residual variance, accumulated tree by tree so that
        # small forests (where some rows are never out of bag) stay defined
        pred_sum = np.zeros(n_obs)
        pred_cnt = np.zeros(n_obs)
        for est, sampled in zip(forest.estimators_, forest.estimators_samples_):
            in_bag = np.zeros(n_obs, dtype=bool)
            in_bag[sampled] = True
            if (~in_bag).any():
                pred_sum[~in_bag] += est.predict(xb[~in_bag])
                pred_cnt[~in_bag] += 1
        have = pred_cnt > 0
        if yb.var() == 0.0:
            noise_sd = 0.0
        elif have.any():
            resid = yb[have] - pred_sum[have] / pred_cnt[have]
            noise_sd = math.sqrt(float(np.mean(resid**2)))
        else:
            noise_sd = float(yb.std())
        return forest.predict(x_mis) + noise_sd * rng.standard_normal(x_mis.shape[0])
    forest = RandomForestClassifier(
        n_estimators=trees,
        min_samples_leaf=5,
        max_features="sqrt",
        bootstrap=True,
        random_state=_forest_seed(rng),
        n_jobs=1,
    )
    forest.fit(xb, yb)
    chosen = rng.integers(0, trees, size=x_mis.shape[0])
    out = np.empty(x_mis.shape[0])
    for t in np.unique(chosen):
        rows = np.flatnonzero(chosen == t)
        pred = forest.estimators_[t].predict(x_mis[rows].astype(np.float32))
        out[rows] = forest.classes_[pred.astype(int)]
    return out


# -- chained equations -----------------------------------------------------------


def _run_chain(ds: Dataset, spec: ImputationSpec, chain_idx: int, rng):
    values = np.array(ds.values)
    missing = ds.missing
    targets = [c.name for c in ds.schema if c.name in spec.columns]
    col_of = {c.name: j for j, c in enumerate(ds.schema)}
    # initialization: gaps start as draws from the column's observed values
    for name in targets:
        j = col_of[name]
        gaps = missing[:, j]
        observed = values[~gaps, j]
        if observed.size == 0:
            raise ChainAbort(name, 0, chain_idx, "column has no observed values")
        values[gaps, j] = rng.choice(observed, size=int(gaps.sum()), replace=True)
    means = {name: np.empty(spec.iterations) for name in targets}
    for sweep in range(1, spec.iterations + 1):
        for name in targets:
            j = col_of[name]
            gaps = missing[:, j]
            imp = spec.columns[name]
            schema = ds.schema[j]
            try:
                if imp.method in (NORM, LOGREG):
                    design = build_design(
                        ds.schema, values, imp.predictors, imp.interaction_order
                    )
                    x_obs, x_mis = design[~gaps], design[gaps]
                    if imp.method == NORM:
                        if not schema.is_continuous:
                            raise ImputationError("norm imputer needs a continuous target")
                        if x_obs.shape[0] <= 1:
                            raise ImputationError("too few observed rows")
                        draws = impute_norm_draw(values[~gaps, j], x_obs, x_mis, rng)
                    else:
                        if schema.is_continuous:
                            raise ImputationError("logreg imputer needs a categorical target")
                        draws = impute_logreg_draw(
                            values[~gaps, j].astype(int),
                            len(schema.levels),
                            x_obs,
                            x_mis,
                            rng,
                        )
                else:
                    feats = forest_features(ds.schema, values, imp.predictors)
                    fn = impute_rf if imp.method == RF else impute_caliber
                    draws = fn(
                        values[~gaps, j],
                        schema.is_continuous,
                        feats[~gaps],
                        feats[gaps],
                        imp.trees,
                        rng,
                    )
            except ImputationError as exc:
                raise ChainAbort(name, sweep, chain_idx, str(exc)) from exc
            values[gaps, j] = draws
            means[name][sweep - 1] = draws.mean() if gaps.any() else float("nan")
    return values, means


def mice(ds: Dataset, spec: ImputationSpec) -> MultipleImputations:
    """Run m independent chained-equation chains and return the completed
    copies. Observed cells are carried over bit-identically."""
    for name in spec.columns:
        ds.column_index(name)
        if not ds.column_missing(name).any():
            raise ImputationError(f"column {name!r} has no missing values")
    for name in ds.names:
        if ds.column_missing(name).any() and name not in spec.columns:
            raise ImputationError(f"incomplete column {name!r} has no imputer")
    root = np.random.SeedSequence(spec.seed)
    children = root.spawn(spec.m)
    datasets = []
    streams = []
    chain_means: dict[str, list] = {name: [] for name in spec.columns}
    for idx, child in enumerate(children):
        rng = np.random.default_rng(child)
        if ds.is_complete():
            values, means = np.array(ds.values), {
                name: np.full(spec.iterations, float("nan")) for name in spec.columns
            }
        else:
            values, means = _run_chain(ds, spec, idx, rng)
        datasets.append(Dataset(ds.schema, values, None, ds.provenance))
        streams.append(f"seed={spec.seed}/chain={idx}")
        for name in spec.columns:
            chain_means[name].append(means[name])
    packed = {name: np.array(rows) for name, rows in chain_means.items()}
    return MultipleImputations(tuple(datasets), spec, tuple(streams), packed)


# -- diagnostics ------------------------------------------------------------------


def imputation_diagnostics(mi: MultipleImputations, original: Dataset) -> list[dict]:
    """Observed-vs-imputed distribution summaries per incomplete column.

    Continuous columns report quantiles and means; categorical columns
    report level frequencies. One row per (column, source, statistic).
    """
    rows: list[dict] = []

    def summarize(name, source, vals, schema):
        if schema.is_continuous:
            qs = np.quantile(vals, [0.0, 0.25, 0.5, 0.75, 1.0]) if vals.size else [float("nan")] * 5
            stats = dict(
                zip(["min", "q25", "median", "q75", "max"], (float(q) for q in qs))
            )
            stats["mean"] = float(vals.mean()) if vals.size else float("nan")
            for stat, value in stats.items():
                rows.append(
                    {"column": name, "source": source, "statistic": stat, "value": value}
                )
        else:
            for lvl_idx, lvl in enumerate(schema.levels):
                freq = float((vals == lvl_idx).mean()) if vals.size else float("nan")
                rows.append(
                    {
                        "column": name,
                        "source": source,
                        "statistic": f"freq[{lvl}]",
                        "value": freq,
                    }
                )

    for name in mi.spec.columns:
        j = original.column_index(name)
        schema = original.schema[j]
        gaps = original.missing[:, j]
        summarize(name, "observed", original.values[~gaps, j], schema)
        imputed = np.concatenate([d.values[gaps, j] for d in mi.datasets])
        summarize(name, "imputed", imputed, schema)
    return rows


def chain_means_rows(mi: MultipleImputations) -> list[dict]:
    """Per-sweep mean of the imputed cells for every chain and column."""
    rows = []
    for name, mat in mi.chain_means.items():
        for chain in range(mat.shape[0]):
            for sweep in range(mat.shape[1]):
                rows.append(
                    {
                        "column": name,
                        "chain": chain,
                        "sweep": sweep + 1,
                        "mean": float(mat[chain, sweep]),
                    }
                )
    return rows
