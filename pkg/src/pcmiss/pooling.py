"""Pooling of per-imputation test results.

Rubin's rules combine the z-statistics of Fisher's test across completed
datasets; the Meng-Rubin rule combines likelihood-ratio statistics by
re-evaluating each completed dataset's likelihood at the averaged parameter
estimates. Wrapped versions of the three conditional independence tests
consume the completed copies and return ordinary :class:`CiResult` values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from .citest import (
    CgCell,
    CiResult,
    GaussianSuffStat,
    Reference,
    Uninformative,
    cg_fit,
    cg_loglik_at,
    _codes_matrix,
)
from .data import Dataset

#: Between-imputation variances below this are treated as exactly zero.
ZERO_BETWEEN = 1e-12


class PoolError(ValueError):
    """Raised for unusable pooling inputs."""


@dataclass(frozen=True)
class PooledZ:
    """Rubin-pooled z statistic."""

    z_bar: float
    within: float
    between: float
    total: float
    df: float  # t degrees of freedom; inf when between-variance is zero
    p_value: float
    m: int


def pool_z(z_values: Sequence[float], n: int, s: int) -> PooledZ:
    """Pool M z-statistics computed on M completed datasets.

    The within-imputation variance is the complete-data 1/(n - s - 3); the
    between-imputation variance is the sample variance of the inputs. Zero
    between-variance collapses to the complete-data normal reference.
    """
    m = len(z_values)
    if m < 2:
        raise PoolError("pooling needs at least 2 imputations")
    if n <= s + 3:
        raise PoolError("n must exceed s + 3")
    z = np.asarray(z_values, dtype=float)
    z_bar = float(z.mean())
    within = 1.0 / (n - s - 3)
    between = float(z.var(ddof=1))
    if between < ZERO_BETWEEN:
        between = 0.0
        total = within
        df = math.inf
    else:
        total = within + (1.0 + 1.0 / m) * between
        df = (m - 1) * (1.0 + within / ((1.0 + 1.0 / m) * between)) ** 2
    ref = Reference.student_t(df)
    p = ref.p_value(z_bar / math.sqrt(total))
    return PooledZ(z_bar, within, between, total, df, p, m)


@dataclass(frozen=True)
class PooledLr:
    """Meng-Rubin pooled likelihood-ratio statistic."""

    lr_bar: float
    lr_tilde: float
    r3: float
    d3: float
    k: int
    df: float  # denominator df; inf when r3 collapses to zero
    p_value: float
    m: int
    clamped: bool  # negative re-evaluated LR was clamped to zero


def pool_lr_d3(
    fits: Sequence[tuple],
    loglik_at: Callable[[int, object, str], float],
    k: int,
    average: Callable[[Sequence[object]], object],
) -> PooledLr:
    """Pool per-imputation likelihood-ratio tests.

    ``fits[m]`` is ``(lr_m, full_params_m, null_params_m)`` where ``lr_m``
    is the complete-data LR statistic of the m-th completed dataset at its
    own estimates. ``average`` combines parameter objects elementwise;
    ``loglik_at(m, params, role)`` re-evaluates the log-likelihood of
    ``params`` (``role`` is ``"full"`` or ``"null"``) on the m-th completed
    dataset. ``k`` is the complete-data degrees of freedom.
    """
    m = len(fits)
    if m < 2:
        raise PoolError("pooling needs at least 2 imputations")
    if k < 1:
        raise PoolError("k must be at least 1")
    lr_bar = float(np.mean([f[0] for f in fits]))
    full_bar = average([f[1] for f in fits])
    null_bar = average([f[2] for f in fits])
    tilde_terms = [
        -2.0 * (loglik_at(i, null_bar, "null") - loglik_at(i, full_bar, "full"))
        for i in range(m)
    ]
    return _finish_lr_pool(lr_bar, float(np.mean(tilde_terms)), k, m)


def _finish_lr_pool(lr_bar: float, lr_tilde: float, k: int, m: int) -> PooledLr:
    clamped = lr_tilde < 0.0
    if clamped:
        lr_tilde = 0.0
    r3 = (m + 1) * (lr_bar - lr_tilde) / (k * (m - 1))
    if r3 <= 0.0:
        # nonnegative in expectation; finite-sample negativity is noise
        r3 = 0.0
        df = math.inf
    else:
        km1 = k * (m - 1)
        df = 4.0 + (km1 - 4.0) * (1.0 + (1.0 - 2.0 / km1) / r3) ** 2
        if df < 4.0:
            # the asymptotic df formula assumes k(M-1) > 4; floor below that
            df = 4.0
    d3 = lr_tilde / (k * (1.0 + r3))
    ref = Reference.f(k, df)
    return PooledLr(lr_bar, lr_tilde, r3, d3, k, df, ref.p_value(d3), m, clamped)


# -- MI-wrapped conditional independence tests ------------------------------


def _datasets(mi) -> list[Dataset]:
    datasets = list(getattr(mi, "datasets", mi))
    if len(datasets) < 2:
        raise PoolError("multiple imputation tests need at least 2 completions")
    return datasets


def fisher_z_mi(mi, x: str, y: str, zs=(), alpha: float = 0.05) -> CiResult:
    """Fisher's z-test pooled over multiply imputed datasets."""
    datasets = _datasets(mi)
    zs = list(zs)
    s = len(zs)
    n = datasets[0].n
    if n <= s + 3:
        return CiResult.uninformative(n)
    z_values = []
    for ds in datasets:
        try:
            stat = GaussianSuffStat.from_dataset(ds)
            z_values.append(math.atanh(stat.partial_correlation(x, y, zs)))
        except Uninformative:
            return CiResult.uninformative(n)
    pooled = pool_z(z_values, n, s)
    stat = pooled.z_bar / math.sqrt(pooled.total)
    return CiResult(stat, Reference.student_t(pooled.df), pooled.p_value, n)


def fisher_z_mi_from_suffstats(stats_list: Sequence[GaussianSuffStat], x, y, zs) -> CiResult:
    """Pooled Fisher's z from cached per-imputation covariance matrices."""
    zs = list(zs)
    s = len(zs)
    n = stats_list[0].n
    if n <= s + 3:
        return CiResult.uninformative(n)
    z_values = []
    for st in stats_list:
        try:
            z_values.append(math.atanh(st.partial_correlation(x, y, zs)))
        except Uninformative:
            return CiResult.uninformative(n)
    pooled = pool_z(z_values, n, s)
    stat = pooled.z_bar / math.sqrt(pooled.total)
    return CiResult(stat, Reference.student_t(pooled.df), pooled.p_value, n)


# -- G2 pooling --------------------------------------------------------------


def _g2_tables(ds: Dataset, x, y, zs) -> tuple[np.ndarray, tuple[int, int, int]]:
    mat, cards = _codes_matrix(ds, [x, y] + list(zs))
    card_z = 1
    z_cell = np.zeros(ds.n, dtype=np.int64)
    for k in range(len(zs)):
        z_cell = z_cell * cards[2 + k] + mat[:, 2 + k]
        card_z *= cards[2 + k]
    flat = (z_cell * cards[0] + mat[:, 0]) * cards[1] + mat[:, 1]
    counts = np.bincount(flat, minlength=card_z * cards[0] * cards[1]).reshape(
        card_z, cards[0], cards[1]
    )
    return counts, (cards[0], cards[1], card_z)


def _g2_loglik(counts: np.ndarray, probs: np.ndarray) -> float:
    mask = counts > 0
    if (probs[mask] <= 0.0).any():
        raise Uninformative("observed cell has zero pooled probability")
    return float((counts[mask] * np.log(probs[mask])).sum())


def _g2_null_probs(margins: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    """Cell probabilities implied by independence from the (x,z) and (y,z)
    margin tables."""
    theta_xz, theta_yz = margins
    theta_z = theta_xz.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        probs = (
            theta_xz[:, :, None] * theta_yz[:, None, :] / theta_z[:, None, None]
        )
    probs[~np.isfinite(probs)] = 0.0
    return probs


def g2_mi(mi, x: str, y: str, zs=(), alpha: float = 0.05) -> CiResult:
    """G2 test pooled over multiply imputed datasets (Meng-Rubin rule).

    Full-model parameters are the saturated cell probabilities; null-model
    parameters are the two margin tables. Averaging is elementwise over the
    declared cells, so cells unobserved in some completions contribute zero
    probability there.
    """
    datasets = _datasets(mi)
    zs = list(zs)
    n = datasets[0].n
    counts_list = []
    fits = []
    shape = None
    for ds in datasets:
        counts, (cx, cy, cz) = _g2_tables(ds, x, y, zs)
        if shape is None:
            shape = counts.shape
        elif counts.shape != shape:
            raise PoolError("imputations disagree on declared level counts")
        counts_list.append(counts)
        theta = counts / n
        theta_xz = counts.sum(axis=2) / n
        theta_yz = counts.sum(axis=1) / n
        with np.errstate(divide="ignore", invalid="ignore"):
            null_probs = _g2_null_probs((theta_xz, theta_yz))
        try:
            lr = -2.0 * (_g2_loglik(counts, null_probs) - _g2_loglik(counts, theta))
        except Uninformative:
            return CiResult.uninformative(n)
        fits.append((lr, theta, (theta_xz, theta_yz)))
    k = (cx - 1) * (cy - 1) * cz
    if k <= 0:
        return CiResult.uninformative(n)

    def average(params_list):
        if isinstance(params_list[0], tuple):
            return (
                np.mean([p[0] for p in params_list], axis=0),
                np.mean([p[1] for p in params_list], axis=0),
            )
        return np.mean(params_list, axis=0)

    def loglik_at(i, params, role):
        if role == "null":
            return _g2_loglik(counts_list[i], _g2_null_probs(params))
        return _g2_loglik(counts_list[i], params)

    try:
        pooled = pool_lr_d3(fits, loglik_at, k, average)
    except Uninformative:
        return CiResult.uninformative(n)
    return CiResult(pooled.d3, Reference.f(k, pooled.df), pooled.p_value, n)


# -- CG pooling --------------------------------------------------------------


def _project_psd(cov: np.ndarray) -> np.ndarray:
    """Clip negative eigenvalues to zero (elementwise averaging can lose
    definiteness)."""
    sym = (cov + cov.T) / 2.0
    w, v = linalg.eigh(sym)
    if (w >= 0.0).all():
        return sym
    w = np.clip(w, 0.0, None)
    return (v * w) @ v.T


def _average_cg_cells(cell_dicts: Sequence[dict]) -> dict:
    """Average per-cell (probability, mean, covariance) over imputations.

    Probabilities average over all M with absent cells contributing zero;
    means and covariances average over the imputations where the cell is
    present, and averaged covariances are projected back to the PSD cone.
    """
    m = len(cell_dicts)
    keys = set()
    for cells in cell_dicts:
        keys.update(cells)
    out = {}
    for b in sorted(keys):
        present = [cells[b] for cells in cell_dicts if b in cells]
        prob = sum(c.probability for c in present) / m
        count = sum(c.count for c in present)
        if present[0].mean is None:
            out[b] = CgCell(prob, None, None, count)
        else:
            mean = np.mean([c.mean for c in present], axis=0)
            cov = _project_psd(np.mean([c.covariance for c in present], axis=0))
            out[b] = CgCell(prob, mean, cov, count)
    return out


def cg_mi(mi, x: str, y: str, zs=(), alpha: float = 0.05) -> CiResult:
    """CG likelihood-ratio test pooled over multiply imputed datasets.

    The full model is the (XYZ, YZ) fit pair and the null model the
    (XZ, Z) pair; both likelihoods and the degrees of freedom mirror the
    complete-data test, so on all-discrete input this reproduces g2_mi.
    """
    datasets = _datasets(mi)
    zs = list(zs)
    n = datasets[0].n
    var_sets = ([x, y] + zs, [y] + zs, [x] + zs, list(zs))
    all_fits = []
    for ds in datasets:
        try:
            all_fits.append(tuple(cg_fit(ds, vs) for vs in var_sets))
        except Uninformative:
            return CiResult.uninformative(n)
    f0 = all_fits[0]
    k = (f0[0].param_count - f0[1].param_count) - (
        f0[2].param_count - f0[3].param_count
    )
    if k <= 0:
        return CiResult.uninformative(n)
    fits = []
    for quad in all_fits:
        lr = -2.0 * (
            (quad[2].loglik - quad[3].loglik) - (quad[0].loglik - quad[1].loglik)
        )
        full_params = (quad[0].cells, quad[1].cells)
        null_params = (quad[2].cells, quad[3].cells)
        fits.append((lr, full_params, null_params))

    def average(params_list):
        return (
            _average_cg_cells([p[0] for p in params_list]),
            _average_cg_cells([p[1] for p in params_list]),
        )

    def loglik_at(i, params, role):
        # full pairs are (XYZ, YZ) fits, null pairs (XZ, Z); the conditional
        # log-likelihood is their difference
        top, bottom = (f0[0], f0[1]) if role == "full" else (f0[2], f0[3])
        return cg_loglik_at(datasets[i], top, params[0]) - cg_loglik_at(
            datasets[i], bottom, params[1]
        )

    try:
        pooled = pool_lr_d3(fits, loglik_at, k, average)
    except Uninformative:
        return CiResult.uninformative(n)
    return CiResult(pooled.d3, Reference.f(k, pooled.df), pooled.p_value, n)
