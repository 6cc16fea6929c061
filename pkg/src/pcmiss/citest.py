"""Complete-data conditional independence tests.

Fisher's z for continuous data, the G2 likelihood-ratio test for
contingency tables, and the conditional-Gaussian likelihood-ratio test for
mixed data. Each test yields a :class:`CiResult`; tests that cannot be run
(singular covariance, too few rows, zero degrees of freedom) report status
``uninformative`` instead of raising or faking a p-value — the search layer
decides what that means.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import linalg, stats

from .data import Dataset

OK = "ok"
UNINFORMATIVE = "uninformative"

_LOG_2PI = math.log(2.0 * math.pi)


class Uninformative(Exception):
    """Internal signal: the requested statistic cannot be computed."""


@dataclass(frozen=True)
class Reference:
    """Null reference distribution of a test statistic."""

    kind: str  # normal | chi_square | t | f
    params: tuple

    @staticmethod
    def normal(variance: float) -> "Reference":
        return Reference("normal", (float(variance),))

    @staticmethod
    def chi_square(df: float) -> "Reference":
        return Reference("chi_square", (float(df),))

    @staticmethod
    def student_t(df: float) -> "Reference":
        return Reference("t", (float(df),))

    @staticmethod
    def f(df1: float, df2: float) -> "Reference":
        return Reference("f", (float(df1), float(df2)))

    def p_value(self, statistic: float) -> float:
        if self.kind == "normal":
            (variance,) = self.params
            return float(2.0 * stats.norm.sf(abs(statistic) / math.sqrt(variance)))
        if self.kind == "t":
            (df,) = self.params
            if math.isinf(df):
                return float(2.0 * stats.norm.sf(abs(statistic)))
            return float(2.0 * stats.t.sf(abs(statistic), df))
        if self.kind == "chi_square":
            (df,) = self.params
            return float(stats.chi2.sf(statistic, df))
        if self.kind == "f":
            df1, df2 = self.params
            if math.isinf(df2):
                return float(stats.chi2.sf(statistic * df1, df1))
            return float(stats.f.sf(statistic, df1, df2))
        raise ValueError(f"unknown reference kind {self.kind!r}")


@dataclass(frozen=True)
class CiResult:
    """Outcome of one conditional independence test."""

    statistic: float | None
    reference: Reference | None
    p_value: float | None
    effective_n: int
    status: str = OK

    @staticmethod
    def uninformative(effective_n: int = 0) -> "CiResult":
        return CiResult(None, None, None, effective_n, UNINFORMATIVE)

    @property
    def ok(self) -> bool:
        return self.status == OK

    def independent_at(self, alpha: float) -> bool | None:
        if not self.ok:
            return None
        return self.p_value > alpha


def _result(statistic: float, reference: Reference, n: int) -> CiResult:
    return CiResult(float(statistic), reference, reference.p_value(statistic), n, OK)


# -- Fisher's z ----------------------------------------------------------


def _partial_corr_from_cov(cov: np.ndarray) -> float:
    """Partial correlation of variables 0 and 1 given the rest.

    Inverts the covariance by symmetric positive-definite factorization;
    singularity — exact or to working precision — raises
    :class:`Uninformative` (no ridge in the test path).
    """
    try:
        chol, low = linalg.cho_factor(cov, lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise Uninformative("singular covariance") from None
    diag = np.diag(chol)
    if diag.min() <= 1e-7 * diag.max():
        raise Uninformative("covariance singular to working precision")
    prec = linalg.cho_solve((chol, low), np.eye(cov.shape[0]), check_finite=False)
    denom = math.sqrt(prec[0, 0] * prec[1, 1])
    if denom == 0.0 or not math.isfinite(denom):
        raise Uninformative("degenerate precision")
    rho = float(-prec[0, 1] / denom)
    if not -1.0 < rho < 1.0:
        raise Uninformative("degenerate correlation")
    return rho


def partial_correlation(ds: Dataset, x: str, y: str, zs: Iterable[str] = ()) -> float:
    """Empirical partial correlation of ``x`` and ``y`` given ``zs``.

    Requires complete continuous data and more rows than ``len(zs) + 3``;
    otherwise raises :class:`Uninformative`.
    """
    zs = list(zs)
    if ds.column_index(x) > ds.column_index(y):
        x, y = y, x  # canonical order keeps the result bit-identical
    cols = [x, y] + zs
    for v in cols:
        col = ds.column_schema(v)
        if not col.is_continuous:
            raise Uninformative(f"{v!r} is not continuous")
        if ds.column_missing(v).any():
            raise ValueError(f"column {v!r} contains missing values")
    if ds.n <= len(zs) + 3:
        raise Uninformative("not enough rows")
    mat = np.column_stack([ds.column(v) for v in cols])
    cov = np.cov(mat, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    return _partial_corr_from_cov(cov)


def fisher_z(rho: float) -> float:
    """Variance-stabilizing transform of a correlation."""
    return float(np.arctanh(rho))


def fisher_z_test(ds: Dataset, x: str, y: str, zs: Iterable[str] = (), alpha: float = 0.05) -> CiResult:
    """Fisher's z-test of ``x`` independent of ``y`` given ``zs``.

    ``alpha`` is carried for callers that turn results into decisions; the
    returned statistic and p-value do not depend on it.
    """
    zs = list(zs)
    s = len(zs)
    try:
        rho = partial_correlation(ds, x, y, zs)
    except Uninformative:
        return CiResult.uninformative(ds.n)
    z = fisher_z(rho)
    return _result(z, Reference.normal(1.0 / (ds.n - s - 3)), ds.n)


class GaussianSuffStat:
    """Cached covariance of a complete continuous dataset.

    Lets repeated conditional-independence queries against the same data
    reuse one covariance computation; the partial correlation of any small
    variable subset comes from inverting the corresponding submatrix, which
    is identical to recomputing the covariance of just those columns.
    """

    __slots__ = ("cov", "n", "index")

    def __init__(self, cov: np.ndarray, n: int, names: Sequence[str]):
        self.cov = cov
        self.n = n
        self.index = {v: i for i, v in enumerate(names)}

    @classmethod
    def from_dataset(cls, ds: Dataset) -> "GaussianSuffStat":
        names = [c.name for c in ds.schema if c.is_continuous]
        mat = np.column_stack([ds.column(v) for v in names])
        if np.isnan(mat).any():
            raise ValueError("dataset has missing values")
        cov = np.atleast_2d(np.cov(mat, rowvar=False, ddof=1))
        return cls(cov, ds.n, names)

    def partial_correlation(self, x: str, y: str, zs: Sequence[str]) -> float:
        xi, yi = self.index[x], self.index[y]
        if xi > yi:
            xi, yi = yi, xi  # canonical order keeps the result bit-identical
        idx = [xi, yi] + [self.index[v] for v in zs]
        return _partial_corr_from_cov(self.cov[np.ix_(idx, idx)])

    def fisher_z_test(self, x: str, y: str, zs: Sequence[str]) -> CiResult:
        s = len(zs)
        if self.n <= s + 3:
            return CiResult.uninformative(self.n)
        try:
            rho = self.partial_correlation(x, y, zs)
        except Uninformative:
            return CiResult.uninformative(self.n)
        return _result(fisher_z(rho), Reference.normal(1.0 / (self.n - s - 3)), self.n)


# -- G2 ------------------------------------------------------------------


def _codes_matrix(ds: Dataset, names: Sequence[str]) -> tuple[np.ndarray, list[int]]:
    cols = []
    cards = []
    for v in names:
        col = ds.column_schema(v)
        if col.is_continuous:
            raise ValueError(f"{v!r} is not categorical")
        if ds.column_missing(v).any():
            raise ValueError(f"column {v!r} contains missing values")
        cols.append(ds.column(v).astype(np.int64))
        cards.append(len(col.levels))
    mat = np.column_stack(cols) if cols else np.zeros((ds.n, 0), dtype=np.int64)
    return mat, cards


def g2_statistic(
    x_codes: np.ndarray,
    y_codes: np.ndarray,
    z_cell: np.ndarray,
    card_x: int,
    card_y: int,
    card_z: int,
) -> float:
    """G2 = 2 * sum n_xyz * log(n_xyz * n_z / (n_xz * n_yz)) over observed
    cells; empty cells contribute zero (0*log 0 = 0 convention)."""
    flat = (z_cell * card_x + x_codes) * card_y + y_codes
    n_xyz = np.bincount(flat, minlength=card_z * card_x * card_y).reshape(
        card_z, card_x, card_y
    )
    n_xz = n_xyz.sum(axis=2)
    n_yz = n_xyz.sum(axis=1)
    n_z = n_xyz.sum(axis=(1, 2))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = (
            n_xyz * n_z[:, None, None] / (n_xz[:, :, None] * n_yz[:, None, :])
        )
        terms = np.where(n_xyz > 0, n_xyz * np.log(ratio, where=n_xyz > 0), 0.0)
    return float(2.0 * terms.sum())


def g2_df(card_x: int, card_y: int, z_cards: Sequence[int]) -> int:
    """Nominal degrees of freedom from the declared level counts; no
    adjustment for structural zeros."""
    cells = 1
    for c in z_cards:
        cells *= c
    return (card_x - 1) * (card_y - 1) * cells


def g2_test(ds: Dataset, x: str, y: str, zs: Iterable[str] = (), alpha: float = 0.05) -> CiResult:
    """Likelihood-ratio test of independence in a contingency table."""
    zs = list(zs)
    mat, cards = _codes_matrix(ds, [x, y] + zs)
    df = g2_df(cards[0], cards[1], cards[2:])
    if df <= 0 or ds.n == 0:
        return CiResult.uninformative(ds.n)
    z_cell = np.zeros(ds.n, dtype=np.int64)
    card_z = 1
    for k in range(len(zs)):
        z_cell = z_cell * cards[2 + k] + mat[:, 2 + k]
        card_z *= cards[2 + k]
    stat = g2_statistic(mat[:, 0], mat[:, 1], z_cell, cards[0], cards[1], card_z)
    return _result(stat, Reference.chi_square(df), ds.n)


# -- conditional Gaussian --------------------------------------------------


@dataclass(frozen=True)
class CgCell:
    """Parameters of one discrete cell of a CG fit."""

    probability: float
    mean: np.ndarray | None
    covariance: np.ndarray | None
    count: int


@dataclass(frozen=True)
class CgFit:
    """Maximum-likelihood conditional-Gaussian fit over a variable set."""

    continuous: tuple[str, ...]
    discrete: tuple[str, ...]
    cards: tuple[int, ...]
    cells: dict  # cell index -> CgCell
    loglik: float
    param_count: int
    n: int


def _split_vars(ds: Dataset, names: Iterable[str]) -> tuple[list[str], list[str]]:
    cont, disc = [], []
    for v in names:
        (cont if ds.column_schema(v).is_continuous else disc).append(v)
    return cont, disc


def _gauss_loglik(xc: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    """Sum of multivariate normal log densities; raises on non-PD cov."""
    d = cov.shape[0]
    try:
        chol, low = linalg.cho_factor(cov, lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise Uninformative("singular within-cell covariance") from None
    logdet = 2.0 * float(np.log(np.diag(chol)).sum())
    diff = xc - mean
    solved = linalg.cho_solve((chol, low), diff.T, check_finite=False)
    quad = float((diff.T * solved).sum())
    nb = xc.shape[0]
    return -0.5 * (nb * (d * _LOG_2PI + logdet) + quad)


def cg_fit(ds: Dataset, names: Iterable[str]) -> CgFit:
    """Fit the saturated CG model over ``names`` on complete data.

    Within each observed joint level of the discrete variables, the
    continuous variables get cell-specific mean and covariance. Cells with
    too few rows for their own covariance (count <= number of continuous
    variables) enter the likelihood with the pooled within-cell covariance;
    parameter counting stays nominal. Raises :class:`Uninformative` if no
    cell supports a covariance estimate.
    """
    names = list(names)
    cont, disc = _split_vars(ds, names)
    d = len(cont)
    disc_mat, cards = _codes_matrix(ds, disc)
    n = ds.n
    if n == 0:
        raise Uninformative("no rows")
    cell_idx = np.zeros(n, dtype=np.int64)
    n_cells_declared = 1
    for k, card in enumerate(cards):
        cell_idx = cell_idx * card + disc_mat[:, k]
        n_cells_declared *= card

    xc = (
        np.column_stack([ds.column(v) for v in cont])
        if cont
        else np.zeros((n, 0))
    )
    order = np.argsort(cell_idx, kind="stable")
    sorted_cells = cell_idx[order]
    boundaries = np.flatnonzero(np.diff(sorted_cells)) + 1
    groups = np.split(order, boundaries)

    cells: dict[int, CgCell] = {}
    loglik = 0.0
    if d > 0:
        if all(rows.size <= d for rows in groups):
            raise Uninformative("every discrete cell is degenerate")
        means = {}
        pooled = np.zeros((d, d))
        for rows in groups:
            b = int(cell_idx[rows[0]])
            mu = xc[rows].mean(axis=0)
            means[b] = mu
            diff = xc[rows] - mu
            pooled += diff.T @ diff
        pooled /= n
        for rows in groups:
            b = int(cell_idx[rows[0]])
            nb = rows.size
            p_b = nb / n
            mu = means[b]
            diff = xc[rows] - mu
            cov = (diff.T @ diff) / nb
            use = cov
            if nb <= d:
                use = pooled
            try:
                ll = _gauss_loglik(xc[rows], mu, use)
            except Uninformative:
                use = pooled
                ll = _gauss_loglik(xc[rows], mu, use)  # may raise again
            if disc:
                loglik += nb * math.log(p_b)
            loglik += ll
            cells[b] = CgCell(p_b, mu, use, nb)
    else:
        for rows in groups:
            b = int(cell_idx[rows[0]])
            nb = rows.size
            p_b = nb / n
            loglik += nb * math.log(p_b)
            cells[b] = CgCell(p_b, None, None, nb)

    per_cell = d * (d + 1) // 2 + d + 1
    param_count = n_cells_declared * per_cell - 1
    return CgFit(tuple(cont), tuple(disc), tuple(cards), cells, loglik, param_count, n)


def cg_loglik_at(ds: Dataset, fit_like: CgFit, cells: dict) -> float:
    """Log-likelihood of complete data under explicit CG cell parameters.

    ``cells`` maps cell index to :class:`CgCell`; used when re-evaluating
    pooled (averaged) parameters on each completed dataset.
    """
    cont, disc = list(fit_like.continuous), list(fit_like.discrete)
    d = len(cont)
    disc_mat, cards = _codes_matrix(ds, disc)
    n = ds.n
    cell_idx = np.zeros(n, dtype=np.int64)
    for k, card in enumerate(cards):
        cell_idx = cell_idx * card + disc_mat[:, k]
    xc = (
        np.column_stack([ds.column(v) for v in cont]) if cont else np.zeros((n, 0))
    )
    order = np.argsort(cell_idx, kind="stable")
    sorted_cells = cell_idx[order]
    boundaries = np.flatnonzero(np.diff(sorted_cells)) + 1
    groups = np.split(order, boundaries)
    loglik = 0.0
    for rows in groups:
        b = int(cell_idx[rows[0]])
        if b not in cells:
            raise Uninformative(f"cell {b} has no parameters")
        cell = cells[b]
        nb = rows.size
        if disc:
            if cell.probability <= 0.0:
                raise Uninformative(f"cell {b} has zero probability")
            loglik += nb * math.log(cell.probability)
        if d:
            loglik += _gauss_loglik(xc[rows], cell.mean, cell.covariance)
    return loglik


def cg_test(ds: Dataset, x: str, y: str, zs: Iterable[str] = (), alpha: float = 0.05) -> CiResult:
    """Conditional-Gaussian likelihood-ratio test on mixed complete data.

    Compares the conditional log-likelihood of ``x`` given ``(y, zs)`` with
    that of ``x`` given ``zs`` via four saturated CG fits; reduces exactly
    to the G2 test when every variable is categorical.
    """
    zs = list(zs)
    try:
        fit_xyz = cg_fit(ds, [x, y] + zs)
        fit_yz = cg_fit(ds, [y] + zs)
        fit_xz = cg_fit(ds, [x] + zs)
        fit_z = cg_fit(ds, zs) if zs else None
    except Uninformative:
        return CiResult.uninformative(ds.n)
    ll_z = fit_z.loglik if fit_z else 0.0
    p_z = fit_z.param_count if fit_z else 0
    stat = -2.0 * ((fit_xz.loglik - ll_z) - (fit_xyz.loglik - fit_yz.loglik))
    df = (fit_xyz.param_count - fit_yz.param_count) - (fit_xz.param_count - p_z)
    if df <= 0:
        return CiResult.uninformative(ds.n)
    return _result(stat, Reference.chi_square(df), ds.n)
