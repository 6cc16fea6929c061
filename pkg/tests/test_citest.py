import math

import numpy as np
import pytest
from scipy import stats

from pcmiss.citest import (
    CiResult,
    GaussianSuffStat,
    Reference,
    Uninformative,
    cg_fit,
    cg_test,
    fisher_z,
    fisher_z_test,
    g2_test,
    partial_correlation,
    _partial_corr_from_cov,
)
from pcmiss.data import CATEGORICAL, CONTINUOUS, ColumnSchema, Dataset

from helpers import cat_dataset, cont_dataset


def residual_partial_corr(mat, xi, yi, z_idx):
    """Appendix-style oracle: correlation of regression residuals."""
    n = mat.shape[0]
    design = np.column_stack([np.ones(n)] + [mat[:, j] for j in z_idx])
    bx, *_ = np.linalg.lstsq(design, mat[:, xi], rcond=None)
    by, *_ = np.linalg.lstsq(design, mat[:, yi], rcond=None)
    ex = mat[:, xi] - design @ bx
    ey = mat[:, yi] - design @ by
    return float(ex @ ey / np.sqrt((ex @ ex) * (ey @ ey)))


def assert_p_consistent(res: CiResult):
    assert res.ok
    assert res.p_value == pytest.approx(
        res.reference.p_value(res.statistic), rel=1e-12, abs=1e-300
    )


class TestPartialCorrelation:
    def test_population_equicorrelated(self):
        # pairwise-0.2 covariance: rho_{XY.Z} = 0.16 / 0.96
        cov = np.array([[1.0, 0.2, 0.2], [0.2, 1.0, 0.2], [0.2, 0.2, 1.0]])
        assert _partial_corr_from_cov(cov) == pytest.approx(0.16 / 0.96, abs=1e-12)

    def test_identity_limit_near_zero(self):
        rng = np.random.default_rng(0)
        ds = cont_dataset(rng.normal(size=(200_00, 3)))
        rho = partial_correlation(ds, "V0", "V1", ["V2"])
        assert abs(rho) < 0.02

    def test_empty_conditioning_is_pearson(self):
        rng = np.random.default_rng(1)
        mat = rng.normal(size=(100, 2))
        ds = cont_dataset(mat)
        rho = partial_correlation(ds, "V0", "V1")
        assert rho == pytest.approx(np.corrcoef(mat.T)[0, 1], abs=1e-12)

    def test_matches_residual_formula(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            mat = rng.normal(size=(80, 4))
            mat[:, 1] += 0.5 * mat[:, 2] - 0.3 * mat[:, 3]
            ds = cont_dataset(mat)
            got = partial_correlation(ds, "V0", "V1", ["V2", "V3"])
            want = residual_partial_corr(mat, 0, 1, [2, 3])
            assert got == pytest.approx(want, abs=1e-10)

    def test_singular_is_uninformative(self):
        mat = np.random.default_rng(3).normal(size=(50, 2))
        ds = cont_dataset(np.column_stack([mat, mat[:, 0]]))
        with pytest.raises(Uninformative):
            partial_correlation(ds, "V0", "V1", ["V2"])

    def test_insufficient_rows_uninformative(self):
        ds = cont_dataset(np.random.default_rng(4).normal(size=(4, 3)))
        with pytest.raises(Uninformative):
            partial_correlation(ds, "V0", "V1", ["V2"])


class TestFisherZ:
    def test_zero_correlation(self):
        mat = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]] * 5)
        res = fisher_z_test(cont_dataset(mat), "V0", "V1")
        assert res.statistic == 0.0
        assert res.p_value == 1.0

    def test_transform_value(self):
        assert fisher_z(0.5) == pytest.approx(0.5 * math.log(3.0), abs=1e-12)
        assert fisher_z(0.5) == pytest.approx(0.54931, abs=1e-5)

    def test_symmetric_in_arguments(self):
        rng = np.random.default_rng(5)
        mat = rng.normal(size=(60, 3))
        ds = cont_dataset(mat)
        a = fisher_z_test(ds, "V0", "V1", ["V2"])
        b = fisher_z_test(ds, "V1", "V0", ["V2"])
        assert a.statistic == b.statistic and a.p_value == b.p_value

    def test_reference_and_consistency(self):
        rng = np.random.default_rng(6)
        ds = cont_dataset(rng.normal(size=(40, 3)))
        res = fisher_z_test(ds, "V0", "V1", ["V2"])
        assert res.reference == Reference.normal(1.0 / (40 - 1 - 3))
        assert_p_consistent(res)

    def test_uninformative_small_n(self):
        ds = cont_dataset(np.zeros((3, 2)) + np.arange(3)[:, None])
        res = fisher_z_test(ds, "V0", "V1")
        assert res.status == "uninformative" and res.p_value is None

    def test_power_matches_normal_oracle(self):
        # population rho = 0.16/0.96 as in the equicorrelated example;
        # Monte Carlo rejection rate vs the analytic normal power
        rho = 0.16 / 0.96
        n, s, alpha, reps = 500, 1, 0.05, 2000
        crit = stats.norm.ppf(1 - alpha / 2)
        shift = fisher_z(rho) * math.sqrt(n - s - 3)
        oracle = stats.norm.sf(crit - shift) + stats.norm.cdf(-crit - shift)
        assert oracle == pytest.approx(0.96, abs=0.01)
        cov = np.array([[1.0, 0.2, 0.2], [0.2, 1.0, 0.2], [0.2, 0.2, 1.0]])
        chol = np.linalg.cholesky(cov)
        rng = np.random.default_rng(7)
        rejections = 0
        for _ in range(reps):
            mat = rng.normal(size=(n, 3)) @ chol.T
            res = fisher_z_test(cont_dataset(mat), "V0", "V1", ["V2"])
            rejections += res.p_value <= alpha
        rate = rejections / reps
        se = math.sqrt(oracle * (1 - oracle) / reps)
        assert abs(rate - oracle) < 3 * se + 0.005

    def test_suffstat_matches_direct(self):
        rng = np.random.default_rng(8)
        ds = cont_dataset(rng.normal(size=(50, 4)))
        st = GaussianSuffStat.from_dataset(ds)
        direct = fisher_z_test(ds, "V1", "V3", ["V0"])
        cached = st.fisher_z_test("V1", "V3", ["V0"])
        assert cached.statistic == pytest.approx(direct.statistic, rel=1e-12)
        assert cached.p_value == pytest.approx(direct.p_value, rel=1e-12)


class TestG2:
    def test_exact_independence(self):
        codes = np.repeat(
            [(0, 0), (0, 1), (1, 0), (1, 1)], 25, axis=0
        ).astype(float)
        res = g2_test(cat_dataset(codes, [2, 2]), "C0", "C1")
        assert res.statistic == pytest.approx(0.0, abs=1e-12)
        assert res.p_value == pytest.approx(1.0)

    def test_perfect_association(self):
        codes = np.repeat([(0, 0), (1, 1)], 10, axis=0).astype(float)
        res = g2_test(cat_dataset(codes, [2, 2]), "C0", "C1")
        assert res.statistic == pytest.approx(2.0 * 20.0 * math.log(2.0), rel=1e-12)
        assert res.reference == Reference.chi_square(1)
        assert_p_consistent(res)

    def test_df_binary_conditioning(self):
        rng = np.random.default_rng(9)
        codes = rng.integers(0, 2, size=(40, 3)).astype(float)
        res = g2_test(cat_dataset(codes, [2, 2, 2]), "C0", "C1", ["C2"])
        assert res.reference == Reference.chi_square(2)

    def test_relabeling_invariance(self):
        rng = np.random.default_rng(10)
        codes = rng.integers(0, 3, size=(200, 2)).astype(float)
        base = g2_test(cat_dataset(codes, [3, 3]), "C0", "C1")
        perm = np.array([2, 0, 1])
        relabeled = codes.copy()
        relabeled[:, 0] = perm[codes[:, 0].astype(int)]
        again = g2_test(cat_dataset(relabeled, [3, 3]), "C0", "C1")
        assert again.statistic == pytest.approx(base.statistic, rel=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(11)
        codes = rng.integers(0, 2, size=(100, 3)).astype(float)
        ds = cat_dataset(codes, [2, 2, 2])
        a = g2_test(ds, "C0", "C1", ["C2"])
        b = g2_test(ds, "C1", "C0", ["C2"])
        assert a.statistic == pytest.approx(b.statistic, rel=1e-12)


class TestCgFit:
    def test_all_continuous_single_cell(self):
        rng = np.random.default_rng(12)
        mat = rng.normal(size=(100, 3))
        fit = cg_fit(cont_dataset(mat), ["V0", "V1", "V2"])
        assert len(fit.cells) == 1
        assert fit.param_count == 3 * 4 // 2 + 3  # covariance + means
        mu = fit.cells[0].mean
        assert mu == pytest.approx(mat.mean(axis=0))
        # MLE multivariate normal log-likelihood
        cov = np.cov(mat, rowvar=False, ddof=0)
        want = -0.5 * 100 * (3 * math.log(2 * math.pi) + math.log(np.linalg.det(cov)) + 3)
        assert fit.loglik == pytest.approx(want, rel=1e-10)

    def test_all_discrete_multinomial(self):
        rng = np.random.default_rng(13)
        codes = rng.integers(0, 2, size=(50, 2)).astype(float)
        fit = cg_fit(cat_dataset(codes, [2, 2]), ["C0", "C1"])
        assert fit.param_count == 4 - 1

    def test_mixed_param_count(self):
        rng = np.random.default_rng(14)
        n = 60
        mat = np.column_stack(
            [rng.normal(size=n), rng.integers(0, 2, size=n).astype(float)]
        )
        schema = [
            ColumnSchema("X", CONTINUOUS),
            ColumnSchema("B", CATEGORICAL, ("a", "b")),
        ]
        fit = cg_fit(Dataset(schema, mat), ["X", "B"])
        assert len(fit.cells) == 2
        # per cell: 1 covariance + 1 mean + 1 probability = 3; sum-to-one
        # removes one
        assert fit.param_count == 2 * 3 - 1

    def test_all_cells_degenerate_uninformative(self):
        schema = [
            ColumnSchema("X", CONTINUOUS),
            ColumnSchema("B", CATEGORICAL, ("a", "b")),
        ]
        mat = np.array([[0.3, 0.0], [0.7, 1.0]])
        with pytest.raises(Uninformative):
            cg_fit(Dataset(schema, mat), ["X", "B"])


class TestCgTest:
    def test_continuous_matches_fisher_form(self):
        rng = np.random.default_rng(15)
        mat = rng.normal(size=(400, 2))
        mat[:, 1] += 0.4 * mat[:, 0]
        ds = cont_dataset(mat)
        res = cg_test(ds, "V0", "V1")
        r = np.corrcoef(mat.T)[0, 1]
        assert res.statistic == pytest.approx(-400 * math.log(1 - r * r), rel=1e-9)
        assert res.reference == Reference.chi_square(1)

    def test_continuous_tracks_fisher_p(self):
        rng = np.random.default_rng(16)
        diffs = []
        for _ in range(60):
            mat = rng.normal(size=(5000, 2))
            ds = cont_dataset(mat)
            p_cg = cg_test(ds, "V0", "V1").p_value
            p_z = fisher_z_test(ds, "V0", "V1").p_value
            diffs.append(abs(p_cg - p_z))
        assert max(diffs) < 0.02

    def test_all_discrete_equals_g2(self):
        rng = np.random.default_rng(17)
        for _ in range(10):
            codes = rng.integers(0, 2, size=(120, 3)).astype(float)
            codes[:, 1] = np.where(rng.random(120) < 0.3, codes[:, 0], codes[:, 1])
            ds = cat_dataset(codes, [2, 2, 2])
            a = cg_test(ds, "C0", "C1", ["C2"])
            b = g2_test(ds, "C0", "C1", ["C2"])
            assert a.statistic == pytest.approx(b.statistic, rel=1e-9, abs=1e-9)
            assert a.reference == b.reference

    def test_level_mixed_null(self):
        # X continuous independent of binary Y; modest Monte Carlo level check
        rng = np.random.default_rng(18)
        alpha, reps = 0.05, 800
        rejections = 0
        schema = [
            ColumnSchema("X", CONTINUOUS),
            ColumnSchema("Y", CATEGORICAL, ("a", "b")),
        ]
        for _ in range(reps):
            n = 1000
            mat = np.column_stack(
                [rng.normal(size=n), (rng.random(n) < 0.5).astype(float)]
            )
            res = cg_test(Dataset(schema, mat), "X", "Y")
            rejections += res.p_value <= alpha
        rate = rejections / reps
        se = math.sqrt(alpha * (1 - alpha) / reps)
        assert rate <= alpha + 3 * se

    def test_symmetric_df(self):
        # df must not depend on which variable plays the conditioned role
        rng = np.random.default_rng(19)
        n = 300
        schema = [
            ColumnSchema("X", CONTINUOUS),
            ColumnSchema("B", CATEGORICAL, ("a", "b", "c")),
            ColumnSchema("Z", CONTINUOUS),
        ]
        mat = np.column_stack(
            [
                rng.normal(size=n),
                rng.integers(0, 3, size=n).astype(float),
                rng.normal(size=n),
            ]
        )
        ds = Dataset(schema, mat)
        a = cg_test(ds, "X", "B", ["Z"])
        b = cg_test(ds, "B", "X", ["Z"])
        assert a.reference == b.reference
        assert a.statistic == pytest.approx(b.statistic, rel=1e-9)
