import math
from itertools import combinations

import numpy as np
import pytest
from scipy import stats

from pcmiss.citest import cg_test, fisher_z_test, g2_test
from pcmiss.data import CATEGORICAL
from pcmiss.graphs import Dag, d_separated
from pcmiss.simulate import (
    CgModel,
    CgNode,
    DiscreteBn,
    GaussianSem,
    ModelError,
    load_benchmark,
    model_from_json,
    model_to_json,
    random_dag,
    sample,
    sample_cg,
    sample_discrete_bn,
    sample_gaussian_sem,
    sem_with_uniform_weights,
    weight_for_power,
)


class TestRandomDag:
    def test_density_zero_empty(self):
        g = random_dag(6, 0.0, seed=0)
        assert not g.edges

    def test_density_one_complete(self):
        g = random_dag(4, 1.0, seed=0)
        assert len(g.edges) == 6

    def test_mean_edge_count(self):
        rng = np.random.default_rng(1)
        counts = [len(random_dag(8, 0.4, rng).edges) for _ in range(4000)]
        mean = np.mean(counts)
        se = np.std(counts, ddof=1) / math.sqrt(len(counts))
        assert abs(mean - 0.4 * 28) < 3 * se

    def test_edges_old_to_new(self):
        g = random_dag(10, 0.5, seed=2)
        order = {v: i for i, v in enumerate(g.nodes)}
        assert all(order[a] < order[b] for a, b in g.edges)


class TestWeightForPower:
    def test_closed_form_at_half_power(self):
        # at power 0.5 the power normal quantile vanishes
        n = 500
        w = weight_for_power(0.5, n=n, alpha=0.05)
        r = w / math.sqrt(1 + w * w)
        want_r = math.tanh(stats.norm.ppf(0.975) / math.sqrt(n - 3))
        assert r == pytest.approx(want_r, rel=1e-12)
        assert r == pytest.approx(0.0877, abs=2e-4)

    def test_monte_carlo_round_trip(self):
        n, alpha, target = 500, 0.05, 0.7
        w = weight_for_power(target, n=n, alpha=alpha)
        rng = np.random.default_rng(3)
        crit = stats.norm.ppf(1 - alpha / 2)
        rejections = 0
        reps = 4000
        for _ in range(reps):
            x = rng.normal(size=n)
            y = w * x + rng.normal(size=n)
            r = np.corrcoef(x, y)[0, 1]
            rejections += abs(math.atanh(r)) * math.sqrt(n - 3) > crit
        assert abs(rejections / reps - target) < 0.02

    def test_infeasible_targets(self):
        with pytest.raises(ModelError):
            weight_for_power(0.04, n=100, alpha=0.05)
        with pytest.raises(ModelError):
            weight_for_power(1.0, n=100, alpha=0.05)


class TestSamplers:
    def test_single_node_moments(self):
        g = Dag(["X"], [])
        model = GaussianSem(g, {}, {"X": 1.0})
        ds = sample_gaussian_sem(model, 10_000, seed=4)
        x = ds.column("X")
        assert abs(x.mean()) < 3 / math.sqrt(10_000)
        assert abs(x.var(ddof=1) - 1.0) < 3 * math.sqrt(2 / 10_000)

    def test_edge_correlation(self):
        w = 0.8
        g = Dag(["X", "Y"], [("X", "Y")])
        model = GaussianSem(g, {("X", "Y"): w}, {"X": 1.0, "Y": 1.0})
        ds = sample_gaussian_sem(model, 20_000, seed=5)
        r = np.corrcoef(ds.column("X"), ds.column("Y"))[0, 1]
        want = w / math.sqrt(1 + w * w)
        assert abs(r - want) < 3 / math.sqrt(20_000)

    def test_equicorrelated_target_covariance(self):
        # SEM parameterization of the 4-variable covariance with pairwise 0.2
        # among (X, Y, Z) and (0.5, 0.2, 0.2) against A, via regression
        # decomposition in the order Z, X, Y, A
        sigma = np.array(
            [
                [1.0, 0.2, 0.2, 0.5],
                [0.2, 1.0, 0.2, 0.2],
                [0.2, 0.2, 1.0, 0.2],
                [0.5, 0.2, 0.2, 1.0],
            ]
        )  # order X, Y, Z, A
        order = [2, 0, 1, 3]  # Z, X, Y, A
        names = ["X", "Y", "Z", "A"]
        edges, weights, noise = [], {}, {}
        for pos, j in enumerate(order):
            sofar = order[:pos]
            if not sofar:
                noise[names[j]] = sigma[j, j]
                continue
            sub = sigma[np.ix_(sofar, sofar)]
            cross = sigma[np.ix_(sofar, [j])][:, 0]
            beta = np.linalg.solve(sub, cross)
            noise[names[j]] = float(sigma[j, j] - cross @ beta)
            for b, i in zip(beta, sofar):
                edges.append((names[i], names[j]))
                weights[(names[i], names[j])] = float(b)
        model = GaussianSem(Dag(["Z", "X", "Y", "A"], edges), weights, noise)
        n = 40_000
        ds = sample_gaussian_sem(model, n, seed=6)
        mat = np.column_stack([ds.column(v) for v in names])
        emp = np.cov(mat, rowvar=False)
        # covariance entries have standard error ~ sqrt((1 + s_ij^2)/n)
        assert np.max(np.abs(emp - sigma)) < 3 * math.sqrt(2.0 / n) * 1.5

    def test_discrete_matches_cpt(self):
        g = Dag(["A", "B"], [("A", "B")])
        levels = {"A": ("0", "1"), "B": ("0", "1")}
        cpts = {
            "A": np.array([[0.3, 0.7]]),
            "B": np.array([[0.9, 0.1], [0.2, 0.8]]),
        }
        model = DiscreteBn(g, levels, cpts)
        ds = sample_discrete_bn(model, 50_000, seed=7)
        a = ds.column("A")
        b = ds.column("B")
        assert abs(a.mean() - 0.7) < 0.01
        assert abs(b[a == 0].mean() - 0.1) < 0.02
        assert abs(b[a == 1].mean() - 0.8) < 0.02

    def test_cg_cell_means(self):
        g = Dag(["B", "X"], [("B", "X")])
        model = CgModel(
            g,
            levels={"B": ("u", "v")},
            cpts={"B": np.array([[0.5, 0.5]])},
            linear={
                "X": CgNode(
                    intercepts=np.array([-1.0, 2.0]),
                    coefficients=np.zeros((2, 0)),
                    noise_variances=np.array([1.0, 0.25]),
                )
            },
        )
        ds = sample_cg(model, 30_000, seed=8)
        b = ds.column("B")
        x = ds.column("X")
        assert abs(x[b == 0].mean() + 1.0) < 0.03
        assert abs(x[b == 1].mean() - 2.0) < 0.03
        assert abs(x[b == 1].var(ddof=1) - 0.25) < 0.02

    def test_seed_determinism(self):
        model = sem_with_uniform_weights(random_dag(5, 0.5, seed=9), 0.5)
        one = sample_gaussian_sem(model, 100, seed=10)
        two = sample_gaussian_sem(model, 100, seed=10)
        assert np.array_equal(one.values, two.values)


class TestSerialization:
    def test_gaussian_round_trip(self):
        model = sem_with_uniform_weights(random_dag(5, 0.6, seed=11), 0.4)
        back = model_from_json(model_to_json(model))
        assert back.dag == model.dag
        assert back.weights == model.weights

    def test_cg_round_trip(self):
        model = load_benchmark("HEALTHCARE")
        back = model_from_json(model_to_json(model))
        assert back.dag == model.dag
        ds1 = sample(model, 50, seed=12)
        ds2 = sample(back, 50, seed=12)
        assert np.array_equal(ds1.values, ds2.values)


class TestBenchmarks:
    @pytest.mark.parametrize(
        "name,nodes,edges",
        [
            ("ECOLI", 12, 17),
            ("MAGIC", 7, 7),
            ("ASIA", 8, 8),
            ("SACHS", 11, 17),
            ("HEALTHCARE", 7, 9),
            ("MEHRA", 8, 14),
            ("ECOLI_large", 46, 70),
        ],
    )
    def test_counts(self, name, nodes, edges):
        model = load_benchmark(name)
        assert len(model.dag.nodes) == nodes
        assert len(model.dag.edges) == edges

    def test_asia_binary(self):
        model = load_benchmark("ASIA")
        assert all(len(model.levels[v]) == 2 for v in model.dag.nodes)

    def test_sachs_three_levels(self):
        model = load_benchmark("SACHS")
        assert all(len(model.levels[v]) == 3 for v in model.dag.nodes)

    def test_healthcare_mixture(self):
        model = load_benchmark("HEALTHCARE")
        assert len(model.continuous_nodes()) == 4
        assert sorted(len(model.levels[v]) for v in model.discrete_nodes()) == [2, 3, 3]

    def test_mehra_cardinalities(self):
        model = load_benchmark("MEHRA")
        cards = sorted(len(model.levels[v]) for v in model.discrete_nodes())
        assert cards == [6, 9, 20, 31]
        assert len(model.continuous_nodes()) == 4

    def test_ecoli_is_induced_subgraph_of_large(self):
        small = load_benchmark("ECOLI")
        large = load_benchmark("ECOLI_large")
        keep = set(small.dag.nodes)
        assert keep <= set(large.dag.nodes)
        induced = large.dag.subgraph(keep)
        assert induced.edges == small.dag.edges

    def test_unknown_name(self):
        with pytest.raises(ModelError):
            load_benchmark("NOPE")

    def test_samples_respect_d_separations(self):
        # true independencies should be rejected at roughly the nominal rate
        rng = np.random.default_rng(13)
        alpha, reps, n = 0.05, 300, 2000
        for name, test in (("ECOLI", fisher_z_test), ("ASIA", g2_test)):
            model = load_benchmark(name)
            dag = model.dag
            seps = []
            nodes = list(dag.nodes)
            for x, y in combinations(nodes, 2):
                pool = [v for v in nodes if v not in (x, y)]
                for size in (0, 1, 2):
                    found = False
                    for zs in combinations(pool, size):
                        if d_separated(dag, x, y, zs):
                            seps.append((x, y, list(zs)))
                            found = True
                            break
                    if found:
                        break
            idx = rng.choice(len(seps), size=min(5, len(seps)), replace=False)
            chosen = [seps[i] for i in idx]
            rejections = 0
            total = 0
            for rep in range(reps // len(chosen)):
                ds = sample(model, n, rng)
                for x, y, zs in chosen:
                    res = test(ds, x, y, zs)
                    if res.ok:
                        rejections += res.p_value <= alpha
                        total += 1
            rate = rejections / total
            se = math.sqrt(alpha * (1 - alpha) / total)
            assert rate < alpha + 4 * se, f"{name}: level {rate}"
