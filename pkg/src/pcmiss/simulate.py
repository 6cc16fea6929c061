"""Ground-truth models and samplers.

Linear-Gaussian structural equation models, discrete Bayesian networks and
conditional-Gaussian models, plus random-DAG generation and the
power-calibrated edge weights used by the density/strength sweeps.
Benchmark structures ship as JSON fixtures under ``pcmiss/benchmarks``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .data import CATEGORICAL, CONTINUOUS, ColumnSchema, Dataset
from .graphs import Dag, GraphError

BENCHMARK_NAMES = (
    "ECOLI",
    "MAGIC",
    "ASIA",
    "SACHS",
    "HEALTHCARE",
    "MEHRA",
    "ECOLI_large",
)


class ModelError(ValueError):
    """Raised for invalid generative models."""


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _sorted_parents(dag: Dag, node: str) -> list[str]:
    return sorted(dag.parents(node), key=dag.index)


# -- model types ------------------------------------------------------------


@dataclass(frozen=True)
class GaussianSem:
    """Linear structural equation model with Gaussian noise."""

    dag: Dag
    weights: Mapping[tuple, float]
    noise_variances: Mapping[str, float]

    def __post_init__(self):
        for edge in self.dag.edges:
            if edge not in self.weights:
                raise ModelError(f"missing weight for edge {edge}")
            if not math.isfinite(self.weights[edge]):
                raise ModelError(f"non-finite weight on {edge}")
        for v in self.dag.nodes:
            if self.noise_variances.get(v, 0.0) <= 0.0:
                raise ModelError(f"noise variance of {v!r} must be positive")

    @property
    def nodes(self):
        return self.dag.nodes


@dataclass(frozen=True)
class DiscreteBn:
    """Bayesian network over categorical nodes.

    ``cpts[v]`` has one row per joint level of ``v``'s parents (parents
    sorted by node order, mixed-radix row index) and one column per level
    of ``v``; every row sums to one.
    """

    dag: Dag
    levels: Mapping[str, tuple]
    cpts: Mapping[str, np.ndarray]

    def __post_init__(self):
        for v in self.dag.nodes:
            if v not in self.levels or len(self.levels[v]) < 2:
                raise ModelError(f"discrete node {v!r} needs at least 2 levels")
            cpt = np.asarray(self.cpts[v], dtype=float)
            parents = _sorted_parents(self.dag, v)
            rows = int(np.prod([len(self.levels[p]) for p in parents])) if parents else 1
            if cpt.shape != (rows, len(self.levels[v])):
                raise ModelError(f"CPT shape mismatch at {v!r}: {cpt.shape}")
            if not np.allclose(cpt.sum(axis=1), 1.0, atol=1e-12):
                raise ModelError(f"CPT rows of {v!r} must sum to 1")

    @property
    def nodes(self):
        return self.dag.nodes


@dataclass(frozen=True)
class CgNode:
    """Continuous node of a CG model: per discrete-parent-cell linear model."""

    intercepts: np.ndarray  # (cells,)
    coefficients: np.ndarray  # (cells, n continuous parents)
    noise_variances: np.ndarray  # (cells,)


@dataclass(frozen=True)
class CgModel:
    """Mixed model: discrete nodes with CPTs, continuous nodes with
    cell-specific linear models. Discrete nodes cannot have continuous
    parents (CG factorization)."""

    dag: Dag
    levels: Mapping[str, tuple]
    cpts: Mapping[str, np.ndarray] = field(default_factory=dict)
    linear: Mapping[str, CgNode] = field(default_factory=dict)

    def __post_init__(self):
        for v in self.dag.nodes:
            if v in self.levels:
                for p in self.dag.parents(v):
                    if p not in self.levels:
                        raise ModelError(
                            f"discrete node {v!r} has continuous parent {p!r}"
                        )
                cpt = np.asarray(self.cpts.get(v))
                if cpt is None or cpt.ndim != 2:
                    raise ModelError(f"missing CPT for discrete node {v!r}")
                if not np.allclose(cpt.sum(axis=1), 1.0, atol=1e-12):
                    raise ModelError(f"CPT rows of {v!r} must sum to 1")
            else:
                if v not in self.linear:
                    raise ModelError(f"missing linear model for {v!r}")
                if (np.asarray(self.linear[v].noise_variances) <= 0).any():
                    raise ModelError(f"noise variance of {v!r} must be positive")

    @property
    def nodes(self):
        return self.dag.nodes

    def discrete_nodes(self):
        return tuple(v for v in self.dag.nodes if v in self.levels)

    def continuous_nodes(self):
        return tuple(v for v in self.dag.nodes if v not in self.levels)


Model = GaussianSem | DiscreteBn | CgModel


# -- random structures and calibrated weights -------------------------------


def random_dag(p: int, density: float, seed) -> Dag:
    """Random DAG: nodes added in order, each new node linked to every
    earlier node independently with probability ``density`` (edges oriented
    old to new)."""
    if p < 1:
        raise ModelError("need at least one node")
    if not 0.0 <= density <= 1.0:
        raise ModelError("density must be in [0, 1]")
    rng = _rng(seed)
    nodes = [f"X{i + 1}" for i in range(p)]
    edges = []
    for j in range(1, p):
        for i in range(j):
            if rng.random() < density:
                edges.append((nodes[i], nodes[j]))
    return Dag(nodes, edges)


def weight_for_power(target_power: float, n: int, alpha: float = 0.05) -> float:
    """Edge weight w for X -> Y (unit-variance X, unit noise) such that
    Fisher's z rejects the marginal independence with the target power.

    Solves z(r) * sqrt(n - 3) = z_{1-alpha/2} + z_{power} and converts the
    correlation r to the weight w = r / sqrt(1 - r^2).
    """
    if n <= 3:
        raise ModelError("n must exceed 3")
    if not alpha < target_power < 1.0:
        raise ModelError("target power must lie in (alpha, 1)")
    z_sum = stats.norm.ppf(1 - alpha / 2) + stats.norm.ppf(target_power)
    if z_sum <= 0:
        raise ModelError("infeasible power target")
    r = math.tanh(z_sum / math.sqrt(n - 3))
    return r / math.sqrt(1.0 - r * r)


def sem_with_uniform_weights(dag: Dag, weight: float) -> GaussianSem:
    """All edges share one weight, all noises unit variance."""
    return GaussianSem(
        dag,
        {e: weight for e in dag.edges},
        {v: 1.0 for v in dag.nodes},
    )


# -- sampling ----------------------------------------------------------------


def sample_gaussian_sem(model: GaussianSem, n: int, seed) -> Dataset:
    rng = _rng(seed)
    dag = model.dag
    cols = {v: None for v in dag.nodes}
    for v in dag.topological_order():
        value = rng.normal(0.0, math.sqrt(model.noise_variances[v]), size=n)
        for p in _sorted_parents(dag, v):
            value = value + model.weights[(p, v)] * cols[p]
        cols[v] = value
    values = np.column_stack([cols[v] for v in dag.nodes]) if dag.nodes else np.zeros((n, 0))
    schema = [ColumnSchema(v, CONTINUOUS) for v in dag.nodes]
    return Dataset(schema, values, provenance=f"gaussian-sem:n={n}")


def _parent_cells(codes: dict, parents: list[str], cards: list[int], n: int) -> np.ndarray:
    cell = np.zeros(n, dtype=np.int64)
    for p, card in zip(parents, cards):
        cell = cell * card + codes[p]
    return cell


def _draw_rows(cpt: np.ndarray, cell: np.ndarray, rng) -> np.ndarray:
    probs = cpt[cell]
    u = rng.random(cell.shape[0])
    return (probs.cumsum(axis=1) > u[:, None]).argmax(axis=1)


def sample_discrete_bn(model: DiscreteBn, n: int, seed) -> Dataset:
    rng = _rng(seed)
    dag = model.dag
    codes: dict[str, np.ndarray] = {}
    for v in dag.topological_order():
        parents = _sorted_parents(dag, v)
        cards = [len(model.levels[p]) for p in parents]
        cell = _parent_cells(codes, parents, cards, n)
        codes[v] = _draw_rows(np.asarray(model.cpts[v], dtype=float), cell, rng)
    schema = [
        ColumnSchema(v, CATEGORICAL, tuple(model.levels[v])) for v in dag.nodes
    ]
    values = (
        np.column_stack([codes[v].astype(float) for v in dag.nodes])
        if dag.nodes
        else np.zeros((n, 0))
    )
    return Dataset(schema, values, provenance=f"discrete-bn:n={n}")


def sample_cg(model: CgModel, n: int, seed) -> Dataset:
    rng = _rng(seed)
    dag = model.dag
    codes: dict[str, np.ndarray] = {}
    cont: dict[str, np.ndarray] = {}
    for v in dag.topological_order():
        parents = _sorted_parents(dag, v)
        if v in model.levels:
            cards = [len(model.levels[p]) for p in parents]
            cell = _parent_cells(codes, parents, cards, n)
            codes[v] = _draw_rows(np.asarray(model.cpts[v], dtype=float), cell, rng)
        else:
            disc_parents = [p for p in parents if p in model.levels]
            cont_parents = [p for p in parents if p not in model.levels]
            cards = [len(model.levels[p]) for p in disc_parents]
            cell = _parent_cells(codes, disc_parents, cards, n)
            node = model.linear[v]
            value = np.asarray(node.intercepts)[cell].astype(float).copy()
            coef = np.asarray(node.coefficients)
            for k, p in enumerate(cont_parents):
                value += coef[cell, k] * cont[p]
            sd = np.sqrt(np.asarray(node.noise_variances)[cell])
            value += sd * rng.normal(size=n)
            cont[v] = value
    schema = []
    columns = []
    for v in dag.nodes:
        if v in model.levels:
            schema.append(ColumnSchema(v, CATEGORICAL, tuple(model.levels[v])))
            columns.append(codes[v].astype(float))
        else:
            schema.append(ColumnSchema(v, CONTINUOUS))
            columns.append(cont[v])
    values = np.column_stack(columns) if columns else np.zeros((n, 0))
    return Dataset(schema, values, provenance=f"cg:n={n}")


def sample(model: Model, n: int, seed) -> Dataset:
    if isinstance(model, GaussianSem):
        return sample_gaussian_sem(model, n, seed)
    if isinstance(model, DiscreteBn):
        return sample_discrete_bn(model, n, seed)
    if isinstance(model, CgModel):
        return sample_cg(model, n, seed)
    raise ModelError(f"unknown model type {type(model)!r}")


# -- JSON serialization ------------------------------------------------------


def model_to_json(model: Model) -> str:
    dag = model.dag
    nodes = []
    for v in dag.nodes:
        if isinstance(model, GaussianSem) or (
            isinstance(model, CgModel) and v not in model.levels
        ):
            nodes.append({"name": v, "kind": CONTINUOUS})
        else:
            nodes.append({"name": v, "kind": CATEGORICAL, "levels": list(model.levels[v])})
    doc: dict = {
        "kind": {
            GaussianSem: "gaussian_sem",
            DiscreteBn: "discrete_bn",
            CgModel: "cg",
        }[type(model)],
        "nodes": nodes,
        "edges": [[a, b] for a, b in sorted(dag.edges, key=lambda e: (dag.index(e[0]), dag.index(e[1])))],
        "parameters": {},
    }
    params = doc["parameters"]
    if isinstance(model, GaussianSem):
        for v in dag.nodes:
            parents = _sorted_parents(dag, v)
            params[v] = {
                "parents": parents,
                "weights": [model.weights[(p, v)] for p in parents],
                "noise_variance": model.noise_variances[v],
            }
    elif isinstance(model, DiscreteBn):
        for v in dag.nodes:
            params[v] = {
                "parents": _sorted_parents(dag, v),
                "cpt": np.asarray(model.cpts[v]).tolist(),
            }
    else:
        for v in dag.nodes:
            parents = _sorted_parents(dag, v)
            if v in model.levels:
                params[v] = {"parents": parents, "cpt": np.asarray(model.cpts[v]).tolist()}
            else:
                node = model.linear[v]
                params[v] = {
                    "parents": parents,
                    "intercepts": np.asarray(node.intercepts).tolist(),
                    "coefficients": np.asarray(node.coefficients).tolist(),
                    "noise_variances": np.asarray(node.noise_variances).tolist(),
                }
    return json.dumps(doc, indent=2) + "\n"


def model_from_json(text: str) -> Model:
    doc = json.loads(text)
    names = [entry["name"] for entry in doc["nodes"]]
    dag = Dag(names, [tuple(e) for e in doc["edges"]])
    kinds = {entry["name"]: entry["kind"] for entry in doc["nodes"]}
    levels = {
        entry["name"]: tuple(entry["levels"])
        for entry in doc["nodes"]
        if entry["kind"] == CATEGORICAL
    }
    params = doc["parameters"]
    for v in names:
        declared = params[v].get("parents", [])
        if declared != _sorted_parents(dag, v):
            raise ModelError(f"parameter parents of {v!r} disagree with edges")
    if doc["kind"] == "gaussian_sem":
        weights = {}
        noise = {}
        for v in names:
            entry = params[v]
            for p, w in zip(entry["parents"], entry["weights"]):
                weights[(p, v)] = float(w)
            noise[v] = float(entry["noise_variance"])
        return GaussianSem(dag, weights, noise)
    if doc["kind"] == "discrete_bn":
        cpts = {v: np.asarray(params[v]["cpt"], dtype=float) for v in names}
        return DiscreteBn(dag, levels, cpts)
    if doc["kind"] == "cg":
        cpts = {}
        linear = {}
        for v in names:
            entry = params[v]
            if kinds[v] == CATEGORICAL:
                cpts[v] = np.asarray(entry["cpt"], dtype=float)
            else:
                linear[v] = CgNode(
                    np.asarray(entry["intercepts"], dtype=float),
                    np.asarray(entry["coefficients"], dtype=float),
                    np.asarray(entry["noise_variances"], dtype=float),
                )
        return CgModel(dag, levels, cpts, linear)
    raise ModelError(f"unknown model kind {doc['kind']!r}")


def save_model(model: Model, path) -> None:
    with open(path, "w") as fh:
        fh.write(model_to_json(model))


def load_model(path) -> Model:
    with open(path) as fh:
        return model_from_json(fh.read())


def load_benchmark(name: str) -> Model:
    """Load one of the packaged benchmark fixtures by name."""
    if name not in BENCHMARK_NAMES:
        raise ModelError(
            f"unknown benchmark {name!r}; available: {', '.join(BENCHMARK_NAMES)}"
        )
    ref = resources.files("pcmiss").joinpath(f"benchmarks/{name}.json")
    try:
        text = ref.read_text()
    except FileNotFoundError:
        raise ModelError(f"fixture for {name!r} is missing") from None
    return model_from_json(text)


def true_cpdag(model: Model):
    from .graphs import cpdag_of

    return cpdag_of(model.dag)
