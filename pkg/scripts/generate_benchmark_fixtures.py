#!/usr/bin/env python3
"""Regenerate the packaged benchmark model fixtures.

Structures match the documented node/edge counts and variable kinds; where
the original repository parameter files are unavailable, parameters are
drawn once from fixed priors (Dirichlet(1) CPT rows, edge weights uniform
on +-[0.3, 0.9], unit noise variances) with the seeds below and frozen into
the JSON fixtures. Run from the repository root:

    python3 scripts/generate_benchmark_fixtures.py
"""

from pathlib import Path

import numpy as np

from pcmiss.graphs import Dag
from pcmiss.simulate import (
    CgModel,
    CgNode,
    DiscreteBn,
    GaussianSem,
    save_model,
)

OUT = Path(__file__).resolve().parent.parent / "src" / "pcmiss" / "benchmarks"

ECOLI_GENES = [
    "b1191", "cchB", "eutG", "fixC", "ibpB", "sucA",
    "tnaA", "yceP", "yfaD", "ygbD", "ygcE", "yjbO",
]
MAGIC_NODES = ["MIL", "G1217", "G257", "G2208", "G1338", "G524", "G1945"]


def draw_edges(rng, nodes, n_edges, allowed=None):
    """Exactly ``n_edges`` ordered pairs (earlier -> later node)."""
    pairs = [
        (nodes[i], nodes[j])
        for j in range(1, len(nodes))
        for i in range(j)
        if allowed is None or allowed(nodes[i], nodes[j])
    ]
    idx = rng.choice(len(pairs), size=n_edges, replace=False)
    return [pairs[k] for k in sorted(idx)]


def random_weights(rng, edges):
    signs = rng.choice([-1.0, 1.0], size=len(edges))
    mags = rng.uniform(0.3, 0.9, size=len(edges))
    return {e: float(s * m) for e, s, m in zip(edges, signs, mags)}


def dirichlet_cpt(rng, n_rows, n_levels):
    return rng.dirichlet(np.ones(n_levels), size=n_rows)


def gaussian_model(rng, nodes, n_edges):
    edges = draw_edges(rng, nodes, n_edges)
    dag = Dag(nodes, edges)
    return GaussianSem(dag, random_weights(rng, edges), {v: 1.0 for v in nodes})


def discrete_model(rng, dag, levels):
    cpts = {}
    for v in dag.nodes:
        parents = sorted(dag.parents(v), key=dag.index)
        rows = int(np.prod([len(levels[p]) for p in parents])) if parents else 1
        cpts[v] = dirichlet_cpt(rng, rows, len(levels[v]))
    return DiscreteBn(dag, levels, cpts)


def cg_model(rng, discrete, cards, continuous, n_edges):
    nodes = list(discrete) + list(continuous)
    levels = {
        v: tuple(f"c{k}" for k in range(card)) for v, card in zip(discrete, cards)
    }
    # discrete nodes come first, so any child of a continuous node is
    # continuous and the CG factorization holds
    edges = draw_edges(rng, nodes, n_edges)
    dag = Dag(nodes, edges)
    cpts = {}
    linear = {}
    for v in dag.nodes:
        parents = sorted(dag.parents(v), key=dag.index)
        if v in levels:
            rows = int(np.prod([len(levels[p]) for p in parents])) if parents else 1
            cpts[v] = dirichlet_cpt(rng, rows, len(levels[v]))
        else:
            disc_parents = [p for p in parents if p in levels]
            cont_parents = [p for p in parents if p not in levels]
            cells = int(np.prod([len(levels[p]) for p in disc_parents])) if disc_parents else 1
            coefs = np.zeros((cells, len(cont_parents)))
            for k in range(len(cont_parents)):
                coefs[:, k] = rng.choice([-1.0, 1.0]) * rng.uniform(0.3, 0.9)
            linear[v] = CgNode(
                intercepts=rng.normal(0.0, 1.0, size=cells),
                coefficients=coefs,
                noise_variances=np.ones(cells),
            )
    return CgModel(dag, levels, cpts, linear)


def build_asia():
    rng = np.random.default_rng(20240801)
    dag = Dag(
        ["asia", "tub", "smoke", "lung", "bronc", "either", "xray", "dysp"],
        [
            ("asia", "tub"),
            ("smoke", "lung"),
            ("smoke", "bronc"),
            ("tub", "either"),
            ("lung", "either"),
            ("either", "xray"),
            ("either", "dysp"),
            ("bronc", "dysp"),
        ],
    )
    levels = {v: ("no", "yes") for v in dag.nodes}
    return discrete_model(rng, dag, levels)


def build_sachs():
    rng = np.random.default_rng(20240802)
    dag = Dag(
        ["PKC", "PKA", "Plcg", "PIP3", "PIP2", "Raf", "Mek", "Erk", "Akt", "Jnk", "P38"],
        [
            ("PKC", "PKA"),
            ("PKC", "Raf"),
            ("PKC", "Mek"),
            ("PKC", "Jnk"),
            ("PKC", "P38"),
            ("PKA", "Raf"),
            ("PKA", "Mek"),
            ("PKA", "Erk"),
            ("PKA", "Akt"),
            ("PKA", "Jnk"),
            ("PKA", "P38"),
            ("Plcg", "PIP3"),
            ("Plcg", "PIP2"),
            ("PIP3", "PIP2"),
            ("Raf", "Mek"),
            ("Mek", "Erk"),
            ("Erk", "Akt"),
        ],
    )
    levels = {v: ("low", "avg", "high") for v in dag.nodes}
    return discrete_model(rng, dag, levels)


def build_ecoli_pair():
    rng = np.random.default_rng(20240803)
    small_edges = draw_edges(rng, ECOLI_GENES, 17)
    small_dag = Dag(ECOLI_GENES, small_edges)
    small = GaussianSem(
        small_dag, random_weights(rng, small_edges), {v: 1.0 for v in ECOLI_GENES}
    )

    extra = [f"g{k:02d}" for k in range(13, 47)]
    nodes = ECOLI_GENES + extra
    # every added edge touches an added node, so the original 12-gene graph
    # stays an induced subgraph
    large_edges = list(small_edges)
    for j, v in enumerate(extra):
        pool = nodes[: 12 + j]
        parent = pool[rng.integers(0, len(pool))]
        large_edges.append((parent, v))
    remaining = 70 - len(large_edges)
    candidates = []
    for j, v in enumerate(extra):
        for p in nodes[: 12 + j]:
            if (p, v) not in large_edges:
                candidates.append((p, v))
    idx = rng.choice(len(candidates), size=remaining, replace=False)
    large_edges.extend(candidates[k] for k in sorted(idx))
    large_dag = Dag(nodes, large_edges)
    large = GaussianSem(
        large_dag, random_weights(rng, large_edges), {v: 1.0 for v in nodes}
    )
    return small, large


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    models = {
        "ASIA": build_asia(),
        "SACHS": build_sachs(),
        "MAGIC": gaussian_model(np.random.default_rng(20240804), MAGIC_NODES, 7),
        "HEALTHCARE": cg_model(
            np.random.default_rng(20240805),
            discrete=["D1", "D2", "D3"],
            cards=[2, 3, 3],
            continuous=["C1", "C2", "C3", "C4"],
            n_edges=9,
        ),
        "MEHRA": cg_model(
            np.random.default_rng(20240806),
            discrete=["Zone", "Type", "Year", "Region"],
            cards=[31, 6, 20, 9],
            continuous=["co", "pm10", "pm2.5", "so2"],
            n_edges=14,
        ),
    }
    models["ECOLI"], models["ECOLI_large"] = build_ecoli_pair()
    for name, model in models.items():
        path = OUT / f"{name}.json"
        save_model(model, path)
        print(f"wrote {path} ({len(model.dag.nodes)} nodes, {len(model.dag.edges)} edges)")


if __name__ == "__main__":
    main()
