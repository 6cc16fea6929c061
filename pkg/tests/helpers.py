"""Shared test utilities: small-graph enumeration, random DAGs, datasets."""

from itertools import combinations, product

import numpy as np

from pcmiss.data import CATEGORICAL, CONTINUOUS, ColumnSchema, Dataset
from pcmiss.graphs import Dag, GraphError, d_separated


def cont_dataset(mat, names=None, missing=None) -> Dataset:
    mat = np.asarray(mat, dtype=float)
    names = names or [f"V{i}" for i in range(mat.shape[1])]
    schema = [ColumnSchema(v, CONTINUOUS) for v in names]
    return Dataset(schema, mat, missing)


def cat_dataset(codes, cards, names=None, missing=None) -> Dataset:
    codes = np.asarray(codes, dtype=float)
    names = names or [f"C{i}" for i in range(codes.shape[1])]
    schema = [
        ColumnSchema(v, CATEGORICAL, tuple(f"l{k}" for k in range(card)))
        for v, card in zip(names, cards)
    ]
    return Dataset(schema, codes, missing)


def all_dags(nodes):
    """Every labeled DAG on ``nodes`` (3 states per unordered pair)."""
    nodes = list(nodes)
    pairs = list(combinations(nodes, 2))
    for states in product((0, 1, 2), repeat=len(pairs)):
        edges = []
        for (a, b), s in zip(pairs, states):
            if s == 1:
                edges.append((a, b))
            elif s == 2:
                edges.append((b, a))
        try:
            yield Dag(nodes, edges)
        except GraphError:
            continue


def random_dag(rng: np.random.Generator, n: int, p: float) -> Dag:
    """Random DAG: edge i -> j for i < j with probability ``p``."""
    nodes = [f"V{i}" for i in range(n)]
    edges = []
    for j in range(1, n):
        for i in range(j):
            if rng.random() < p:
                edges.append((nodes[i], nodes[j]))
    return Dag(nodes, edges)


def dsep_signature(g: Dag) -> frozenset:
    """All independence statements (x, y, Z) implied by ``g``."""
    out = set()
    nodes = list(g.nodes)
    for x, y in combinations(nodes, 2):
        rest = [v for v in nodes if v not in (x, y)]
        for r in range(len(rest) + 1):
            for zs in combinations(rest, r):
                if d_separated(g, x, y, zs):
                    out.add((x, y, frozenset(zs)))
    return frozenset(out)
