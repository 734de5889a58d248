"""Random graph generators standing in for downloaded datasets."""
from __future__ import annotations

import numpy as np

from .graph import Graph

MOL_NODE_DIM = 9
MOL_EDGE_DIM = 3


def random_graph(rng: np.random.Generator, n: int, num_edges: int, node_dim: int = 4,
                 edge_dim: int = 0, simple: bool = True) -> Graph:
    """Directed graph with ``num_edges`` edges drawn uniformly (no self-loops if simple)."""
    if n <= 1 or num_edges == 0:
        edges = np.zeros((0, 2), dtype=np.int64)
    elif simple:
        cap = n * (n - 1)
        picks = rng.choice(cap, size=min(num_edges, cap), replace=False)
        src = picks // (n - 1)
        off = picks % (n - 1)
        dst = off + (off >= src)
        edges = np.stack([src, dst], 1)
    else:
        edges = rng.integers(0, n, size=(num_edges, 2))
    nf = rng.uniform(-1.0, 1.0, size=(n, node_dim))
    ef = rng.uniform(-1.0, 1.0, size=(len(edges), edge_dim))
    return Graph(n, edges, nf, ef)


def molecule_like(rng: np.random.Generator, n: int | None = None) -> Graph:
    """Sparse symmetric graph shaped like a small molecule.

    A random tree plus a few ring closures; categorical-looking integer
    atom (9) and bond (3) features.
    """
    if n is None:
        n = int(rng.integers(6, 40))
    pairs = [(int(rng.integers(0, i)), i) for i in range(1, n)]
    for _ in range(int(rng.integers(0, max(1, n // 8) + 1))):
        a, b = (int(v) for v in rng.choice(n, 2, replace=False))
        if (a, b) not in pairs and (b, a) not in pairs:
            pairs.append((a, b))
    edges, bonds = [], []
    for a, b in pairs:
        bond = [int(rng.integers(0, 4)), int(rng.integers(0, 3)), int(rng.integers(0, 2))]
        edges += [(a, b), (b, a)]
        bonds += [bond, bond]
    nf = np.stack([rng.integers(0, 6, size=n) for _ in range(MOL_NODE_DIM)], 1).astype(float)
    nf[:, 0] = rng.integers(0, 10, size=n)
    return Graph(n, np.array(edges, dtype=np.int64).reshape(-1, 2), nf,
                 np.array(bonds, dtype=float).reshape(-1, MOL_EDGE_DIM))


def cora_like(rng: np.random.Generator, n: int = 2708, undirected_edges: int = 5278,
              feat_dim: int = 1433, words_per_node: int = 18) -> Graph:
    """Citation-graph stand-in: symmetric edges, sparse binary bag-of-words features."""
    seen = set()
    edges = []
    while len(seen) < undirected_edges:
        a, b = (int(v) for v in rng.integers(0, n, size=2))
        if a == b or (min(a, b), max(a, b)) in seen:
            continue
        seen.add((min(a, b), max(a, b)))
        edges += [(a, b), (b, a)]
    nf = np.zeros((n, feat_dim))
    for i in range(n):
        nf[i, rng.choice(feat_dim, size=words_per_node, replace=False)] = 1.0
    return Graph(n, np.array(edges, dtype=np.int64), nf)


# node count, undirected edge count, feature width of the citation benchmarks
CITATION_SHAPES = {
    "cora": (2708, 5278, 1433),
    "citeseer": (3327, 4552, 3703),
    "pubmed": (19717, 44324, 500),
}


def citation_like(name: str, rng: np.random.Generator, feat_dim: int | None = None) -> Graph:
    n, e, d = CITATION_SHAPES[name]
    return cora_like(rng, n, e, d if feat_dim is None else feat_dim,
                     words_per_node=min(18, d if feat_dim is None else feat_dim))
