"""Desk-scale synthetic stand-ins for the biochemical benchmarks.

Binary-labeled molecule-like graphs: random trees with a few ring-closing
edges and one-hot node types whose mixture depends on the class. The
type-frequency gap and the label-flip rate control task difficulty.
"""

from __future__ import annotations

import numpy as np

from midpool.graphs import Dataset, Graph


def _molecule_like(rng, n, type_probs, num_types, extra_edge_rate):
    a = np.zeros((n, n))
    for v in range(1, n):  # random tree backbone
        u = int(rng.integers(0, v))
        a[u, v] = a[v, u] = 1.0
    n_extra = int(rng.binomial(n, extra_edge_rate))
    for _ in range(n_extra):
        u, v = rng.integers(0, n, size=2)
        if u != v:
            a[u, v] = a[v, u] = 1.0
    types = rng.choice(num_types, size=n, p=type_probs)
    x = np.zeros((n, num_types))
    x[np.arange(n), types] = 1.0
    return a, x


def _two_class_fixture(count, seed, num_types, n_mean, n_spread, n_lo, n_hi,
                       probs_by_class, extra_edge_rates, flip_rate, name):
    rng = np.random.default_rng(seed)
    graphs = []
    for gid in range(count):
        y = int(rng.integers(0, 2))
        n = int(np.clip(round(rng.normal(n_mean, n_spread)), n_lo, n_hi))
        a, x = _molecule_like(rng, n, probs_by_class[y], num_types,
                              extra_edge_rates[y])
        label = y if rng.random() >= flip_rate else 1 - y
        graphs.append(Graph(A=a, X=x, label=label, graph_id=gid))
    return Dataset(graphs=graphs, num_classes=2, feature_dim=num_types, name=name)


def gen_mutag_fixture(count=188, seed=0) -> Dataset:
    """188 two-class graphs, ~18 nodes, 7 node types."""
    p0 = np.array([0.70, 0.10, 0.06, 0.05, 0.04, 0.03, 0.02])
    p1 = np.array([0.56, 0.22, 0.08, 0.05, 0.04, 0.03, 0.02])
    return _two_class_fixture(count, seed, 7, 17.9, 4.5, 10, 28,
                              (p0, p1), (0.10, 0.20), 0.08, "MUTAG-FIXTURE")


def gen_nci1_fixture(count=400, seed=0) -> Dataset:
    """400 two-class graphs, ~30 nodes, 12 node types.

    The class signal splits across two rare types with opposite directions,
    so no single score view captures it cleanly."""
    base = np.array([0.55, 0.12, 0.08, 0.06, 0.05, 0.04, 0.03, 0.02,
                     0.02, 0.01, 0.01, 0.01])
    p0 = base.copy()
    p1 = base.copy()
    p1[1] += 0.08   # over-represented in class 1
    p1[2] -= 0.04   # under-represented in class 1
    p1[0] -= 0.04
    return _two_class_fixture(count, seed, 12, 29.8, 7.0, 12, 50,
                              (p0, p1), (0.08, 0.16), 0.10, "NCI1-FIXTURE")


def gen_ring_graph(n, noise=0.0, rng=None) -> Graph:
    """Cycle graph with 2-D circle coordinates as features."""
    a = np.zeros((n, n))
    for v in range(n):
        a[v, (v + 1) % n] = a[(v + 1) % n, v] = 1.0
    theta = 2.0 * np.pi * np.arange(n) / n
    x = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    if noise and rng is not None:
        x = x + rng.normal(0.0, noise, size=x.shape)
    return Graph(A=a, X=x, graph_id=0)


def gen_grid_graph(rows, cols, noise=0.0, rng=None) -> Graph:
    """Lattice graph with normalized 2-D positions as features."""
    n = rows * cols
    a = np.zeros((n, n))

    def nid(r, c):
        return r * cols + c

    for r in range(rows):
        for c in range(cols):
            if r + 1 < rows:
                a[nid(r, c), nid(r + 1, c)] = a[nid(r + 1, c), nid(r, c)] = 1.0
            if c + 1 < cols:
                a[nid(r, c), nid(r, c + 1)] = a[nid(r, c + 1), nid(r, c)] = 1.0
    rr, cc = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    x = np.stack([rr.ravel() / max(rows - 1, 1), cc.ravel() / max(cols - 1, 1)], axis=1)
    if noise and rng is not None:
        x = x + rng.normal(0.0, noise, size=x.shape)
    return Graph(A=a, X=x, graph_id=0)
