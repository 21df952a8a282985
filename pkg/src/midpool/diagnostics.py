"""Analytical instruments: leave-one-node-out ground-truth scores, ranking
AUC, pooling information gain, the score-distance bound, selection spread,
and the expressiveness pair harness."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from midpool import autodiff as ad
from midpool.autodiff import Tensor
from midpool.graphs import Graph, normalize_adjacency_matrix
from midpool.layers import GcnLayer, readout
from midpool.mid import DropMask, MidConfig, PoolLayer
from midpool.pooling import PoolConfig, kept_count


class DiagnosticError(RuntimeError):
    pass


@dataclass
class GroundTruthScores:
    scores: np.ndarray       # per-node, nonnegative, sums to 1
    reference: float         # true-class probability on the intact graph


@dataclass
class DiagnosticsReport:
    auc: float
    auc_degenerate: bool
    lambda_sel: float
    trapped_violations: int
    spread: float


def delete_node(g: Graph, i: int) -> Graph:
    keep = [v for v in range(g.n) if v != i]
    return Graph(A=g.A[np.ix_(keep, keep)], X=g.X[keep],
                 label=g.label, graph_id=g.graph_id)


def ground_truth_scores(model, g: Graph) -> GroundTruthScores:
    """Normalized leave-one-node-out deltas of the true-class probability."""
    if g.n < 2:
        raise DiagnosticError("ground-truth scores need at least 2 nodes")
    label = g.label if g.label is not None else 0
    ref = float(model.predict_proba(g)[label])
    deltas = np.empty(g.n)
    for i in range(g.n):
        p = float(model.predict_proba(delete_node(g, i))[label])
        deltas[i] = abs(p - ref)
    total = deltas.sum()
    if total == 0.0:
        return GroundTruthScores(scores=np.full(g.n, 1.0 / g.n), reference=ref)
    return GroundTruthScores(scores=deltas / total, reference=ref)


def score_correctness_auc(predicted, gt: GroundTruthScores, k_ratio: float):
    """Rank AUC of predicted scores against top-k membership in the ground
    truth, midrank ties. Returns (auc, degenerate_flag)."""
    predicted = np.asarray(predicted).reshape(-1)
    n = predicted.shape[0]
    if n != gt.scores.shape[0] or n < 2:
        raise DiagnosticError("predicted/ground-truth length mismatch")
    k = kept_count(k_ratio, n)
    order = np.argsort(-gt.scores, kind="stable")
    positives = np.zeros(n, dtype=bool)
    positives[order[:k]] = True
    n_pos = int(positives.sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        return 0.5, True
    ranks = rankdata(predicted)  # midranks for ties
    auc = (ranks[positives].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    return float(auc), False


def info_gain(g: Graph, selected) -> float:
    """Pooling information gain: L1 norm of the summed squared
    neighbor-difference sums of the selected nodes, over |E| * c."""
    selected = np.asarray(selected, dtype=np.intp)
    if selected.size == 0:
        raise DiagnosticError("empty selection")
    m = g.num_edges
    if m == 0:
        raise DiagnosticError("information gain undefined on an edgeless graph")
    c = g.X.shape[1]
    total = np.zeros(c)
    for v in selected:
        nbrs = np.nonzero(g.A[v])[0]
        diff = (g.X[v][None, :] - g.X[nbrs]).sum(axis=0) if nbrs.size else np.zeros(c)
        total += diff**2
    return float(np.abs(total).sum() / (m * c))


def trapped_bound_check(x: np.ndarray, proj: np.ndarray, slack=1e-9) -> int:
    """Count pairs violating |s_u - s_v| <= ||x_u - x_v||_2 for the
    unit-projection scorer (expected 0 by Cauchy-Schwarz)."""
    proj = np.asarray(proj).reshape(-1)
    p = proj / np.linalg.norm(proj)
    s = x @ p
    diff_s = np.abs(s[:, None] - s[None, :])
    diff_x = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=2)
    return int(np.triu(diff_s > diff_x + slack, k=1).sum())


def selection_spread(g: Graph, idx) -> float:
    """Mean pairwise BFS hop distance among selected nodes; pairs in
    different components are skipped (per-component average)."""
    idx = np.asarray(idx, dtype=np.intp)
    if idx.size < 2:
        raise DiagnosticError("spread needs at least 2 selected nodes")
    dists = []
    for a_pos, u in enumerate(idx):
        dist = _bfs_distances(g.A, u)
        for v in idx[a_pos + 1:]:
            if np.isfinite(dist[v]):
                dists.append(dist[v])
    if not dists:
        raise DiagnosticError("no connected pair among selected nodes")
    return float(np.mean(dists))


def _bfs_distances(a: np.ndarray, src: int) -> np.ndarray:
    n = a.shape[0]
    dist = np.full(n, np.inf)
    dist[src] = 0
    frontier = [src]
    d = 0
    while frontier:
        d += 1
        nxt = []
        for u in frontier:
            for v in np.nonzero(a[u])[0]:
                if dist[v] == np.inf:
                    dist[v] = d
                    nxt.append(v)
        frontier = nxt
    return dist


# ---------------------------------------------------------------------------
# Expressiveness pair harness


def make_expressiveness_pair():
    """Two degree-2-regular 6-node graphs a 1-WL test cannot separate:
    two disjoint triangles vs one 6-cycle, constant features.

    Labeled so that the base top-3 tie-break selection {0, 1, 2} induces the
    same subgraph (one edge 0-2) in both graphs."""
    tri = np.zeros((6, 6))
    for clique in ((0, 2, 4), (1, 3, 5)):
        for u in clique:
            for v in clique:
                if u != v:
                    tri[u, v] = 1.0
    cyc = np.zeros((6, 6))
    cycle_order = (0, 2, 4, 1, 5, 3)
    for u, v in zip(cycle_order, cycle_order[1:] + cycle_order[:1]):
        cyc[u, v] = cyc[v, u] = 1.0
    x = np.ones((6, 2))
    return (Graph(A=tri, X=x, label=0, graph_id=0),
            Graph(A=cyc, X=x, label=1, graph_id=1))


@dataclass
class ExpressivenessReport:
    base_distance: float
    base_equal: bool
    best_distance: float
    distinguishing_pair: tuple | None


def _pair_readout(layer: PoolLayer, probe: GcnLayer, g: Graph,
                  mask: DropMask) -> np.ndarray:
    a_norm = Tensor(normalize_adjacency_matrix(g.A))
    pg = layer.forward(g.A, a_norm, Tensor(g.X), mode="eval", forced_mask=mask)
    pooled_norm = Tensor(normalize_adjacency_matrix(pg.a))
    emb = probe.forward(pg.x, pooled_norm)
    return readout(emb).value.copy()


def expressiveness_pair_test(pool_cfg: PoolConfig | None = None,
                             drop_enabled: bool = True,
                             seed: int = 7) -> ExpressivenessReport:
    """Base pooling cannot separate the pair; enumerating single-node drop
    masks finds a separating mask pair. Readout runs one fixed GCN pass on
    the pooled graph so its structure is observable."""
    pool_cfg = pool_cfg or PoolConfig(scorer="sag", ratio=0.5)
    g1, g2 = make_expressiveness_pair()
    rng = np.random.default_rng(seed)
    layer = PoolLayer(g1.X.shape[1], pool_cfg, MidConfig(), rng)
    probe = GcnLayer(layer.out_dim, 4, rng, activation="tanh")

    r1 = _pair_readout(layer, probe, g1, DropMask())
    r2 = _pair_readout(layer, probe, g2, DropMask())
    base_distance = float(np.abs(r1 - r2).max())

    best_distance = 0.0
    best_pair = None
    if drop_enabled:
        for d1 in range(g1.n):
            m1 = _pair_readout(layer, probe, g1, DropMask(dropped=(d1,)))
            for d2 in range(g2.n):
                m2 = _pair_readout(layer, probe, g2, DropMask(dropped=(d2,)))
                dist = float(np.abs(m1 - m2).max())
                if dist > best_distance:
                    best_distance = dist
                    best_pair = (d1, d2)
    return ExpressivenessReport(
        base_distance=base_distance,
        base_equal=base_distance < 1e-9,
        best_distance=best_distance,
        distinguishing_pair=best_pair if best_distance > 1e-6 else None,
    )
