"""Three-stage node-drop pooling: score generator, top-k selector, coarser.

Scorers produce an n x h score matrix on the autodiff tape so gradients
reach their parameters through the feature gating. Additional scorer
families (cluster- or attention-based selectors) can be added by
implementing the same ``forward(a_norm, x)`` surface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from midpool import autodiff as ad
from midpool.autodiff import Tensor


class ConfigurationError(ValueError):
    pass


class SelectionError(ValueError):
    pass


class NormalizationError(ValueError):
    pass


@dataclass
class PoolConfig:
    ratio: float = 0.5
    scorer: str = "sag"  # topk | sag | gsa
    gsa_alpha: float = 0.5
    gating: str | None = None  # None -> sigma-gate for topk, raw-gate otherwise

    def __post_init__(self):
        if not 0.0 < self.ratio <= 1.0:
            raise ConfigurationError(f"pooling ratio must be in (0, 1], got {self.ratio}")
        if self.scorer not in ("topk", "sag", "gsa"):
            raise ConfigurationError(f"unknown scorer {self.scorer!r}")
        if not 0.0 <= self.gsa_alpha <= 1.0:
            raise ConfigurationError(f"gsa_alpha must be in [0, 1], got {self.gsa_alpha}")
        if self.gating is None:
            self.gating = "sigma-gate" if self.scorer == "topk" else "raw-gate"
        if self.gating not in ("sigma-gate", "raw-gate"):
            raise ConfigurationError(f"unknown gating {self.gating!r}")


@dataclass
class PooledGraph:
    x: Tensor            # k x width gated features (on tape)
    a: np.ndarray        # k x k induced adjacency
    idx: np.ndarray      # kept original node indices, ascending
    parent_n: int


def glorot(rng, rows, cols):
    limit = math.sqrt(6.0 / (rows + cols))
    return Tensor(rng.uniform(-limit, limit, size=(rows, cols)), requires_grad=True)


class TopKScorer:
    """Projection scorer: X @ (P / ||P||_2 per column)."""

    def __init__(self, in_dim, h, rng):
        self.proj = glorot(rng, in_dim, h)

    def forward(self, a_norm: Tensor, x: Tensor) -> Tensor:
        if np.any(np.linalg.norm(self.proj.value, axis=0) == 0.0):
            raise NormalizationError("projection column with zero norm")
        sq = ad.mul(self.proj, self.proj)
        col_norm = ad.apply_unary(ad.reduce(sq, "rows", "sum"), "sqrt")
        return ad.div(ad.matmul(x, self.proj), col_norm)

    def parameters(self):
        return [self.proj]


class SagScorer:
    """One bias-free GCN pass with tanh, scores in (-1, 1)."""

    def __init__(self, in_dim, h, rng):
        self.weight = glorot(rng, in_dim, h)

    def forward(self, a_norm: Tensor, x: Tensor) -> Tensor:
        return ad.apply_unary(ad.matmul(ad.matmul(a_norm, x), self.weight), "tanh")

    def parameters(self):
        return [self.weight]


class GsaScorer:
    """Convex mix of a structure (GCN) and a feature (linear) scorer."""

    def __init__(self, in_dim, h, rng, alpha=0.5):
        if not 0.0 <= alpha <= 1.0:
            raise ConfigurationError(f"alpha must be in [0, 1], got {alpha}")
        self.alpha = alpha
        self.w_gcn = glorot(rng, in_dim, h)
        self.w_mlp = glorot(rng, in_dim, h)

    def forward(self, a_norm: Tensor, x: Tensor) -> Tensor:
        s1 = ad.apply_unary(ad.matmul(ad.matmul(a_norm, x), self.w_gcn), "tanh")
        s2 = ad.apply_unary(ad.matmul(x, self.w_mlp), "tanh")
        return ad.add(ad.scale(s1, self.alpha), ad.scale(s2, 1.0 - self.alpha))

    def parameters(self):
        return [self.w_gcn, self.w_mlp]


def make_scorer(cfg: PoolConfig, in_dim, h, rng):
    if cfg.scorer == "topk":
        return TopKScorer(in_dim, h, rng)
    if cfg.scorer == "sag":
        return SagScorer(in_dim, h, rng)
    return GsaScorer(in_dim, h, rng, alpha=cfg.gsa_alpha)


def kept_count(ratio: float, n: int) -> int:
    return math.ceil(ratio * n)


def select_topk(scores: np.ndarray, ratio: float, n: int, exclude=()) -> np.ndarray:
    """Indices of the ceil(ratio*n) largest scalar scores, ties to the lower
    node index, returned ascending. ``exclude`` removes candidates without
    shrinking the kept count (callers clamp so enough candidates remain)."""
    scores = np.asarray(scores).reshape(-1)
    if scores.shape[0] != n:
        raise SelectionError(f"{scores.shape[0]} scores for {n} nodes")
    k = kept_count(ratio, n)
    if k < 1:
        raise SelectionError(f"kept count {k} < 1")
    excl = set(int(i) for i in exclude)
    cand = np.array([i for i in range(n) if i not in excl], dtype=np.intp)
    if cand.size < k:
        raise SelectionError(f"only {cand.size} candidates for kept count {k}")
    order = cand[np.argsort(-scores[cand], kind="stable")]
    return np.sort(order[:k])


def coarsen(a: np.ndarray, x: Tensor, s: Tensor, idx, gating: str) -> PooledGraph:
    """Base coarser: gate kept features by their scores, induce the subgraph."""
    idx = np.asarray(idx, dtype=np.intp)
    if idx.size == 0:
        raise SelectionError("empty selection")
    x_kept = ad.gather_rows(x, idx)
    s_kept = ad.gather_rows(s, idx)
    if gating == "sigma-gate":
        s_kept = ad.apply_unary(s_kept, "sigmoid")
    elif gating != "raw-gate":
        raise ConfigurationError(f"unknown gating {gating!r}")
    return PooledGraph(x=ad.mul(x_kept, s_kept), a=a[np.ix_(idx, idx)],
                       idx=idx, parent_n=a.shape[0])


def unpool(pg: PooledGraph, parent_n: int) -> Tensor:
    """Scatter pooled features back to original node positions, zeros elsewhere."""
    return ad.scatter_rows(pg.x, pg.idx, parent_n)
