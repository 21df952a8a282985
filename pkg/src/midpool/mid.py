"""The score plug-in: multidimensional scores, flipscore, dropscore, and
the pooled-feature-map constructions, composed into a full pooling layer.

With ``h=1`` and both switches off the layer is bit-identical to the base
pooling it wraps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from midpool import autodiff as ad
from midpool.autodiff import Tensor
from midpool.pooling import (
    ConfigurationError,
    PoolConfig,
    PooledGraph,
    glorot,
    kept_count,
    make_scorer,
    select_topk,
)

FEATURE_MAPS = ("concat", "multi-head", "repeat-expand", "mlp-expand")
RANK_REDUCERS = ("sum", "mean", "max")


@dataclass
class MidConfig:
    h: int = 1
    p_s: float = 0.0
    flip: bool = False
    drop: bool = False
    feature_map: str = "concat"
    flip_gating: bool = True   # gate with flipped scores; False gates with raw scores
    rank_reduce: str = "sum"

    def __post_init__(self):
        if self.h < 1:
            raise ConfigurationError(f"score dimension must be >= 1, got {self.h}")
        if not 0.0 <= self.p_s < 1.0:
            raise ConfigurationError(f"drop rate must be in [0, 1), got {self.p_s}")
        if self.feature_map not in FEATURE_MAPS:
            raise ConfigurationError(f"unknown feature map {self.feature_map!r}")
        if self.rank_reduce not in RANK_REDUCERS:
            raise ConfigurationError(f"unknown rank reduction {self.rank_reduce!r}")

    @property
    def score_dim(self) -> int:
        # repeat/mlp expansion keeps scalar scores; h is the expansion factor
        return self.h if self.feature_map in ("concat", "multi-head") else 1


@dataclass
class DropMask:
    dropped: tuple = ()
    draw_seed: int | None = None

    def __contains__(self, i):
        return i in self.dropped


def flipscore(s: Tensor) -> Tensor:
    """Elementwise absolute value, differentiable (subgradient 0 at 0)."""
    return ad.apply_unary(s, "abs")


def drop_mask_size(n: int, p_s: float, k_ratio: float) -> int:
    return min(math.ceil(p_s * n), n - kept_count(k_ratio, n))


def dropscore(n: int, p_s: float, k_ratio: float, mode: str, rng) -> DropMask:
    """Training-only random exclusion of nodes from the top-k candidate set.

    The mask size is clamped so ceil(k*n) survivors always remain."""
    if mode not in ("train", "eval"):
        raise ConfigurationError(f"unknown mode {mode!r}")
    if mode == "eval" or p_s == 0.0:
        return DropMask()
    size = drop_mask_size(n, p_s, k_ratio)
    if size <= 0:
        return DropMask()
    dropped = tuple(sorted(int(i) for i in rng.choice(n, size=size, replace=False)))
    return DropMask(dropped=dropped)


def rank_reduce(s: np.ndarray, kind: str = "sum") -> np.ndarray:
    """Collapse an n x h score matrix to one scalar per node for ranking."""
    s = np.asarray(s)
    if s.ndim == 1:
        s = s[:, None]
    if kind == "sum":
        return s.sum(axis=1)
    if kind == "mean":
        return s.mean(axis=1)
    if kind == "max":
        return s.max(axis=1)
    raise ConfigurationError(f"unknown rank reduction {kind!r}")


def _gate_col(s: Tensor, j: int, gating: str) -> Tensor:
    col = ad.slice_cols(s, j, j + 1)
    if gating == "sigma-gate":
        col = ad.apply_unary(col, "sigmoid")
    return col


def feature_map_concat(x: Tensor, s: Tensor, idx, gating="raw-gate") -> Tensor:
    """Kept features gated by each score column, concatenated: width c*h."""
    x_kept = ad.gather_rows(x, idx)
    parts = []
    for j in range(s.shape[1]):
        g = ad.gather_rows(_gate_col(s, j, gating), idx)
        parts.append(ad.mul(x_kept, g))
    return parts[0] if len(parts) == 1 else ad.concat_cols(parts)


def feature_map_multihead(x: Tensor, s: Tensor, idx, gating="raw-gate") -> Tensor:
    """Feature blocks of width ceil(c/h) gated by matching score columns."""
    c = x.shape[1]
    h = s.shape[1]
    if h > c:
        raise ConfigurationError(f"multi-head needs h <= c, got h={h}, c={c}")
    d = math.ceil(c / h)
    x_kept = ad.gather_rows(x, idx)
    parts = []
    for j in range(h):
        lo, hi = j * d, min((j + 1) * d, c)
        if lo >= hi:
            break
        g = ad.gather_rows(_gate_col(s, j, gating), idx)
        parts.append(ad.mul(ad.slice_cols(x_kept, lo, hi), g))
    return parts[0] if len(parts) == 1 else ad.concat_cols(parts)


def feature_map_repeat(x: Tensor, s: Tensor, idx, h: int, gating="raw-gate") -> Tensor:
    """h stacked copies of the scalar-gated features: width c*h."""
    if s.shape[1] != 1:
        raise ConfigurationError("repeat-expand needs scalar (n x 1) scores")
    gated = ad.mul(ad.gather_rows(x, idx), ad.gather_rows(_gate_col(s, 0, gating), idx))
    return gated if h == 1 else ad.concat_cols([gated] * h)


def feature_map_mlp_expand(x: Tensor, s: Tensor, idx, expand_w: Tensor,
                           expand_b: Tensor, gating="raw-gate") -> Tensor:
    """Affine + relu lift of the scalar-gated features to width c*h."""
    if s.shape[1] != 1:
        raise ConfigurationError("mlp-expand needs scalar (n x 1) scores")
    gated = ad.mul(ad.gather_rows(x, idx), ad.gather_rows(_gate_col(s, 0, gating), idx))
    return ad.apply_unary(ad.add(ad.matmul(gated, expand_w), expand_b), "relu")


def pooled_width(in_dim: int, mid: MidConfig) -> int:
    if mid.feature_map == "multi-head":
        return in_dim
    return in_dim * mid.h


class PoolLayer:
    """One pooling stage: score -> flip -> drop -> rank -> select -> feature map."""

    def __init__(self, in_dim: int, pool: PoolConfig, mid: MidConfig, rng):
        self.in_dim = in_dim
        self.pool = pool
        self.mid = mid
        self.scorer = make_scorer(pool, in_dim, mid.score_dim, rng)
        self.expand_w = None
        self.expand_b = None
        if mid.feature_map == "mlp-expand":
            self.expand_w = glorot(rng, in_dim, in_dim * mid.h)
            self.expand_b = Tensor(np.zeros((1, in_dim * mid.h)), requires_grad=True)

    @property
    def out_dim(self) -> int:
        return pooled_width(self.in_dim, self.mid)

    def parameters(self):
        params = list(self.scorer.parameters())
        if self.expand_w is not None:
            params += [self.expand_w, self.expand_b]
        return params

    def forward(self, a: np.ndarray, a_norm: Tensor, x: Tensor, mode: str = "eval",
                rng=None, forced_mask: DropMask | None = None) -> PooledGraph:
        n = a.shape[0]
        s = self.scorer.forward(a_norm, x)
        s_flip = flipscore(s) if self.mid.flip else s
        ranks = rank_reduce(s_flip.value, self.mid.rank_reduce)

        if forced_mask is not None:
            mask = forced_mask
        elif self.mid.drop:
            if mode == "train" and rng is None:
                raise ConfigurationError("dropscore in train mode needs an rng")
            mask = dropscore(n, self.mid.p_s, self.pool.ratio, mode, rng)
        else:
            mask = DropMask()

        idx = select_topk(ranks, self.pool.ratio, n, exclude=mask.dropped)
        s_gate = s_flip if (self.mid.flip and self.mid.flip_gating) else s

        fm = self.mid.feature_map
        if fm == "concat":
            x_out = feature_map_concat(x, s_gate, idx, self.pool.gating)
        elif fm == "multi-head":
            x_out = feature_map_multihead(x, s_gate, idx, self.pool.gating)
        elif fm == "repeat-expand":
            x_out = feature_map_repeat(x, s_gate, idx, self.mid.h, self.pool.gating)
        else:
            x_out = feature_map_mlp_expand(x, s_gate, idx, self.expand_w,
                                           self.expand_b, self.pool.gating)
        return PooledGraph(x=x_out, a=a[np.ix_(idx, idx)], idx=idx, parent_n=n)
