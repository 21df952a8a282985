"""GCN trunk, readout, classifier head, and the hierarchical pooled network."""

from __future__ import annotations

import numpy as np

from midpool import autodiff as ad
from midpool.autodiff import Tensor
from midpool.graphs import Graph, normalize_adjacency_matrix, normalized_adjacency
from midpool.mid import MidConfig, PoolLayer
from midpool.pooling import ConfigurationError, PoolConfig, glorot


class GcnLayer:
    """activation(A_norm @ X @ W + b)."""

    def __init__(self, in_dim, out_dim, rng, activation="relu", bias=True):
        if activation not in ("relu", "tanh", "identity"):
            raise ConfigurationError(f"unknown activation {activation!r}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        self.weight = glorot(rng, in_dim, out_dim)
        self.bias = Tensor(np.zeros((1, out_dim)), requires_grad=True) if bias else None

    def forward(self, x: Tensor, a_norm: Tensor) -> Tensor:
        if x.shape[1] != self.in_dim:
            raise ConfigurationError(f"gcn expects width {self.in_dim}, got {x.shape[1]}")
        out = ad.matmul(ad.matmul(a_norm, x), self.weight)
        if self.bias is not None:
            out = ad.add(out, self.bias)
        if self.activation == "identity":
            return out
        return ad.apply_unary(out, self.activation)

    def parameters(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])


def readout(x: Tensor) -> Tensor:
    """1 x 2c vector: column-wise mean concatenated with column-wise max."""
    return ad.concat_cols([ad.reduce(x, "rows", "mean"), ad.reduce(x, "rows", "max")])


class MlpHead:
    """Two affine layers with relu between, producing 1 x num_classes logits."""

    def __init__(self, in_dim, hidden, num_classes, rng):
        self.w1 = glorot(rng, in_dim, hidden)
        self.b1 = Tensor(np.zeros((1, hidden)), requires_grad=True)
        self.w2 = glorot(rng, hidden, num_classes)
        self.b2 = Tensor(np.zeros((1, num_classes)), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        hid = ad.apply_unary(ad.add(ad.matmul(x, self.w1), self.b1), "relu")
        return ad.add(ad.matmul(hid, self.w2), self.b2)

    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2]


def _drop_adjacency_edges(a: np.ndarray, rate: float, rng) -> np.ndarray:
    """Remove floor(rate * |E|) undirected edges (robustness sweeps)."""
    i, j = np.nonzero(np.triu(a))
    n_remove = int(rate * len(i))
    if n_remove == 0:
        return a
    out = a.copy()
    for e in rng.choice(len(i), size=n_remove, replace=False):
        out[i[e], j[e]] = out[j[e], i[e]] = 0.0
    return out


class PoolClassifier:
    """L blocks of (GCN -> pooling), summed per-block readouts, MLP head."""

    def __init__(self, feature_dim, num_classes, pool_cfg: PoolConfig,
                 mid_cfg: MidConfig, num_blocks=3, hidden=128, seed=0,
                 pool_edge_drop=0.0):
        rng = np.random.default_rng(seed)
        self.pool_cfg = pool_cfg
        self.mid_cfg = mid_cfg
        self.num_blocks = num_blocks
        self.hidden = hidden
        self.pool_edge_drop = pool_edge_drop
        self.gcns = []
        self.pools = []
        in_dim = feature_dim
        for _ in range(num_blocks):
            gcn = GcnLayer(in_dim, hidden, rng, activation="relu")
            pool = PoolLayer(hidden, pool_cfg, mid_cfg, rng)
            self.gcns.append(gcn)
            self.pools.append(pool)
            in_dim = pool.out_dim
        self.readout_dim = 2 * self.pools[-1].out_dim
        self.head = MlpHead(self.readout_dim, hidden, num_classes, rng)

    def parameters(self):
        params = []
        for gcn, pool in zip(self.gcns, self.pools):
            params += gcn.parameters() + pool.parameters()
        return params + self.head.parameters()

    def state(self):
        return [p.value.copy() for p in self.parameters()]

    def load_state(self, state):
        for p, v in zip(self.parameters(), state):
            p.value = v.copy()

    def forward(self, g: Graph, mode="eval", rng=None) -> Tensor:
        a = g.A
        x = Tensor(g.X)
        a_norm = Tensor(normalized_adjacency(g))
        summed = None
        for gcn, pool in zip(self.gcns, self.pools):
            xg = gcn.forward(x, a_norm)
            pool_a = a
            if self.pool_edge_drop > 0.0 and rng is not None:
                pool_a = _drop_adjacency_edges(a, self.pool_edge_drop, rng)
            pool_a_norm = Tensor(normalize_adjacency_matrix(pool_a)) \
                if pool_a is not a else a_norm
            pg = pool.forward(pool_a, pool_a_norm, xg, mode=mode, rng=rng)
            r = readout(pg.x)
            summed = r if summed is None else ad.add(summed, r)
            a = pg.a
            x = pg.x
            a_norm = Tensor(normalize_adjacency_matrix(a))
        return self.head.forward(summed)

    def predict_proba(self, g: Graph) -> np.ndarray:
        return ad.softmax_probs(self.forward(g, mode="eval"))
