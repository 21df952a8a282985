"""Graph containers, TU-format I/O, synthetic generators, and split handling."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


class IngestionError(RuntimeError):
    pass


class ParseError(ValueError):
    pass


@dataclass
class Graph:
    """Undirected graph: binary symmetric adjacency (no stored self-loops),
    dense float feature matrix, optional class label."""

    A: np.ndarray
    X: np.ndarray
    label: int | None = None
    graph_id: int = 0
    _a_norm: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        self.X = np.asarray(self.X, dtype=np.float64)
        n = self.A.shape[0]
        if n < 1 or self.A.shape != (n, n):
            raise ValueError(f"adjacency must be square and nonempty, got {self.A.shape}")
        if not np.array_equal(self.A, self.A.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(self.A) != 0):
            raise ValueError("adjacency must have zero diagonal")
        if self.X.shape[0] != n:
            raise ValueError(f"feature rows {self.X.shape[0]} != node count {n}")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def num_edges(self) -> int:
        return int(self.A.sum()) // 2

    def edges(self):
        i, j = np.nonzero(np.triu(self.A))
        return list(zip(i.tolist(), j.tolist()))


@dataclass
class Dataset:
    graphs: list[Graph]
    num_classes: int
    feature_dim: int
    name: str = ""

    def __post_init__(self):
        for g in self.graphs:
            if g.X.shape[1] != self.feature_dim:
                raise ValueError("inconsistent feature dimension in dataset")
            if g.label is not None and not 0 <= g.label < self.num_classes:
                raise ValueError(f"label {g.label} out of [0, {self.num_classes})")

    def __len__(self):
        return len(self.graphs)

    def by_id(self, gid: int) -> Graph:
        return self._id_map()[gid]

    def _id_map(self):
        return {g.graph_id: g for g in self.graphs}


@dataclass
class FoldSplit:
    fold_index: int
    train_ids: list[int]
    val_ids: list[int]
    test_ids: list[int]


def normalized_adjacency(g: Graph) -> np.ndarray:
    """Symmetric normalization of the self-looped adjacency, cached per graph."""
    if g._a_norm is None:
        a_tilde = g.A + np.eye(g.n)
        d_inv_sqrt = 1.0 / np.sqrt(a_tilde.sum(axis=1))
        g._a_norm = a_tilde * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]
    return g._a_norm


def normalize_adjacency_matrix(a: np.ndarray) -> np.ndarray:
    """Same normalization for a bare adjacency matrix (coarsened graphs)."""
    n = a.shape[0]
    a_tilde = a + np.eye(n)
    d_inv_sqrt = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    return a_tilde * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]


# ---------------------------------------------------------------------------
# TU text format


def _tu_path(dir_path, name, suffix):
    return os.path.join(dir_path, f"{name}_{suffix}.txt")


def load_tu_dataset(dir_path: str, name: str) -> Dataset:
    """Load a dataset in the TU text convention (1-indexed edge pairs)."""
    for suffix in ("A", "graph_indicator", "graph_labels"):
        if not os.path.exists(_tu_path(dir_path, name, suffix)):
            raise IngestionError(f"missing required file {name}_{suffix}.txt in {dir_path}")

    with open(_tu_path(dir_path, name, "graph_indicator")) as f:
        indicator = np.array([int(line.strip()) for line in f if line.strip()])
    with open(_tu_path(dir_path, name, "graph_labels")) as f:
        raw_labels = [int(line.strip()) for line in f if line.strip()]

    num_nodes = len(indicator)
    graph_ids = np.unique(indicator)
    # node id -> position within its graph
    local_index = np.zeros(num_nodes, dtype=np.intp)
    counts = {}
    for i, gid in enumerate(indicator):
        local_index[i] = counts.get(gid, 0)
        counts[gid] = counts.get(gid, 0) + 1

    adj = {gid: np.zeros((counts[gid], counts[gid])) for gid in graph_ids}
    with open(_tu_path(dir_path, name, "A")) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                u, v = (int(tok) for tok in line.split(","))
            except ValueError as exc:
                raise ParseError(f"{name}_A.txt line {lineno}: {line!r}") from exc
            u -= 1
            v -= 1
            if u == v:
                continue
            gid = indicator[u]
            if indicator[v] != gid:
                raise ParseError(f"{name}_A.txt line {lineno}: edge crosses graphs")
            a = adj[gid]
            a[local_index[u], local_index[v]] = 1.0
            a[local_index[v], local_index[u]] = 1.0

    node_labels = None
    path = _tu_path(dir_path, name, "node_labels")
    if os.path.exists(path):
        with open(path) as f:
            node_labels = np.array([int(line.strip()) for line in f if line.strip()])
        if len(node_labels) != num_nodes:
            raise ParseError(f"{name}_node_labels.txt: {len(node_labels)} rows for {num_nodes} nodes")

    node_attrs = None
    path = _tu_path(dir_path, name, "node_attributes")
    if os.path.exists(path):
        rows = []
        width = None
        with open(path) as f:
            for lineno, line in enumerate(f, 1):
                line = line.strip()
                if not line:
                    continue
                vals = [float(tok) for tok in line.split(",")]
                if width is None:
                    width = len(vals)
                elif len(vals) != width:
                    raise ParseError(f"{name}_node_attributes.txt line {lineno}: ragged row")
                rows.append(vals)
        node_attrs = np.array(rows)
        if node_attrs.shape[0] != num_nodes:
            raise ParseError(f"{name}_node_attributes.txt: row count mismatch")

    if node_labels is not None:
        distinct = sorted(set(node_labels.tolist()))
        remap = {v: i for i, v in enumerate(distinct)}
        onehot = np.zeros((num_nodes, len(distinct)))
        for i, v in enumerate(node_labels):
            onehot[i, remap[v]] = 1.0

    label_map = {v: i for i, v in enumerate(sorted(set(raw_labels)))}
    graphs = []
    for k, gid in enumerate(graph_ids):
        mask = indicator == gid
        a = adj[gid]
        if node_labels is None and node_attrs is None:
            deg = a.sum(axis=1)
            denom = max(a.shape[0] - 1, 1)
            x = (deg / denom)[:, None]
        else:
            parts = []
            if node_labels is not None:
                parts.append(onehot[mask])
            if node_attrs is not None:
                parts.append(node_attrs[mask])
            x = np.concatenate(parts, axis=1)
        graphs.append(Graph(A=a, X=x, label=label_map[raw_labels[k]], graph_id=int(gid) - 1))

    return Dataset(graphs=graphs, num_classes=len(label_map),
                   feature_dim=graphs[0].X.shape[1], name=name)


def write_tu_dataset(dataset: Dataset, dir_path: str) -> None:
    """Emit the same TU file set the loader reads (features as attributes)."""
    os.makedirs(dir_path, exist_ok=True)
    name = dataset.name or "DATASET"
    a_lines, indicator_lines, label_lines, attr_lines = [], [], [], []
    offset = 0
    for k, g in enumerate(dataset.graphs, 1):
        for i, j in g.edges():
            a_lines.append(f"{offset + i + 1}, {offset + j + 1}")
            a_lines.append(f"{offset + j + 1}, {offset + i + 1}")
        indicator_lines.extend([str(k)] * g.n)
        label_lines.append(str(g.label if g.label is not None else 0))
        for row in g.X:
            attr_lines.append(", ".join(repr(float(v)) for v in row))
        offset += g.n

    def dump(suffix, lines):
        with open(_tu_path(dir_path, name, suffix), "w") as f:
            f.write("\n".join(lines) + ("\n" if lines else ""))

    dump("A", a_lines)
    dump("graph_indicator", indicator_lines)
    dump("graph_labels", label_lines)
    if dataset.feature_dim > 0:
        dump("node_attributes", attr_lines)


# ---------------------------------------------------------------------------
# Synthetic generators

COLORS3_NUM_CLASSES = 11  # color-0 counts capped at 10
TRIANGLES_NUM_CLASSES = 10


def _random_connected_edges(n, p, rng):
    """G(n, p) upper-triangular draw plus a random spanning chain."""
    a = np.zeros((n, n))
    if n > 1:
        upper = rng.random((n, n)) < p
        iu = np.triu_indices(n, k=1)
        a[iu] = upper[iu]
        a = np.maximum(a, a.T)
        order = rng.permutation(n)
        for u, v in zip(order[:-1], order[1:]):
            a[u, v] = a[v, u] = 1.0
    return a


def gen_colors3(count, n_min=4, n_max=25, seed=0) -> Dataset:
    """Graphs whose label counts the nodes of color 0 (one-hot 3-color features)."""
    if not (1 <= n_min <= n_max) or count < 1:
        raise ValueError("need 1 <= n_min <= n_max and count >= 1")
    rng = np.random.default_rng(seed)
    graphs = []
    for gid in range(count):
        n = int(rng.integers(n_min, n_max + 1))
        colors = rng.integers(0, 3, size=n)
        x = np.zeros((n, 3))
        x[np.arange(n), colors] = 1.0
        a = _random_connected_edges(n, 0.1, rng)
        label = min(int((colors == 0).sum()), COLORS3_NUM_CLASSES - 1)
        graphs.append(Graph(A=a, X=x, label=label, graph_id=gid))
    return Dataset(graphs=graphs, num_classes=COLORS3_NUM_CLASSES,
                   feature_dim=3, name="COLORS-3")


def count_triangles(a: np.ndarray) -> int:
    return int(round(np.trace(a @ a @ a) / 6.0))


def gen_triangles(count, n_min=5, n_max=25, seed=0) -> Dataset:
    """Random graphs labeled by triangle count (clamped to [0, 9]),
    normalized-degree features."""
    if not (1 <= n_min <= n_max) or count < 1:
        raise ValueError("need 1 <= n_min <= n_max and count >= 1")
    rng = np.random.default_rng(seed)
    graphs = []
    for gid in range(count):
        n = int(rng.integers(n_min, n_max + 1))
        # aim for a handful of triangles regardless of n
        n_choose_3 = n * (n - 1) * (n - 2) / 6.0
        p = min((4.0 / max(n_choose_3, 1.0)) ** (1.0 / 3.0), 0.9)
        a = _random_connected_edges(n, p, rng)
        label = min(count_triangles(a), TRIANGLES_NUM_CLASSES - 1)
        deg = a.sum(axis=1)
        x = (deg / max(n - 1, 1))[:, None]
        graphs.append(Graph(A=a, X=x, label=label, graph_id=gid))
    return Dataset(graphs=graphs, num_classes=TRIANGLES_NUM_CLASSES,
                   feature_dim=1, name="TRIANGLES")


def gen_erdos_renyi(n, m_factor=2, seed=0) -> Graph:
    """Fixed-edge-count random graph with uniform 128-dim features."""
    if n < 2:
        raise ValueError("need n >= 2")
    rng = np.random.default_rng(seed)
    max_edges = n * (n - 1) // 2
    m = min(m_factor * n, max_edges)
    iu = np.triu_indices(n, k=1)
    chosen = rng.choice(max_edges, size=m, replace=False)
    a = np.zeros((n, n))
    a[iu[0][chosen], iu[1][chosen]] = 1.0
    a = np.maximum(a, a.T)
    x = rng.uniform(-1.0, 1.0, size=(n, 128))
    return Graph(A=a, X=x, graph_id=0)


def perturb_edges(g: Graph, rate: float, seed=0) -> Graph:
    """Remove floor(rate * |E|) undirected edges uniformly without replacement."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must be in [0, 1]")
    edges = g.edges()
    n_remove = int(rate * len(edges))
    a = g.A.copy()
    if n_remove:
        rng = np.random.default_rng(seed)
        for e in rng.choice(len(edges), size=n_remove, replace=False):
            i, j = edges[e]
            a[i, j] = a[j, i] = 0.0
    return Graph(A=a, X=g.X.copy(), label=g.label, graph_id=g.graph_id)


def permute_graph(g: Graph, perm) -> Graph:
    """Relabel nodes: new node i is old node perm[i]."""
    perm = np.asarray(perm, dtype=np.intp)
    if sorted(perm.tolist()) != list(range(g.n)):
        raise ValueError("perm must be a bijection of [0, n)")
    return Graph(A=g.A[np.ix_(perm, perm)], X=g.X[perm],
                 label=g.label, graph_id=g.graph_id)


def kfold_split(dataset: Dataset, k=10, val_fraction=0.1, seed=0) -> list[FoldSplit]:
    """Stratified k-fold with a validation slice held out of each train portion."""
    if len(dataset) < k:
        raise ValueError(f"dataset of {len(dataset)} graphs cannot be split into {k} folds")
    rng = np.random.default_rng(seed)
    by_label = {}
    for g in dataset.graphs:
        by_label.setdefault(g.label, []).append(g.graph_id)

    stratify = all(len(ids) >= k for ids in by_label.values())
    if not stratify:
        logger.warning("class with fewer than %d samples; falling back to unstratified folds", k)
        by_label = {None: [g.graph_id for g in dataset.graphs]}

    fold_tests = [[] for _ in range(k)]
    for ids in by_label.values():
        ids = sorted(ids)
        rng.shuffle(ids)
        for i, gid in enumerate(ids):
            fold_tests[i % k].append(gid)

    splits = []
    for fi in range(k):
        test = sorted(fold_tests[fi])
        rest = sorted(gid for fj in range(k) if fj != fi for gid in fold_tests[fj])
        rest = list(rest)
        rng_fold = np.random.default_rng(seed * 1000 + fi)
        rng_fold.shuffle(rest)
        n_val = max(1, int(round(val_fraction * len(rest))))
        val = sorted(rest[:n_val])
        train = sorted(rest[n_val:])
        splits.append(FoldSplit(fold_index=fi, train_ids=train, val_ids=val, test_ids=test))
    return splits
