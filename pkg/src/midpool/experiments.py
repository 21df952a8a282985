"""Declarative experiment runner: classification with k-fold CV, robustness,
generalization, ablations, parameter sweeps, reconstruction, and report I/O."""

from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

import midpool
from midpool import autodiff as ad
from midpool.autodiff import Adam, Tensor
from midpool.fixtures import (
    gen_grid_graph,
    gen_mutag_fixture,
    gen_nci1_fixture,
    gen_ring_graph,
)
from midpool.graphs import (
    Dataset,
    IngestionError,
    gen_colors3,
    gen_triangles,
    kfold_split,
    load_tu_dataset,
    normalize_adjacency_matrix,
)
from midpool.layers import GcnLayer, PoolClassifier, readout
from midpool.mid import MidConfig, PoolLayer
from midpool.pooling import ConfigurationError, PoolConfig, unpool

DATA_DIR_ENV = "MIDPOOL_DATA_DIR"


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch):
        super().__init__(f"loss became non-finite at epoch {epoch}")
        self.epoch = epoch


@dataclass
class ExperimentConfig:
    task: str = "classify"
    dataset: str = "MUTAG-FIXTURE"
    data_dir: str = ""
    count: int = 400            # generator-backed dataset size
    n_min: int = 4
    n_max: int = 25
    test_count: int = 200
    test_n_min: int = 25
    test_n_max: int = 60
    backbone: str = "sag"
    ratio: float = 0.5
    gsa_alpha: float = 0.5
    h: int = 1
    p_s: float = 0.0
    flip: bool = False
    drop: bool = False
    feature_map: str = "concat"
    num_blocks: int = 3
    hidden: int = 128
    lr: float = 1e-3
    weight_decay: float = 1e-4
    max_epochs: int = 500
    patience: int = 50
    accum: int = 128
    val_fraction: float = 0.1
    folds: int = 10
    seeds: tuple = (0, 1, 2)
    rates: tuple = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
    sweep_ratio: tuple = ()
    sweep_blocks: tuple = ()
    sweep_h: tuple = ()
    sweep_p_s: tuple = ()
    out: str = ""
    format: str = "json"

    def __post_init__(self):
        if self.patience > self.max_epochs:
            raise ConfigurationError("patience must be <= max_epochs")
        if not self.seeds:
            raise ConfigurationError("seeds must be nonempty")
        if self.format not in ("json", "csv"):
            raise ConfigurationError(f"unknown report format {self.format!r}")

    def pool_config(self) -> PoolConfig:
        return PoolConfig(ratio=self.ratio, scorer=self.backbone,
                          gsa_alpha=self.gsa_alpha)

    def mid_config(self) -> MidConfig:
        return MidConfig(h=self.h, p_s=self.p_s, flip=self.flip, drop=self.drop,
                         feature_map=self.feature_map)

    def echo(self) -> dict:
        d = dataclasses.asdict(self)
        for key in ("seeds", "rates", "sweep_ratio", "sweep_blocks",
                    "sweep_h", "sweep_p_s"):
            d[key] = list(d[key])
        return d


_TUPLE_FIELDS = {"seeds", "rates", "sweep_ratio", "sweep_blocks", "sweep_h", "sweep_p_s"}
_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _parse_value(key: str, raw: str):
    if key not in _FIELD_TYPES:
        raise ConfigurationError(f"unknown config key {key!r}")
    raw = raw.strip()
    if key in _TUPLE_FIELDS:
        if not raw:
            return ()
        items = [tok.strip() for tok in raw.split(",")]
        if key in ("seeds", "sweep_blocks", "sweep_h"):
            return tuple(int(t) for t in items)
        return tuple(float(t) for t in items)
    kind = _FIELD_TYPES[key]
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "bool":
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigurationError(f"bad boolean for {key}: {raw!r}")
    return raw


def parse_config_text(text: str, overrides=()) -> ExperimentConfig:
    """Flat key = value lines, '#' comments; overrides are 'key=value' strings."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected 'key = value'")
        key, raw = line.split("=", 1)
        values[key.strip()] = _parse_value(key.strip(), raw)
    for ov in overrides:
        if "=" not in ov:
            raise ConfigurationError(f"override {ov!r}: expected key=value")
        key, raw = ov.split("=", 1)
        values[key.strip()] = _parse_value(key.strip(), raw)
    return ExperimentConfig(**values)


def load_config(path: str, overrides=()) -> ExperimentConfig:
    with open(path) as f:
        return parse_config_text(f.read(), overrides)


@dataclass
class RunResult:
    task: str
    records: list = field(default_factory=list)
    mean: float = 0.0
    std: float = 0.0
    wall_time: float = 0.0
    config: dict = field(default_factory=dict)
    version: str = midpool.__version__

    def finalize(self):
        metrics = [r["metric"] for r in self.records]
        self.mean = float(np.mean(metrics)) if metrics else 0.0
        self.std = float(np.std(metrics)) if metrics else 0.0
        return self


def resolve_dataset(cfg: ExperimentConfig, seed=0) -> Dataset:
    name = cfg.dataset.upper()
    if name == "COLORS-3":
        return gen_colors3(cfg.count, cfg.n_min, cfg.n_max, seed=seed)
    if name == "TRIANGLES":
        return gen_triangles(cfg.count, cfg.n_min, cfg.n_max, seed=seed)
    if name == "MUTAG-FIXTURE":
        return gen_mutag_fixture(cfg.count if cfg.count else 188, seed=seed)
    if name == "NCI1-FIXTURE":
        return gen_nci1_fixture(cfg.count if cfg.count else 400, seed=seed)
    data_dir = cfg.data_dir or os.environ.get(DATA_DIR_ENV, "")
    if not data_dir:
        raise IngestionError(f"no data directory for dataset {cfg.dataset!r} "
                             f"(set data_dir or ${DATA_DIR_ENV})")
    return load_tu_dataset(os.path.join(data_dir, cfg.dataset), cfg.dataset)


def build_model(cfg: ExperimentConfig, dataset: Dataset, model_seed: int,
                pool_edge_drop=0.0) -> PoolClassifier:
    return PoolClassifier(
        feature_dim=dataset.feature_dim,
        num_classes=dataset.num_classes,
        pool_cfg=cfg.pool_config(),
        mid_cfg=cfg.mid_config(),
        num_blocks=cfg.num_blocks,
        hidden=cfg.hidden,
        seed=model_seed,
        pool_edge_drop=pool_edge_drop,
    )


def _graph_loss(model, g, mode, rng):
    logits = model.forward(g, mode=mode, rng=rng)
    return ad.cross_entropy(logits, g.label)


def _mean_eval_loss(model, graphs):
    total = 0.0
    for g in graphs:
        total += _graph_loss(model, g, "eval", None).item()
    return total / len(graphs)


def accuracy(model, graphs, rng=None) -> float:
    hits = 0
    for g in graphs:
        if rng is not None:
            probs = ad.softmax_probs(model.forward(g, mode="eval", rng=rng))
        else:
            probs = model.predict_proba(g)
        hits += int(np.argmax(probs) == g.label)
    return hits / len(graphs)


def train_model(model, train_graphs, val_graphs, cfg: ExperimentConfig, seed: int):
    """Early-stopped Adam training with per-graph gradient accumulation.

    Returns the best-validation parameter state."""
    opt = Adam(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(seed)
    best_val = np.inf
    best_state = model.state()
    stale = 0
    order = np.arange(len(train_graphs))
    for epoch in range(cfg.max_epochs):
        rng.shuffle(order)
        for start in range(0, len(order), cfg.accum):
            chunk = order[start:start + cfg.accum]
            for gi in chunk:
                loss = _graph_loss(model, train_graphs[gi], "train", rng)
                if not np.isfinite(loss.item()):
                    raise TrainingDivergedError(epoch)
                ad.backward(ad.scale(loss, 1.0 / len(chunk)))
            opt.step()
        val_loss = _mean_eval_loss(model, val_graphs)
        if not np.isfinite(val_loss):
            raise TrainingDivergedError(epoch)
        if val_loss < best_val - 1e-9:
            best_val = val_loss
            best_state = model.state()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.load_state(best_state)
    return best_state


def _run_fold(cfg, dataset, split, seed, pool_edge_drop=0.0, eval_rng_seed=None):
    gmap = {g.graph_id: g for g in dataset.graphs}
    train_graphs = [gmap[i] for i in split.train_ids]
    val_graphs = [gmap[i] for i in split.val_ids]
    test_graphs = [gmap[i] for i in split.test_ids]
    model_seed = seed * 1009 + split.fold_index
    model = build_model(cfg, dataset, model_seed, pool_edge_drop=pool_edge_drop)
    train_model(model, train_graphs, val_graphs, cfg, seed=model_seed)
    eval_rng = np.random.default_rng(eval_rng_seed) \
        if (pool_edge_drop > 0.0 and eval_rng_seed is not None) else None
    return accuracy(model, test_graphs, rng=eval_rng)


def train_classifier(cfg: ExperimentConfig) -> RunResult:
    t0 = time.time()
    dataset = resolve_dataset(cfg)
    result = RunResult(task="classify", config=cfg.echo())
    for seed in cfg.seeds:
        splits = kfold_split(dataset, k=cfg.folds, val_fraction=cfg.val_fraction,
                             seed=seed)
        for split in splits:
            acc = _run_fold(cfg, dataset, split, seed)
            result.records.append({"seed": seed, "fold": split.fold_index,
                                   "metric": acc})
    result.wall_time = time.time() - t0
    return result.finalize()


def run_robustness(cfg: ExperimentConfig, rates=None) -> RunResult:
    """Accuracy-vs-edge-drop curve; perturbation hits the pooling inputs only."""
    rates = list(cfg.rates if rates is None else rates)
    t0 = time.time()
    dataset = resolve_dataset(cfg)
    result = RunResult(task="robustness", config=cfg.echo())
    for rate in rates:
        for seed in cfg.seeds:
            split = kfold_split(dataset, k=cfg.folds,
                                val_fraction=cfg.val_fraction, seed=seed)[0]
            acc = _run_fold(cfg, dataset, split, seed, pool_edge_drop=rate,
                            eval_rng_seed=seed + 77)
            result.records.append({"seed": seed, "rate": rate, "fold": 0,
                                   "metric": acc})
    result.wall_time = time.time() - t0
    return result.finalize()


def run_generalization(cfg: ExperimentConfig) -> RunResult:
    """Train on small graphs, test on same-range and larger-range splits."""
    if cfg.dataset.upper() not in ("COLORS-3", "TRIANGLES"):
        raise ConfigurationError("generalization needs a generator-backed dataset")
    t0 = time.time()
    result = RunResult(task="generalize", config=cfg.echo())
    for seed in cfg.seeds:
        gen = gen_colors3 if cfg.dataset.upper() == "COLORS-3" else gen_triangles
        train_ds = gen(cfg.count, cfg.n_min, cfg.n_max, seed=seed)
        origin_ds = gen(cfg.test_count, cfg.n_min, cfg.n_max, seed=seed + 1000)
        large_ds = gen(cfg.test_count, cfg.test_n_min, cfg.test_n_max,
                       seed=seed + 2000)
        rng = np.random.default_rng(seed)
        order = rng.permutation(len(train_ds.graphs))
        n_val = max(1, int(round(cfg.val_fraction * len(order))))
        val_graphs = [train_ds.graphs[i] for i in order[:n_val]]
        train_graphs = [train_ds.graphs[i] for i in order[n_val:]]
        model = build_model(cfg, train_ds, model_seed=seed * 1009)
        train_model(model, train_graphs, val_graphs, cfg, seed=seed * 1009)
        for split_name, ds in (("test-origin", origin_ds), ("test-large", large_ds)):
            result.records.append({"seed": seed, "split": split_name,
                                   "metric": accuracy(model, ds.graphs)})
    result.wall_time = time.time() - t0
    return result.finalize()


ABLATION_VARIANTS = ("base", "full", "wo_flipscore", "wo_dropscore", "wo_multiscore")


def ablation_variant(cfg: ExperimentConfig, variant: str) -> ExperimentConfig:
    changes = {
        "base": {"h": 1, "flip": False, "drop": False, "p_s": 0.0},
        "full": {},
        "wo_flipscore": {"flip": False},
        "wo_dropscore": {"drop": False, "p_s": 0.0},
        "wo_multiscore": {"h": 1},
    }[variant]
    return dataclasses.replace(cfg, **changes)


def run_ablation(cfg: ExperimentConfig) -> RunResult:
    """Full plug-in, three leave-one-out variants, and the base model."""
    if not (cfg.flip and cfg.drop and cfg.h > 1):
        raise ConfigurationError("ablation needs flip, drop, and h > 1 enabled")
    t0 = time.time()
    result = RunResult(task="ablation", config=cfg.echo())
    for variant in ABLATION_VARIANTS:
        sub = train_classifier(ablation_variant(cfg, variant))
        for rec in sub.records:
            result.records.append({**rec, "variant": variant})
    result.wall_time = time.time() - t0
    return result.finalize()


def run_sweep(cfg: ExperimentConfig) -> RunResult:
    """Cartesian grid over pooling ratio, block count, score dim, drop rate."""
    axes = {
        "ratio": list(cfg.sweep_ratio) or [cfg.ratio],
        "num_blocks": list(cfg.sweep_blocks) or [cfg.num_blocks],
        "h": list(cfg.sweep_h) or [cfg.h],
        "p_s": list(cfg.sweep_p_s) or [cfg.p_s],
    }
    t0 = time.time()
    dataset = resolve_dataset(cfg)
    result = RunResult(task="sweep", config=cfg.echo())
    for combo in itertools.product(*axes.values()):
        point = dict(zip(axes.keys(), combo))
        sub_cfg = dataclasses.replace(
            cfg, ratio=float(point["ratio"]), num_blocks=int(point["num_blocks"]),
            h=int(point["h"]), p_s=float(point["p_s"]),
            drop=cfg.drop or point["p_s"] > 0)
        for seed in cfg.seeds:
            split = kfold_split(dataset, k=cfg.folds,
                                val_fraction=cfg.val_fraction, seed=seed)[0]
            acc = _run_fold(sub_cfg, dataset, split, seed)
            result.records.append({"seed": seed, "metric": acc,
                                   **{k: float(v) for k, v in point.items()}})
    result.wall_time = time.time() - t0
    return result.finalize()


class ReconstructionNet:
    """GCN -> pool -> GCN -> unpool -> GCN autoencoder on node coordinates."""

    def __init__(self, feature_dim, pool_cfg, mid_cfg, hidden=32, seed=0):
        rng = np.random.default_rng(seed)
        self.enc = GcnLayer(feature_dim, hidden, rng, activation="relu")
        self.pool = PoolLayer(hidden, pool_cfg, mid_cfg, rng)
        self.mid_gcn = GcnLayer(self.pool.out_dim, hidden, rng, activation="relu")
        self.dec = GcnLayer(hidden, feature_dim, rng, activation="identity")

    def parameters(self):
        return (self.enc.parameters() + self.pool.parameters()
                + self.mid_gcn.parameters() + self.dec.parameters())

    def forward(self, g, mode="eval", rng=None, return_unpooled=False):
        a_norm = Tensor(normalize_adjacency_matrix(g.A))
        h = self.enc.forward(Tensor(g.X), a_norm)
        pg = self.pool.forward(g.A, a_norm, h, mode=mode, rng=rng)
        pooled_norm = Tensor(normalize_adjacency_matrix(pg.a))
        h2 = self.mid_gcn.forward(pg.x, pooled_norm)
        up = ad.scatter_rows(h2, pg.idx, g.n)
        out = self.dec.forward(up, a_norm)
        if return_unpooled:
            return out, up, pg
        return out


def _mse(pred: Tensor, target: np.ndarray) -> Tensor:
    diff = ad.sub(pred, Tensor(target))
    sq = ad.mul(diff, diff)
    return ad.reduce(ad.reduce(sq, "rows", "mean"), "cols", "mean")


def run_reconstruction(cfg: ExperimentConfig,
                       ratios=(0.1, 0.2, 0.3, 0.4, 0.5)) -> RunResult:
    """Feature-MSE autoencoding of ring and grid coordinate graphs."""
    t0 = time.time()
    result = RunResult(task="reconstruct", config=cfg.echo())
    graphs = {"ring": gen_ring_graph(24), "grid": gen_grid_graph(5, 5)}
    for ratio in ratios:
        for seed in cfg.seeds:
            for name, g in graphs.items():
                pool_cfg = PoolConfig(ratio=ratio, scorer=cfg.backbone,
                                      gsa_alpha=cfg.gsa_alpha)
                net = ReconstructionNet(g.X.shape[1], pool_cfg, cfg.mid_config(),
                                        hidden=cfg.hidden, seed=seed)
                opt = Adam(net.parameters(), lr=cfg.lr,
                           weight_decay=cfg.weight_decay)
                rng = np.random.default_rng(seed)
                for epoch in range(cfg.max_epochs):
                    loss = _mse(net.forward(g, mode="train", rng=rng), g.X)
                    if not np.isfinite(loss.item()):
                        raise TrainingDivergedError(epoch)
                    ad.backward(loss)
                    opt.step()
                final = _mse(net.forward(g, mode="eval"), g.X).item()
                result.records.append({"seed": seed, "ratio": ratio,
                                       "graph": name, "metric": final})
    result.wall_time = time.time() - t0
    return result.finalize()


def run_task(cfg: ExperimentConfig) -> RunResult:
    runners = {
        "classify": train_classifier,
        "robustness": run_robustness,
        "generalize": run_generalization,
        "ablation": run_ablation,
        "sweep": run_sweep,
        "reconstruct": run_reconstruction,
    }
    if cfg.task not in runners:
        raise ConfigurationError(f"unknown task {cfg.task!r}")
    return runners[cfg.task](cfg)


# ---------------------------------------------------------------------------
# Report I/O


def emit_report(result: RunResult, path: str, fmt: str = "json") -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    if fmt == "json":
        payload = {
            "task": result.task,
            "config": result.config,
            "records": result.records,
            "aggregates": {"mean": result.mean, "std": result.std,
                           "count": len(result.records)},
            "wall_time": result.wall_time,
            "version": result.version,
        }
        with open(path, "w") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
    elif fmt == "csv":
        keys = sorted({k for rec in result.records for k in rec})
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=keys)
            writer.writeheader()
            for rec in result.records:
                writer.writerow(rec)
    else:
        raise ConfigurationError(f"unknown report format {fmt!r}")


def load_report_json(path: str) -> RunResult:
    with open(path) as f:
        payload = json.load(f)
    result = RunResult(task=payload["task"], records=payload["records"],
                       config=payload["config"],
                       wall_time=payload["wall_time"],
                       version=payload["version"])
    return result.finalize()
