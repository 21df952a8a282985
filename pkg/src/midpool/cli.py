"""Command-line entry point.

Exit codes: 0 success, 2 config error, 3 ingestion error, 4 training diverged.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from midpool.diagnostics import (
    DiagnosticsReport,
    ground_truth_scores,
    info_gain,
    score_correctness_auc,
    selection_spread,
    trapped_bound_check,
)
from midpool.experiments import (
    ExperimentConfig,
    TrainingDivergedError,
    build_model,
    emit_report,
    load_config,
    resolve_dataset,
    run_task,
    train_model,
)
from midpool.fixtures import gen_mutag_fixture, gen_nci1_fixture
from midpool.graphs import IngestionError, gen_colors3, gen_erdos_renyi, gen_triangles, write_tu_dataset, Dataset
from midpool.mid import rank_reduce
from midpool.pooling import ConfigurationError


def _cmd_run(args) -> int:
    cfg = load_config(args.config, overrides=args.override)
    result = run_task(cfg)
    out = args.out or cfg.out
    fmt = args.format or cfg.format
    if out:
        emit_report(result, out, fmt)
    print(f"task={result.task} records={len(result.records)} "
          f"mean={result.mean:.4f} std={result.std:.4f}")
    return 0


def _cmd_diagnose(args) -> int:
    cfg = ExperimentConfig(dataset=args.dataset, backbone=args.backbone,
                           h=args.h, p_s=args.p_s, flip=args.flip,
                           drop=args.p_s > 0, hidden=args.hidden,
                           max_epochs=args.epochs, patience=args.epochs,
                           seeds=(args.seed,))
    dataset = resolve_dataset(cfg, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    order = rng.permutation(len(dataset.graphs))
    n_val = max(1, len(order) // 10)
    val = [dataset.graphs[i] for i in order[:n_val]]
    train = [dataset.graphs[i] for i in order[n_val:]]
    model = build_model(cfg, dataset, model_seed=args.seed)
    train_model(model, train, val, cfg, seed=args.seed)

    g = next(gr for gr in dataset.graphs if gr.n >= 4 and gr.num_edges >= 1)
    layer = model.pools[0]
    from midpool.autodiff import Tensor
    from midpool.graphs import normalized_adjacency

    x_emb = model.gcns[0].forward(Tensor(g.X), Tensor(normalized_adjacency(g)))
    scores = layer.scorer.forward(Tensor(normalized_adjacency(g)), x_emb)
    ranks = rank_reduce(np.abs(scores.value) if cfg.flip else scores.value)
    gt = ground_truth_scores(model, g)
    auc, degenerate = score_correctness_auc(ranks, gt, cfg.ratio)
    pg = layer.forward(g.A, Tensor(normalized_adjacency(g)), x_emb, mode="eval")
    lam = info_gain(g, pg.idx)
    violations = trapped_bound_check(g.X, np.ones(g.X.shape[1]))
    spread = selection_spread(g, pg.idx) if pg.idx.size >= 2 else float("nan")
    report = DiagnosticsReport(auc=auc, auc_degenerate=degenerate, lambda_sel=lam,
                               trapped_violations=violations, spread=spread)
    print(f"auc={report.auc:.4f} degenerate={report.auc_degenerate} "
          f"lambda_sel={report.lambda_sel:.6f} "
          f"trapped_violations={report.trapped_violations} spread={report.spread:.3f}")
    return 0


def _cmd_gen(args) -> int:
    if args.kind == "colors3":
        ds = gen_colors3(args.count, args.n_min, args.n_max, seed=args.seed)
    elif args.kind == "triangles":
        ds = gen_triangles(args.count, args.n_min, args.n_max, seed=args.seed)
    elif args.kind == "er":
        g = gen_erdos_renyi(args.n_max, seed=args.seed)
        g.label = 0
        ds = Dataset(graphs=[g], num_classes=1, feature_dim=g.X.shape[1], name="ER")
    elif args.kind == "mutag-fixture":
        ds = gen_mutag_fixture(args.count or 188, seed=args.seed)
    else:
        ds = gen_nci1_fixture(args.count or 400, seed=args.seed)
    write_tu_dataset(ds, args.out)
    print(f"wrote {len(ds.graphs)} graphs ({ds.name}) to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="midpool")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE")
    p_run.add_argument("--out", default="")
    p_run.add_argument("--format", choices=("json", "csv"), default="")
    p_run.set_defaults(func=_cmd_run)

    p_diag = sub.add_parser("diagnose", help="train briefly and print diagnostics")
    p_diag.add_argument("dataset")
    p_diag.add_argument("--backbone", default="sag", choices=("topk", "sag", "gsa"))
    p_diag.add_argument("--h", type=int, default=1)
    p_diag.add_argument("--p-s", dest="p_s", type=float, default=0.0)
    p_diag.add_argument("--flip", action="store_true")
    p_diag.add_argument("--hidden", type=int, default=32)
    p_diag.add_argument("--epochs", type=int, default=20)
    p_diag.add_argument("--seed", type=int, default=0)
    p_diag.set_defaults(func=_cmd_diagnose)

    p_gen = sub.add_parser("gen", help="generate a dataset in TU text format")
    p_gen.add_argument("kind", choices=("colors3", "triangles", "er",
                                        "mutag-fixture", "nci1-fixture"))
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--count", type=int, default=500)
    p_gen.add_argument("--n-min", dest="n_min", type=int, default=4)
    p_gen.add_argument("--n-max", dest="n_max", type=int, default=25)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.set_defaults(func=_cmd_gen)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except IngestionError as exc:
        print(f"ingestion error: {exc}", file=sys.stderr)
        return 3
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
