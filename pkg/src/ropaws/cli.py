"""Command-line entry point.

Every command resolves one configuration (toy preset, then ``--config``,
then flag overrides) and writes it to ``<out>/config.txt`` before doing
anything else. Exit codes: 0 success, 1 usage error, 2 validation error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import experiment
from .data import LABELED, TEST, UNLABELED_OOD, label_matrix, save_embeddings
from .encoder import embed
from .errors import NumericalFailure, ValidationError
from .evaluation import CLOSED_FORM, nearest_labeled, propagation_grid
from .seeding import rng_stream
from .trainer import METHODS

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3
COMMANDS = ("gen-data", "train", "eval", "propagate", "neighbors", "compare", "grad-check")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _common(parser):
    g = parser.add_argument_group("run options")
    g.add_argument("--config", help="key = value file applied on top of the toy preset")
    g.add_argument("--out", default="ropaws-out", help="output directory (default: %(default)s)")
    g.add_argument("--method", choices=METHODS)
    g.add_argument("--seed", type=int)
    o = parser.add_argument_group("config overrides")
    for key in experiment.config_keys():
        if key in ("method", "seed"):
            continue
        flags = [f"--{key}"] + ([f"--{key.replace('_', '-')}"] if "_" in key else [])
        o.add_argument(*flags, dest=key, metavar="VALUE")


def build_parser():
    parser = _Parser(prog="ropaws", description="Semi-supervised KDE label propagation experiments on toy data.")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True, parser_class=_Parser)
    helps = {
        "gen-data": "write the generated dataset as train.csv and test.csv",
        "train": "train an encoder; writes checkpoint.txt and loss.csv",
        "eval": "evaluate a checkpoint; writes eval.csv, eval.txt and embeddings.csv",
        "propagate": "accuracy and confidence per propagation round; writes propagate.csv",
        "neighbors": "nearest labeled neighbours of unlabeled samples; writes neighbors.csv",
        "compare": "train paws and ropaws on matched seeds; writes compare.csv and compare.txt",
        "grad-check": "print the max relative error of the loss gradient",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name], description=helps[name])
        _common(p)
        if name in ("eval", "propagate", "neighbors"):
            p.add_argument("--checkpoint", help="encoder checkpoint (default: <out>/checkpoint.txt, trained if absent)")
        if name == "propagate":
            p.add_argument("--queries", type=int, default=512, help="query batch size (default: %(default)s)")
            p.add_argument("--max-iter", type=int, default=5, help="largest round count before the closed form")
        if name == "neighbors":
            p.add_argument("--top-k", type=int, default=5)
            p.add_argument("--queries", type=int, default=4, help="in-class and OOD queries each")
        if name == "compare":
            p.add_argument("--seeds", type=int, default=5, help="number of matched seeds starting at --seed")
    return parser


def resolve(args):
    keys = experiment.config_keys()
    overrides = {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}
    return experiment.load_config(args.config, overrides)


def _write(path, text):
    Path(path).write_text(text)


def _params(args, cfg, out, dataset):
    path = Path(args.checkpoint) if args.checkpoint else out / "checkpoint.txt"
    if args.checkpoint or path.exists():
        return experiment.load_checkpoint(path)
    state, _ = experiment.run_train(cfg, dataset)
    experiment.save_checkpoint(state.params, path)
    return state.params


def cmd_gen_data(args, cfg, out):
    ds = experiment.dataset_for(cfg)
    ids = np.arange(len(ds.inputs))
    train_rows = ds.split != TEST
    label = np.where(ds.split == LABELED, ds.true_class, -1)
    ood = (ds.split == UNLABELED_OOD).astype(int)
    save_embeddings(out / "train.csv", ds.inputs[train_rows], label[train_rows], ood[train_rows], ids[train_rows])
    test_rows = ds.split == TEST
    save_embeddings(out / "test.csv", ds.inputs[test_rows], ds.true_class[test_rows], ood[test_rows], ids[test_rows])
    print(", ".join(f"{k}: {v}" for k, v in ds.counts().items()))


def cmd_train(args, cfg, out):
    state, _ = experiment.run_train(cfg)
    experiment.save_checkpoint(state.params, out / "checkpoint.txt")
    _write(out / "loss.csv", experiment.loss_history_csv(state.history))
    if state.history:
        last = state.history[-1]
        print(f"epoch {state.epoch}: loss {last.total:.6f} (consistency {last.consistency:.6f}, "
              f"me-max {last.me_max:.6f}, weight {last.mean_weight:.4f})")


def cmd_eval(args, cfg, out):
    ds = experiment.dataset_for(cfg)
    params = _params(args, cfg, out, ds)
    report = experiment.run_eval(params, cfg, ds)
    _write(out / "eval.csv", report.to_csv())
    _write(out / "eval.txt", report.to_text())
    rows = ds.split != TEST
    label = np.where(ds.split == LABELED, ds.true_class, -1)
    save_embeddings(out / "embeddings.csv", embed(params, ds.inputs[rows]), label[rows],
                    (ds.split == UNLABELED_OOD)[rows].astype(int), np.flatnonzero(rows))
    print(report.to_text(), end="")


def cmd_propagate(args, cfg, out):
    if args.queries < 2 or args.max_iter < 0:
        raise ValidationError("--queries must be at least 2 and --max-iter nonnegative")
    ds = experiment.dataset_for(cfg)
    params = _params(args, cfg, out, ds)
    x_l, y_l = ds.labeled()
    x_t, y_t = ds.test()
    x_u, is_ood = ds.unlabeled()
    t = cfg.train
    iters = tuple(range(args.max_iter + 1)) + (CLOSED_FORM,)
    grid = propagation_grid(embed(params, x_t), y_t, embed(params, x_u[is_ood]), embed(params, x_l),
                            label_matrix(y_l, ds.n_classes), t.tau, t.ratio_r, t.tau_prior, args.queries,
                            iters, t.seed)
    lines = ["iter,accuracy,conf_in,conf_out"]
    for k in iters:
        acc, cin, cout = grid[k]
        lines.append(f"{'inf' if k == CLOSED_FORM else k},{acc:.10f},{cin:.10f},{cout:.10f}")
    _write(out / "propagate.csv", "\n".join(lines) + "\n")
    print("\n".join(lines))


def cmd_neighbors(args, cfg, out):
    ds = experiment.dataset_for(cfg)
    params = _params(args, cfg, out, ds)
    lab = np.flatnonzero(ds.split == LABELED)
    z_l = embed(params, ds.inputs[lab])
    rng = rng_stream(cfg.train.seed, "eval")
    picks = []
    for split in ("unlabeled-in", UNLABELED_OOD):
        pool = np.flatnonzero(ds.split == split)
        if len(pool):
            picks += sorted(rng.choice(pool, size=min(args.queries, len(pool)), replace=False).tolist())
    with open(out / "neighbors.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query_id", "query_class", "rank", "neighbor_id", "cosine", "neighbor_class"])
        for i in picks:
            z = embed(params, ds.inputs[i:i + 1])
            qclass = "ood" if ds.split[i] == UNLABELED_OOD else int(ds.true_class[i])
            print(f"query {i} ({qclass}):")
            for rank, (nid, cos, c) in enumerate(nearest_labeled(z, z_l, ds.true_class[lab], args.top_k, lab), 1):
                w.writerow([i, qclass, rank, nid, f"{cos:.10f}", c])
                print(f"  {rank}. id {nid} class {c} cosine {cos:.4f}")


def cmd_compare(args, cfg, out):
    if args.seeds < 1:
        raise ValidationError("--seeds must be positive")
    seeds = [cfg.train.seed + i for i in range(args.seeds)]
    results = experiment.compare(cfg, seeds)
    _write(out / "compare.csv", experiment.compare_csv(results))
    text = experiment.compare_text(results)
    _write(out / "compare.txt", text)
    print(text, end="")


def cmd_grad_check(args, cfg, out):
    err = experiment.gradient_check(cfg.train)
    print(f"max relative error: {err:.3e}")
    if not np.isfinite(err):
        raise NumericalFailure("gradient check produced a non-finite error")


HANDLERS = {
    "gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "propagate": cmd_propagate,
    "neighbors": cmd_neighbors, "compare": cmd_compare, "grad-check": cmd_grad_check,
}


def run(argv=None):
    """Parse ``argv`` and run one command; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        cfg = resolve(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write(out / "config.txt", cfg.to_text())
        HANDLERS[args.command](args, cfg, out)
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def main():
    sys.exit(run())
