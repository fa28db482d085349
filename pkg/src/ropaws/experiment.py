"""Reproducible experiments: config files, the toy preset, train/eval/compare runs.

Config files are flat ``key = value`` text; keys are the field names of
:class:`~ropaws.trainer.TrainConfig` and :class:`~ropaws.data.GenSpec`.
Blank lines and ``#`` comments are ignored.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .data import GenSpec, generate
from .encoder import MlpParams, grad_check
from .errors import ValidationError
from .evaluation import CLOSED_FORM, EvalReport, evaluate
from .kernel import one_hot
from .seeding import rng_stream
from .trainer import TrainConfig, loss_closure, train

# tau_prior for the 16-d toy embeddings, chosen by pilot runs (0.1 leaves
# OOD clusters with priors near 1)
TOY_TRAIN = TrainConfig(tau_prior=0.03)
TOY_GEN = GenSpec()
CURATED_GEN = GenSpec(ood_clusters=0, unlabeled_ood=0)

PROPAGATION_ITERS = (0, 1, 2, 3, CLOSED_FORM)


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = TOY_TRAIN
    gen: GenSpec = TOY_GEN

    def items(self):
        for obj in (self.train, self.gen):
            for f in fields(obj):
                yield f.name, getattr(obj, f.name)

    def to_text(self):
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.items())

    def with_overrides(self, overrides):
        """Apply ``{key: value-or-string}``; unknown keys raise ValidationError."""
        t_names = {f.name for f in fields(TrainConfig)}
        g_names = {f.name for f in fields(GenSpec)}
        t_kw, g_kw = {}, {}
        for key, raw in overrides.items():
            if key in t_names:
                t_kw[key] = _coerce(getattr(self.train, key), raw, key)
            elif key in g_names:
                g_kw[key] = _coerce(getattr(self.gen, key), raw, key)
            else:
                raise ValidationError(f"unknown config key {key!r}")
        return RunConfig(self.train.replace(**t_kw), self.gen.replace(**g_kw))


def config_keys():
    return [f.name for f in fields(TrainConfig)] + [f.name for f in fields(GenSpec)]


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(current, raw, key):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if isinstance(current, bool):
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("true", "1", "yes")
        if key == "data_seed":
            return None if text.lower() == "none" else int(text)
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float):
            return float(text)
    except ValueError:
        raise ValidationError(f"bad value for {key}: {raw!r}") from None
    return text


def parse_config_text(text, source="<config>"):
    """``key = value`` lines to a dict of strings."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def load_config(path=None, overrides=None, base=None):
    """Toy preset, then the file at ``path``, then ``overrides``."""
    cfg = base or RunConfig()
    if path is not None:
        cfg = cfg.with_overrides(parse_config_text(Path(path).read_text(), str(path)))
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg


def dataset_for(cfg):
    return generate(cfg.gen, seed=cfg.train.seed)


def loss_history_csv(history):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "total", "consistency", "me_max", "mean_weight"])
    for i, r in enumerate(history, start=1):
        w.writerow([i] + [f"{v:.12g}" for v in (r.total, r.consistency, r.me_max, r.mean_weight)])
    return buf.getvalue()


def run_train(cfg, dataset=None):
    """Train under ``cfg``; returns ``(state, dataset)``."""
    dataset = dataset if dataset is not None else dataset_for(cfg)
    return train(dataset, cfg.train), dataset


def run_eval(params, cfg, dataset=None, iters=PROPAGATION_ITERS):
    dataset = dataset if dataset is not None else dataset_for(cfg)
    t = cfg.train
    return evaluate(params, dataset, tau=t.tau, ratio=t.ratio_r, tau_prior=t.tau_prior, iters=iters, seed=t.seed)


def compare(cfg, seeds, methods=("paws", "ropaws"), iters=()):
    """Train each method on matched seeds; returns ``{(method, seed): (EvalReport, state)}``."""
    results = {}
    for seed in seeds:
        base = cfg.with_overrides({"seed": seed})
        dataset = dataset_for(base)
        for method in methods:
            run = base.with_overrides({"method": method})
            state, _ = run_train(run, dataset)
            results[(method, seed)] = (run_eval(state.params, run, dataset, iters=iters), state)
    return results


def compare_csv(results):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "seed", "accuracy", "conf_in", "conf_out", "auroc", "ece"])
    for (method, seed), (rep, _) in sorted(results.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        w.writerow([method, seed] + [f"{v:.10f}" for v in (rep.accuracy, rep.conf_in, rep.conf_out, rep.auroc, rep.ece)])
    return buf.getvalue()


def compare_text(results):
    lines = [f"{'method':<8}{'seed':>6}{'acc':>9}{'conf_in':>9}{'conf_out':>10}{'auroc':>8}{'ece':>8}"]
    for (method, seed), (rep, _) in sorted(results.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        lines.append(f"{method:<8}{seed:>6}{100 * rep.accuracy:9.2f}{100 * rep.conf_in:9.2f}"
                     f"{100 * rep.conf_out:10.2f}{100 * rep.auroc:8.2f}{100 * rep.ece:8.2f}")
    for method in sorted({m for m, _ in results}):
        reps = [r for (m, _), (r, _) in results.items() if m == method]
        mean = [np.mean([getattr(r, k) for r in reps]) for k in ("accuracy", "conf_in", "conf_out", "auroc", "ece")]
        lines.append(f"{method + ' mean':<14}" + "".join(f"{100 * v:9.2f}" for v in mean))
    return "\n".join(lines) + "\n"


def gradient_check(config=TOY_TRAIN, m=4, n=4, c=2, d=8, in_dim=2, h=1e-5):
    """Max relative error of the analytic loss gradient over every MLP parameter.

    A random encoder ``in_dim -> d -> d -> d`` embeds ``n`` labeled rows and
    two views of ``m`` unlabeled rows; the loss is the full training
    objective of ``config.method`` with targets held fixed.
    """
    rng = rng_stream(config.seed, "init")
    params = MlpParams.init([in_dim, d, d, d], rng, config.activation)
    x = rng.normal(size=(n + 2 * m, in_dim))
    labels = one_hot(np.arange(n) % c, c)
    return grad_check(params, x, loss_closure(labels, n, config), h=h)


def save_checkpoint(params, path):
    params.save(path)


def load_checkpoint(path):
    if not Path(path).exists():
        raise ValidationError(f"checkpoint {path} not found")
    return MlpParams.load(path)


__all__ = ["RunConfig", "TOY_TRAIN", "TOY_GEN", "CURATED_GEN", "load_config", "run_train", "run_eval",
           "compare", "compare_csv", "compare_text", "gradient_check", "EvalReport"]
