"""Training loop for the toy encoder under the PAWS or RoPAWS objective."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import encoder
from .data import Dataset, label_matrix
from .errors import NumericalFailure, ParameterError, ValidationError
from .kernel import paws_predict
from .objective import LossReport, ViewPair, paws_predict_backward, ropaws_loss_and_grad, sharpen
from .posterior import renormalize, ropaws_targets
from .seeding import rng_stream

METHODS = ("paws", "ropaws")


@dataclass(frozen=True)
class TrainConfig:
    method: str = "ropaws"
    tau: float = 0.1
    sharpen_T: float = 0.25
    ratio_r: float = 5.0
    tau_prior: float = 0.1
    reweight_k: float = 1.0
    label_smoothing: float = 0.0
    sharpen_before_renormalize: bool = False
    epochs: int = 200
    steps_per_epoch: int = 0
    labeled_per_class: int = 10
    classes_per_batch: int = 0
    unlabeled_batch: int = 128
    views: int = 2
    sigma_aug: float = 0.5
    lr_base: float = 0.05
    lr_peak: float = 0.5
    warmup_epochs: int = 10
    momentum: float = 0.9
    weight_decay: float = 1e-6
    hidden: int = 64
    out_dim: int = 16
    activation: str = "tanh"
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ParameterError(f"method must be one of {METHODS}, got {self.method!r}")
        for name in ("tau", "sharpen_T", "ratio_r", "tau_prior", "reweight_k"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")
        if self.views != 2:
            raise ParameterError("exactly two views are supported")
        if self.epochs < 0 or self.labeled_per_class < 1 or self.unlabeled_batch < 1:
            raise ParameterError("epochs, labeled_per_class and unlabeled_batch out of range")
        if self.sigma_aug < 0 or self.lr_base < 0 or self.lr_peak < 0 or self.weight_decay < 0:
            raise ParameterError("sigma_aug, learning rates and weight decay must be nonnegative")
        if not 0 <= self.momentum < 1:
            raise ParameterError("momentum must be in [0, 1)")

    def replace(self, **kw):
        return replace(self, **kw)


@dataclass
class TrainState:
    params: encoder.MlpParams
    momentum: list
    step: int = 0
    epoch: int = 0
    history: list = field(default_factory=list)
    rng_batch: np.random.Generator | None = None
    rng_aug: np.random.Generator | None = None

    @classmethod
    def fresh(cls, in_dim, config):
        sizes = [in_dim, config.hidden, config.hidden, config.out_dim]
        params = encoder.MlpParams.init(sizes, rng_stream(config.seed, "init"), config.activation)
        return cls(params, [np.zeros_like(a) for a in params.arrays()],
                   rng_batch=rng_stream(config.seed, "batching"),
                   rng_aug=rng_stream(config.seed, "augmentation"))


def sample_labeled_batch(dataset, per_class, rng, classes_per_batch=0, smoothing=0.0):
    """Class-balanced support: ``per_class`` distinct labeled samples per class.

    With ``classes_per_batch > 0`` only that many classes (drawn at random)
    are included.
    """
    x, y = dataset.labeled() if isinstance(dataset, Dataset) else dataset
    n_classes = dataset.n_classes if isinstance(dataset, Dataset) else int(np.max(y)) + 1
    classes = np.arange(n_classes)
    if classes_per_batch:
        classes = np.sort(rng.choice(n_classes, size=classes_per_batch, replace=False))
    idx = []
    for c in classes:
        pool = np.flatnonzero(y == c)
        if pool.size < per_class:
            raise ValidationError(f"class {c} has {pool.size} labeled samples, need {per_class}")
        idx.append(rng.choice(pool, size=per_class, replace=False))
    idx = np.concatenate(idx)
    return x[idx], label_matrix(y[idx], n_classes, smoothing)


def augment(x, rng, sigma_aug):
    """Two independently jittered copies of ``x``."""
    if sigma_aug < 0:
        raise ParameterError("sigma_aug must be nonnegative")
    x = np.asarray(x, dtype=np.float64)
    if sigma_aug == 0:
        return x.copy(), x.copy()
    return x + rng.normal(scale=sigma_aug, size=x.shape), x + rng.normal(scale=sigma_aug, size=x.shape)


def lr_schedule(step, config, total_steps, warmup_steps):
    """Linear warm-up from ``lr_base`` to ``lr_peak``, then cosine decay to 0."""
    if step < 0:
        raise ParameterError("step must be nonnegative")
    if warmup_steps and step <= warmup_steps:
        return config.lr_base + (config.lr_peak - config.lr_base) * step / warmup_steps
    span = max(total_steps - warmup_steps, 1)
    t = min((step - warmup_steps) / span, 1.0)
    return config.lr_peak * 0.5 * (1.0 + math.cos(math.pi * t))


def compute_targets(z_views, z_l, labels, config):
    """Detached targets and in-domain masses for each view, shape (2, M, C) / (2, M)."""
    if config.method == "paws":
        probs = np.stack([paws_predict(z, z_l, labels, config.tau) for z in z_views])
        return probs, np.ones(probs.shape[:2])
    probs, mass = [], []
    for z in z_views:
        post = ropaws_targets(z, z_l, labels, tau=config.tau, ratio=config.ratio_r, tau_prior=config.tau_prior)
        m = post.in_mass
        if config.sharpen_before_renormalize:
            q = m[:, None] * sharpen(post.probs / np.maximum(m, 1e-300)[:, None], config.sharpen_T)
            probs.append(renormalize(q))
        else:
            probs.append(renormalize(post))
        mass.append(m)
    return np.stack(probs), np.stack(mass)


def loss_closure(labels, n_labeled, config, targets=None, target_fn=None):
    """Map stacked embeddings ``[z_l; z_1; z_2]`` to ``(report, dL/dZ)``.

    Targets are computed on the first call (or taken from ``targets``) and
    then held fixed, which is what detaching means for a finite-difference
    check. ``target_fn(z_views, z_l, labels, config)`` replaces
    :func:`compute_targets` when given.
    """
    frozen = {} if targets is None else {"t": targets}
    target_fn = target_fn or compute_targets

    def closure(z, with_report=False):
        z_l = z[:n_labeled]
        m = (z.shape[0] - n_labeled) // 2
        z_views = (z[n_labeled:n_labeled + m], z[n_labeled + m:])
        if "t" not in frozen:
            frozen["t"] = target_fn(z_views, z_l, labels, config)
        t_probs, t_mass = frozen["t"]
        out = np.stack([paws_predict(zv, z_l, labels, config.tau) for zv in z_views])
        pair = ViewPair(out, t_probs, t_mass)
        weights = np.ones(m) if config.method == "paws" else None
        report, g_out = ropaws_loss_and_grad(pair, power=config.reweight_k, sharpen_T=config.sharpen_T,
                                             weights=weights, sharpen_first=config.sharpen_before_renormalize)
        g = np.zeros_like(z)
        for v, zv in enumerate(z_views):
            gq, gl = paws_predict_backward(zv, z_l, labels, config.tau, g_out[v])
            g[n_labeled + v * m:n_labeled + (v + 1) * m] = gq
            g[:n_labeled] += gl
        return (report if with_report else report.total), g

    return closure


def sgd_update(state, grads, lr, config):
    """SGD with momentum and decoupled weight decay, in place."""
    for a, g, buf in zip(state.params.arrays(), grads, state.momentum):
        buf *= config.momentum
        buf += g
        a -= lr * (buf + config.weight_decay * a)
    state.params.bump()


def train_step(state, labeled_batch, unlabeled_views, config, lr, target_fn=None):
    """One optimizer update; returns ``(state, LossReport)``."""
    x_l, labels = labeled_batch
    v1, v2 = unlabeled_views
    x = np.concatenate([x_l, v1, v2])
    z, tape = encoder.forward(state.params, x)
    closure = loss_closure(labels, len(x_l), config, target_fn=target_fn)
    report, gz = closure(z, with_report=True)
    grads = encoder.backward(tape, state.params, gz)
    sgd_update(state, grads, lr, config)
    state.step += 1
    return state, report


def schedule_lengths(dataset, config):
    n_unlabeled = len(dataset.unlabeled()[0])
    steps = config.steps_per_epoch or max(n_unlabeled // config.unlabeled_batch, 1)
    return steps, steps * config.epochs, steps * config.warmup_epochs


def train(dataset, config, state=None, callback=None):
    """Train for ``config.epochs`` epochs; history holds per-epoch mean losses."""
    x_u, _ = dataset.unlabeled()
    if len(x_u) < config.unlabeled_batch:
        raise ValidationError(f"need at least {config.unlabeled_batch} unlabeled samples, have {len(x_u)}")
    state = state or TrainState.fresh(dataset.inputs.shape[1], config)
    steps, total, warmup = schedule_lengths(dataset, config)
    for _ in range(config.epochs):
        order = state.rng_batch.permutation(len(x_u))
        reports = []
        for s in range(steps):
            idx = order[s * config.unlabeled_batch:(s + 1) * config.unlabeled_batch]
            if len(idx) < config.unlabeled_batch:
                # more steps than one pass over the pool: draw a fresh batch
                idx = state.rng_batch.choice(len(x_u), size=config.unlabeled_batch, replace=False)
            x_l, labels = sample_labeled_batch(dataset, config.labeled_per_class, state.rng_batch,
                                               config.classes_per_batch, config.label_smoothing)
            x_l = x_l + (state.rng_aug.normal(scale=config.sigma_aug, size=x_l.shape) if config.sigma_aug else 0.0)
            views = augment(x_u[idx], state.rng_aug, config.sigma_aug)
            lr = lr_schedule(state.step, config, total, warmup)
            state, report = train_step(state, (x_l, labels), views, config, lr)
            if not np.isfinite(report.total):
                raise NumericalFailure(f"loss diverged at step {state.step}")
            reports.append(report)
        state.epoch += 1
        state.history.append(LossReport(*(float(np.mean([getattr(r, f.name) for r in reports]))
                                          for f in fields(LossReport))))
        if callback is not None:
            callback(state)
    return state
