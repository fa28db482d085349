"""Small MLP encoder onto the unit sphere, with a hand-written backward pass.

Inputs are processed in batches (rows are samples). ``forward`` records a
tape of the intermediate values and ``backward`` consumes it; a tape is tied
to the parameter version it was produced with.

Checkpoint format (text, version 1)::

    ropaws-mlp 1
    activation tanh
    layers 3
    W0 <rows> <cols>
    <rows lines of cols values>
    b0 <cols>
    <one line of cols values>
    ...

Values are written with 17 significant digits so a round trip is exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError

NORM_EPS = 1e-12
CHECKPOINT_MAGIC = "ropaws-mlp"
CHECKPOINT_VERSION = 1

_ACTIVATIONS = {
    "tanh": (np.tanh, lambda pre, act: 1.0 - act**2),
    "identity": (lambda x: x, lambda pre, act: np.ones_like(pre)),
    "softplus": (lambda x: np.logaddexp(0.0, x), lambda pre, act: 0.5 * (1.0 + np.tanh(0.5 * pre))),
}


class StaleTapeError(ValidationError):
    """A tape is replayed against parameters that changed since ``forward``."""


@dataclass
class MlpParams:
    """Weights ``W[i]`` of shape (fan_in, fan_out) and biases ``b[i]``.

    The activation is applied after every layer except the last.
    """

    weights: list
    biases: list
    activation: str = "tanh"
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValidationError("need one bias per weight matrix and at least one layer")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValidationError(f"layer {i}: weight {w.shape} and bias {b.shape} do not fit")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ValidationError(f"layer {i} fan-in {w.shape[0]} != previous fan-out")

    @classmethod
    def init(cls, sizes, rng, activation="tanh"):
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation."""
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(weights, biases, activation)

    @property
    def sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def out_dim(self):
        return self.weights[-1].shape[1]

    def arrays(self):
        """Parameter arrays in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def names(self):
        return [f"{k}{i}" for i in range(len(self.weights)) for k in ("W", "b")]

    def copy(self):
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                         self.activation, self.version)

    def bump(self):
        """Mark parameters as modified (invalidates outstanding tapes)."""
        self.version += 1

    def save(self, path):
        lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}", f"activation {self.activation}",
                 f"layers {len(self.weights)}"]
        for name, a in zip(self.names(), self.arrays()):
            shape = " ".join(str(s) for s in a.shape)
            lines.append(f"{name} {shape}")
            for row in np.atleast_2d(a):
                lines.append(" ".join(f"{v:.17g}" for v in row))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path):
        try:
            return cls._parse(path, Path(path).read_text().splitlines())
        except (ValueError, IndexError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"{path}: malformed checkpoint ({exc})") from None

    @classmethod
    def _parse(cls, path, lines):
        it = iter(enumerate(lines, start=1))

        def take():
            try:
                return next(it)
            except StopIteration:
                raise ValidationError(f"{path}: truncated checkpoint") from None

        _, head = take()
        parts = head.split()
        if len(parts) != 2 or parts[0] != CHECKPOINT_MAGIC:
            raise ValidationError(f"{path}: not a checkpoint file")
        if int(parts[1]) != CHECKPOINT_VERSION:
            raise ValidationError(f"{path}: unsupported checkpoint version {parts[1]}")
        activation = take()[1].split()[1]
        n_layers = int(take()[1].split()[1])
        weights, biases = [], []
        for i in range(2 * n_layers):
            lineno, header = take()
            name, *shape = header.split()
            shape = tuple(int(s) for s in shape)
            rows = shape[0] if len(shape) == 2 else 1
            vals = []
            for _ in range(rows):
                lineno, row = take()
                vals.append([float(v) for v in row.split()])
            a = np.array(vals, dtype=np.float64).reshape(shape)
            if not np.all(np.isfinite(a)):
                raise ValidationError(f"{path}:{lineno}: non-finite parameter")
            (weights if name.startswith("W") else biases).append(a)
        return cls(weights, biases, activation)


@dataclass
class ForwardTape:
    """Intermediate values of one batched forward pass."""

    inputs: np.ndarray
    pre: list
    post: list
    out: np.ndarray
    norms: np.ndarray
    embedding: np.ndarray
    params_id: int
    version: int


def forward(params, x):
    """Embed rows of ``x``; returns ``(embeddings, tape)``.

    A 1-D input is treated as a batch of one. Rows whose pre-normalisation
    output has norm at most ``NORM_EPS`` map to the first basis vector.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != params.weights[0].shape[0]:
        raise ValidationError(f"input dimension {x.shape[1]} != encoder input {params.weights[0].shape[0]}")
    act, _ = _ACTIVATIONS[params.activation]
    pre, post = [], []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        a = h @ w + b
        pre.append(a)
        h = a if i == last else act(a)
        post.append(h)
    norms = np.linalg.norm(h, axis=1)
    degenerate = norms <= NORM_EPS
    z = h / np.where(degenerate, 1.0, norms)[:, None]
    if np.any(degenerate):
        z[degenerate] = 0.0
        z[degenerate, 0] = 1.0
    tape = ForwardTape(x, pre, post, h, norms, z, id(params), params.version)
    return z, tape


def embed(params, x):
    return forward(params, x)[0]


def backward(tape, params, grad_embedding):
    """Parameter gradients given ``dL/dz`` for every row of the tape.

    Returns a list aligned with :meth:`MlpParams.arrays`. Gradients are summed
    over the batch in row order.
    """
    if tape.params_id != id(params) or tape.version != params.version:
        raise StaleTapeError("tape was recorded with different parameters")
    g = np.asarray(grad_embedding, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != tape.embedding.shape:
        raise ValidationError(f"gradient shape {g.shape} != embedding shape {tape.embedding.shape}")
    z = tape.embedding
    live = tape.norms > NORM_EPS
    # Jacobian of h/|h| is (I - z z^T)/|h|
    g = (g - np.sum(g * z, axis=1, keepdims=True) * z) / np.where(live, tape.norms, 1.0)[:, None]
    g[~live] = 0.0
    _, dact = _ACTIVATIONS[params.activation]
    grads = [None] * (2 * len(params.weights))
    for i in range(len(params.weights) - 1, -1, -1):
        if i != len(params.weights) - 1:
            g = g * dact(tape.pre[i], tape.post[i])
        h_in = tape.inputs if i == 0 else tape.post[i - 1]
        grads[2 * i] = h_in.T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        if i:
            g = g @ params.weights[i].T
    return grads


def grad_check(params, batch, loss_closure, h=1e-5, max_params=None, rng=None):
    """Largest relative error between analytic and central-difference gradients.

    Parameters
    ----------
    params : MlpParams
    batch : ndarray
        Inputs embedded in one forward pass.
    loss_closure : callable
        Maps embeddings ``Z`` to ``(loss, dL/dZ)``. Anything it holds fixed
        (e.g. detached targets) stays fixed under the perturbations.
    h : float
        Central-difference step.
    max_params : int, optional
        If given, check a random subset of this many scalar parameters.
    rng : numpy.random.Generator, optional
        Source for the subset.
    """
    z, tape = forward(params, batch)
    _, gz = loss_closure(z)
    analytic = backward(tape, params, gz)
    work = params.copy()
    arrays = work.arrays()
    index = [(k, j) for k, a in enumerate(arrays) for j in range(a.size)]
    if max_params is not None and max_params < len(index):
        rng = rng if rng is not None else np.random.default_rng(0)
        pick = rng.choice(len(index), size=max_params, replace=False)
        index = [index[i] for i in sorted(pick)]
    worst = 0.0
    for k, j in index:
        flat = arrays[k].reshape(-1)
        orig = flat[j]
        flat[j] = orig + h
        lp = loss_closure(embed(work, batch))[0]
        flat[j] = orig - h
        lm = loss_closure(embed(work, batch))[0]
        flat[j] = orig
        numeric = (lp - lm) / (2 * h)
        a = analytic[k].reshape(-1)[j]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst
