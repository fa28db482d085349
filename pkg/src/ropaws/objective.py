"""Consistency objective with sharpened, detached targets and me-max.

Loss gradients are derived by hand. :func:`ropaws_loss_and_grad` returns the
gradient with respect to the output predictions only; targets and per-sample
weights are constants of the loss, so no gradient is ever produced for them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from .errors import ParameterError, ValidationError

LOG_CLAMP = 1e-12


def _freeze(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


def sharpen(p, temperature=0.25):
    """Temperature sharpening ``p_i^(1/T) / sum_j p_j^(1/T)`` along the last axis."""
    if not temperature > 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    p = np.asarray(p, dtype=np.float64)
    logp = np.log(np.maximum(p, 0.0), where=p > 0, out=np.full(p.shape, -np.inf)) / temperature
    logp -= logp.max(axis=-1, keepdims=True)
    e = np.exp(logp)
    return e / e.sum(axis=-1, keepdims=True)


def sharpen_backward(p, temperature, grad_out):
    """Vector-Jacobian product of :func:`sharpen` at ``p``."""
    a = 1.0 / temperature
    p = np.asarray(p, dtype=np.float64)
    rho = sharpen(p, temperature)
    centered = grad_out - np.sum(grad_out * rho, axis=-1, keepdims=True)
    # rho / p computed without dividing by tiny p
    safe = np.maximum(p, np.finfo(float).tiny)
    ratio = np.where(p > 0, rho / safe, 0.0)
    return a * ratio * centered


def cross_entropy(p, target):
    """``-sum target * log p`` along the last axis, with ``p`` clamped at 1e-12."""
    p = np.asarray(p, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    return -np.sum(target * np.log(np.maximum(p, LOG_CLAMP)), axis=-1)


def entropy(p):
    """Shannon entropy (nats) along the last axis; ``0 log 0 = 0``."""
    p = np.asarray(p, dtype=np.float64)
    logp = np.log(p, where=p > 0, out=np.zeros(p.shape))
    return -np.sum(p * logp, axis=-1)


def me_max(mean_sharpened):
    """Entropy of the batch-mean sharpened prediction (the loss subtracts it)."""
    return float(entropy(mean_sharpened))


def in_domain_weight(in_mass_view1, in_mass_view2, power=1.0):
    """Per-sample loss weight ``((q_in1 + q_in2) / 2) ** power``."""
    if not power > 0:
        raise ParameterError(f"power must be positive, got {power}")
    m1 = np.asarray(in_mass_view1, dtype=np.float64)
    m2 = np.asarray(in_mass_view2, dtype=np.float64)
    w = np.clip(0.5 * (m1 + m2), 0.0, 1.0) ** power
    return float(w) if w.ndim == 0 else w


@dataclass(frozen=True)
class ViewPair:
    """Outputs and detached targets for the two views of an unlabeled batch.

    ``output_probs`` and ``target_probs`` are (2, M, C); ``target_in_mass`` is
    (2, M). Targets are stored read-only.
    """

    output_probs: np.ndarray
    target_probs: np.ndarray
    target_in_mass: np.ndarray

    def __post_init__(self):
        out = np.asarray(self.output_probs, dtype=np.float64)
        if out.ndim != 3 or out.shape[0] != 2:
            raise ValidationError(f"output_probs must be (2, M, C), got {out.shape}")
        tgt = _freeze(self.target_probs)
        mass = _freeze(self.target_in_mass)
        if tgt.shape != out.shape:
            raise ValidationError(f"target_probs shape {tgt.shape} != output_probs shape {out.shape}")
        if mass.shape != out.shape[:2]:
            raise ValidationError(f"target_in_mass shape {mass.shape}, expected {out.shape[:2]}")
        object.__setattr__(self, "output_probs", out)
        object.__setattr__(self, "target_probs", tgt)
        object.__setattr__(self, "target_in_mass", mass)

    @classmethod
    def paws(cls, output_probs):
        """PAWS pairing: targets are the (detached) outputs themselves."""
        out = np.asarray(output_probs, dtype=np.float64)
        return cls(out, out, np.ones(out.shape[:2]))


@dataclass(frozen=True)
class LossReport:
    total: float
    consistency: float
    me_max: float
    mean_weight: float


def ropaws_loss_and_grad(pair, power=1.0, sharpen_T=0.25, weights=None, sharpen_first=False):
    """Loss value and its gradient with respect to ``pair.output_probs``.

    ``total = 1/(2M) sum_i w_i (H(p1_i, rho(q2_i)) + H(p2_i, rho(q1_i))) - H(pbar)``
    with ``pbar`` the mean of the sharpened outputs of both views.

    Parameters
    ----------
    pair : ViewPair
    power : float
        Reweighting exponent ``k``.
    sharpen_T : float
        Sharpening temperature.
    weights : array_like, optional
        Override for the per-sample weights (e.g. all ones for PAWS).
    sharpen_first : bool
        Ablation switch: ``target_probs`` are taken to be already sharpened
        (the caller sharpened before renormalizing).
    """
    p = pair.output_probs
    _, m, c = p.shape
    if m == 0:
        raise ValidationError("empty unlabeled batch")
    if weights is None:
        w = in_domain_weight(pair.target_in_mass[0], pair.target_in_mass[1], power)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (m,):
            raise ValidationError(f"weights shape {w.shape}, expected {(m,)}")
    w = np.atleast_1d(w)
    rho_t = pair.target_probs if sharpen_first else sharpen(pair.target_probs, sharpen_T)
    # view 1 output is matched to view 2 target and vice versa
    crossed = rho_t[::-1]
    ce = cross_entropy(p, crossed)  # (2, M)
    consistency = float(np.sum(w * (ce[0] + ce[1])) / (2 * m))

    rho_out = sharpen(p, sharpen_T)
    pbar = rho_out.reshape(-1, c).mean(axis=0)
    ent = me_max(pbar)
    total = consistency - ent

    clamped = p > LOG_CLAMP
    grad = np.where(clamped, -crossed / np.where(clamped, p, 1.0), 0.0) * (w / (2 * m))[None, :, None]
    # d(-H(pbar))/dpbar = log pbar + 1
    g_pbar = np.log(np.maximum(pbar, np.finfo(float).tiny)) + 1.0
    g_rho = np.broadcast_to(g_pbar / (2 * m), p.shape)
    grad = grad + sharpen_backward(p, sharpen_T, g_rho)
    report = LossReport(total=total, consistency=consistency, me_max=ent, mean_weight=float(np.mean(w)))
    return report, grad


def ropaws_loss(pair, power=1.0, sharpen_T=0.25, weights=None):
    """Loss report for a :class:`ViewPair` (see :func:`ropaws_loss_and_grad`)."""
    return ropaws_loss_and_grad(pair, power=power, sharpen_T=sharpen_T, weights=weights)[0]


def paws_loss(output_probs, sharpen_T=0.25):
    """PAWS objective: unweighted, targets are the cross-view outputs."""
    return ropaws_loss(ViewPair.paws(output_probs), sharpen_T=sharpen_T, weights=np.ones(np.shape(output_probs)[1]))


def softmax_backward(weights, grad_weights):
    """Vector-Jacobian product of a row softmax given its output ``weights``."""
    return weights * (grad_weights - np.sum(weights * grad_weights, axis=-1, keepdims=True))


def paws_predict_backward(query, labeled, labels, tau, grad_probs):
    """Gradients of soft-NN outputs with respect to query and support embeddings.

    Returns ``(grad_query, grad_labeled)`` for ``probs = softmax(q l^T / tau) @ labels``.
    """
    s = softmax(query @ labeled.T / tau, axis=1)
    g_logits = softmax_backward(s, grad_probs @ labels.T) / tau
    return g_logits @ labeled, g_logits.T @ query
