"""Cosine kernels on the unit sphere and the soft nearest-neighbour predictor.

Every density here is known only up to a global normalizing constant (the
kernel normalizer over the sphere and the class-mass constants), which is why
the functions return log-densities and ratios rather than absolute values.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from .errors import ParameterError, ValidationError

NORM_TOL = 1e-9
SIMPLEX_TOL = 1e-9


def check_unit_rows(z, name="embeddings", tol=NORM_TOL):
    """Return ``z`` as a 2-D float64 array after checking every row is unit-norm."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = z[None, :]
    if z.ndim != 2:
        raise ValidationError(f"{name} must be a vector or a matrix, got ndim={z.ndim}")
    if z.shape[0]:
        err = np.abs(np.linalg.norm(z, axis=1) - 1.0)
        if not np.all(err <= tol):
            i = int(np.argmax(err))
            raise ValidationError(f"{name} row {i} is not unit-norm (|norm - 1| = {err[i]:.3g})")
    return z


def check_label_matrix(labels, n_rows=None, tol=SIMPLEX_TOL):
    """Return ``labels`` as an (N, C) array of probability rows."""
    labels = np.asarray(labels, dtype=np.float64)
    if labels.ndim != 2:
        raise ValidationError(f"labels must be an (N, C) matrix, got shape {labels.shape}")
    if n_rows is not None and labels.shape[0] != n_rows:
        raise ValidationError(f"labels have {labels.shape[0]} rows, expected {n_rows}")
    if np.any(labels < 0) or np.any(np.abs(labels.sum(axis=1) - 1.0) > tol):
        raise ValidationError("label rows must be nonnegative and sum to 1")
    return labels


def _check_tau(tau, name="tau"):
    if not tau > 0:
        raise ParameterError(f"{name} must be positive, got {tau}")


def one_hot(classes, n_classes, smoothing=0.0):
    """One-hot (optionally label-smoothed) rows for integer ``classes``."""
    classes = np.asarray(classes, dtype=np.int64)
    if classes.size and (classes.min() < 0 or classes.max() >= n_classes):
        raise ValidationError("class index out of range")
    if not 0.0 <= smoothing < 1.0:
        raise ParameterError(f"smoothing must be in [0, 1), got {smoothing}")
    out = np.full((classes.size, n_classes), smoothing / n_classes)
    out[np.arange(classes.size), classes] += 1.0 - smoothing
    return out


def kernel_logit(a, b, tau):
    """Log of the unnormalized cosine kernel, ``a . b / tau``.

    >>> kernel_logit([1.0, 0.0], [1.0, 0.0], 0.1)
    10.0
    """
    _check_tau(tau)
    a = check_unit_rows(a, "a")[0]
    b = check_unit_rows(b, "b")[0]
    return float(a @ b) / tau


def paws_predict(query, labeled, labels, tau=0.1):
    """Soft nearest-neighbour class probabilities.

    Each query row is compared to the labeled support with a temperature
    softmax over cosine similarities, and the support labels are averaged
    with those weights.

    Parameters
    ----------
    query : array_like, shape (d,) or (M, d)
        Unit-norm query embeddings.
    labeled : array_like, shape (N, d)
        Unit-norm support embeddings.
    labels : array_like, shape (N, C)
        One-hot or soft label rows for the support.
    tau : float
        Softmax temperature.

    Returns
    -------
    ndarray, shape (C,) or (M, C)
        Probability rows; a 1-D query gives a 1-D result.
    """
    _check_tau(tau)
    single = np.ndim(query) == 1
    q = check_unit_rows(query, "query")
    zl = check_unit_rows(labeled, "labeled")
    if zl.shape[0] == 0:
        raise ValidationError("labeled support is empty")
    labels = check_label_matrix(labels, zl.shape[0])
    if q.shape[1] != zl.shape[1]:
        raise ValidationError(f"dimension mismatch: query d={q.shape[1]}, labeled d={zl.shape[1]}")
    weights = softmax(q @ zl.T / tau, axis=1)
    out = weights @ labels
    return out[0] if single else out


def kde_log_density(query, support, weights, tau=0.1):
    """Weighted cosine-KDE log-density ``log sum_i w_i exp(z . z_i / tau)``.

    The result omits the kernel normalizer and any batch-size constant; only
    differences between log-densities evaluated with the same ``tau`` are
    meaningful.
    """
    _check_tau(tau)
    q = check_unit_rows(query, "query")[0]
    zs = check_unit_rows(support, "support")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (zs.shape[0],):
        raise ValidationError(f"weights shape {weights.shape} does not match support count {zs.shape[0]}")
    if np.any(weights < 0):
        raise ValidationError("weights must be nonnegative")
    if not np.any(weights > 0):
        raise ValidationError("all kernel weights are zero")
    return float(logsumexp(zs @ q / tau, b=weights))


@dataclass(frozen=True)
class SimilarityBlock:
    """Row-softmax similarities of unlabeled queries to ``[labeled | unlabeled]``.

    ``to_labeled`` is (M, N) and ``to_unlabeled`` is (M, M); each concatenated
    row sums to one. The labeled columns carry the balance weight
    ``r' = ratio * M / N``.
    """

    to_labeled: np.ndarray
    to_unlabeled: np.ndarray
    tau: float
    ratio: float

    @property
    def n_queries(self):
        return self.to_labeled.shape[0]


def effective_ratio(ratio, n_unlabeled, n_labeled):
    """Labeled-vs-unlabeled mass balance ``r * |B_u| / |B_l|``."""
    return ratio * n_unlabeled / n_labeled


def similarity_block(unlabeled, labeled, tau=0.1, ratio=5.0):
    """Similarities of each unlabeled row to both batches.

    The labeled columns receive an additive logit offset of ``log r'`` (an
    offset of ``tau * log r'`` before the temperature division), which is the
    same as weighting their kernels by ``r'``. Self-similarity stays on the
    diagonal of ``to_unlabeled``.
    """
    _check_tau(tau)
    _check_tau(ratio, "ratio")
    zu = check_unit_rows(unlabeled, "unlabeled")
    zl = check_unit_rows(labeled, "labeled")
    m, n = zu.shape[0], zl.shape[0]
    if m == 0 or n == 0:
        raise ValidationError("similarity_block needs nonempty labeled and unlabeled batches")
    if zu.shape[1] != zl.shape[1]:
        raise ValidationError("dimension mismatch between labeled and unlabeled embeddings")
    offset = tau * np.log(effective_ratio(ratio, m, n))
    logits = np.concatenate([zu @ zl.T + offset, zu @ zu.T], axis=1) / tau
    s = softmax(logits, axis=1)
    return SimilarityBlock(to_labeled=s[:, :n], to_unlabeled=s[:, n:], tau=float(tau), ratio=float(ratio))


def labeled_only_block(unlabeled, labeled, tau=0.1):
    """Similarity block with the unlabeled part removed.

    ``to_labeled`` is the plain softmax over labeled logits and
    ``to_unlabeled`` is all zeros; with a prior of one this turns the
    propagated posterior back into :func:`paws_predict`.
    """
    _check_tau(tau)
    zu = check_unit_rows(unlabeled, "unlabeled")
    zl = check_unit_rows(labeled, "labeled")
    if zl.shape[0] == 0:
        raise ValidationError("labeled batch is empty")
    s = softmax(zu @ zl.T / tau, axis=1)
    return SimilarityBlock(to_labeled=s, to_unlabeled=np.zeros((zu.shape[0], zu.shape[0])), tau=float(tau), ratio=1.0)
