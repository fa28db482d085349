"""Semi-supervised KDE posterior for unlabeled batches.

The unlabeled predictions satisfy the linear system

    Q = D S_l P + D S_u Q,      D = diag(prior),

where ``S_l``/``S_u`` are the similarity blocks and ``P`` the labeled label
rows. ``Q`` has row sums in (0, 1]; the missing mass is the posterior
probability of being out-of-domain.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NumericalFailure, ParameterError, ValidationError
from .kernel import check_label_matrix, check_unit_rows, similarity_block

DENSE_SOLVE_LIMIT = 1024
RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class PosteriorMatrix:
    """Unnormalized class posteriors, one row per unlabeled sample."""

    probs: np.ndarray

    @property
    def in_mass(self):
        """Posterior in-domain probability (row sums)."""
        return self.probs.sum(axis=1)

    @property
    def n_classes(self):
        return self.probs.shape[1]


def in_domain_prior(unlabeled, labeled, tau_prior=0.1):
    """Prior probability that each unlabeled sample is in-domain.

    Entry ``i`` is ``max_j exp((z_i . z_j - 1) / tau_prior)`` over labeled
    ``j``; a sample coinciding with a labeled point gets exactly 1.
    """
    if not tau_prior > 0:
        raise ParameterError(f"tau_prior must be positive, got {tau_prior}")
    zu = check_unit_rows(unlabeled, "unlabeled")
    zl = check_unit_rows(labeled, "labeled")
    if zl.shape[0] == 0:
        raise ValidationError("in-domain prior needs a nonempty labeled batch")
    if zu.shape[0] == 0:
        return np.zeros(0)
    best = (zu @ zl.T).max(axis=1)
    # cosine can exceed 1 by rounding; the prior is capped at 1 by definition
    return np.exp(np.minimum(best - 1.0, 0.0) / tau_prior)


def _check_inputs(block, labels, prior):
    m, n = block.to_labeled.shape
    if block.to_unlabeled.shape != (m, m):
        raise ValidationError(f"to_unlabeled has shape {block.to_unlabeled.shape}, expected {(m, m)}")
    labels = check_label_matrix(labels, n)
    prior = np.asarray(prior, dtype=np.float64)
    if prior.shape != (m,):
        raise ValidationError(f"prior has shape {prior.shape}, expected {(m,)}")
    if np.any(prior < 0) or np.any(prior > 1):
        raise ValidationError("prior entries must lie in [0, 1]")
    return labels, prior


def propagation_operators(block, labels, prior):
    """Return ``(a @ P, b)`` of the fixed-point map ``q <- a P + b q``."""
    labels, prior = _check_inputs(block, labels, prior)
    drive = prior[:, None] * (block.to_labeled @ labels)
    b = prior[:, None] * block.to_unlabeled
    return drive, b


def contraction_rate(block, prior):
    """Infinity-norm contraction factor ``max_i prior_i * sum_j S_u[i, j]`` of the iteration."""
    prior = np.asarray(prior, dtype=np.float64)
    if prior.size == 0:
        return 0.0
    return float(np.max(prior * block.to_unlabeled.sum(axis=1)))


def iterations_for(block, prior, tol=1e-10):
    """Rounds after which any start in ``[0, 1]`` is within ``tol`` of the fixed point."""
    rho = contraction_rate(block, prior)
    if rho == 0.0:
        return 1
    if rho >= 1.0:
        raise NumericalFailure("propagation is not a contraction (row mass reached 1)")
    return max(1, int(np.ceil(np.log(tol) / np.log(rho))))


def posterior_iterative(block, labels, prior, iters, init=None):
    """Run ``iters`` rounds of ``q <- D S_l P + D S_u q``.

    The default start splits each prior uniformly over classes; pass ``init``
    to start elsewhere (the limit does not depend on it).
    """
    if iters < 0:
        raise ParameterError(f"iters must be nonnegative, got {iters}")
    drive, b = propagation_operators(block, labels, prior)
    m, c = drive.shape
    if init is None:
        q = np.repeat(np.asarray(prior, dtype=np.float64)[:, None] / c, c, axis=1)
    else:
        q = np.array(init, dtype=np.float64)
        if q.shape != (m, c):
            raise ValidationError(f"init has shape {q.shape}, expected {(m, c)}")
    for _ in range(iters):
        q = drive + b @ q
    return PosteriorMatrix(q)


def _solve_iteratively(drive, b, tol=1e-13, max_iter=100_000):
    q = drive.copy()
    for _ in range(max_iter):
        nxt = drive + b @ q
        if np.max(np.abs(nxt - q)) <= tol:
            return nxt
        q = nxt
    raise NumericalFailure("fixed-point propagation did not converge")


def posterior_closed_form(block, labels, prior):
    """Solve ``(I - D S_u) Q = D S_l P`` for the propagated posterior.

    ``I - D S_u`` is strictly diagonally dominant because every row of
    ``S_u`` sums to less than one, so the system is always solvable.
    """
    drive, b = propagation_operators(block, labels, prior)
    m = b.shape[0]
    if m == 0:
        return PosteriorMatrix(drive)
    if m <= DENSE_SOLVE_LIMIT:
        q = scipy.linalg.solve(np.eye(m) - b, drive, check_finite=False)
    else:
        q = _solve_iteratively(drive, b)
    residual = np.max(np.abs(q - b @ q - drive))
    if not residual <= RESIDUAL_TOL:
        raise NumericalFailure(f"posterior solve residual {residual:.3g} exceeds {RESIDUAL_TOL:g}")
    return PosteriorMatrix(q)


def _probs(posterior):
    return posterior.probs if isinstance(posterior, PosteriorMatrix) else np.asarray(posterior, dtype=np.float64)


def renormalize(posterior):
    """Spread each row's missing mass uniformly: ``q + (1 - sum q) / C``."""
    q = _probs(posterior)
    if q.ndim != 2:
        raise ValidationError("posterior must be an (M, C) matrix")
    if np.any(q < -1e-12):
        raise ValidationError("posterior entries must be nonnegative")
    return q + (1.0 - q.sum(axis=1, keepdims=True)) / q.shape[1]


def ood_posterior(posterior):
    """Posterior out-of-domain probability ``1 - sum_y q(y|x)``."""
    q = _probs(posterior)
    return np.clip(1.0 - q.sum(axis=1), 0.0, 1.0)


def ropaws_targets(unlabeled, labeled, labels, tau=0.1, ratio=5.0, tau_prior=0.1):
    """Full target pipeline: similarities, prior, solve.

    Returns the unnormalized :class:`PosteriorMatrix`; callers renormalize.
    An empty unlabeled batch gives an empty (0, C) posterior.
    """
    labels = np.asarray(labels, dtype=np.float64)
    if np.size(unlabeled) == 0:
        return PosteriorMatrix(np.zeros((0, labels.shape[1])))
    block = similarity_block(unlabeled, labeled, tau=tau, ratio=ratio)
    prior = in_domain_prior(unlabeled, labeled, tau_prior=tau_prior)
    return posterior_closed_form(block, labels, prior)
