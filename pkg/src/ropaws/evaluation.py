"""Classification, calibration and OOD metrics, plus the SSKDE baseline."""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .data import label_matrix
from .encoder import embed
from .errors import ValidationError
from .kernel import check_unit_rows, paws_predict, similarity_block
from .posterior import in_domain_prior, posterior_closed_form, posterior_iterative, renormalize
from .seeding import rng_stream

CLOSED_FORM = -1  # iteration key standing for the fixed point


def soft_nn_classify(query, labeled, labels, tau=0.1):
    """Argmax and max of the soft nearest-neighbour prediction, per query row."""
    p = np.atleast_2d(paws_predict(np.atleast_2d(query), labeled, labels, tau))
    return p.argmax(axis=1), p.max(axis=1)


def max_similarity(query, labeled):
    """Largest cosine similarity of each query to the labeled set (OOD score)."""
    q = check_unit_rows(query, "query")
    zl = check_unit_rows(labeled, "labeled")
    return (q @ zl.T).max(axis=1)


def propagated_classify(queries, labeled, labels, tau=0.1, ratio=5.0, tau_prior=0.1, iters=(0, 1, 2, 3, CLOSED_FORM)):
    """Classify ``queries`` by propagating labels through the query batch itself.

    Returns ``{k: (pred, conf, in_mass)}`` for each requested iteration count
    ``k``; ``CLOSED_FORM`` selects the exact fixed point. Predictions come
    from the renormalized posterior.
    """
    q = check_unit_rows(queries, "queries")
    if q.shape[0] == 0:
        raise ValidationError("propagated_classify needs at least one query")
    block = similarity_block(q, labeled, tau=tau, ratio=ratio)
    prior = in_domain_prior(q, labeled, tau_prior=tau_prior)
    out = {}
    for k in iters:
        post = posterior_closed_form(block, labels, prior) if k == CLOSED_FORM else \
            posterior_iterative(block, labels, prior, k)
        p = renormalize(post)
        out[k] = (p.argmax(axis=1), p.max(axis=1), post.in_mass)
    return out


def auroc(scores_in, scores_out):
    """Probability that an in-distribution score exceeds an OOD score (ties count 1/2)."""
    s_in = np.asarray(scores_in, dtype=np.float64).ravel()
    s_out = np.asarray(scores_out, dtype=np.float64).ravel()
    if s_in.size == 0 or s_out.size == 0:
        raise ValidationError("auroc needs nonempty score lists")
    ranks = rankdata(np.concatenate([s_in, s_out]))
    u = ranks[:s_in.size].sum() - s_in.size * (s_in.size + 1) / 2
    return float(u / (s_in.size * s_out.size))


def ece(confidences, correct, bins=15):
    """Expected calibration error with equal-width confidence bins.

    Bin ``b`` covers ``((b-1)/B, b/B]``; a confidence of exactly 0 goes to the
    first bin.
    """
    conf = np.asarray(confidences, dtype=np.float64).ravel()
    corr = np.asarray(correct, dtype=np.float64).ravel()
    if conf.size == 0:
        raise ValidationError("ece needs at least one prediction")
    if conf.shape != corr.shape:
        raise ValidationError("confidences and correctness differ in length")
    if np.any((conf < 0) | (conf > 1)):
        raise ValidationError("confidences must lie in [0, 1]")
    which = np.clip(np.ceil(conf * bins).astype(int) - 1, 0, bins - 1)
    total = 0.0
    for b in range(bins):
        mask = which == b
        if mask.any():
            total += mask.sum() / conf.size * abs(corr[mask].mean() - conf[mask].mean())
    return float(total)


def nearest_labeled(query, labeled, label_classes, top_k=1, ids=None):
    """Top-``k`` labeled neighbours as ``(id, cosine, class)``, most similar first.

    Ties in cosine are broken by ascending id.
    """
    q = check_unit_rows(query, "query")[0]
    zl = check_unit_rows(labeled, "labeled")
    n = zl.shape[0]
    if not 0 < top_k <= n:
        raise ValidationError(f"top_k must be in [1, {n}]")
    ids = np.arange(n) if ids is None else np.asarray(ids)
    sims = zl @ q
    order = np.lexsort((ids, -sims))[:top_k]
    return [(ids[i].item() if hasattr(ids[i], "item") else ids[i], float(sims[i]), int(label_classes[i]))
            for i in order]


def sskde_step(kernel, p, y0, labeled_mask, t):
    """One SSKDE round: kernel-average, then pull labeled rows toward their labels."""
    p_hat = kernel @ p / kernel.sum(axis=1, keepdims=True)
    return np.where(labeled_mask[:, None], (1.0 - t) * y0 + t * p_hat, p_hat)


def sskde_classify(x, labels_partial, n_classes=None, t=0.9, iters=40, gamma=None, return_history=False):
    """Semi-supervised KDE label propagation over fixed features.

    Parameters
    ----------
    x : ndarray, shape (n, d)
        Features (not necessarily normalized).
    labels_partial : array_like of int
        Class index for labeled rows, -1 for unlabeled rows.
    t : float
        Interpolation weight toward the kernel estimate for labeled rows.
    iters : int
        Number of rounds.
    gamma : float, optional
        Gaussian kernel width; defaults to ``1 / d``.

    Returns
    -------
    ndarray of int, or ``(pred, probs_history)`` with ``return_history``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(labels_partial)
    labeled_mask = y >= 0
    if not labeled_mask.any():
        raise ValidationError("sskde needs at least one labeled sample")
    c = int(y.max()) + 1 if n_classes is None else n_classes
    gamma = 1.0 / x.shape[1] if gamma is None else gamma
    sq = np.sum(x**2, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * x @ x.T, 0.0)
    kernel = np.exp(-gamma * d2)
    y0 = np.full((len(x), c), 1.0 / c)
    y0[labeled_mask] = 0.0
    y0[np.flatnonzero(labeled_mask), y[labeled_mask]] = 1.0
    p = y0.copy()
    history = [p]
    for _ in range(iters):
        p = sskde_step(kernel, p, y0, labeled_mask, t)
        history.append(p)
    pred = p.argmax(axis=1)
    return (pred, history) if return_history else pred


@dataclass
class EvalReport:
    accuracy: float
    conf_in: float
    conf_out: float
    auroc: float
    ece: float
    propagation: dict = field(default_factory=dict)

    def rows(self):
        """``(metric, value)`` pairs in a fixed order."""
        out = [(k, v) for k, v in asdict(self).items() if k != "propagation"]
        for k, (acc, cin, cout) in sorted(self.propagation.items(), key=lambda kv: (kv[0] < 0, kv[0])):
            tag = "inf" if k == CLOSED_FORM else str(k)
            out += [(f"prop_acc_iter{tag}", acc), (f"prop_conf_in_iter{tag}", cin), (f"prop_conf_out_iter{tag}", cout)]
        return out

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k, v in self.rows():
            w.writerow([k, f"{v:.10f}"])
        return buf.getvalue()

    def to_text(self):
        rows = self.rows()
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {100 * v:8.2f}" for k, v in rows) + "\n"


def evaluate(params, dataset, tau=0.1, ratio=5.0, tau_prior=0.1, prop_queries=512, iters=(0, 1, 2, 3, CLOSED_FORM), seed=0):
    """Soft-NN accuracy/confidence/AUROC/ECE and propagation grid for a trained encoder.

    The labeled support is the full labeled split. Confidence and AUROC use
    the plain soft-NN prediction and the max-similarity score on the
    unlabeled in-class vs OOD rows.
    """
    x_l, y_l = dataset.labeled()
    z_l = embed(params, x_l)
    labels = label_matrix(y_l, dataset.n_classes)
    x_t, y_t = dataset.test()
    z_t = embed(params, x_t)
    pred, conf = soft_nn_classify(z_t, z_l, labels, tau)
    x_u, is_ood = dataset.unlabeled()
    z_u = embed(params, x_u)
    _, conf_u = soft_nn_classify(z_u, z_l, labels, tau) if len(z_u) else (None, np.zeros(0))
    score = max_similarity(z_u, z_l) if len(z_u) else np.zeros(0)
    has_ood = bool(is_ood.any()) and bool((~is_ood).any())
    report = EvalReport(
        accuracy=float(np.mean(pred == y_t)),
        conf_in=float(conf_u[~is_ood].mean()) if (~is_ood).any() else float("nan"),
        conf_out=float(conf_u[is_ood].mean()) if is_ood.any() else float("nan"),
        auroc=auroc(score[~is_ood], score[is_ood]) if has_ood else float("nan"),
        ece=ece(conf, pred == y_t),
    )
    if iters:
        report.propagation = propagation_grid(z_t, y_t, z_u[is_ood], z_l, labels, tau, ratio, tau_prior,
                                              prop_queries, iters, seed)
    return report


def propagation_grid(z_in, y_in, z_out, z_l, labels, tau, ratio, tau_prior, n_queries, iters, seed=0):
    """``{k: (accuracy_in, conf_in, conf_out)}`` over a mixed in/OOD query batch."""
    rng = rng_stream(seed, "eval")
    n_out = min(len(z_out), n_queries // 2) if len(z_out) else 0
    n_in = min(len(z_in), n_queries - n_out)
    pick_in = np.sort(rng.choice(len(z_in), size=n_in, replace=False))
    pick_out = np.sort(rng.choice(len(z_out), size=n_out, replace=False)) if n_out else np.zeros(0, int)
    queries = np.concatenate([z_in[pick_in], z_out[pick_out]])
    res = propagated_classify(queries, z_l, labels, tau, ratio, tau_prior, iters)
    grid = {}
    for k, (pred, conf, _) in res.items():
        acc = float(np.mean(pred[:n_in] == y_in[pick_in]))
        cout = float(conf[n_in:].mean()) if n_out else float("nan")
        grid[k] = (acc, float(conf[:n_in].mean()), cout)
    return grid
