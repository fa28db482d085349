"""Synthetic uncurated datasets and the embedding CSV format.

CSV schema (header is exact)::

    id,label,ood,z0,z1,...,z{d-1}

``label`` is a class index or -1 (unlabeled); ``ood`` is 0 or 1. Values are
written with 17 significant digits.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .kernel import one_hot
from .seeding import rng_stream

OOD = -1
UNKNOWN = -2

LABELED, UNLABELED_IN, UNLABELED_OOD, TEST = "labeled", "unlabeled-in", "unlabeled-ood", "test"
SPLITS = (LABELED, UNLABELED_IN, UNLABELED_OOD, TEST)


@dataclass(frozen=True)
class Dataset:
    """Inputs with true classes (``OOD`` marker for out-of-class rows) and splits."""

    inputs: np.ndarray
    true_class: np.ndarray
    split: np.ndarray
    n_classes: int

    def __post_init__(self):
        n = len(self.inputs)
        if len(self.true_class) != n or len(self.split) != n:
            raise ValidationError("inputs, true_class and split must have equal length")
        bad = set(np.unique(self.split)) - set(SPLITS)
        if bad:
            raise ValidationError(f"unknown split names {sorted(bad)}")
        if np.any(self.true_class[self.split == LABELED] < 0):
            raise ValidationError("labeled rows must carry a class index")

    def subset(self, split):
        mask = self.split == split
        return self.inputs[mask], self.true_class[mask]

    def labeled(self):
        return self.subset(LABELED)

    def unlabeled(self):
        """All unlabeled rows (in-class then OOD, in original order) and an OOD flag."""
        mask = (self.split == UNLABELED_IN) | (self.split == UNLABELED_OOD)
        return self.inputs[mask], self.split[mask] == UNLABELED_OOD

    def test(self):
        return self.subset(TEST)

    def counts(self):
        return {s: int(np.sum(self.split == s)) for s in SPLITS}


@dataclass(frozen=True)
class GenSpec:
    """Generator settings.

    ``separation`` is the distance between adjacent cluster centres in units
    of ``noise``; in-class and OOD clusters alternate around one ring.
    """

    generator: str = "gaussian-mixture"
    n_classes: int = 4
    ood_clusters: int = 4
    labels_per_class: int = 25
    unlabeled_in: int = 2000
    unlabeled_ood: int = 2000
    test_size: int = 1000
    separation: float = 6.0
    noise: float = 1.0
    data_seed: int | None = None

    def __post_init__(self):
        if self.generator not in ("gaussian-mixture", "two-moons"):
            raise ValidationError(f"unknown generator {self.generator!r}")
        if self.n_classes < 1 or self.labels_per_class < 1:
            raise ValidationError("n_classes and labels_per_class must be positive")
        if self.generator == "two-moons" and self.n_classes != 2:
            raise ValidationError("two-moons has exactly 2 classes")
        for name in ("ood_clusters", "unlabeled_in", "unlabeled_ood", "test_size"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be nonnegative")
        if self.unlabeled_ood and not self.ood_clusters:
            raise ValidationError("unlabeled_ood > 0 requires ood_clusters > 0")
        if self.separation <= 0 or self.noise <= 0:
            raise ValidationError("separation and noise must be positive")

    @property
    def curated(self):
        return self.ood_clusters == 0 or self.unlabeled_ood == 0

    def replace(self, **kw):
        vals = {f.name: getattr(self, f.name) for f in fields(self)}
        vals.update(kw)
        return GenSpec(**vals)


def ring_centres(spec):
    """Cluster centres: ``(in_class (C, 2), ood (O, 2))``."""
    c, o = spec.n_classes, spec.ood_clusters
    k = c + o
    radius = spec.separation * spec.noise / (2 * np.sin(np.pi / k)) if k > 1 else 0.0
    slots = np.arange(k)
    # in-class clusters first take the even slots, then whatever is left
    even, odd = slots[::2], slots[1::2]
    order = np.concatenate([even, odd])
    in_slots, ood_slots = order[:c], order[c:]
    angle = 2 * np.pi * slots / k
    pts = radius * np.stack([np.cos(angle), np.sin(angle)], axis=1)
    return pts[np.sort(in_slots)], pts[np.sort(ood_slots)]


def _balanced_classes(n, n_classes, rng):
    cls = np.arange(n) % n_classes
    return rng.permutation(cls)


def _moons(classes, spec, rng):
    t = rng.uniform(0, np.pi, size=classes.size)
    scale = spec.separation * spec.noise / 2
    x = np.where(classes == 0, np.cos(t), 1 - np.cos(t))
    y = np.where(classes == 0, np.sin(t), 0.5 - np.sin(t))
    pts = scale * np.stack([x, y], axis=1)
    return pts + rng.normal(scale=spec.noise * 0.25, size=pts.shape)


def generate(spec, seed=0):
    """Draw a dataset; identical (spec, seed) pairs give identical datasets.

    ``spec.data_seed``, when set, takes precedence over the master ``seed``.
    """
    rng = rng_stream(seed if spec.data_seed is None else spec.data_seed, "data")
    c = spec.n_classes
    n_lab = spec.labels_per_class * c
    n_in = n_lab + spec.unlabeled_in + spec.test_size
    classes = np.concatenate([
        np.repeat(np.arange(c), spec.labels_per_class),
        _balanced_classes(spec.unlabeled_in, c, rng),
        _balanced_classes(spec.test_size, c, rng),
    ])
    if spec.generator == "gaussian-mixture":
        centres, ood_centres = ring_centres(spec)
        x_in = centres[classes] + rng.normal(scale=spec.noise, size=(n_in, 2))
    else:
        x_in = _moons(classes, spec, rng)
        scale = spec.separation * spec.noise
        angle = 2 * np.pi * (np.arange(max(spec.ood_clusters, 1)) + 0.5) / max(spec.ood_clusters, 1)
        ood_centres = np.array([0.5, 0.25]) * scale + 1.5 * scale * np.stack([np.cos(angle), np.sin(angle)], 1)
    if spec.unlabeled_ood:
        which = _balanced_classes(spec.unlabeled_ood, spec.ood_clusters, rng)
        x_ood = ood_centres[which] + rng.normal(scale=spec.noise, size=(spec.unlabeled_ood, 2))
    else:
        x_ood = np.zeros((0, 2))
    inputs = np.concatenate([x_in, x_ood])
    true_class = np.concatenate([classes, np.full(spec.unlabeled_ood, OOD)])
    split = np.array([LABELED] * n_lab + [UNLABELED_IN] * spec.unlabeled_in + [TEST] * spec.test_size
                     + [UNLABELED_OOD] * spec.unlabeled_ood)
    return Dataset(inputs, true_class, split, c)


def label_matrix(classes, n_classes, smoothing=0.0):
    """Label rows for labeled samples; the OOD marker is rejected."""
    classes = np.asarray(classes)
    if np.any(classes < 0):
        raise ValidationError("OOD or unknown rows cannot be turned into labels")
    return one_hot(classes, n_classes, smoothing)


# --- CSV ---------------------------------------------------------------------

def csv_header(d):
    return ["id", "label", "ood"] + [f"z{i}" for i in range(d)]


def save_embeddings(path, z, label, ood, ids=None):
    """Write rows in the embedding CSV schema."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    n, d = z.shape
    label = np.asarray(label, dtype=np.int64)
    ood = np.asarray(ood, dtype=np.int64)
    ids = np.arange(n) if ids is None else np.asarray(ids)
    if not (len(label) == len(ood) == len(ids) == n):
        raise ValidationError("column lengths differ")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header(d))
        for i in range(n):
            w.writerow([ids[i], int(label[i]), int(ood[i])] + [f"{v:.17g}" for v in z[i]])


@dataclass(frozen=True)
class EmbeddingTable:
    """Contents of an embedding CSV."""

    ids: np.ndarray
    z: np.ndarray
    label: np.ndarray
    ood: np.ndarray

    def to_dataset(self, n_classes=None):
        """Labeled rows keep their class; label -1 rows become unlabeled-in or -ood."""
        labeled = self.label >= 0
        split = np.where(labeled, LABELED, np.where(self.ood == 1, UNLABELED_OOD, UNLABELED_IN))
        true_class = np.where(labeled, self.label, np.where(self.ood == 1, OOD, UNKNOWN))
        if n_classes is None:
            n_classes = int(self.label.max()) + 1 if labeled.any() else 0
        return Dataset(self.z, true_class, split, n_classes)


def load_embeddings(path, normalize=True):
    """Read an embedding CSV.

    With ``normalize`` (the default) rows are rescaled to unit norm; rows that
    are already unit-norm to within 1e-15 are left bit-for-bit unchanged.
    Malformed rows raise :class:`ValidationError` naming the line.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{path}: missing header")
    header = rows[0]
    d = len(header) - 3
    if d < 1 or header != csv_header(d):
        raise ValidationError(f"{path}:1: header must be id,label,ood,z0..z{{d-1}}")
    ids, labels, oods, z = [], [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != d + 3:
            raise ValidationError(f"{path}:{lineno}: expected {d + 3} fields, got {len(row)}")
        try:
            ids.append(row[0])
            lab, o = int(row[1]), int(row[2])
            vals = [float(v) for v in row[3:]]
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
        if lab < -1 or o not in (0, 1) or (o == 1 and lab >= 0):
            raise ValidationError(f"{path}:{lineno}: invalid label/ood combination ({lab}, {o})")
        if not np.all(np.isfinite(vals)):
            raise ValidationError(f"{path}:{lineno}: non-finite value")
        labels.append(lab)
        oods.append(o)
        z.append(vals)
    z = np.array(z, dtype=np.float64).reshape(len(z), d)
    if normalize and len(z):
        norms = np.linalg.norm(z, axis=1)
        if np.any(norms == 0):
            raise ValidationError(f"{path}: zero vector cannot be normalized")
        fix = np.abs(norms - 1.0) > 1e-15
        z[fix] /= norms[fix, None]
    return EmbeddingTable(np.array(ids, dtype=object), z, np.array(labels, dtype=np.int64),
                          np.array(oods, dtype=np.int64))
