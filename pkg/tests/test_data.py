import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ropaws.data import (LABELED, OOD, SPLITS, TEST, UNLABELED_IN, UNLABELED_OOD, Dataset, GenSpec, csv_header,
                         generate, label_matrix, load_embeddings, ring_centres, save_embeddings)
from ropaws.encoder import MlpParams, embed
from ropaws.errors import ValidationError

from conftest import seeds


def test_curated_has_no_ood():
    ds = generate(GenSpec(ood_clusters=0, unlabeled_ood=0, unlabeled_in=200, test_size=100))
    assert not np.any(ds.true_class == OOD)
    assert ds.counts()[UNLABELED_OOD] == 0


def test_same_seed_same_data():
    spec = GenSpec(unlabeled_in=100, unlabeled_ood=100, test_size=50)
    a, b = generate(spec, seed=3), generate(spec, seed=3)
    assert np.array_equal(a.inputs, b.inputs) and np.array_equal(a.split, b.split)
    assert not np.array_equal(a.inputs, generate(spec, seed=4).inputs)
    pinned = spec.replace(data_seed=3)
    assert np.array_equal(generate(pinned, seed=99).inputs, a.inputs)


def test_nearest_centroid_oracle():
    spec = GenSpec(n_classes=4, ood_clusters=0, unlabeled_ood=0, labels_per_class=1000, unlabeled_in=0,
                   test_size=4000, separation=6.0)
    ds = generate(spec, seed=0)
    x_l, y_l = ds.labeled()
    centroids = np.stack([x_l[y_l == c].mean(axis=0) for c in range(4)])
    x_t, y_t = ds.test()
    pred = np.argmin(((x_t[:, None, :] - centroids[None]) ** 2).sum(axis=2), axis=1)
    assert np.mean(pred == y_t) >= 0.99


def test_ring_geometry():
    spec = GenSpec(n_classes=4, ood_clusters=4, separation=6.0, noise=1.5)
    inc, ood = ring_centres(spec)
    pts = np.vstack([inc, ood])
    d = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    np.fill_diagonal(d, np.inf)
    assert np.allclose(d.min(axis=1), 6.0 * 1.5)
    # in-class and OOD centres alternate: each in-class centre's two nearest are OOD
    for i in range(4):
        nearest = np.argsort(d[i])[:2]
        assert np.all(nearest >= 4)


@given(seed=seeds, c=st.integers(1, 6), per=st.integers(1, 8), ood=st.integers(0, 3))
def test_generated_splits_are_valid(seed, c, per, ood):
    spec = GenSpec(n_classes=c, ood_clusters=ood, labels_per_class=per, unlabeled_in=20,
                   unlabeled_ood=15 if ood else 0, test_size=10)
    ds = generate(spec, seed=seed)
    counts = ds.counts()
    assert sum(counts.values()) == len(ds.inputs)
    assert set(np.unique(ds.split)) <= set(SPLITS)
    _, y = ds.labeled()
    assert np.array_equal(np.bincount(y, minlength=c), np.full(c, per))
    assert np.all(ds.true_class[ds.split == UNLABELED_OOD] == OOD)
    assert np.all(ds.true_class[ds.split != UNLABELED_OOD] >= 0)


def test_two_moons():
    ds = generate(GenSpec(generator="two-moons", n_classes=2, ood_clusters=2, unlabeled_in=100,
                          unlabeled_ood=40, test_size=50))
    assert ds.n_classes == 2 and ds.counts()[UNLABELED_OOD] == 40
    with pytest.raises(ValidationError):
        GenSpec(generator="two-moons", n_classes=3)


@pytest.mark.parametrize("kw", [dict(n_classes=0), dict(unlabeled_in=-1), dict(ood_clusters=0, unlabeled_ood=5),
                                dict(separation=0.0), dict(generator="spiral")])
def test_invalid_spec(kw):
    with pytest.raises(ValidationError):
        GenSpec(**kw)


def test_labeled_rows_cannot_be_ood():
    with pytest.raises(ValidationError):
        Dataset(np.zeros((1, 2)), np.array([OOD]), np.array([LABELED]), 2)
    with pytest.raises(ValidationError):
        label_matrix([0, OOD], 2)


def test_csv_header_only(tmp_path):
    path = tmp_path / "e.csv"
    path.write_text(",".join(csv_header(3)) + "\n")
    table = load_embeddings(path)
    assert table.z.shape == (0, 3)
    assert len(table.to_dataset(n_classes=2).inputs) == 0


def test_csv_label_rules(tmp_path):
    path = tmp_path / "e.csv"
    save_embeddings(path, [[1.0, 0.0], [0.0, 2.0], [0.6, 0.8]], [1, -1, -1], [0, 0, 1], ids=[10, 11, 12])
    ds = load_embeddings(path).to_dataset()
    assert list(ds.split) == [LABELED, UNLABELED_IN, UNLABELED_OOD]
    assert np.allclose(np.linalg.norm(ds.inputs, axis=1), 1.0)
    assert np.array_equal(ds.inputs[1], [0.0, 1.0])


def test_csv_round_trip_is_bit_identical(tmp_path):
    ds = generate(GenSpec(unlabeled_in=60, unlabeled_ood=60, test_size=20), seed=2)
    params = MlpParams.init([2, 16, 16, 8], np.random.default_rng(0))
    z = embed(params, ds.inputs)
    label = np.where(ds.split == LABELED, ds.true_class, -1)
    ood = (ds.split == UNLABELED_OOD).astype(int)
    path = tmp_path / "z.csv"
    save_embeddings(path, z, label, ood)
    table = load_embeddings(path)
    assert np.array_equal(table.z, z)
    assert np.array_equal(table.label, label) and np.array_equal(table.ood, ood)
    save_embeddings(tmp_path / "again.csv", table.z, table.label, table.ood, table.ids)
    assert (tmp_path / "again.csv").read_bytes() == path.read_bytes()


@pytest.mark.parametrize("body, where", [
    ("0,0,0,1.0\n", ":2:"),
    ("0,0,0,1.0,0.0\n1,x,0,1.0,0.0\n", ":3:"),
    ("0,0,2,1.0,0.0\n", ":2:"),
    ("0,1,1,1.0,0.0\n", ":2:"),
    ("0,0,0,nan,0.0\n", ":2:"),
])
def test_csv_malformed_rows(tmp_path, body, where):
    path = tmp_path / "bad.csv"
    path.write_text("id,label,ood,z0,z1\n" + body)
    with pytest.raises(ValidationError, match=where):
        load_embeddings(path)


def test_csv_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("id,label,z0\n")
    with pytest.raises(ValidationError, match=":1:"):
        load_embeddings(path)


def test_dataset_accessors():
    ds = generate(GenSpec(unlabeled_in=40, unlabeled_ood=30, test_size=20), seed=5)
    x_u, is_ood = ds.unlabeled()
    assert len(x_u) == 70 and is_ood.sum() == 30
    x_t, y_t = ds.test()
    assert len(x_t) == 20 and np.all(ds.split[ds.split == TEST] == TEST)
    assert ds.counts()[UNLABELED_IN] == 40
