import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ropaws.errors import ParameterError, ValidationError
from ropaws.kernel import SimilarityBlock, labeled_only_block, one_hot, paws_predict, similarity_block
from ropaws.posterior import (PosteriorMatrix, contraction_rate, in_domain_prior, iterations_for, ood_posterior,
                              posterior_closed_form, posterior_iterative, renormalize, ropaws_targets)

from conftest import random_labels, seeds, unit_rows


def instance(rng, m, n, c, d=4, tau=0.1, ratio=5.0, soft=False):
    zu, zl = unit_rows(rng, m, d), unit_rows(rng, n, d)
    block = similarity_block(zu, zl, tau, ratio)
    return block, random_labels(rng, n, c, soft), rng.uniform(0.05, 1.0, size=m)


def jacobi_limit(block, labels, prior, init, rounds=5000):
    q = init
    for _ in range(rounds):
        q = prior[:, None] * (block.to_labeled @ labels) + prior[:, None] * (block.to_unlabeled @ q)
    return q


def test_prior_examples():
    z = np.array([[1.0, 0.0]])
    assert in_domain_prior(z, z, 0.1)[0] == 1.0
    zu = np.array([[0.9, np.sqrt(1 - 0.81)]])
    assert in_domain_prior(zu, z, 0.1)[0] == pytest.approx(0.367879, abs=1e-6)
    assert in_domain_prior(zu, z, 3.0)[0] == pytest.approx(0.967216, abs=1e-6)


def test_prior_uses_best_labeled_match(rng):
    zu, zl = unit_rows(rng, 6, 3), unit_rows(rng, 4, 3)
    expect = [max(np.exp((zu[i] @ zl[j] - 1) / 0.2) for j in range(4)) for i in range(6)]
    assert np.allclose(in_domain_prior(zu, zl, 0.2), expect, rtol=1e-13)


def test_prior_errors(rng):
    with pytest.raises(ValidationError):
        in_domain_prior(unit_rows(rng, 2, 2), np.zeros((0, 2)))
    with pytest.raises(ParameterError):
        in_domain_prior(unit_rows(rng, 2, 2), unit_rows(rng, 2, 2), 0.0)


@given(seed=seeds, m=st.integers(1, 30), n=st.integers(1, 10), tp=st.floats(0.01, 5.0))
def test_prior_in_unit_interval(seed, m, n, tp):
    rng = np.random.default_rng(seed)
    p = in_domain_prior(unit_rows(rng, m, 3), unit_rows(rng, n, 3), tp)
    assert np.all(p > 0) and np.all(p <= 1)


def test_closed_form_degenerate_cases(rng):
    block, labels, _ = instance(rng, 3, 4, 2)
    assert not posterior_closed_form(block, labels, np.zeros(3)).probs.any()
    plain = SimilarityBlock(block.to_labeled, np.zeros((3, 3)), 0.1, 5.0)
    q = posterior_closed_form(plain, labels, np.ones(3))
    assert np.allclose(q.probs, block.to_labeled @ labels, rtol=0, atol=1e-15)


def test_closed_form_matches_iteration_small(rng):
    block, labels, prior = instance(rng, 3, 4, 2)
    closed = posterior_closed_form(block, labels, prior).probs
    limit = jacobi_limit(block, labels, prior, np.zeros((3, 2)))
    assert np.max(np.abs(closed - limit)) <= 1e-10


def test_iterative_examples(rng):
    block, labels, prior = instance(rng, 5, 4, 3)
    q0 = posterior_iterative(block, labels, prior, 0).probs
    assert np.allclose(q0, np.repeat(prior[:, None] / 3, 3, axis=1), rtol=0, atol=0)
    q1 = posterior_iterative(block, labels, prior, 1).probs
    a, b = np.diag(prior) @ block.to_labeled, np.diag(prior) @ block.to_unlabeled
    assert np.max(np.abs(q1 - (a @ labels + b @ q0))) <= 1e-15
    q200 = posterior_iterative(block, labels, prior, 200).probs
    assert np.max(np.abs(q200 - posterior_closed_form(block, labels, prior).probs)) <= 1e-10


def test_errors(rng):
    block, labels, prior = instance(rng, 3, 4, 2)
    with pytest.raises(ValidationError):
        posterior_closed_form(block, labels[:3], prior)
    with pytest.raises(ValidationError):
        posterior_closed_form(block, labels, prior[:2])
    with pytest.raises(ParameterError):
        posterior_iterative(block, labels, prior, -1)
    with pytest.raises(ValidationError):
        posterior_iterative(block, labels, prior, 3, init=np.zeros((2, 2)))


@given(seed=seeds, m=st.integers(1, 64), n=st.integers(1, 32), c=st.integers(1, 10), soft=st.booleans())
def test_fixed_point_equivalence(seed, m, n, c, soft):
    rng = np.random.default_rng(seed)
    block, labels, prior = instance(rng, m, n, c, soft=soft)
    closed = posterior_closed_form(block, labels, prior).probs
    k = iterations_for(block, prior, 1e-10)
    assert np.max(np.abs(closed - posterior_iterative(block, labels, prior, k).probs)) <= 1e-8


@given(seed=seeds, m=st.integers(1, 20), n=st.integers(1, 8), c=st.integers(2, 5))
def test_initialization_independence(seed, m, n, c):
    rng = np.random.default_rng(seed)
    block, labels, prior = instance(rng, m, n, c)
    k = iterations_for(block, prior, 1e-10)
    base = posterior_iterative(block, labels, prior, k).probs
    for init in (np.zeros((m, c)), rng.uniform(size=(m, c))):
        assert np.max(np.abs(posterior_iterative(block, labels, prior, k, init=init).probs - base)) <= 1e-8


@given(seed=seeds, m=st.integers(1, 20), n=st.integers(1, 8))
def test_contraction_rate_below_one(seed, m, n):
    rng = np.random.default_rng(seed)
    block, labels, prior = instance(rng, m, n, 2)
    assert 0 < contraction_rate(block, prior) < 1
    assert contraction_rate(block, 0.5 * prior) <= contraction_rate(block, prior)


@given(seed=seeds, m=st.integers(1, 20), n=st.integers(1, 8), c=st.integers(1, 5), tau=st.floats(0.05, 1.0))
def test_paws_recovery(seed, m, n, c, tau):
    rng = np.random.default_rng(seed)
    zu, zl = unit_rows(rng, m, 3), unit_rows(rng, n, 3)
    labels = random_labels(rng, n, c, soft=True)
    post = posterior_closed_form(labeled_only_block(zu, zl, tau), labels, np.ones(m))
    assert np.max(np.abs(renormalize(post) - paws_predict(zu, zl, labels, tau))) <= 1e-12


@given(seed=seeds, m=st.integers(1, 20), n=st.integers(1, 8), c=st.integers(2, 5), scale=st.floats(0.01, 1.0))
def test_prior_damping_and_mass_bounds(seed, m, n, c, scale):
    rng = np.random.default_rng(seed)
    block, labels, prior = instance(rng, m, n, c)
    full = posterior_closed_form(block, labels, prior)
    damped = posterior_closed_form(block, labels, scale * prior)
    assert np.all(full.probs >= 0)
    assert np.all(full.in_mass > 0) and np.all(full.in_mass <= 1 + 1e-9)
    assert np.all(damped.in_mass <= full.in_mass + 1e-12)


@given(seed=seeds, m=st.integers(1, 10), n=st.integers(2, 6), c=st.integers(2, 4))
def test_prior_one_gives_convex_combination(seed, m, n, c):
    # with prior 1 the row sums are 1 and every entry lies between the
    # smallest and largest label weight of that class
    rng = np.random.default_rng(seed)
    block, labels, _ = instance(rng, m, n, c)
    q = posterior_closed_form(block, labels, np.ones(m)).probs
    assert np.allclose(q.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(q >= labels.min(axis=0) - 1e-12) and np.all(q <= labels.max(axis=0) + 1e-12)


def test_renormalize_examples():
    assert np.allclose(renormalize(np.array([[0.3, 0.2]])), [[0.55, 0.45]], atol=1e-15)
    row = np.array([[0.1, 0.6, 0.3]])
    assert np.allclose(renormalize(row), row, atol=1e-16)
    assert np.allclose(renormalize(np.zeros((1, 4))), 0.25, atol=0)


@given(seed=seeds, m=st.integers(1, 20), c=st.integers(1, 8))
def test_renormalize_rows_sum_to_one(seed, m, c):
    rng = np.random.default_rng(seed)
    q = rng.dirichlet(np.ones(c), size=m) * rng.uniform(0, 1, size=(m, 1))
    assert np.max(np.abs(renormalize(PosteriorMatrix(q)).sum(axis=1) - 1)) <= 1e-12


def test_ood_posterior_examples():
    assert ood_posterior(np.array([[0.7, 0.3]]))[0] == 0.0
    assert ood_posterior(np.array([[0.3, 0.2]]))[0] == pytest.approx(0.5, abs=1e-15)


def test_ood_posterior_far_point_near_one():
    zl = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    zu = np.array([[-1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    post = ropaws_targets(zu, zl, one_hot([0, 1], 2), tau=0.1, ratio=5.0, tau_prior=0.05)
    assert np.all(ood_posterior(post) > 0.999)


def test_targets_empty_unlabeled(rng):
    post = ropaws_targets(np.zeros((0, 3)), unit_rows(rng, 4, 3), one_hot([0, 1, 0, 1], 2))
    assert post.probs.shape == (0, 2)
    assert renormalize(post).shape == (0, 2)
