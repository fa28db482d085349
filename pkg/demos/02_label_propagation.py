"""Label propagation through an unlabeled batch.

Targets for an unlabeled batch come from a linear system that mixes
labeled and unlabeled similarities, damped per row by an in-domain prior.
The closed form is the fixed point of a Jacobi-style iteration; this script
shows how fast the iteration gets there and what the prior does to points
from an unseen cluster.
"""
import numpy as np

from ropaws import in_domain_prior, one_hot, posterior_closed_form, posterior_iterative, renormalize
from ropaws import similarity_block
from ropaws.posterior import contraction_rate, ood_posterior


def unit(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


rng = np.random.default_rng(1)
d = 8
centres = unit(rng.normal(size=(3, d)))  # classes 0, 1 and an unseen cluster 2

z_l = unit(np.repeat(centres[:2], 4, axis=0) + 0.15 * rng.normal(size=(8, d)))
labels = one_hot(np.repeat([0, 1], 4), 2)
z_u = unit(np.repeat(centres, 10, axis=0) + 0.15 * rng.normal(size=(30, d)))

prior = in_domain_prior(z_u, z_l, tau_prior=0.1)
block = similarity_block(z_u, z_l, tau=0.1, ratio=5.0)
closed = posterior_closed_form(block, labels, prior)

print("mean prior per source cluster:", np.round(prior.reshape(3, 10).mean(axis=1), 3))
print("contraction rate of the iteration:", round(contraction_rate(block, prior), 3))
for k in (0, 1, 2, 3, 5, 10):
    it = posterior_iterative(block, labels, prior, k)
    print(f"  {k:2d} rounds: max |q_k - q*| = {np.abs(it.probs - closed.probs).max():.2e}")

# in-class mass shrinks for the unseen cluster; renormalizing hides that
mass = closed.in_mass.reshape(3, 10).mean(axis=1)
print("\nin-class mass per cluster:", np.round(mass, 3))
print("ood share per cluster:    ", np.round(ood_posterior(closed).reshape(3, 10).mean(axis=1), 3))
print("renormalized max prob:    ", np.round(renormalize(closed).max(axis=1).reshape(3, 10).mean(axis=1), 3))
