"""Soft nearest neighbours read as a kernel density classifier.

A soft-NN vote over a labeled support set equals the class posterior of a
KDE generative classifier whose kernel is exp(cos / tau). This script checks
that on a random support set, then shows the two failure modes that
motivate the in-domain prior: collapsed embeddings give a uniform vote, and
a far-away query still gets a confident vote.
"""
import numpy as np

from ropaws import kde_log_density, one_hot, paws_predict


def unit(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


rng = np.random.default_rng(0)
tau = 0.1

# six labeled points on the 3-sphere, two per class
z_l = unit(rng.normal(size=(6, 4)))
labels = one_hot([0, 0, 1, 1, 2, 2], 3)
q = unit(rng.normal(size=4))

vote = paws_predict(q, z_l, labels, tau)

# the same thing as a density ratio: p(x|y) from a per-class KDE, p(y) = 1/3
log_dens = np.array([kde_log_density(q, z_l[labels[:, y] > 0], np.ones(2), tau) for y in range(3)])
bayes = np.exp(log_dens - log_dens.max())
bayes /= bayes.sum()
print("soft-NN vote      ", np.round(vote, 6))
print("KDE Bayes posterior", np.round(bayes, 6))
print("max difference     ", np.abs(vote - bayes).max())

# collapse: every support point in one direction gives the class prior
collapsed = np.repeat(q[None], 6, axis=0)
print("\ncollapsed support  ", paws_predict(q, collapsed, labels, tau))

# a query far from every labeled point is still assigned with confidence,
# since the vote only compares classes against each other
far = unit(-z_l.mean(axis=0))
print("cos to support     ", np.round(z_l @ far, 3))
print("vote for far query ", np.round(paws_predict(far, z_l, labels, tau), 3))
