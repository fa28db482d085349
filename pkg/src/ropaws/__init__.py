"""Kernel-density label propagation for semi-supervised learning on uncurated data."""
from .errors import NumericalFailure, ParameterError, RopawsError, ValidationError
from .kernel import SimilarityBlock, kde_log_density, kernel_logit, one_hot, paws_predict, similarity_block
from .posterior import (PosteriorMatrix, in_domain_prior, ood_posterior, posterior_closed_form,
                        posterior_iterative, renormalize, ropaws_targets)
from .objective import LossReport, ViewPair, cross_entropy, in_domain_weight, me_max, ropaws_loss, sharpen

__version__ = "0.1.0"
