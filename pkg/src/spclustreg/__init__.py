"""Spatially clustered regression with a Potts-type neighbourhood penalty."""

__version__ = "0.1.0"

from .data import (
    SpatialDataset,
    SpatialWeights,
    CrossWeights,
    load_dataset,
    knn_weights,
    exp_weights,
    covariate_knn_weights,
    blend_weights,
    cross_knn_weights,
    cross_exp_weights,
)
from .likelihoods import GroupParameters, Gaussian, NegativeBinomial, loglik, weighted_mle
from .fit import (
    FitConfig,
    FitResult,
    potts_penalty,
    penalized_objective,
    update_memberships,
    fuzzy_probs,
    init_assignment,
    scr_fit,
    sfcr_fit,
    information_criterion,
    select_groups,
)
from .predict import (
    StandardErrors,
    predict_assignment,
    predict_fuzzy,
    predict_response,
    plug_in_se,
    bootstrap_se,
)
