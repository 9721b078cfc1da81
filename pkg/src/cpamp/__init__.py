"""AMP for change-point estimation in high-dimensional GLMs."""

from cpamp.model import (
    Dataset,
    ModelKind,
    eta_to_psi,
    generate_dataset,
    psi_to_eta,
)
from cpamp.priors import (
    BernoulliGaussian,
    ChangePointPrior,
    DiscreteRows,
    GaussianRows,
    NoisePrior,
    PriorSpec,
    SparseDifference,
    enumerate_configs,
    f_star,
    f_star_jacobian,
    marginal_psi,
    sample_signal_matrix,
)

__all__ = [
    "Dataset", "ModelKind", "eta_to_psi", "generate_dataset", "psi_to_eta",
    "BernoulliGaussian", "ChangePointPrior", "DiscreteRows", "GaussianRows",
    "NoisePrior", "PriorSpec", "SparseDifference", "enumerate_configs",
    "f_star", "f_star_jacobian", "marginal_psi", "sample_signal_matrix",
]
