"""Compressed Bayesian tensor regression with generalized tensor random projections."""

__version__ = "0.1.0"

from .bounds import q0_modewise, q0_tensorwise  # noqa: E402,F401
from .ensemble import EnsembleModel, fit_ensemble, rlr_weights  # noqa: E402,F401
from .gibbs import (  # noqa: E402,F401
    GaussianPriorConfig, ParafacPriorConfig, RegressionData, run_gaussian_chain, run_parafac_chain,
)
from .projection import GtrpSpec, apply, build_gtrp  # noqa: E402,F401
