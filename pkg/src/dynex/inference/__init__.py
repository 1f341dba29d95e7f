"""Structured mean-field variational inference for the network model."""

import jax

jax.config.update("jax_enable_x64", True)

from .chains import GaussChainQ, chain_marginals, chain_sample, lognormal_mean  # noqa: E402
from .checkpoint import load_checkpoint, save_checkpoint  # noqa: E402
from .objective import (  # noqa: E402
    PART_NAMES,
    ChainSample,
    bound_sums,
    elbo,
    expected_log_factorial,
    flat_elbo,
    flat_elbo_grad,
    flat_parameters,
    sample_chains,
    update_pi,
    update_zeta,
)
from .optim import FitOptions, FitResult, Trace, fit, fit_once, grad_step  # noqa: E402
from .state import GROUPS, AdamState, VariationalState, init_state, net_data  # noqa: E402

__all__ = [
    "GaussChainQ",
    "chain_marginals",
    "chain_sample",
    "lognormal_mean",
    "load_checkpoint",
    "save_checkpoint",
    "PART_NAMES",
    "ChainSample",
    "bound_sums",
    "elbo",
    "expected_log_factorial",
    "flat_elbo",
    "flat_elbo_grad",
    "flat_parameters",
    "sample_chains",
    "update_pi",
    "update_zeta",
    "FitOptions",
    "FitResult",
    "Trace",
    "fit",
    "fit_once",
    "grad_step",
    "GROUPS",
    "AdamState",
    "VariationalState",
    "init_state",
    "net_data",
]
