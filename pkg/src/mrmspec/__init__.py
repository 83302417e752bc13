"""Spectra of large covariance matrices of multifractal random walks."""

from .field_sim import Grid, FieldSample, ln_plus_kernel, rho_eps, sample_field
from .mrm import (
    LognormalParams,
    ModelParams,
    MrmSample,
    ReturnsMatrix,
    sample_mrm,
    sample_returns,
    sample_returns_lognormal,
    zeta,
)
from .spectra import (
    EsdHistogram,
    SpectrumResult,
    bn_spectrum_check,
    covariance_spectrum,
    esd_histogram,
    mp_density,
)
from .solver import (
    KFunction,
    NonConvergence,
    SolverConfig,
    mu2_from_k,
    picard_step,
    solve_k,
    solve_k_lognormal,
    solve_many,
)
from .density import (
    DensityCurve,
    eigenvalue_cdf,
    invert_stieltjes,
    push_forward_square,
    solve_upsilon,
    stieltjes_of_spectrum,
    tail_mass,
)

__version__ = "0.1.0"
