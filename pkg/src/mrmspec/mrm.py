"""Lognormal multifractal random measures and the return matrices built on them."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .field_sim import CirculantEmbedding, Grid, derive_rng, field_covariance

__all__ = [
    "ModelParams",
    "MrmSample",
    "ReturnsMatrix",
    "LognormalParams",
    "IntermittencyWarning",
    "zeta",
    "sample_mrm",
    "sample_mrm_ensemble",
    "sample_returns",
    "sample_returns_lognormal",
    "triangular_kernel",
]

#: intermittency above which the convergence theorems are only conjectured
GAMMA2_PROVEN = 1.0 / 3.0


class IntermittencyWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ModelParams:
    """Parameters of an ``n x t_steps`` MRW return matrix.

    ``t_steps`` defaults to ``round(n / q)``.
    """

    gamma2: float
    tau: float
    q: float
    n: int
    t_steps: int | None = None

    def __post_init__(self):
        if not 0 <= self.gamma2 < 2:
            raise ValueError(f"gamma2 must lie in [0, 2), got {self.gamma2}")
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if not 0 < self.q <= 1:
            raise ValueError(f"q must lie in (0, 1], got {self.q}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        if self.t_steps is None:
            object.__setattr__(self, "t_steps", max(1, round(self.n / self.q)))
        if self.t_steps < 1:
            raise ValueError("t_steps must be positive")
        if self.gamma2 >= GAMMA2_PROVEN:
            warnings.warn(
                f"gamma2={self.gamma2} >= 1/3: limiting equations are conjectural in this regime",
                IntermittencyWarning,
                stacklevel=3,
            )

    @property
    def intermittency_warning(self) -> bool:
        return self.gamma2 >= GAMMA2_PROVEN

    @property
    def aspect(self) -> float:
        """Realised ``n / t_steps``."""
        return self.n / self.t_steps


@dataclass
class MrmSample:
    grid: Grid
    masses: np.ndarray
    clipped: float = 0.0

    @property
    def total(self) -> float:
        return float(self.masses.sum())


@dataclass
class ReturnsMatrix:
    entries: np.ndarray
    conditional_variances: np.ndarray
    params: ModelParams | None = None
    clipped: float = 0.0

    @property
    def shape(self):
        return self.entries.shape


def zeta(p, gamma2: float):
    """Structure exponent ``(1 + gamma2/2) p - (gamma2/2) p**2`` of the lognormal MRM."""
    return (1 + gamma2 / 2) * p - (gamma2 / 2) * np.square(p)


def _mrm_embedding(grid: Grid, gamma2: float, tau: float, eta: float | None, oversample: int,
                   kernel: str) -> CirculantEmbedding:
    fine = Grid(grid.n_points * oversample)
    eta = fine.spacing if eta is None else eta
    return CirculantEmbedding(fine, field_covariance(gamma2, tau, eta, kernel))


def _masses_from_field(omega: np.ndarray, emb: CirculantEmbedding, oversample: int) -> np.ndarray:
    # Normalise with the variance the embedding really realises so E[M(I)] = |I|.
    dens = np.exp(omega - 0.5 * emb.variance) * emb.grid.spacing
    if oversample == 1:
        return dens
    return dens.reshape(*dens.shape[:-1], -1, oversample).sum(axis=-1)


def sample_mrm(grid: Grid, gamma2: float, tau: float, seed=0, eta: float | None = None,
               oversample: int = 1, kernel: str = "shifted") -> MrmSample:
    """Cell masses of a lognormal MRM on ``grid``.

    The log-field is simulated on a grid ``oversample`` times finer (with
    regularisation lag ``eta``, default the fine spacing) and the
    exponentiated density is summed back onto the cells of ``grid``.
    """
    if not 0 <= gamma2 < 2:
        raise ValueError(f"gamma2 must lie in [0, 2), got {gamma2}")
    if gamma2 == 0:
        return MrmSample(grid, np.full(grid.n_points, grid.spacing))
    emb = _mrm_embedding(grid, gamma2, tau, eta, oversample, kernel)
    rng = seed if isinstance(seed, np.random.Generator) else derive_rng(seed)
    return MrmSample(grid, _masses_from_field(emb.sample(rng), emb, oversample), emb.clipped_mass)


def sample_mrm_ensemble(grid: Grid, gamma2: float, tau: float, size: int, master_seed, stream: int = 0,
                        eta: float | None = None, oversample: int = 1, kernel: str = "shifted",
                        chunk: int = 256) -> tuple[np.ndarray, float]:
    """``(size, n_points)`` array of MRM cell masses.

    Realisation ``k`` uses the random stream ``(master_seed, stream, k)``
    and is identical to ``sample_mrm(..., seed=derive_rng(master_seed, stream, k))``.
    Also returns the clipped embedding mass.
    """
    if gamma2 == 0:
        return np.full((size, grid.n_points), grid.spacing), 0.0
    emb = _mrm_embedding(grid, gamma2, tau, eta, oversample, kernel)
    out = np.empty((size, grid.n_points))
    for start in range(0, size, chunk):
        stop = min(start + chunk, size)
        omega = np.stack([emb.sample(derive_rng(master_seed, stream, k)) for k in range(start, stop)])
        out[start:stop] = _masses_from_field(omega, emb, oversample)
    return out, emb.clipped_mass


def sample_returns(params: ModelParams, master_seed=0, oversample: int = 1,
                   kernel: str = "shifted") -> ReturnsMatrix:
    """MRW increments ``X[i, j] = sqrt(M_i(I_j)) * Z_ij``.

    Row ``i`` draws its measure from stream ``(master_seed, i, 0)`` and its
    Gaussian noise from ``(master_seed, i, 1)``; conditionally on the measure
    this is exactly the Brownian increment over the time-changed cell.
    """
    grid = Grid(max(params.t_steps, 2))
    n, t = params.n, params.t_steps
    if params.gamma2 == 0:
        masses = np.full((n, t), 1.0 / t)
        clipped = 0.0
    else:
        emb = _mrm_embedding(grid, params.gamma2, params.tau, None, oversample, kernel)
        masses = np.stack([
            _masses_from_field(emb.sample(derive_rng(master_seed, i, 0)), emb, oversample)
            for i in range(n)
        ])
        clipped = emb.clipped_mass
    masses = masses[:, :t]
    noise = np.stack([derive_rng(master_seed, i, 1).standard_normal(t) for i in range(n)])
    return ReturnsMatrix(np.sqrt(masses) * noise, masses, params, clipped)


@dataclass
class LognormalParams:
    """Lognormal volatility ``exp(W)`` with ``W`` stationary Gaussian.

    Parameters
    ----------
    kernel : callable
        Stationary covariance ``k`` of ``W`` as a function of the lag.
    beta : float
        Hölder exponent with ``|k(x) - k(0)| <= C |x|**beta``.
    mean_shift : float, optional
        Mean ``m`` of ``W``; defaults to ``-k(0)`` so that ``E[exp(2W)] = 1``.
    """

    kernel: Callable
    beta: float = 1.0
    mean_shift: float | None = None

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be > 0")
        k0 = float(np.asarray(self.kernel(np.zeros(1)))[0])
        if self.mean_shift is None:
            self.mean_shift = -k0
        if not math.isclose(self.mean_shift, -k0, rel_tol=1e-12, abs_tol=1e-12):
            raise ValueError(f"mean_shift must equal -k(0) = {-k0}, got {self.mean_shift}")

    def k(self, lag) -> np.ndarray:
        return np.asarray(self.kernel(np.abs(np.asarray(lag, dtype=float))), dtype=float)

    def holder_constant(self, lags=None) -> float:
        """Smallest ``C`` with ``|k(x) - k(0)| <= C |x|**beta`` on ``lags``."""
        if lags is None:
            lags = np.geomspace(1e-6, 1.0, 400)
        lags = np.asarray(lags, dtype=float)
        lags = lags[lags > 0]
        return float(np.max(np.abs(self.k(lags) - self.k(0.0)) / lags**self.beta))


def triangular_kernel(c: float, width: float) -> Callable:
    """``k(x) = c * max(0, 1 - |x|/width)``, Hölder with exponent 1."""
    return lambda lag: c * np.maximum(0.0, 1.0 - np.abs(np.asarray(lag, dtype=float)) / width)


#: largest tolerated fraction of k(0) lost to clipping in the embedding of k
MAX_CLIPPED_FRACTION = 0.05


def lognormal_embedding(grid: Grid, lp: LognormalParams) -> CirculantEmbedding | None:
    k0 = float(lp.k(0.0))
    if k0 == 0 and not np.any(lp.k(np.arange(grid.n_points + 1) * grid.spacing)):
        return None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        emb = CirculantEmbedding(grid, lp.k)
    if emb.clipped_mass > MAX_CLIPPED_FRACTION * abs(k0):
        raise ValueError(
            f"kernel embedding is indefinite: clipped {emb.clipped_mass:.3g} > "
            f"{MAX_CLIPPED_FRACTION} * k(0)"
        )
    return emb


def sample_returns_lognormal(params: ModelParams, lp: LognormalParams, master_seed=0) -> ReturnsMatrix:
    """Returns ``exp(W_i(j/T)) * Z_ij / sqrt(T)`` with i.i.d. log-volatility rows.

    ``conditional_variances`` holds ``exp(2 W_i(j/T)) / T``.
    """
    n, t = params.n, params.t_steps
    grid = Grid(max(t, 2))
    emb = lognormal_embedding(grid, lp)
    if emb is None:
        w = np.full((n, t), lp.mean_shift)
        clipped = 0.0
    else:
        w = lp.mean_shift + np.stack([emb.sample(derive_rng(master_seed, i, 0))[:t] for i in range(n)])
        clipped = emb.clipped_mass
    variances = np.exp(2 * w) / t
    noise = np.stack([derive_rng(master_seed, i, 1).standard_normal(t) for i in range(n)])
    return ReturnsMatrix(np.sqrt(variances) * noise, variances, params, clipped)
