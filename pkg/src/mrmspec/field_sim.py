"""Stationary log-correlated Gaussian fields on uniform grids of [0, 1].

Fields are synthesised by circulant embedding: the target autocovariance is
periodised on a circle twice the length of the grid, diagonalised with an FFT
and coloured white noise is transformed back.  Log kernels are not always
positive definite once embedded, so negative circulant eigenvalues are clipped
to zero and the clipped magnitude is kept on the sample for diagnostics.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import fft as sp_fft

__all__ = [
    "Grid",
    "FieldSample",
    "CirculantEmbedding",
    "ln_plus_kernel",
    "rho_eps",
    "shifted_log_covariance",
    "field_covariance",
    "sample_field",
    "sample_field_ensemble",
    "derive_rng",
]


@dataclass(frozen=True)
class Grid:
    """Uniform partition of [0, 1] into ``n_points`` cells."""

    n_points: int

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 2:
            raise ValueError(f"n_points must be an integer >= 2, got {self.n_points}")
        object.__setattr__(self, "n_points", int(self.n_points))

    @property
    def spacing(self) -> float:
        return 1.0 / self.n_points

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.n_points) + 0.5) * self.spacing

    @property
    def edges(self) -> np.ndarray:
        return np.arange(self.n_points + 1) * self.spacing


@dataclass
class FieldSample:
    grid: Grid
    eta: float
    gamma2: float
    tau: float
    values: np.ndarray
    clipped: float = 0.0


def derive_rng(master_seed, *counters: int) -> np.random.Generator:
    """Independent generator for the stream ``(master_seed, *counters)``.

    The stream only depends on the counters, never on the order in which
    streams are requested, so parallel and serial runs agree bit for bit.
    """
    root = list(master_seed) if isinstance(master_seed, (tuple, list)) else [master_seed]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([*map(int, root), *map(int, counters)])))


def ln_plus_kernel(lag, gamma2: float, tau: float, eta: float = 0.0):
    """Power-law kernel ``max(tau/|lag|, 1) ** gamma2``.

    Lags shorter than ``eta`` are evaluated at ``|lag| = eta``; with
    ``eta = 0`` the kernel is infinite at the origin whenever
    ``gamma2 > 0`` and ``tau > 0``.
    """
    lag = np.abs(np.asarray(lag, dtype=float))
    if gamma2 == 0:
        out = np.ones_like(lag)
    else:
        with np.errstate(divide="ignore"):
            ratio = tau / np.maximum(lag, eta)
        out = np.maximum(ratio, 1.0) ** gamma2
    return out if out.ndim else float(out)


def rho_eps(lag, eps: float, tau: float):
    """Covariance of the cone-regularised log field at resolution ``eps``.

    ``ln(tau/eps) + 1 - |lag|/eps`` below ``eps``, ``ln(tau/|lag|)`` up to
    ``tau`` and zero beyond.
    """
    if not 0 < eps <= tau:
        raise ValueError(f"need 0 < eps <= tau, got eps={eps}, tau={tau}")
    lag = np.abs(np.asarray(lag, dtype=float))
    inner = math.log(tau / eps) + 1.0 - lag / eps
    with np.errstate(divide="ignore"):
        middle = np.log(tau / np.maximum(lag, eps))
    out = np.where(lag <= eps, inner, np.where(lag <= tau, middle, 0.0))
    return out if out.ndim else float(out)


def shifted_log_covariance(lag, gamma2: float, tau: float, eta: float):
    """``gamma2 * ln_+(tau / (|lag| + eta))``, the simulation kernel."""
    lag = np.abs(np.asarray(lag, dtype=float))
    if tau <= 0 or gamma2 == 0:
        out = np.zeros_like(lag)
    else:
        out = gamma2 * np.maximum(np.log(tau / (lag + eta)), 0.0)
    return out if out.ndim else float(out)


def field_covariance(gamma2: float, tau: float, eta: float, kernel: str = "shifted") -> Callable:
    if kernel == "shifted":
        return lambda lag: shifted_log_covariance(lag, gamma2, tau, eta)
    if kernel == "cone":
        if gamma2 == 0:
            return lambda lag: np.zeros_like(np.asarray(lag, dtype=float))
        return lambda lag: gamma2 * rho_eps(lag, eta, tau)
    raise ValueError(f"unknown kernel {kernel!r}")


class CirculantEmbedding:
    """Precomputed FFT sampler for one stationary covariance on one grid.

    Parameters
    ----------
    grid : Grid
        Points are the cell centers; lag ``k`` is ``k * grid.spacing``.
    covariance : callable
        Maps an array of nonnegative lags to covariances.
    """

    def __init__(self, grid: Grid, covariance: Callable):
        n = grid.n_points
        self.grid = grid
        lags = np.arange(n + 1) * grid.spacing
        c = np.asarray(covariance(lags), dtype=float)
        self.target = c[:n]
        row = np.concatenate([c, c[n - 1:0:-1]])
        eig = sp_fft.rfft(row).real
        # Full spectrum of the symmetric circulant, length m = 2n.
        self.m = row.size
        eig_full = np.concatenate([eig, eig[-2:0:-1]])
        neg = eig_full < 0
        self.max_clipped = float(-eig_full[neg].min()) if neg.any() else 0.0
        self.clipped_mass = float(-eig_full[neg].sum() / self.m) if neg.any() else 0.0
        self.sqrt_eig = np.sqrt(np.clip(eig_full, 0.0, None) / self.m)
        # Variance actually realised after clipping.
        self.variance = float(np.clip(eig_full, 0.0, None).sum() / self.m)
        if self.max_clipped > 1e-8 * max(abs(c[0]), 1e-300):
            warnings.warn(
                f"circulant embedding indefinite: clipped {self.clipped_mass:.3g} of variance "
                f"(largest eigenvalue {self.max_clipped:.3g})",
                RuntimeWarning,
                stacklevel=2,
            )

    def realized_covariance(self) -> np.ndarray:
        """Autocovariance at lags 0..n-1 of the clipped embedding."""
        return sp_fft.ifft(self.sqrt_eig**2 * self.m).real[: self.grid.n_points]

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        shape = (self.m,) if size is None else (size, self.m)
        z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        y = sp_fft.fft(self.sqrt_eig * z, axis=-1).real
        return y[..., : self.grid.n_points]


def sample_field(grid: Grid, gamma2: float, tau: float, eta: float | None = None, seed=0,
                 kernel: str = "shifted") -> FieldSample:
    """One centered field with covariance ``gamma2 * ln_+(tau/(lag + eta))``.

    ``eta`` defaults to the grid spacing.  Identical arguments give
    bit-identical values.
    """
    if gamma2 < 0:
        raise ValueError("gamma2 must be >= 0")
    eta = grid.spacing if eta is None else eta
    if eta <= 0:
        raise ValueError("eta must be > 0")
    if gamma2 == 0:
        return FieldSample(grid, eta, gamma2, tau, np.zeros(grid.n_points))
    emb = CirculantEmbedding(grid, field_covariance(gamma2, tau, eta, kernel))
    rng = seed if isinstance(seed, np.random.Generator) else derive_rng(seed)
    return FieldSample(grid, eta, gamma2, tau, emb.sample(rng), emb.clipped_mass)


def sample_field_ensemble(grid: Grid, covariance: Callable, size: int, master_seed,
                          stream: int = 0, chunk: int = 256) -> tuple[np.ndarray, CirculantEmbedding]:
    """``size`` independent fields, sample ``k`` drawn from stream ``(master_seed, stream, k)``.

    Returns the ``(size, n_points)`` array and the embedding used.
    """
    emb = CirculantEmbedding(grid, covariance)
    out = np.empty((size, grid.n_points))
    z = np.empty((min(chunk, size), emb.m), dtype=complex)
    for start in range(0, size, chunk):
        stop = min(start + chunk, size)
        for k in range(start, stop):
            rng = derive_rng(master_seed, stream, k)
            z[k - start] = rng.standard_normal(emb.m) + 1j * rng.standard_normal(emb.m)
        block = sp_fft.fft(emb.sqrt_eig * z[: stop - start], axis=-1).real
        out[start:stop] = block[:, : grid.n_points]
    return out, emb
