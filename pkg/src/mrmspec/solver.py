"""Picard solver for the limiting resolvent system of MRW covariance matrices.

For a spectral parameter ``z`` off the real axis the unknown is a bounded
function ``K_z`` on [0, 1], the fixed point of

    T g(x) = 1 / (z - q E[ (z - int w(t - x) g(t) M(dt))^-1 ])

with ``w`` the power-law kernel ``max(tau/|t - x|, 1) ** gamma2`` (or
``exp(4 k(t - x))`` for the lognormal-volatility variant).  The expectation
runs over a Monte-Carlo ensemble of cell masses drawn once and reused at
every iteration, so ``T`` is a deterministic map.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .field_sim import Grid, ln_plus_kernel
from .mrm import (
    GAMMA2_PROVEN,
    IntermittencyWarning,
    LognormalParams,
    ModelParams,
    MrmSample,
    lognormal_embedding,
    sample_mrm_ensemble,
)
from .field_sim import derive_rng

__all__ = [
    "SolverConfig",
    "KFunction",
    "NonConvergence",
    "Ensemble",
    "kernel_row",
    "kernel_matrix",
    "mrm_ensemble",
    "lognormal_ensemble",
    "picard_step",
    "solve_k",
    "solve_k_lognormal",
    "solve_many",
    "mu2_from_k",
    "mu2_direct",
    "mp_k_closed_form",
]

log = logging.getLogger(__name__)


class NonConvergence(RuntimeError):
    """Raised when the Picard iteration exhausts ``max_iter``.

    The last iterate is attached as ``result`` so callers can inspect it.
    """

    def __init__(self, residual: float, iterations: int, result: "KFunction | None" = None):
        super().__init__(f"no convergence after {iterations} iterations (residual {residual:.3g})")
        self.residual = residual
        self.iterations = iterations
        self.result = result


@dataclass(frozen=True)
class SolverConfig:
    """Knobs of one fixed-point solve.

    Attributes
    ----------
    z : complex
        Spectral parameter, ``Im z != 0``.
    k_points : int
        Cells of the grid carrying ``K_z``.
    ensemble_size : int
        Number of MRM realisations in the expectation.
    eta_k : float or None
        Kernel truncation; ``None`` means one cell of the ``K_z`` grid.
    mrm_points : int
        Resolution at which each MRM realisation is simulated before its
        masses are summed onto the ``K_z`` grid.
    relaxation : float
        ``g <- (1 - a) g + a T g``; 1 is plain Picard.
    anderson : int
        History depth of Anderson mixing; 0 disables it.  Mixed iterates
        leaving the resolvent bounds are replaced by the plain image.
    quadrature : {"capped", "cell_average"}
        Kernel weight per cell: value at the truncated lag, or the exact
        Lebesgue average of the kernel over the cell.
    """

    z: complex = -0.01j
    k_points: int = 256
    ensemble_size: int = 2000
    eta_k: float | None = None
    tol: float = 1e-6
    max_iter: int = 500
    master_seed: int = 0
    mrm_points: int = 4096
    relaxation: float = 1.0
    anderson: int = 0
    quadrature: str = "cell_average"

    def __post_init__(self):
        object.__setattr__(self, "z", complex(self.z))
        if self.z.imag == 0:
            raise ValueError("z must have a nonzero imaginary part")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_iter < 1 or self.ensemble_size < 1:
            raise ValueError("max_iter and ensemble_size must be positive")
        if self.k_points < 2 or self.mrm_points % self.k_points:
            raise ValueError("mrm_points must be a multiple of k_points >= 2")
        if self.eta_k is not None and not self.eta_k > 0:
            raise ValueError("eta_k must be > 0")
        if self.anderson < 0:
            raise ValueError("anderson depth must be >= 0")
        if not 0 < self.relaxation <= 1:
            raise ValueError("relaxation must lie in (0, 1]")
        if self.quadrature not in ("capped", "cell_average"):
            raise ValueError(f"unknown quadrature {self.quadrature!r}")

    @property
    def k_grid(self) -> Grid:
        return Grid(self.k_points)

    @property
    def truncation(self) -> float:
        return self.k_grid.spacing if self.eta_k is None else self.eta_k


@dataclass
class KFunction:
    config: SolverConfig
    values: np.ndarray
    mu2: complex
    iterations: int
    residual: float
    converged: bool = True
    residuals: list = field(default_factory=list)
    bounds_ok: bool = True
    clipped: float = 0.0

    @property
    def z(self) -> complex:
        return self.config.z

    @property
    def x(self) -> np.ndarray:
        return self.config.k_grid.centers

    def diagnostics(self) -> dict:
        return {
            "z": [self.z.real, self.z.imag],
            "iterations": self.iterations,
            "residual": self.residual,
            "converged": self.converged,
            "mu2": [self.mu2.real, self.mu2.imag],
            "clipped_embedding_mass": self.clipped,
        }


@dataclass(frozen=True)
class Ensemble:
    """Cell masses ``(size, k_points)`` and the Toeplitz kernel matrix."""

    masses: np.ndarray
    kernel: np.ndarray
    clipped: float = 0.0

    @property
    def size(self) -> int:
        return self.masses.shape[0]


def _kernel_primitive(s, gamma2: float, tau: float):
    # int_0^s max(tau/u, 1)**gamma2 du, gamma2 < 1
    s = np.asarray(s, dtype=float)
    inner = tau**gamma2 * np.minimum(s, tau) ** (1 - gamma2) / (1 - gamma2)
    return inner + np.maximum(s - tau, 0.0)


def kernel_row(n: int, gamma2: float, tau: float, eta: float | None = None,
               quadrature: str = "cell_average") -> np.ndarray:
    """Kernel weights ``w[d]`` between cells ``d`` apart on an ``n``-cell grid."""
    h = 1.0 / n
    eta = h if eta is None else eta
    d = np.arange(n)
    if quadrature == "capped" or gamma2 >= 1 or gamma2 == 0:
        return ln_plus_kernel(d * h, gamma2, tau, eta)
    lo = np.maximum(d - 0.5, 0.0) * h
    hi = (d + 0.5) * h
    w = (_kernel_primitive(hi, gamma2, tau) - _kernel_primitive(lo, gamma2, tau)) / h
    w[0] *= 2.0
    return w


def _toeplitz(row: np.ndarray) -> np.ndarray:
    n = row.size
    idx = np.abs(np.arange(n)[:, None] - np.arange(n)[None, :])
    return row[idx]


def kernel_matrix(n: int, gamma2: float, tau: float, eta: float | None = None,
                  quadrature: str = "cell_average") -> np.ndarray:
    return _toeplitz(kernel_row(n, gamma2, tau, eta, quadrature))


@lru_cache(maxsize=16)
def _cached_mrm_masses(k_points, gamma2, tau, size, seed, mrm_points, stream):
    if gamma2 == 0:
        # Lebesgue measure: the expectation is exact with one realisation.
        size = 1
    masses, clipped = sample_mrm_ensemble(
        Grid(k_points), gamma2, tau, size, seed, stream=stream, oversample=mrm_points // k_points
    )
    masses.setflags(write=False)
    return masses, clipped


def mrm_ensemble(config: SolverConfig, model: ModelParams, stream: int = 0) -> Ensemble:
    """Masses and kernel for the MRM system; ``stream=1`` gives an independent ensemble."""
    masses, clipped = _cached_mrm_masses(
        config.k_points, model.gamma2, model.tau, config.ensemble_size, config.master_seed,
        config.mrm_points, stream,
    )
    w = kernel_matrix(config.k_points, model.gamma2, model.tau, config.truncation, config.quadrature)
    return Ensemble(masses, w, clipped)


def lognormal_ensemble(config: SolverConfig, lp: LognormalParams, stream: int = 0) -> Ensemble:
    """Masses ``h exp(2 W(t))`` and weights ``exp(4 k(t - x))``."""
    grid = config.k_grid
    emb = lognormal_embedding(grid, lp)
    if emb is None:
        w2 = np.full((1, grid.n_points), 2 * lp.mean_shift)
        clipped = 0.0
    else:
        w2 = 2 * (lp.mean_shift + np.stack([
            emb.sample(derive_rng(config.master_seed, stream, k)) for k in range(config.ensemble_size)
        ]))
        clipped = emb.clipped_mass
    masses = np.exp(w2) * grid.spacing
    kernel = _toeplitz(np.exp(4 * lp.k(np.arange(grid.n_points) * grid.spacing)))
    return Ensemble(masses, kernel, clipped)


def _as_masses(ensemble) -> np.ndarray:
    if isinstance(ensemble, Ensemble):
        return ensemble.masses
    if isinstance(ensemble, np.ndarray):
        return np.atleast_2d(ensemble)
    return np.stack([s.masses if isinstance(s, MrmSample) else np.asarray(s) for s in ensemble])


def _weighted_integrals(g: np.ndarray, masses: np.ndarray, kernel: np.ndarray | None) -> np.ndarray:
    # S[e, x] = sum_t kernel[x, t] g[t] masses[e, t]
    if kernel is None:
        return (masses @ g.real + 1j * (masses @ g.imag))[:, None]
    return (masses * g.real) @ kernel + 1j * ((masses * g.imag) @ kernel)


def _apply(g: np.ndarray, z: complex, q: float, masses: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    s = _weighted_integrals(g, masses, kernel)
    inner = np.mean(1.0 / (z - s), axis=0)
    return 1.0 / (z - q * inner)


def picard_step(g, ensemble, config: SolverConfig, model: ModelParams | None = None,
                q: float | None = None) -> np.ndarray:
    """One application of the fixed-point operator on the ``K_z`` grid.

    ``ensemble`` is an :class:`Ensemble`, a ``(size, n)`` mass array or a
    list of :class:`MrmSample`; for the latter two the power-law kernel is
    built from ``model``.
    """
    g = np.broadcast_to(np.asarray(g, dtype=complex), (config.k_points,))
    masses = _as_masses(ensemble)
    if isinstance(ensemble, Ensemble):
        kernel = ensemble.kernel
    else:
        kernel = kernel_matrix(config.k_points, model.gamma2, model.tau, config.truncation, config.quadrature)
    q = model.q if q is None else q
    if masses.shape[0] == 0:
        raise ValueError("ensemble is empty")
    return _apply(g, config.z, q, masses, kernel)


def _within_bounds(g: np.ndarray, z: complex) -> bool:
    slack = 1e-12 / abs(z.imag)
    return bool(np.all(np.abs(g) <= 1 / abs(z.imag) + slack) and np.all(z.imag * g.imag <= slack))


def _iterate(config: SolverConfig, q: float, ens: Ensemble, initial=None, raise_on_fail: bool = True) -> KFunction:
    z = config.z
    g = np.full(config.k_points, 1 / z, dtype=complex) if initial is None else \
        np.array(np.broadcast_to(initial, (config.k_points,)), dtype=complex)
    a = config.relaxation
    depth = config.anderson
    hist_f, hist_t = [], []
    residuals = []
    bounds_ok = True
    with threadpool_limits(limits=1):
        for it in range(1, config.max_iter + 1):
            tg = _apply(g, z, q, ens.masses, ens.kernel)
            bounds_ok &= _within_bounds(tg, z)
            f = tg - g
            res = float(np.max(np.abs(f)))
            residuals.append(res)
            if res < config.tol:
                g = tg
                break
            new = tg if a == 1 else g + a * f
            if depth:
                hist_f.append(f)
                hist_t.append(new)
                if len(hist_f) > depth + 1:
                    hist_f.pop(0)
                    hist_t.pop(0)
                if len(hist_f) > 1:
                    df = np.diff(np.array(hist_f), axis=0).T
                    dt = np.diff(np.array(hist_t), axis=0).T
                    coef = np.linalg.lstsq(df, f, rcond=None)[0]
                    mixed = new - dt @ coef
                    if _within_bounds(mixed, z):
                        new = mixed
                    else:
                        hist_f, hist_t = [f], [new]
            g = new
    converged = residuals[-1] < config.tol
    out = KFunction(config, g, 0j, it, residuals[-1], converged, residuals, bounds_ok, ens.clipped)
    out.mu2 = mu2_from_k(out, q)
    if not converged and raise_on_fail:
        raise NonConvergence(out.residual, it, out)
    return out


def _check_model(model: ModelParams):
    if model.gamma2 >= GAMMA2_PROVEN:
        warnings.warn(
            f"solving with gamma2={model.gamma2} >= 1/3, outside the proven regime",
            IntermittencyWarning,
            stacklevel=3,
        )


def solve_k(config: SolverConfig, model: ModelParams, initial=None, ensemble: Ensemble | None = None) -> KFunction:
    """Fixed point ``K_z`` of the MRM system, started from ``1/z``.

    Raises :class:`NonConvergence` when ``max_iter`` is exhausted.
    """
    if model.gamma2 >= 1 and config.quadrature == "cell_average":
        raise ValueError("cell_average quadrature needs gamma2 < 1")
    ens = mrm_ensemble(config, model) if ensemble is None else ensemble
    return _iterate(config, model.q, ens, initial)


def solve_k_lognormal(config: SolverConfig, lp: LognormalParams, q: float = 1.0, initial=None,
                      ensemble: Ensemble | None = None) -> KFunction:
    """Fixed point for lognormal volatility ``exp(W)`` with covariance ``k``."""
    if not 0 < q <= 1:
        raise ValueError("q must lie in (0, 1]")
    ens = lognormal_ensemble(config, lp) if ensemble is None else ensemble
    return _iterate(config, q, ens, initial)


def solve_many(zs: Sequence[complex], config: SolverConfig, model: ModelParams | None = None,
               lp: LognormalParams | None = None, threads: int = 1,
               warm_start: bool = False) -> list:
    """Solve at every ``z``; failures come back as :class:`NonConvergence` instances.

    With ``warm_start`` each point starts from the previous converged
    solution, which ties the points into one sequential chain.  Output does
    not depend on ``threads``.
    """
    q = model.q if model is not None else 1.0
    if lp is None:
        _check_model(model)
        ens = mrm_ensemble(config, model)
    else:
        ens = lognormal_ensemble(config, lp)

    def one(z, initial=None):
        try:
            return _iterate(replace(config, z=z), q, ens, initial)
        except NonConvergence as exc:
            return exc

    if warm_start:
        out, prev = [], None
        for z in zs:
            r = one(z, None if prev is None else prev.values)
            if isinstance(r, NonConvergence):
                # Retry cold so one failure does not poison the chain.
                r = one(z)
            out.append(r)
            prev = r if isinstance(r, KFunction) else None
        return out
    if threads <= 1:
        return [one(z) for z in zs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, zs))


def mu2_from_k(k: KFunction, q: float) -> complex:
    """``mu2 = (int K - (1 - q)/z) / q`` with the midpoint rule."""
    return complex((np.mean(k.values) - (1 - q) / k.z) / q)


def mu2_direct(k: KFunction, ensemble) -> tuple[complex, float]:
    """``E[(z - int K dM)^-1]`` over ``ensemble``, with its standard error.

    Uses no kernel, so it is an independent route to ``mu2`` when the
    ensemble is fresh.
    """
    masses = _as_masses(ensemble)
    samples = 1.0 / (k.z - _weighted_integrals(k.values, masses, None)[:, 0])
    se = float(np.std(samples, ddof=1) / math.sqrt(samples.size)) if samples.size > 1 else math.inf
    return complex(samples.mean()), se


def mp_k_closed_form(z, q: float = 1.0):
    """Root of ``z K^2 - (z^2 + 1 - q) K + z = 0`` with ``Im z Im K <= 0``.

    This is the fixed point of the system when ``gamma2 = 0``.
    """
    z = np.asarray(z, dtype=complex)
    b = z * z + 1 - q
    disc = np.sqrt(b * b - 4 * z * z)
    r1 = (b + disc) / (2 * z)
    # The roots multiply to 1, so their imaginary parts have opposite signs.
    r2 = 1 / r1
    out = np.where(np.sign(z.imag) * r1.imag < 0, r1, r2)
    return out if out.ndim else complex(out)
