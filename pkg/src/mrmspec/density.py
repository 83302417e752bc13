"""Limiting densities recovered from the Stieltjes transform ``mu2``.

``upsilon(x) = Im mu2(x - i eps) / pi`` near the real axis, and the
eigenvalue density of ``R`` is its push-forward by ``x -> x**2``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import integrate

from .mrm import LognormalParams, ModelParams
from .solver import KFunction, NonConvergence, SolverConfig, solve_many
from .spectra import SpectrumResult

__all__ = [
    "DensityCurve",
    "default_lambda_grid",
    "x_grid_for",
    "invert_stieltjes",
    "solve_upsilon",
    "push_forward_square",
    "stieltjes_of_spectrum",
    "eigenvalue_cdf",
    "tail_mass",
]

log = logging.getLogger(__name__)


@dataclass
class DensityCurve:
    """Sampled density with per-point bookkeeping.

    ``missing`` flags points whose solve did not converge (their value is
    NaN), ``clamped`` the total negative mass removed when clipping
    ``Im mu2`` at zero.
    """

    x_points: np.ndarray
    values: np.ndarray
    eps_im: float
    missing: np.ndarray | None = None
    clamped: float = 0.0
    diagnostics: list = field(default_factory=list)

    def __post_init__(self):
        self.x_points = np.asarray(self.x_points, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.missing is None:
            self.missing = ~np.isfinite(self.values)

    @property
    def valid(self) -> np.ndarray:
        return ~self.missing

    def mass(self) -> float:
        ok = self.valid
        if not ok.any():
            return float("nan")
        return float(integrate.trapezoid(self.values[ok], self.x_points[ok]))

    def __call__(self, x) -> np.ndarray:
        ok = self.valid
        return np.interp(x, self.x_points[ok], self.values[ok], left=0.0, right=0.0)


def default_lambda_grid(n: int = 200, lo: float = 1e-2, hi: float = 20.0) -> np.ndarray:
    return np.geomspace(lo, hi, n)


def x_grid_for(lambdas: np.ndarray, include_zero: bool = True) -> np.ndarray:
    """Nonnegative ``x`` points whose squares are ``lambdas`` (and 0)."""
    x = np.sqrt(np.asarray(lambdas, dtype=float))
    return np.concatenate([[0.0], x]) if include_zero else x


def _imag_density(mu2: np.ndarray) -> np.ndarray:
    return np.imag(mu2) / np.pi


def invert_stieltjes(mu2_at: Callable, x_points, eps_im: float = 0.01,
                     richardson: bool = False) -> DensityCurve:
    """Density ``Im mu2(x - i eps) / pi`` on ``x_points``.

    ``mu2_at`` maps a complex ``z`` to ``mu2`` and may raise
    :class:`NonConvergence`, which marks the point missing.  With
    ``richardson`` the values at ``eps`` and ``2 eps`` are combined to
    cancel the first-order smoothing bias.
    """
    if not eps_im > 0:
        raise ValueError("eps_im must be > 0")
    x_points = np.asarray(x_points, dtype=float)

    def evaluate(eps):
        out = np.full(x_points.size, np.nan)
        for j, x in enumerate(x_points):
            try:
                out[j] = _imag_density(complex(mu2_at(complex(x, -eps))))
            except NonConvergence:
                log.warning("no convergence at x=%g, eps=%g", x, eps)
        return out

    raw = evaluate(eps_im)
    if richardson:
        raw = 2 * raw - evaluate(2 * eps_im)
    return _clamped_curve(x_points, raw, eps_im)


def _clamped_curve(x_points, raw, eps_im, diagnostics=None) -> DensityCurve:
    missing = ~np.isfinite(raw)
    neg = np.where(~missing & (raw < 0), -raw, 0.0)
    clamped = float(integrate.trapezoid(neg, x_points)) if x_points.size > 1 else float(neg.sum())
    values = np.where(missing, np.nan, np.maximum(raw, 0.0))
    return DensityCurve(x_points, values, eps_im, missing, clamped, diagnostics or [])


def solve_upsilon(model: ModelParams | None, x_points, config: SolverConfig | None = None,
                  eps_im: float = 0.01, richardson: bool = False, threads: int = 1,
                  warm_start: bool = False, lp: LognormalParams | None = None) -> DensityCurve:
    """Solve the fixed-point system along ``x - i eps`` and invert.

    Diagnostics of every solve (one dict per ``z``) are attached to the
    returned curve.
    """
    config = SolverConfig() if config is None else config
    x_points = np.asarray(x_points, dtype=float)

    def run(eps):
        zs = [complex(x, -eps) for x in x_points]
        results = solve_many(zs, config, model, lp=lp, threads=threads, warm_start=warm_start)
        mu2 = np.full(x_points.size, complex(np.nan, np.nan))
        diags = []
        for j, r in enumerate(results):
            if isinstance(r, KFunction):
                mu2[j] = r.mu2
                diags.append(r.diagnostics())
            else:
                d = r.result.diagnostics() if r.result is not None else {"z": [zs[j].real, zs[j].imag]}
                d["converged"] = False
                diags.append(d)
        return _imag_density(mu2), diags

    raw, diags = run(eps_im)
    if richardson:
        raw2, diags2 = run(2 * eps_im)
        raw = 2 * raw - raw2
        diags = diags + diags2
    return _clamped_curve(x_points, raw, eps_im, diags)


def push_forward_square(ups: DensityCurve) -> DensityCurve:
    """Density of ``X**2`` for ``X`` with symmetric density ``ups`` (sampled on ``x >= 0``).

    ``f(lambda) = ups(sqrt(lambda)) / sqrt(lambda)``; the point ``x = 0`` is
    dropped.
    """
    x = ups.x_points
    if np.any(x < 0):
        raise ValueError("push_forward_square expects x >= 0 (symmetry is assumed)")
    keep = x > 0
    xs = x[keep]
    lam = xs**2
    vals = ups.values[keep] / xs
    clamped = ups.clamped
    return DensityCurve(lam, vals, ups.eps_im, ups.missing[keep], clamped, ups.diagnostics)


def stieltjes_of_spectrum(s: SpectrumResult | np.ndarray, z: complex) -> complex:
    """``(1/N) sum 1/(z - lambda_i)``."""
    lam = s.eigenvalues if isinstance(s, SpectrumResult) else np.asarray(s, dtype=float)
    z = complex(z)
    if z.imag == 0:
        raise ValueError("z must be off the real axis")
    return complex(np.mean(1.0 / (z - lam)))


def eigenvalue_cdf(ups: DensityCurve) -> Callable:
    """CDF of ``X**2`` from the symmetric density of ``X`` on ``x >= 0``.

    ``F(lambda) = 2 int_0^sqrt(lambda) ups``.  Below the first sample the
    density is held at its first value; beyond the last the CDF is flat.
    """
    ok = ups.valid
    x = ups.x_points[ok]
    v = ups.values[ok]
    if x.size == 0:
        raise ValueError("density has no valid points")
    if x[0] > 0:
        x = np.concatenate([[0.0], x])
        v = np.concatenate([[v[0]], v])
    cum = 2 * integrate.cumulative_trapezoid(v, x, initial=0.0)

    def cdf(lam):
        r = np.sqrt(np.clip(np.asarray(lam, dtype=float), 0.0, None))
        return np.interp(r, x, cum)

    return cdf


def tail_mass(ups: DensityCurve, threshold: float = 4.0) -> float:
    """Mass of ``X**2`` beyond ``threshold`` within the sampled window."""
    ok = ups.valid
    x = ups.x_points[ok]
    v = ups.values[ok]
    r = np.sqrt(threshold)
    if x.size == 0:
        return float("nan")
    if x[-1] <= r:
        return 0.0
    vr = np.interp(r, x, v)
    sel = x > r
    xs = np.concatenate([[r], x[sel]])
    vs = np.concatenate([[vr], v[sel]])
    return float(2 * integrate.trapezoid(vs, xs))
