"""Empirical spectra of ``R = X X^t`` and the Marchenko-Pastur reference law."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

from .mrm import ReturnsMatrix

__all__ = [
    "SpectrumResult",
    "EsdHistogram",
    "covariance_spectrum",
    "bn_spectrum_check",
    "mp_edges",
    "mp_density",
    "mp_cdf",
    "esd_histogram",
    "pool_eigenvalues",
    "ks_distance",
]


@dataclass
class SpectrumResult:
    eigenvalues: np.ndarray
    n: int
    t_steps: int

    def __len__(self):
        return self.eigenvalues.size


@dataclass
class EsdHistogram:
    bin_edges: np.ndarray
    probabilities: np.ndarray

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def density(self) -> np.ndarray:
        return self.probabilities / self.widths


def _as_array(x) -> np.ndarray:
    return np.asarray(x.entries if isinstance(x, ReturnsMatrix) else x, dtype=float)


def covariance_spectrum(x) -> SpectrumResult:
    """Ascending eigenvalues of ``X X^t``.

    Round-off negatives above ``-1e-10 * ||X||_F^2`` are set to zero.
    """
    a = np.atleast_2d(_as_array(x))
    if not np.all(np.isfinite(a)):
        raise ValueError("returns matrix has non-finite entries")
    gram = a @ a.T
    lam = linalg.eigvalsh(gram, check_finite=False)
    floor = 1e-10 * float(np.sum(a * a))
    if lam.size and lam[0] < -floor:
        raise ValueError(f"Gram matrix has eigenvalue {lam[0]:.3g} below round-off")
    return SpectrumResult(np.clip(lam, 0.0, None), a.shape[0], a.shape[1])


def bn_spectrum_check(x, tol: float = 1e-8) -> tuple[bool, float]:
    """Compare the spectrum of ``[[0, X^t], [X, 0]]`` with ``{±sqrt(lambda_i)}`` plus zeros.

    Returns ``(passed, max_deviation)``; ``tol`` is relative to ``max(1, ||X||_2)``.
    """
    a = np.atleast_2d(_as_array(x))
    n, t = a.shape
    b = np.zeros((n + t, n + t))
    b[:t, t:] = a.T
    b[t:, :t] = a
    got = linalg.eigvalsh(b)
    # Only the top min(N, T) eigenvalues pair with singular values.
    sv = np.sqrt(covariance_spectrum(a).eigenvalues[n - min(n, t):])
    expected = np.sort(np.concatenate([sv, -sv, np.zeros(abs(t - n))]))
    dev = float(np.max(np.abs(got - expected))) if got.size else 0.0
    scale = max(1.0, float(sv.max()) if sv.size else 0.0)
    return dev <= tol * scale, dev


def mp_edges(q: float) -> tuple[float, float]:
    s = np.sqrt(q)
    return (1 - s) ** 2, (1 + s) ** 2


def mp_density(x, q: float):
    """Marchenko-Pastur density with ratio ``q`` and unit variance."""
    if not 0 < q <= 1:
        raise ValueError(f"q must lie in (0, 1], got {q}")
    x = np.asarray(x, dtype=float)
    lo, hi = mp_edges(q)
    inside = (x > lo) & (x < hi)
    out = np.zeros_like(x)
    xi = x[inside]
    out[inside] = np.sqrt((hi - xi) * (xi - lo)) / (2 * np.pi * q * xi)
    return out if out.ndim else float(out)


def mp_cdf(x, q: float):
    """Marchenko-Pastur CDF in closed form.

    With ``lambda = a + b cos(t)``, ``a = 1 + q``, ``b = 2 sqrt(q)``, the
    mass below ``lambda`` is ``(2/pi) * int_t^pi sin^2 / (a + b cos)``.
    """
    lo, hi = mp_edges(q)
    x = np.clip(np.asarray(x, dtype=float), lo, hi)
    a, b = 1 + q, 2 * np.sqrt(q)
    r = abs(1 - q)
    t = np.arccos(np.clip((x - a) / b, -1.0, 1.0))

    def antiderivative(t):
        with np.errstate(over="ignore"):
            at = np.arctan(np.sqrt((a - b) / (a + b)) * np.tan(t / 2))
        return -np.sin(t) / b + a * t / b**2 - 2 * r * at / b**2

    out = 2 / np.pi * (np.pi * (a - r) / b**2 - antiderivative(t))
    out = np.clip(out, 0.0, 1.0)
    return out if out.ndim else float(out)


def pool_eigenvalues(spectra: Sequence[SpectrumResult] | SpectrumResult) -> np.ndarray:
    if isinstance(spectra, SpectrumResult):
        spectra = [spectra]
    if not spectra:
        raise ValueError("no spectra to pool")
    return np.concatenate([s.eigenvalues for s in spectra])


def esd_histogram(spectra, bins=100, log: bool = False, range_=None) -> EsdHistogram:
    """Normalised histogram of pooled eigenvalues.

    ``bins`` is a count or an explicit array of edges.  Counted bins span
    ``[0, max]`` (equal width) or ``[range_[0], max]`` geometrically when
    ``log`` is set.  Eigenvalues outside explicit edges are dropped before
    normalising.
    """
    lam = spectra if isinstance(spectra, np.ndarray) else pool_eigenvalues(spectra)
    lam = np.asarray(lam, dtype=float)
    if lam.size == 0:
        raise ValueError("empty spectrum")
    if np.ndim(bins) == 0:
        lo, hi = range_ if range_ is not None else (None, None)
        hi = float(lam.max()) if hi is None else hi
        if log:
            lo = float(lam[lam > 0].min()) if lo is None else lo
            edges = np.geomspace(lo, hi, int(bins) + 1)
        else:
            lo = 0.0 if lo is None else lo
            if hi <= lo:
                hi = lo + 1.0
            edges = np.linspace(lo, hi, int(bins) + 1)
    else:
        edges = np.asarray(bins, dtype=float)
    if not np.all(np.diff(edges) > 0):
        raise ValueError("bin edges must be strictly increasing")
    counts, _ = np.histogram(lam, bins=edges)
    total = counts.sum()
    if total == 0:
        raise ValueError("no eigenvalue falls inside the bins")
    return EsdHistogram(edges, counts / total)


def ks_distance(samples, cdf, window=None) -> float:
    """Sup distance between the empirical CDF of ``samples`` and ``cdf``.

    With ``window=(a, b)`` the supremum is restricted to ``[a, b]`` while the
    empirical CDF still counts every sample.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if window is not None:
        a, b = window
        idx = np.flatnonzero((x >= a) & (x <= b))
        pts = np.concatenate([[a], x[idx], [b]])
    else:
        pts = x
    f = np.asarray(cdf(pts), dtype=float)
    right = np.searchsorted(x, pts, side="right") / n
    left = np.searchsorted(x, pts, side="left") / n
    return float(max(np.max(np.abs(right - f)), np.max(np.abs(left - f))))
