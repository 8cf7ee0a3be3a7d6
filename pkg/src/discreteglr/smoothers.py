"""Bin and local-polynomial smoothers, exposed as operators on n-vectors.

The bin smoother replaces each entry by the mean of its level group.  The
local-polynomial smoother returns, at every observed covariate value, the
intercept of a kernel-weighted polynomial fit in powers of ``z_i - z``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import BandwidthError

KERNELS = ("gaussian", "epanechnikov")

# above this many points the equivalent-kernel weights are recomputed on
# every application instead of being cached (n x n doubles)
WEIGHT_CACHE_MAX_N = 4000
_BLOCK_ELEMENTS = 4_000_000
_SINGULAR_TOL = 1e-12


def _kernel(u: np.ndarray, kind: str) -> np.ndarray:
    if kind == "gaussian":
        return np.exp(-0.5 * u * u) / math.sqrt(2.0 * math.pi)
    if kind == "epanechnikov":
        return np.where(np.abs(u) < 1.0, 0.75 * (1.0 - u * u), 0.0)
    raise ValueError(f"unknown kernel {kind!r}; choose from {KERNELS}")


@dataclass(frozen=True)
class BinSmoother:
    """Group-mean smoother for a discrete or categorical variable."""

    codes: np.ndarray
    k: int | None = None

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=np.int64)
        k = int(codes.max()) + 1 if self.k is None else int(self.k)
        counts = np.bincount(codes, minlength=k)
        if np.any(counts == 0):
            raise ValueError("every level must be observed at least once")
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "_counts", counts)

    @property
    def n(self) -> int:
        return self.codes.size

    def level_means(self, target) -> np.ndarray:
        return np.bincount(self.codes, weights=np.asarray(target, dtype=float), minlength=self.k) / self._counts

    def apply(self, target) -> np.ndarray:
        return self.level_means(target)[self.codes]

    def centered_apply(self, target) -> np.ndarray:
        out = self.apply(target)
        return out - out.mean()


@dataclass(frozen=True)
class LocalPolySmoother:
    """Local polynomial smoother of degree ``degree`` evaluated at the data points.

    Degree 0 is the Nadaraya-Watson estimator.
    """

    z: np.ndarray
    degree: int = 0
    bandwidth: float | None = None
    kernel: str = "gaussian"
    _weights: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float).ravel()
        object.__setattr__(self, "z", z)
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}; choose from {KERNELS}")
        if self.degree < 0:
            raise ValueError("degree must be non-negative")
        h = default_bandwidth(z) if self.bandwidth is None else float(self.bandwidth)
        if not h > 0:
            raise ValueError("bandwidth must be positive")
        object.__setattr__(self, "bandwidth", h)
        if z.size <= WEIGHT_CACHE_MAX_N:
            object.__setattr__(self, "_weights", self._weight_rows(0, z.size))

    @property
    def n(self) -> int:
        return self.z.size

    def _weight_rows(self, start: int, stop: int) -> np.ndarray:
        """Equivalent-kernel weights for evaluation points ``z[start:stop]``."""
        h = self.bandwidth
        d = self.degree
        diff = (self.z[None, :] - self.z[start:stop, None]) / h  # scaled z_i - z
        kw = _kernel(diff, self.kernel) / h
        if d == 0:
            tot = kw.sum(axis=1)
            if np.any(tot <= _SINGULAR_TOL * kw.max(initial=0.0)) or np.any(tot <= 0):
                raise BandwidthError(
                    f"bandwidth {h:.4g} leaves points without kernel weight; widen the bandwidth"
                )
            return kw / tot[:, None]
        powers = diff[:, :, None] ** np.arange(d + 1)  # (m, n, d+1)
        moments = np.einsum("mi,mia,mib->mab", kw, powers, powers)
        scale = np.abs(moments).max(axis=(1, 2))
        eig = np.linalg.eigvalsh(moments)
        if np.any(eig[:, 0] <= _SINGULAR_TOL * scale):
            raise BandwidthError(
                f"local weighted normal matrix is singular at bandwidth {h:.4g}; widen the bandwidth"
            )
        # first row of (Z'KZ)^-1 Z'K; the basis is scaled by h, which leaves the intercept unchanged
        e1 = np.zeros((moments.shape[0], d + 1))
        e1[:, 0] = 1.0
        coef = np.linalg.solve(moments, e1[:, :, None])[:, :, 0]
        return np.einsum("ma,mia->mi", coef, powers) * kw

    def apply(self, target) -> np.ndarray:
        v = np.asarray(target, dtype=float)
        if self._weights is not None:
            return self._weights @ v
        out = np.empty(self.n)
        block = max(1, _BLOCK_ELEMENTS // (self.n * (self.degree + 1)))
        for start in range(0, self.n, block):
            stop = min(start + block, self.n)
            out[start:stop] = self._weight_rows(start, stop) @ v
        return out

    def centered_apply(self, target) -> np.ndarray:
        out = self.apply(target)
        return out - out.mean()


def default_bandwidth(z) -> float:
    """Rule-of-thumb bandwidth ``1.06 * s * n**(-1/5)`` (s: sample standard deviation)."""
    z = np.asarray(z, dtype=float).ravel()
    if z.size < 2:
        raise ValueError("need at least two observations for a bandwidth")
    s = float(np.std(z, ddof=1))
    if not s > 0:
        raise ValueError("cannot choose a bandwidth for a constant column")
    return 1.06 * s * z.size ** (-0.2)
