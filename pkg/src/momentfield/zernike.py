"""Zernike polynomials on a discretized unit disk.

Evaluates the radial polynomials, builds the 15 basis planes of radial
order <= 4 over a pixel grid mapped onto the unit disk, and computes and
inverts the corresponding image moments. The built planes are
orthonormalized against the discrete inner product (symmetric Loewdin
orthogonalization after per-plane rescaling), so moment extraction
followed by reconstruction is an exact projection on the grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np

__all__ = [
    "ZernikeIndex",
    "DiskGrid",
    "ZernikeBasis",
    "ZernikeCoeffs",
    "index_set",
    "radial_poly",
    "zernike_eval",
    "make_disk_grid",
    "build_basis",
    "moments",
    "reconstruct",
]


@dataclass(frozen=True)
class ZernikeIndex:
    """Radial order n, azimuthal order m, and cosine/sine parity."""

    n: int
    m: int
    parity: str  # "even" -> cosine, "odd" -> sine

    def __post_init__(self):
        if self.n < 0 or self.m < 0 or self.m > self.n:
            raise ValueError(f"invalid index (n={self.n}, m={self.m}): need 0 <= m <= n")
        if (self.n - self.m) % 2 != 0:
            raise ValueError(f"invalid index (n={self.n}, m={self.m}): n - m must be even")
        if self.parity not in ("even", "odd"):
            raise ValueError(f"parity must be 'even' or 'odd', got {self.parity!r}")
        if self.parity == "odd" and self.m == 0:
            raise ValueError("odd (sine) parity requires m > 0")


def index_set(order_cap=4):
    """All valid indices with n <= order_cap, ordered (n, m, even<odd).

    The default cap of 4 yields exactly 15 indices.
    """
    out = []
    for n in range(order_cap + 1):
        for m in range(n % 2, n + 1, 2):
            out.append(ZernikeIndex(n, m, "even"))
            if m > 0:
                out.append(ZernikeIndex(n, m, "odd"))
    return out


def radial_poly(n, m, r):
    """Radial polynomial R_n^m(r); zero whenever n - m is odd.

    Accepts scalar or array ``r`` in [0, 1].
    """
    if m < 0 or n < 0 or m > n:
        raise ValueError(f"invalid orders (n={n}, m={m}): need 0 <= m <= n")
    r = np.asarray(r, dtype=float)
    if np.any(r < 0) or np.any(r > 1):
        raise ValueError("radius must lie in [0, 1]")
    if (n - m) % 2 != 0:
        return np.zeros_like(r)[()] if r.ndim == 0 else np.zeros_like(r)
    out = np.zeros_like(r)
    for k in range((n - m) // 2 + 1):
        coeff = (
            (-1) ** k
            * factorial(n - k)
            / (factorial(k) * factorial((n + m) // 2 - k) * factorial((n - m) // 2 - k))
        )
        out = out + coeff * r ** (n - 2 * k)
    return out[()] if out.ndim == 0 else out


def zernike_eval(idx, r, theta):
    """Basis function value: R_n^m(r) times cos(m theta) or sin(m theta)."""
    rad = radial_poly(idx.n, idx.m, r)
    theta = np.asarray(theta, dtype=float)
    if idx.parity == "even":
        return rad * np.cos(idx.m * theta)
    return rad * np.sin(idx.m * theta)


@dataclass(frozen=True)
class DiskGrid:
    """Square pixel grid mapped onto the unit disk.

    Pixel (i, j) of a size x size grid has center
    x = (2j + 1 - size)/size, y = (2i + 1 - size)/size, so the cells tile
    [-1, 1]^2 exactly and each carries area weight (2/size)^2. ``mask``
    marks centers inside the disk; the masked cell weights sum to pi in
    the limit.
    """

    size: int
    r: np.ndarray
    theta: np.ndarray
    mask: np.ndarray
    cell_weight: float


def make_disk_grid(size):
    if size < 5 or size % 2 == 0:
        raise ValueError(f"grid size must be odd and >= 5, got {size}")
    c = np.arange(size)
    x = (2 * c + 1 - size) / size
    xx, yy = np.meshgrid(x, x)
    r = np.hypot(xx, yy)
    theta = np.mod(np.arctan2(yy, xx), 2.0 * np.pi)
    return DiskGrid(size=size, r=r, theta=theta, mask=r <= 1.0, cell_weight=(2.0 / size) ** 2)


@dataclass(frozen=True)
class ZernikeBasis:
    """Evaluated, discretely orthonormal basis planes over a disk grid.

    ``values`` has shape (count, size, size) and is zero outside the disk
    mask; ``norms`` records the raw per-plane discrete norms that were
    divided out before orthogonalization.
    """

    grid: DiskGrid
    indices: tuple
    values: np.ndarray
    norms: np.ndarray

    @property
    def count(self):
        return len(self.indices)


@lru_cache(maxsize=16)
def _build_basis_cached(order_cap, grid_size):
    grid = make_disk_grid(grid_size)
    indices = tuple(index_set(order_cap))
    w = grid.cell_weight
    planes = np.empty((len(indices), grid_size, grid_size))
    norms = np.empty(len(indices))
    for i, idx in enumerate(indices):
        p = np.where(grid.mask, zernike_eval(idx, np.minimum(grid.r, 1.0), grid.theta), 0.0)
        norms[i] = np.sqrt((p * p).sum() * w)
        planes[i] = p / norms[i]
    # Rescaling alone leaves O(1e-3) cross terms from the disk quadrature;
    # the symmetric orthogonalization removes them while staying closest to
    # the raw planes and commuting with the grid's exact 90-degree rotation.
    flat = planes.reshape(len(indices), -1)
    gram = (flat * w) @ flat.T
    evals, evecs = np.linalg.eigh(gram)
    mix = (evecs / np.sqrt(evals)) @ evecs.T
    planes = (mix @ flat).reshape(planes.shape)
    planes.setflags(write=False)
    norms.setflags(write=False)
    return ZernikeBasis(grid=grid, indices=indices, values=planes, norms=norms)


def build_basis(order_cap=4, grid_size=15):
    """Evaluate and orthonormalize all basis planes with n <= order_cap."""
    if grid_size < 5 or grid_size % 2 == 0:
        raise ValueError(f"grid size must be odd and >= 5, got {grid_size}")
    if order_cap < 0:
        raise ValueError("order cap must be non-negative")
    return _build_basis_cached(order_cap, grid_size)


@dataclass(frozen=True)
class ZernikeCoeffs:
    """Coefficient vector aligned with a basis' index order."""

    alpha: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float)
        if a.ndim != 1:
            raise ValueError("coefficients must be a flat vector")
        if not np.all(np.isfinite(a)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "alpha", a)


def moments(patch, basis):
    """Project a patch onto the basis: weighted discrete inner products."""
    patch = np.asarray(patch, dtype=float)
    if patch.shape != (basis.grid.size, basis.grid.size):
        raise ValueError(
            f"patch shape {patch.shape} does not match basis grid "
            f"({basis.grid.size}, {basis.grid.size})"
        )
    flat = basis.values.reshape(basis.count, -1)
    alpha = (flat * basis.grid.cell_weight) @ patch.ravel()
    return ZernikeCoeffs(alpha=alpha)


def reconstruct(coeffs, basis):
    """Sum of basis planes weighted by the coefficients."""
    alpha = coeffs.alpha if isinstance(coeffs, ZernikeCoeffs) else np.asarray(coeffs, dtype=float)
    if alpha.shape != (basis.count,):
        raise ValueError(f"expected {basis.count} coefficients, got shape {alpha.shape}")
    return np.tensordot(alpha, basis.values, axes=1)


def moment_kernels(basis):
    """Per-plane convolution taps: plane values times the cell weight.

    Correlating a patch with tap plane i yields the i-th moment, which is
    what the moment-convolution layers consume.
    """
    return basis.values * basis.grid.cell_weight
