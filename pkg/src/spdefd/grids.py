"""Periodic lattice grids, grid functions, shift/difference operators, and norms.

The spatial domain is a d-dimensional torus sampled on a uniform lattice with
one common mesh width ``h`` for every axis.  All difference operators are
built from the shift ``(T phi)(x) = phi(x + h*lam)`` with periodic wraparound,
so every operator identity (commutation, summation by parts, skew-adjointness
of centred differences) holds exactly, with no boundary treatment.

Conventions:

* ``forward_difference`` is ``(T_{h,lam} - I)/h``; with ``sign=-1`` it is the
  backward-form ``(T_{-h,lam} - I)/(-h)``.
* ``symmetric_difference`` is ``(T_{h,lam} - T_{-h,lam})/(2h)``.
* The zero stencil vector maps to the identity operator in all of the above.
"""

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np


class GridError(ValueError):
    """Invalid grid construction or grid/field mismatch."""


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic lattice: points (j_1*h, ..., j_d*h), indices mod N_a."""

    dim: int
    h: float
    shape: tuple[int, ...]

    def __post_init__(self):
        if self.dim < 1:
            raise GridError("grid dimension must be >= 1")
        if len(self.shape) != self.dim:
            raise GridError("points-per-axis must have one entry per dimension")
        if any(n < 2 for n in self.shape):
            raise GridError("need at least 2 points per axis")
        if not (self.h > 0):
            raise GridError("mesh width must be positive")

    @property
    def periods(self) -> tuple[float, ...]:
        return tuple(n * self.h for n in self.shape)

    @property
    def npoints(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def coordinates(self) -> np.ndarray:
        """Array of shape ``shape + (dim,)`` with the lattice point coordinates."""
        axes = [self.h * np.arange(n) for n in self.shape]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def field(self, values) -> "GridField":
        return GridField(self, np.asarray(values, dtype=float))

    def zeros(self) -> "GridField":
        return GridField(self, np.zeros(self.shape))

    def constant(self, c: float) -> "GridField":
        return GridField(self, np.full(self.shape, float(c)))

    def sample(self, fn) -> "GridField":
        """Evaluate ``fn`` on the lattice; ``fn`` receives the coordinate array."""
        return GridField(self, np.asarray(fn(self.coordinates), dtype=float))

    def refined(self, factor: int) -> "TorusGrid":
        """Grid with the same periods and ``factor`` times as many points per axis."""
        if factor < 1:
            raise GridError("refinement factor must be >= 1")
        return TorusGrid(self.dim, self.h / factor,
                         tuple(n * factor for n in self.shape))


def make_torus_grid(d: int, periods, points) -> TorusGrid:
    """Build an isotropic torus grid from per-axis periods and point counts.

    The mesh width is ``periods[0] / points[0]`` and must agree with
    ``periods[a] / points[a]`` on every axis to 1e-14 relative.
    """
    periods = [float(p) for p in np.atleast_1d(periods)]
    points = [int(n) for n in np.atleast_1d(points)]
    if d < 1:
        raise GridError("grid dimension must be >= 1")
    if len(periods) != d or len(points) != d:
        raise GridError("periods and points must each have d entries")
    if any(p <= 0 for p in periods):
        raise GridError("periods must be positive")
    if any(n < 2 for n in points):
        raise GridError("need at least 2 points per axis")
    h = periods[0] / points[0]
    for p, n in zip(periods, points):
        if abs(p / n - h) > 1e-14 * max(abs(h), 1.0):
            raise GridError("anisotropic mesh: periods[a]/points[a] must "
                            "agree across axes")
    return TorusGrid(d, h, tuple(points))


class GridField:
    """Real-valued function sampled on a :class:`TorusGrid` (row-major values)."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: TorusGrid, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            raise GridError(f"values shape {values.shape} does not match grid "
                            f"shape {grid.shape}")
        if not np.all(np.isfinite(values)):
            raise GridError("grid field contains non-finite values")
        self.grid = grid
        self.values = values

    def copy(self) -> "GridField":
        return GridField(self.grid, self.values.copy())

    def _check_same_grid(self, other: "GridField"):
        if other.grid is not self.grid and other.grid != self.grid:
            raise GridError("fields live on different grids")

    def __add__(self, other):
        if isinstance(other, GridField):
            self._check_same_grid(other)
            return GridField(self.grid, self.values + other.values)
        return GridField(self.grid, self.values + other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, GridField):
            self._check_same_grid(other)
            return GridField(self.grid, self.values - other.values)
        return GridField(self.grid, self.values - other)

    def __rsub__(self, other):
        return GridField(self.grid, other - self.values)

    def __mul__(self, other):
        if isinstance(other, GridField):
            self._check_same_grid(other)
            return GridField(self.grid, self.values * other.values)
        return GridField(self.grid, self.values * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, GridField):
            self._check_same_grid(other)
            return GridField(self.grid, self.values / other.values)
        return GridField(self.grid, self.values / other)

    def __neg__(self):
        return GridField(self.grid, -self.values)

    def __repr__(self):
        return f"GridField(shape={self.grid.shape}, h={self.grid.h})"


@dataclass(frozen=True)
class Stencil:
    """Finite set of integer displacement vectors containing the origin."""

    vectors: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        vecs = tuple(tuple(int(c) for c in v) for v in self.vectors)
        object.__setattr__(self, "vectors", vecs)
        if not vecs:
            raise GridError("stencil must be nonempty")
        dim = len(vecs[0])
        if any(len(v) != dim for v in vecs):
            raise GridError("stencil vectors must share one dimension")
        if len(set(vecs)) != len(vecs):
            raise GridError("stencil contains duplicate vectors")
        if tuple([0] * dim) not in vecs:
            raise GridError("stencil must contain the origin")

    @property
    def dim(self) -> int:
        return len(self.vectors[0])

    @property
    def origin(self) -> tuple[int, ...]:
        return tuple([0] * self.dim)

    @property
    def nonzero(self) -> tuple[tuple[int, ...], ...]:
        return tuple(v for v in self.vectors if any(v))

    def __contains__(self, v) -> bool:
        return tuple(int(c) for c in v) in self.vectors

    def __iter__(self):
        return iter(self.vectors)


def basis_stencil(d: int) -> Stencil:
    """Origin plus the d coordinate basis vectors."""
    vecs = [tuple([0] * d)]
    for a in range(d):
        e = [0] * d
        e[a] = 1
        vecs.append(tuple(e))
    return Stencil(tuple(vecs))


def _as_int_vector(lam, dim: int) -> tuple[int, ...]:
    arr = np.atleast_1d(lam)
    if arr.shape != (dim,):
        raise GridError(f"stencil vector must have {dim} components")
    out = tuple(int(c) for c in arr)
    if any(c != f for c, f in zip(out, arr)):
        raise GridError("stencil vectors must be integer-valued")
    return out


def shift(phi: GridField, lam, s: int = 1) -> GridField:
    """Translate by ``s*h*lam`` with periodic wraparound: value permutation."""
    lam = _as_int_vector(lam, phi.grid.dim)
    if not any(lam):
        return phi
    moves = tuple(-s * c for c in lam)
    return GridField(phi.grid, np.roll(phi.values, moves,
                                       axis=tuple(range(phi.grid.dim))))


def forward_difference(phi: GridField, lam, h: float,
                       sign: int = 1) -> GridField:
    """One-sided difference ``(phi(x + sign*h*lam) - phi(x)) / (sign*h)``.

    ``lam = 0`` is the identity.  ``sign=-1`` gives the backward form used in
    the first-order upwind terms.
    """
    if h == 0:
        raise GridError("difference operators need h != 0")
    if sign not in (1, -1):
        raise GridError("sign must be +1 or -1")
    lam = _as_int_vector(lam, phi.grid.dim)
    if not any(lam):
        return phi
    shifted = shift(phi, lam, sign)
    return GridField(phi.grid, (shifted.values - phi.values) / (sign * h))


def symmetric_difference(phi: GridField, lam, h: float) -> GridField:
    """Centred difference ``(phi(x + h*lam) - phi(x - h*lam)) / (2h)``."""
    if h == 0:
        raise GridError("difference operators need h != 0")
    lam = _as_int_vector(lam, phi.grid.dim)
    if not any(lam):
        return phi
    fwd = shift(phi, lam, 1)
    bwd = shift(phi, lam, -1)
    return GridField(phi.grid, (fwd.values - bwd.values) / (2.0 * h))


def composed_difference(phi: GridField, lams, h: float) -> GridField:
    """Product of one-sided differences over the given stencil vectors.

    The factors commute, so they are applied in a canonical (sorted) order;
    this makes the result independent of the input ordering bit-for-bit.
    An empty list is the identity.
    """
    vecs = [_as_int_vector(lam, phi.grid.dim) for lam in lams]
    if not vecs:
        return phi
    if h == 0:
        raise GridError("difference operators need h != 0")
    out = phi
    for lam in sorted(vecs):
        out = forward_difference(out, lam, h)
    return out


def grid_norms(phi: GridField) -> tuple[float, float]:
    """Return ``(sup, l2h)``: max absolute value and sqrt(h^d * sum of squares)."""
    sup = float(np.max(np.abs(phi.values))) if phi.values.size else 0.0
    weight = phi.grid.h ** phi.grid.dim
    l2h = float(np.sqrt(weight * np.sum(phi.values ** 2)))
    return sup, l2h


def sup_norm(phi: GridField) -> float:
    return grid_norms(phi)[0]


def l2h_norm(phi: GridField) -> float:
    return grid_norms(phi)[1]


def subsample(phi: GridField, factor: int) -> GridField:
    """Exact restriction onto the coarser grid keeping every ``factor``-th
    point per axis (index 0 kept, so lattice points coincide)."""
    if factor < 1:
        raise GridError("subsample factor must be >= 1")
    if factor == 1:
        return phi
    grid = phi.grid
    if any(n % factor for n in grid.shape):
        raise GridError(f"points per axis {grid.shape} not divisible by {factor}")
    coarse = TorusGrid(grid.dim, grid.h * factor,
                       tuple(n // factor for n in grid.shape))
    slices = tuple(slice(None, None, factor) for _ in range(grid.dim))
    return GridField(coarse, phi.values[slices].copy())


def discrete_sobolev_norm(phi: GridField, stencil: Stencil, r: int,
                          h: float) -> float:
    """Discrete Sobolev norm summing l2h norms of all r-fold differences.

    Square root of the sum, over every r-tuple of stencil vectors, of the
    squared l2h norm of the corresponding composed one-sided difference.
    ``r = 0`` reduces to the plain l2h norm.
    """
    if r < 0:
        raise GridError("difference order r must be >= 0")
    total = 0.0
    for combo in itertools.product(stencil.vectors, repeat=r):
        total += grid_norms(composed_difference(phi, combo, h))[1] ** 2
    return float(np.sqrt(total))
