"""Expansion operators, the corrector system, and the expansion residual.

The solution of the fully discrete scheme expands around the time-scheme
solution in powers of the mesh width,

    v^h_i = sum_{j<=k} (h^j / j!) v^(j)_i + remainder,

where v^(0) is the reference time-scheme solution and the corrector fields
v^(1..k) solve a lower-triangular system of time-discretized equations whose
forcing is built from the operators obtained by differentiating the discrete
operators with respect to h at h = 0.  For symmetric schemes (no one-sided
terms) every odd-order operator vanishes, hence so do the odd correctors;
that is what makes base-4 extrapolation possible.

Spatial derivatives here act on smooth reference-grid fields and are realized
by Fourier spectral differentiation, which is exact for band-limited data; a
mode-energy check rejects fields the reference grid cannot resolve.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .grids import GridField, TorusGrid, grid_norms
from .problems import DifferenceScheme, DifferentialProblem
from .stepper import (
    FiniteDifferenceOperators,
    SchemeSampler,
    SpectralModeError,
    SpectralOperators,
    Trajectory,
    _check_increments,
    _empty_increments,
    _frequency_mesh,
    run_reference_time_scheme,
)

RESOLUTION_ENERGY_TOL = 1e-10


class ResolutionError(ValueError):
    """Field carries energy at the highest retained modes; the reference grid
    cannot resolve the spectral derivatives requested."""


def expansion_constants(p: int, r: int) -> tuple[float, float]:
    """Constants (B_p, A_{p,r}) of the h-derivatives of the differences at 0.

    B_p is 1 for even p and 0 for odd p.  A_{p,r} is p!/((r+1)!(p-r+1)!) when
    both p and r are even, else 0.
    """
    if p < 0 or r < 0:
        raise ValueError("expansion constants need nonnegative orders")
    if r > p:
        raise ValueError(f"constant A_{{p,r}} needs r <= p, got p={p}, r={r}")
    B = 1.0 if p % 2 == 0 else 0.0
    if p % 2 == 0 and r % 2 == 0:
        A = math.factorial(p) / (math.factorial(r + 1) * math.factorial(p - r + 1))
    else:
        A = 0.0
    return B, A


def binomial(p: int, j: int) -> int:
    return math.comb(p, j)


def _mode_energy_fraction(values: np.ndarray) -> float:
    """Energy fraction carried by the highest retained modes per axis."""
    hat = np.fft.fftn(values)
    power = np.abs(hat) ** 2
    total = float(power.sum())
    if total == 0.0:
        return 0.0
    mask = np.zeros(values.shape, dtype=bool)
    for axis, n in enumerate(values.shape):
        k = np.abs(np.fft.fftfreq(n) * n)
        top = k >= (n // 2 - 1)
        shape = [1] * values.ndim
        shape[axis] = n
        mask |= top.reshape(shape)
    return float(power[mask].sum()) / total


def check_resolution(phi: GridField, tol: float = RESOLUTION_ENERGY_TOL) -> None:
    frac = _mode_energy_fraction(phi.values)
    if frac > tol:
        raise ResolutionError(
            f"highest retained modes carry {frac:.2e} of the field energy "
            f"(limit {tol:g}); refine the reference grid")


class _SpectralDerivatives:
    """Repeated directional derivatives of one field via the FFT."""

    def __init__(self, phi: GridField):
        check_resolution(phi)
        self.grid = phi.grid
        self.hat = np.fft.fftn(phi.values)
        self.freq = _frequency_mesh(phi.grid)

    def _factor(self, lam) -> np.ndarray:
        acc = np.zeros(self.grid.shape)
        for c, xi in zip(lam, self.freq):
            if c:
                acc = acc + c * xi
        return 1j * acc

    def directional(self, lam, order: int) -> np.ndarray:
        if order == 0:
            return np.real(np.fft.ifftn(self.hat))
        return np.real(np.fft.ifftn(self._factor(lam) ** order * self.hat))

    def mixed(self, lam, order_lam: int, mu, order_mu: int) -> np.ndarray:
        mult = self._factor(lam) ** order_lam * self._factor(mu) ** order_mu
        return np.real(np.fft.ifftn(mult * self.hat))


def corrector_operator_L(p: int, scheme: DifferenceScheme, phi: GridField,
                         i: int, sampler: SchemeSampler | None = None) -> GridField:
    """p-th h-derivative of the discrete operator L^h at h = 0, applied to a
    smooth field with spectral accuracy.

    p = 0 is the continuous operator itself (by the consistency identities);
    odd p vanishes identically for schemes without one-sided terms.
    """
    if p < 0:
        raise ValueError("operator order must be >= 0")
    if sampler is None:
        sampler = SchemeSampler(scheme, phi.grid)
    arrays = sampler.arrays(i)
    der = _SpectralDerivatives(phi)
    out = np.zeros(phi.grid.shape)
    B_p, _ = expansion_constants(p, 0)

    if p == 0:
        for (lam, mu), coef in arrays["a"].items():
            lam_nz, mu_nz = any(lam), any(mu)
            if lam_nz and mu_nz:
                out += coef * der.mixed(lam, 1, mu, 1)
            elif lam_nz != mu_nz:
                out += coef * der.directional(lam if lam_nz else mu, 1)
            else:
                out += coef * phi.values
        for lam, coef in arrays["p"].items():
            out += coef * der.directional(lam, 1)
        for lam, coef in arrays["q"].items():
            out -= coef * der.directional(lam, 1)
        return GridField(phi.grid, out)

    for (lam, mu), coef in arrays["a"].items():
        lam_nz, mu_nz = any(lam), any(mu)
        if lam_nz and mu_nz:
            for j in range(0, p + 1):
                _, A = expansion_constants(p, j)
                if A:
                    out += A * coef * der.mixed(lam, j + 1, mu, p - j + 1)
        elif lam_nz != mu_nz:
            # cross terms a^{lam,0} + a^{0,mu}: one centred difference left
            if B_p:
                vec = lam if lam_nz else mu
                out += (B_p / (p + 1)) * coef * der.directional(vec, p + 1)
        # the zero-zero term is h-independent: no contribution for p >= 1
    for lam, coef in arrays["p"].items():
        out += coef / (p + 1) * der.directional(lam, p + 1)
    for lam, coef in arrays["q"].items():
        out += ((-1) ** (p + 1) / (p + 1)) * coef * der.directional(lam, p + 1)
    return GridField(phi.grid, out)


def corrector_operator_M(p: int, rho: int, scheme: DifferenceScheme,
                         phi: GridField, i: int,
                         sampler: SchemeSampler | None = None) -> GridField:
    """p-th h-derivative of M^{h,rho} at h = 0; identically zero for odd p."""
    if p < 0:
        raise ValueError("operator order must be >= 0")
    if not 1 <= rho <= scheme.d1:
        raise ValueError(f"driver index {rho} out of range 1..{scheme.d1}")
    B_p, _ = expansion_constants(p, 0)
    if B_p == 0.0:
        return phi.grid.zeros()
    if sampler is None:
        sampler = SchemeSampler(scheme, phi.grid)
    arrays = sampler.arrays(i)
    der = _SpectralDerivatives(phi)
    out = np.zeros(phi.grid.shape)
    for (lam, r), coef in arrays["b"].items():
        if r != rho:
            continue
        if any(lam):
            out += (1.0 / (p + 1)) * coef * der.directional(lam, p + 1)
        elif p == 0:
            out += coef * phi.values
        # the zero-vector term is h-independent: nothing for p >= 1
    return GridField(phi.grid, out)


@dataclass
class CorrectorSet:
    """Reference trajectory v^(0) and corrector trajectories v^(1..k)."""

    grid: TorusGrid
    tau: float
    k: int
    trajectories: list

    def __getitem__(self, j: int) -> Trajectory:
        return self.trajectories[j]

    @property
    def n(self) -> int:
        return self.trajectories[0].n


def minimum_resolution(k: int) -> int:
    """Heuristic points-per-axis for derivatives up to order 3k + 2."""
    return 8 * (3 * k + 2)


def run_corrector_system(k: int, problem: DifferentialProblem,
                         scheme: DifferenceScheme, refgrid: TorusGrid, n: int,
                         increments=None, reference_mode: str = "spectral-const-coef",
                         refine: int = 3) -> CorrectorSet:
    """Solve the corrector system for v^(1..k) above the reference run v^(0).

    Each corrector satisfies the implicit recursion driven by the operators
    of lower order applied to the already-known correctors: the L-side forcing
    enters at the new index i, the M-side forcing at i-1, both weighted by
    binomial coefficients; initial data are zero.  The implicit solve reuses
    the reference realization of (I - tau L): exact per mode for constant
    coefficients, the fine-lattice surrogate otherwise.
    """
    if k < 0:
        raise ValueError("expansion order k must be >= 0")
    if min(refgrid.shape) < minimum_resolution(k):
        warnings.warn(
            f"reference grid has {min(refgrid.shape)} points per axis; "
            f"the heuristic floor for k={k} is {minimum_resolution(k)} "
            "(corrector derivatives may be under-resolved)",
            RuntimeWarning, stacklevel=2)
    tau = problem.T / n
    if increments is None:
        if problem.d1 > 0:
            raise ValueError("stochastic problem needs Wiener increments")
        increments = _empty_increments(n, tau)
    _check_increments(increments, n, tau, problem.d1)

    v0 = run_reference_time_scheme(problem, refgrid, n, increments,
                                   mode=reference_mode, refine=refine)
    trajectories = [v0]
    if reference_mode == "spectral-const-coef":
        ops = SpectralOperators(problem, refgrid, tau)
    else:
        ops = FiniteDifferenceOperators(problem, refgrid, tau)
    sampler = SchemeSampler(scheme, refgrid)

    for p in range(1, k + 1):
        v = refgrid.zeros()
        fields = [v]
        for i in range(1, n + 1):
            forcing = np.zeros(refgrid.shape)
            for j in range(1, p + 1):
                C = binomial(p, j)
                forcing += C * corrector_operator_L(
                    j, scheme, trajectories[p - j][i], i, sampler).values
            rhs = v.values + tau * forcing
            for rho in range(1, problem.d1 + 1):
                xi = increments.step(i)[rho - 1]
                if xi == 0.0:
                    continue
                stoch = ops.apply_M(v, rho, i - 1).values
                for j in range(1, p + 1):
                    C = binomial(p, j)
                    stoch = stoch + C * corrector_operator_M(
                        j, rho, scheme, trajectories[p - j][i - 1], i - 1,
                        sampler).values
                rhs = rhs + stoch * xi
            v = ops.solve_implicit(GridField(refgrid, rhs), i)
            fields.append(v)
        trajectories.append(Trajectory(
            grid=refgrid, tau=tau, fields=fields,
            meta={"kind": "corrector", "order": p, "problem": problem.name}))
    return CorrectorSet(grid=refgrid, tau=tau, k=k, trajectories=trajectories)


@dataclass
class ResidualReport:
    """Norm history of the expansion remainder over the time grid."""

    sup_per_step: np.ndarray
    l2h_per_step: np.ndarray

    @property
    def max_sup(self) -> float:
        return float(np.max(self.sup_per_step))

    @property
    def max_l2h(self) -> float:
        return float(np.max(self.l2h_per_step))


def expansion_residual(vh: Trajectory, cs: CorrectorSet, h: float | None = None,
                       k: int | None = None) -> ResidualReport:
    """Remainder v^h_i - sum_{j<=k} (h^j/j!) v^(j)_i on the trajectory's grid.

    The corrector fields live on the reference grid, which must refine the
    trajectory's grid by one common integer factor per axis; restriction is
    exact sub-sampling.
    """
    if k is None:
        k = cs.k
    if k > cs.k:
        raise ValueError(f"corrector set only carries orders up to {cs.k}")
    if h is None:
        h = vh.grid.h
    if vh.n != cs.n:
        raise ValueError("trajectory and correctors use different time grids")
    factors = set()
    for a, b in zip(cs.grid.shape, vh.grid.shape):
        if a % b:
            raise ValueError(
                f"reference grid shape {cs.grid.shape} is not a multiple "
                f"refinement of {vh.grid.shape}")
        factors.add(a // b)
    if len(factors) != 1:
        raise ValueError("reference grid uses different refinement factors "
                         "per axis")
    factor = factors.pop()

    restricted = [cs[j].restricted(factor) if factor > 1 else cs[j]
                  for j in range(k + 1)]
    sups = np.zeros(vh.n + 1)
    l2hs = np.zeros(vh.n + 1)
    for i in range(vh.n + 1):
        acc = vh[i].values.copy()
        for j in range(k + 1):
            acc -= (h ** j / math.factorial(j)) * restricted[j][i].values
        sup, l2h = grid_norms(GridField(vh.grid, acc))
        sups[i] = sup
        l2hs[i] = l2h
    return ResidualReport(sup_per_step=sups, l2h_per_step=l2hs)


def export_corrector_set(cs: CorrectorSet, directory, basename: str,
                         fmt: str = "csv") -> list:
    """Write one trajectory file per expansion order; returns the paths."""
    from pathlib import Path

    from .stepper import export_trajectory_binary, export_trajectory_csv

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for j, traj in enumerate(cs.trajectories):
        if fmt == "csv":
            path = directory / f"{basename}_order{j}.csv"
            export_trajectory_csv(traj, path)
        elif fmt == "binary":
            path = directory / f"{basename}_order{j}.bin"
            export_trajectory_binary(traj, path)
        else:
            raise ValueError(f"unknown export format {fmt!r}")
        paths.append(path)
    return paths
