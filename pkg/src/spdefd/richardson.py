"""Extrapolation weights, mesh-ladder combination, and order estimation.

Extrapolation forms the weighted average sum_j beta_j v^{h/2^j} whose weights
solve a Vandermonde system: the row sums force sum_j beta_j = 1 while the
remaining rows cancel the leading error powers.  Base 2 cancels h, h^2, ...
(one-sided schemes); base 4 cancels h^2, h^4, ...  and is the right ladder
for symmetric schemes, whose odd-power error terms vanish identically.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .grids import GridField, composed_difference, grid_norms, subsample
from .stepper import Trajectory

MAX_LEVEL = 12


class ExtrapolationError(ValueError):
    """Mismatched ladders, unsupported levels, or bad order data."""


@dataclass(frozen=True)
class RichardsonWeights:
    """Weights beta_0..beta_k for meshes h, h/2, ..., h/2^k."""

    level: int
    base: int
    beta: np.ndarray

    def __post_init__(self):
        if self.beta.shape != (self.level + 1,):
            raise ExtrapolationError("weight vector has wrong length")

    def identity_residual(self) -> float:
        """Max violation of sum beta_j = 1 and sum beta_j base^{-ij} = 0."""
        worst = abs(float(np.sum(self.beta)) - 1.0)
        for i in range(1, self.level + 1):
            powers = float(self.base) ** (-i * np.arange(self.level + 1))
            worst = max(worst, abs(float(self.beta @ powers)))
        return worst


def vandermonde_weights(k: int, base: int) -> RichardsonWeights:
    """Solve the (k+1) x (k+1) Vandermonde system V beta = e_1 with
    V_ij = base^{-(i-1)(j-1)} by direct elimination with partial pivoting.

    Levels above 12 are rejected: the system's conditioning degrades and the
    weights would silently lose precision.
    """
    if k < 0:
        raise ExtrapolationError("extrapolation level must be >= 0")
    if k > MAX_LEVEL:
        raise ExtrapolationError(f"extrapolation level {k} exceeds the "
                                 f"conditioning guard ({MAX_LEVEL})")
    if base not in (2, 4):
        raise ExtrapolationError("base must be 2 or 4")
    i, j = np.meshgrid(np.arange(k + 1), np.arange(k + 1), indexing="ij")
    V = float(base) ** (-(i * j).astype(float))
    e1 = np.zeros(k + 1)
    e1[0] = 1.0
    beta = np.linalg.solve(V, e1)
    w = RichardsonWeights(level=k, base=base, beta=beta)
    if w.identity_residual() > 1e-12:
        raise ExtrapolationError("weight identities violated after solve")
    return w


def restrict_to_coarse(phi: GridField, j: int) -> GridField:
    """Restrict a field on mesh h/2^j back onto mesh h by exact sub-sampling
    at the coincident lattice points (no interpolation)."""
    if j < 0:
        raise ExtrapolationError("refinement exponent must be >= 0")
    return subsample(phi, 2 ** j)


def _check_ladder(solutions, weights):
    if len(solutions) != weights.level + 1:
        raise ExtrapolationError(
            f"need {weights.level + 1} trajectories for level {weights.level}, "
            f"got {len(solutions)}")
    coarse = solutions[0]
    for j, traj in enumerate(solutions):
        if traj.n != coarse.n or abs(traj.tau - coarse.tau) > 1e-14 * coarse.tau:
            raise ExtrapolationError("trajectories do not share the time grid")
        expect = tuple(n * 2 ** j for n in coarse.grid.shape)
        if traj.grid.shape != expect:
            raise ExtrapolationError(
                f"ladder rung {j} has shape {traj.grid.shape}, expected {expect}")


def richardson_combine(solutions, weights: RichardsonWeights) -> Trajectory:
    """Combine trajectories at meshes h, h/2, ..., h/2^k into one trajectory
    on the coarsest grid, per time step."""
    _check_ladder(solutions, weights)
    coarse = solutions[0]
    fields = []
    for i in range(coarse.n + 1):
        acc = np.zeros(coarse.grid.shape)
        for j, traj in enumerate(solutions):
            acc += weights.beta[j] * restrict_to_coarse(traj[i], j).values
        fields.append(GridField(coarse.grid, acc))
    meta = dict(coarse.meta)
    meta.update(kind="extrapolated", level=weights.level, base=weights.base)
    return Trajectory(grid=coarse.grid, tau=coarse.tau, fields=fields, meta=meta)


def extrapolate_derivative(solutions, lams, weights: RichardsonWeights) -> Trajectory:
    """Composed one-sided difference (at the coarse mesh) of the combined
    trajectory; by linearity this equals combining the differenced rungs."""
    combined = richardson_combine(solutions, weights)
    if not lams:
        return combined
    h = combined.grid.h
    fields = [composed_difference(f, lams, h) for f in combined.fields]
    meta = dict(combined.meta)
    meta.update(derivative=[tuple(int(c) for c in lam) for lam in lams])
    return Trajectory(grid=combined.grid, tau=combined.tau, fields=fields,
                      meta=meta)


EXACT_FLOOR = 1e-14


@dataclass
class ConvergenceReport:
    """Per-mesh errors with pairwise and least-squares order estimates."""

    hs: list
    sup_errors: list
    l2h_errors: list | None
    pairwise_orders: list
    ls_order: float
    expected_order: float | None = None
    tolerance: float | None = None
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        if self.expected_order is None:
            return True
        tol = self.tolerance if self.tolerance is not None else 0.25
        return abs(self.ls_order - self.expected_order) <= tol

    def csv_rows(self):
        """Rows for the documented schema
        (h, sup_error, l2h_error, pairwise_order, ls_order, expected_order, pass)."""
        rows = []
        for idx, h in enumerate(self.hs):
            l2h = (self.l2h_errors[idx] if self.l2h_errors is not None
                   else float("nan"))
            pairwise = (self.pairwise_orders[idx - 1] if idx >= 1
                        else float("nan"))
            rows.append((h, self.sup_errors[idx], l2h, pairwise, self.ls_order,
                         float("nan") if self.expected_order is None
                         else self.expected_order,
                         int(self.passed)))
        return rows


def estimate_order(hs, errors, expected_order: float | None = None,
                   tolerance: float | None = None,
                   l2h_errors=None) -> ConvergenceReport:
    """Pairwise orders log2(e_i / e_{i+1}) and the least-squares slope of
    log e against log h over a halving mesh ladder.

    Errors at or below 1e-14 count as exactly converged; they are excluded
    from the fit and noted.  Zero or negative errors are rejected.
    """
    hs = [float(h) for h in hs]
    errors = [float(e) for e in errors]
    if len(hs) != len(errors) or len(hs) < 2:
        raise ExtrapolationError("need matching h and error lists, length >= 2")
    for a, b in zip(hs, hs[1:]):
        if abs(b - a / 2.0) > 1e-12 * a:
            raise ExtrapolationError("mesh ladder must halve at every rung")
    if any(e < 0 or e == 0 for e in errors):
        raise ExtrapolationError("errors must be positive")

    notes = []
    keep = [i for i, e in enumerate(errors) if e > EXACT_FLOOR]
    for i in set(range(len(errors))) - set(keep):
        notes.append(f"rung h={hs[i]:g} converged exactly "
                     f"(error {errors[i]:.2e} <= {EXACT_FLOOR:g}); excluded")

    pairwise = [math.log2(errors[i] / errors[i + 1])
                for i in range(len(errors) - 1)]
    if len(keep) >= 2:
        logs_h = np.log([hs[i] for i in keep])
        logs_e = np.log([errors[i] for i in keep])
        ls_order = float(np.polyfit(logs_h, logs_e, 1)[0])
    else:
        ls_order = float("nan")
        notes.append("too few usable rungs for a least-squares fit")
    return ConvergenceReport(hs=hs, sup_errors=errors, l2h_errors=l2h_errors,
                             pairwise_orders=pairwise, ls_order=ls_order,
                             expected_order=expected_order,
                             tolerance=tolerance, notes=notes)
