"""Discrete operators, the implicit Euler step, and the scheme runners.

``apply_L`` and ``apply_M`` evaluate the lattice operators matrix-free.  The
implicit step solves ``(I - tau L) v_i = rhs`` where the stochastic and free
terms on the right-hand side are taken explicitly at the previous index:

    v_i = v_{i-1} + (L v_i + f_i) tau + sum_rho (M^rho v_{i-1} + g^rho_{i-1}) xi^rho_i

The linear solve is a sparse LU factorization below a size threshold and a
diagonally preconditioned GMRES above it; failures surface as
:class:`SolveFailure` (the scheme is only solvable for small enough tau) and
are never papered over by regularization.

``run_reference_time_scheme`` realizes the reference solution of the
time-discretized PDE: exactly per Fourier mode when the coefficients are
constant in space, or on a finer lattice as a surrogate otherwise.
"""

import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grids import (
    GridError,
    GridField,
    TorusGrid,
    forward_difference,
    subsample,
    symmetric_difference,
)
from .problems import DifferenceScheme, DifferentialProblem, build_scheme_example1
from .wiener import BrownianIncrements, sample_increments

DIRECT_SOLVE_MAX_UNKNOWNS = 4096
ITERATIVE_RTOL = 1e-11


class SolveFailure(RuntimeError):
    """Implicit solve failed; typically tau is not small enough."""

    def __init__(self, message, step=None):
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.step = step


class SpectralModeError(ValueError):
    """Spectral reference mode requires spatially constant coefficients."""


@dataclass
class Trajectory:
    """Time-indexed grid fields v_0..v_n produced by one scheme run."""

    grid: TorusGrid
    tau: float
    fields: list
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.fields) - 1

    def __getitem__(self, i: int) -> GridField:
        return self.fields[i]

    def restricted(self, factor: int) -> "Trajectory":
        return Trajectory(grid=subsample(self.fields[0], factor).grid,
                          tau=self.tau,
                          fields=[subsample(v, factor) for v in self.fields],
                          meta=dict(self.meta))


class SchemeSampler:
    """Caches scheme coefficient arrays on a grid, per time index.

    Time-independent schemes are sampled once and reused for every step.
    """

    def __init__(self, scheme: DifferenceScheme, grid: TorusGrid):
        self.scheme = scheme
        self.grid = grid
        self._cache = {}

    def arrays(self, i: int) -> dict:
        key = 0 if self.scheme.time_independent else i
        got = self._cache.get(key)
        if got is None:
            x = self.grid.coordinates
            s = self.scheme
            got = {
                "a": {k: ev(key, x) * np.ones(self.grid.shape)
                      for k, ev in s.a.items()},
                "b": {k: ev(key, x) * np.ones(self.grid.shape)
                      for k, ev in s.b.items()},
                "p": {k: ev(key, x) * np.ones(self.grid.shape)
                      for k, ev in s.p.items()},
                "q": {k: ev(key, x) * np.ones(self.grid.shape)
                      for k, ev in s.q.items()},
            }
            if not self.scheme.time_independent:
                self._cache.clear()  # keep at most the current step
            self._cache[key] = got
        return got


def apply_L(scheme: DifferenceScheme, phi: GridField, h: float, i: int,
            sampler: SchemeSampler | None = None) -> GridField:
    """Second-order difference operator:

    L phi = sum_{lam,mu} a^{lam mu} d_lam d_mu phi
            + sum_{lam != 0} (p^lam d_{h,lam} phi - q^lam d_{-h,lam} phi)

    with d_lam the centred difference (identity for lam = 0) and d_{+-h,lam}
    the one-sided differences.
    """
    if h == 0:
        raise GridError("apply_L needs h != 0")
    if sampler is None:
        sampler = SchemeSampler(scheme, phi.grid)
    arrays = sampler.arrays(i)
    out = np.zeros(phi.grid.shape)
    inner = {}
    for (lam, mu), coef in arrays["a"].items():
        dmu = inner.get(mu)
        if dmu is None:
            dmu = symmetric_difference(phi, mu, h)
            inner[mu] = dmu
        out += coef * symmetric_difference(dmu, lam, h).values
    for lam, coef in arrays["p"].items():
        out += coef * forward_difference(phi, lam, h, 1).values
    for lam, coef in arrays["q"].items():
        out -= coef * forward_difference(phi, lam, h, -1).values
    return GridField(phi.grid, out)


def apply_M(scheme: DifferenceScheme, phi: GridField, h: float, rho: int,
            i: int, sampler: SchemeSampler | None = None) -> GridField:
    """First-order difference operator M^rho phi = sum_lam b^{lam rho} d_lam phi."""
    if h == 0:
        raise GridError("apply_M needs h != 0")
    if not 1 <= rho <= scheme.d1:
        raise GridError(f"driver index {rho} out of range 1..{scheme.d1}")
    if sampler is None:
        sampler = SchemeSampler(scheme, phi.grid)
    arrays = sampler.arrays(i)
    out = np.zeros(phi.grid.shape)
    for (lam, r), coef in arrays["b"].items():
        if r != rho:
            continue
        out += coef * symmetric_difference(phi, lam, h).values
    return GridField(phi.grid, out)


def _expansion_terms(arrays: dict, h: float, dim: int) -> list:
    """Expand L into pointwise-weighted shifts: L phi(x) = sum w(x) phi(x+h*v).

    Returns (weight_array, displacement) pairs; used for sparse assembly and
    for the exact operator diagonal.
    """
    origin = tuple([0] * dim)
    terms = []
    for (lam, mu), coef in arrays["a"].items():
        lam_nz, mu_nz = any(lam), any(mu)
        if not lam_nz and not mu_nz:
            terms.append((coef, origin))
        elif lam_nz != mu_nz:
            vec = lam if lam_nz else mu
            terms.append((coef / (2 * h), vec))
            terms.append((-coef / (2 * h), tuple(-c for c in vec)))
        else:
            w = coef / (4 * h * h)
            terms.append((w, tuple(a + b for a, b in zip(lam, mu))))
            terms.append((-w, tuple(a - b for a, b in zip(lam, mu))))
            terms.append((-w, tuple(b - a for a, b in zip(lam, mu))))
            terms.append((w, tuple(-a - b for a, b in zip(lam, mu))))
    for lam, coef in arrays["p"].items():
        terms.append((coef / h, lam))
        terms.append((-coef / h, origin))
    for lam, coef in arrays["q"].items():
        terms.append((coef / h, tuple(-c for c in lam)))
        terms.append((-coef / h, origin))
    return terms


class ImplicitOperator:
    """Action and solve for (I - tau L^h_i) on one grid.

    Direct mode assembles the sparse matrix and factorizes it; iterative mode
    applies the operator matrix-free inside a diagonally preconditioned GMRES.
    """

    def __init__(self, scheme, grid, tau, h, i, mode="auto",
                 sampler: SchemeSampler | None = None):
        if tau < 0:
            raise SolveFailure("tau must be nonnegative")
        if h == 0:
            raise GridError("implicit operator needs h != 0")
        if mode not in ("auto", "direct", "iterative"):
            raise ValueError(f"unknown solver mode {mode!r}")
        if mode == "auto":
            mode = "direct" if grid.npoints <= DIRECT_SOLVE_MAX_UNKNOWNS else "iterative"
        self.scheme = scheme
        self.grid = grid
        self.tau = float(tau)
        self.h = float(h)
        self.i = i
        self.mode = mode
        self.sampler = sampler or SchemeSampler(scheme, grid)
        self._terms = _expansion_terms(self.sampler.arrays(i), h, grid.dim)
        if mode == "direct":
            self._lu = self._factorize()
        else:
            self._diag = self._operator_diagonal()

    def _factorize(self):
        n = self.grid.npoints
        idx = np.arange(n).reshape(self.grid.shape)
        rows = np.arange(n)
        row_list, col_list, data = [], [], []
        for w, v in self._terms:
            cols = np.roll(idx, tuple(-c for c in v),
                           axis=tuple(range(self.grid.dim))).ravel()
            row_list.append(rows)
            col_list.append(cols)
            data.append(np.broadcast_to(w, self.grid.shape).ravel() * -self.tau)
        row_list.append(rows)
        col_list.append(rows)
        data.append(np.ones(n))
        A = sp.coo_matrix((np.concatenate(data),
                           (np.concatenate(row_list), np.concatenate(col_list))),
                          shape=(n, n)).tocsc()
        try:
            return spla.splu(A)
        except RuntimeError as exc:
            raise SolveFailure(f"factorization failed ({exc}); "
                               "tau may not be small enough", step=self.i) from exc

    def _operator_diagonal(self):
        diag = np.ones(self.grid.shape)
        for w, v in self._terms:
            if all(c % n == 0 for c, n in zip(v, self.grid.shape)):
                diag = diag - self.tau * np.broadcast_to(w, self.grid.shape)
        return diag

    def apply(self, phi: GridField) -> GridField:
        """Forward action (I - tau L) phi."""
        lphi = apply_L(self.scheme, phi, self.h, self.i, self.sampler)
        return GridField(self.grid, phi.values - self.tau * lphi.values)

    def solve(self, rhs: GridField) -> GridField:
        if rhs.grid != self.grid:
            raise GridError("right-hand side lives on a different grid")
        if self.tau == 0.0:
            return rhs
        if self.mode == "direct":
            x = self._lu.solve(rhs.values.ravel())
            if not np.all(np.isfinite(x)):
                raise SolveFailure("factorized solve produced non-finite values; "
                                   "tau may not be small enough", step=self.i)
            return GridField(self.grid, x.reshape(self.grid.shape))
        return self._solve_iterative(rhs)

    def _solve_iterative(self, rhs: GridField) -> GridField:
        n = self.grid.npoints
        shape = self.grid.shape

        def matvec(x):
            return self.apply(GridField(self.grid, x.reshape(shape))).values.ravel()

        A = spla.LinearOperator((n, n), matvec=matvec)
        M = spla.LinearOperator((n, n), matvec=lambda x: x / self._diag.ravel())
        b = rhs.values.ravel()
        restart = min(50, n)
        maxiter = max(1, (10 * n) // restart)
        x, info = spla.gmres(A, b, x0=b.copy(), M=M, rtol=ITERATIVE_RTOL,
                             atol=0.0, restart=restart, maxiter=maxiter)
        bnorm = np.linalg.norm(b)
        resid = np.linalg.norm(matvec(x) - b)
        if info != 0 or not np.all(np.isfinite(x)) or \
                resid > ITERATIVE_RTOL * max(bnorm, 1e-300):
            raise SolveFailure(
                f"iteration stalled (relative residual {resid / max(bnorm, 1e-300):.2e}); "
                "tau may not be small enough", step=self.i)
        return GridField(self.grid, x.reshape(shape))


def assemble_implicit_operator(scheme, grid, tau, h, i,
                               mode="auto") -> ImplicitOperator:
    return ImplicitOperator(scheme, grid, tau, h, i, mode=mode)


def implicit_step(op: ImplicitOperator, v_prev: GridField, f_i: GridField,
                  g_prev, xi_i, scheme: DifferenceScheme, h: float,
                  i: int) -> GridField:
    """One implicit Euler step: L and f enter implicitly at index i, the
    stochastic terms explicitly at index i-1."""
    rhs = v_prev.values + op.tau * f_i.values
    for rho in range(1, scheme.d1 + 1):
        xi = xi_i[rho - 1]
        if xi == 0.0:
            continue
        mv = apply_M(scheme, v_prev, h, rho, i - 1, op.sampler)
        rhs = rhs + (mv.values + g_prev[rho - 1].values) * xi
    return op.solve(GridField(v_prev.grid, rhs))


def _empty_increments(n: int, tau: float) -> BrownianIncrements:
    return BrownianIncrements(n=n, d1=0, tau=tau, seed=0, xi=np.zeros((n, 0)))


def _check_increments(increments, n, tau, d1):
    if increments.n != n:
        raise ValueError(f"increments carry {increments.n} steps, expected {n}")
    if abs(increments.tau - tau) > 1e-12 * max(tau, 1.0):
        raise ValueError("increments were sampled for a different step size")
    if increments.d1 < d1:
        raise ValueError(f"increments carry {increments.d1} drivers, need {d1}")


def run_space_time_scheme(problem: DifferentialProblem, scheme: DifferenceScheme,
                          grid: TorusGrid, n: int,
                          increments: BrownianIncrements | None = None,
                          solver_mode: str = "auto") -> Trajectory:
    """Run the fully discrete scheme for i = 1..n from v_0 = u0 on the grid."""
    if n < 1:
        raise ValueError("need at least one time step")
    tau = problem.T / n
    if increments is None:
        if problem.d1 > 0:
            raise ValueError("stochastic problem needs Wiener increments")
        increments = _empty_increments(n, tau)
    _check_increments(increments, n, tau, problem.d1)

    x = grid.coordinates
    sampler = SchemeSampler(scheme, grid)
    v = grid.sample(problem.u0)
    fields = [v]
    op = None

    for i in range(1, n + 1):
        if op is None or not scheme.time_independent:
            op = ImplicitOperator(scheme, grid, tau, grid.h, i,
                                  mode=solver_mode, sampler=sampler)
        f_i = GridField(grid, problem.f(i, x) * np.ones(grid.shape))
        if problem.d1 > 0:
            g_prev = [GridField(grid, problem.g_at(rho, i - 1, x) * np.ones(grid.shape))
                      for rho in range(1, problem.d1 + 1)]
            xi_i = increments.step(i)
        else:
            g_prev = []
            xi_i = np.zeros(0)
        try:
            v = implicit_step(op, v, f_i, g_prev, xi_i, scheme, grid.h, i)
        except SolveFailure as exc:
            raise SolveFailure(f"scheme run aborted: {exc}") from exc
        fields.append(v)
    return Trajectory(grid=grid, tau=tau, fields=fields,
                      meta={"problem": problem.name, "seed": increments.seed,
                            "n": n, "h": grid.h, "kind": "space-time"})


# ---------------------------------------------------------------------------
# Reference realization of the time scheme (exact in space)
# ---------------------------------------------------------------------------

def _frequency_mesh(grid: TorusGrid):
    """Angular frequencies xi_a = 2 pi k_a / P_a as d mesh arrays."""
    axes = []
    for N, P in zip(grid.shape, grid.periods):
        k = np.fft.fftfreq(N) * N
        axes.append(2.0 * np.pi * k / P)
    return np.meshgrid(*axes, indexing="ij")


def _constant_value(values: np.ndarray, what: str) -> float:
    values = np.asarray(values, dtype=float)
    scale = max(1.0, float(np.max(np.abs(values))))
    if values.size and float(np.ptp(values)) > 1e-12 * scale:
        raise SpectralModeError(
            f"{what} varies in space; the spectral reference needs constant "
            "coefficients (use the fine-grid mode instead)")
    return float(values.flat[0]) if values.size else 0.0


class SpectralOperators:
    """Exact per-mode realization of the continuous operators on a torus grid.

    Only valid for coefficients constant in space (checked); serves both the
    reference time-scheme run and the corrector system's implicit solves.
    """

    def __init__(self, problem: DifferentialProblem, grid: TorusGrid, tau: float):
        self.problem = problem
        self.grid = grid
        self.tau = float(tau)
        self._freq = _frequency_mesh(grid)
        self._cache = {}

    def symbols(self, i: int):
        key = 0 if self.problem.time_independent else i
        got = self._cache.get(key)
        if got is None:
            p, x = self.problem, self.grid.coordinates
            d = p.d
            symL = np.zeros(self.grid.shape, dtype=complex)
            for al in range(1, d + 1):
                for be in range(1, d + 1):
                    c = _constant_value(p.a_at(al, be, key, x), f"a[{al},{be}]")
                    if c:
                        symL = symL - c * self._freq[al - 1] * self._freq[be - 1]
            for al in range(1, d + 1):
                c = (_constant_value(p.a_at(al, 0, key, x), f"a[{al},0]")
                     + _constant_value(p.a_at(0, al, key, x), f"a[0,{al}]"))
                if c:
                    symL = symL + 1j * c * self._freq[al - 1]
            symL = symL + _constant_value(p.a_at(0, 0, key, x), "a[0,0]")
            symM = []
            for rho in range(1, p.d1 + 1):
                s = np.zeros(self.grid.shape, dtype=complex)
                for al in range(1, d + 1):
                    c = _constant_value(p.b_at(al, rho, key, x), f"b[{al},{rho}]")
                    if c:
                        s = s + 1j * c * self._freq[al - 1]
                s = s + _constant_value(p.b_at(0, rho, key, x), f"b[0,{rho}]")
                symM.append(s)
            got = (symL, symM)
            if not self.problem.time_independent:
                self._cache.clear()
            self._cache[key] = got
        return got

    def solve_implicit(self, phi: GridField, i: int) -> GridField:
        """(I - tau L)^{-1} phi, exactly per Fourier mode."""
        symL, _ = self.symbols(i)
        denom = 1.0 - self.tau * symL
        if float(np.min(np.abs(denom))) < 1e-12:
            raise SolveFailure("spectral implicit operator is singular; "
                               "tau may not be small enough", step=i)
        out = np.fft.ifftn(np.fft.fftn(phi.values) / denom)
        return GridField(self.grid, np.real(out))

    def apply_M(self, phi: GridField, rho: int, i: int) -> GridField:
        _, symM = self.symbols(i)
        out = np.fft.ifftn(symM[rho - 1] * np.fft.fftn(phi.values))
        return GridField(self.grid, np.real(out))

    def apply_L(self, phi: GridField, i: int) -> GridField:
        symL, _ = self.symbols(i)
        out = np.fft.ifftn(symL * np.fft.fftn(phi.values))
        return GridField(self.grid, np.real(out))


class FiniteDifferenceOperators:
    """Fine-grid surrogate for the continuous operators: the centred scheme
    at the grid's own (fine) mesh stands in for L and M^rho."""

    def __init__(self, problem: DifferentialProblem, grid: TorusGrid, tau: float):
        self.problem = problem
        self.grid = grid
        self.tau = float(tau)
        self.scheme = build_scheme_example1(problem)
        self.sampler = SchemeSampler(self.scheme, grid)
        self._op = None
        self._op_index = None

    def _operator(self, i: int) -> ImplicitOperator:
        if self._op is None or (not self.scheme.time_independent
                                and self._op_index != i):
            self._op = ImplicitOperator(self.scheme, self.grid, self.tau,
                                        self.grid.h, i, sampler=self.sampler)
            self._op_index = i
        return self._op

    def solve_implicit(self, phi: GridField, i: int) -> GridField:
        return self._operator(i).solve(phi)

    def apply_M(self, phi: GridField, rho: int, i: int) -> GridField:
        return apply_M(self.scheme, phi, self.grid.h, rho, i, self.sampler)

    def apply_L(self, phi: GridField, i: int) -> GridField:
        return apply_L(self.scheme, phi, self.grid.h, i, self.sampler)


REFERENCE_MODES = ("spectral-const-coef", "fine-grid")


def run_reference_time_scheme(problem: DifferentialProblem, grid: TorusGrid,
                              n: int,
                              increments: BrownianIncrements | None = None,
                              mode: str = "spectral-const-coef",
                              refine: int = 3) -> Trajectory:
    """Reference solution of the time scheme on ``grid``.

    spectral-const-coef: exact per-mode implicit Euler recursion (requires
    spatially constant coefficients; free terms may vary).  fine-grid: runs
    the centred scheme on a 2**refine times finer lattice and restricts back.
    """
    if mode not in REFERENCE_MODES:
        raise ValueError(f"unknown reference mode {mode!r}; "
                         f"choose from {REFERENCE_MODES}")
    if n < 1:
        raise ValueError("need at least one time step")
    tau = problem.T / n
    if increments is None:
        if problem.d1 > 0:
            raise ValueError("stochastic problem needs Wiener increments")
        increments = _empty_increments(n, tau)
    _check_increments(increments, n, tau, problem.d1)

    if mode == "fine-grid":
        fine = grid.refined(2 ** refine)
        scheme = build_scheme_example1(problem)
        traj = run_space_time_scheme(problem, scheme, fine, n, increments)
        out = traj.restricted(2 ** refine)
        out.meta.update(kind="reference", mode=mode, refine=refine)
        return out

    ops = SpectralOperators(problem, grid, tau)
    x = grid.coordinates
    v = grid.sample(problem.u0)
    fields = [v]
    for i in range(1, n + 1):
        rhs = v.values + tau * (problem.f(i, x) * np.ones(grid.shape))
        for rho in range(1, problem.d1 + 1):
            xi = increments.step(i)[rho - 1]
            if xi == 0.0:
                continue
            mv = ops.apply_M(v, rho, i - 1)
            g = problem.g_at(rho, i - 1, x) * np.ones(grid.shape)
            rhs = rhs + (mv.values + g) * xi
        v = ops.solve_implicit(GridField(grid, rhs), i)
        fields.append(v)
    return Trajectory(grid=grid, tau=tau, fields=fields,
                      meta={"problem": problem.name, "seed": increments.seed,
                            "n": n, "h": grid.h, "kind": "reference",
                            "mode": mode})


# ---------------------------------------------------------------------------
# Trajectory export
# ---------------------------------------------------------------------------

_TRAJ_MAGIC = b"SPFDTR01"


def export_trajectory_csv(traj: Trajectory, path) -> None:
    """CSV rows (i, t, index, x..., value), row-major over grid points."""
    d = traj.grid.dim
    coords = traj.grid.coordinates.reshape(-1, d)
    header = "i,t," + "index," + ",".join(f"x{a}" for a in range(d)) + ",value"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for i, fld in enumerate(traj.fields):
            t = i * traj.tau
            vals = fld.values.ravel()
            for j in range(coords.shape[0]):
                xs = ",".join(format(c, ".17g") for c in coords[j])
                fh.write(f"{i},{format(t, '.17g')},{j},{xs},"
                         f"{format(vals[j], '.17g')}\n")


def export_trajectory_binary(traj: Trajectory, path) -> None:
    """Compact dump: magic, dim/steps/h/tau header, shape, float64 payload."""
    grid = traj.grid
    with open(path, "wb") as fh:
        fh.write(_TRAJ_MAGIC)
        fh.write(struct.pack("<QQdd", grid.dim, traj.n, grid.h, traj.tau))
        fh.write(struct.pack(f"<{grid.dim}Q", *grid.shape))
        for fld in traj.fields:
            fh.write(np.ascontiguousarray(fld.values, dtype="<f8").tobytes())


def load_trajectory_binary(path) -> Trajectory:
    with open(path, "rb") as fh:
        magic = fh.read(len(_TRAJ_MAGIC))
        if magic != _TRAJ_MAGIC:
            raise ValueError(f"not a trajectory dump: {path}")
        dim, n, h, tau = struct.unpack("<QQdd", fh.read(32))
        shape = struct.unpack(f"<{dim}Q", fh.read(8 * dim))
        payload = fh.read()
    grid = TorusGrid(int(dim), float(h), tuple(int(s) for s in shape))
    per = grid.npoints
    arr = np.frombuffer(payload, dtype="<f8").astype(float)
    if arr.size != (n + 1) * per:
        raise ValueError(f"truncated trajectory dump: {path}")
    fields = [GridField(grid, arr[k * per:(k + 1) * per].reshape(grid.shape))
              for k in range(n + 1)]
    return Trajectory(grid=grid, tau=float(tau), fields=fields)
