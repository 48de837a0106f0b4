import numpy as np
import pytest

from spdefd.grids import GridField, make_torus_grid
from spdefd.problems import (
    DifferentialProblem,
    DifferenceScheme,
    build_scheme_example1,
    build_scheme_example2,
    make_problem,
)
from spdefd.stepper import (
    FiniteDifferenceOperators,
    ImplicitOperator,
    SolveFailure,
    SpectralModeError,
    SpectralOperators,
    Trajectory,
    apply_L,
    apply_M,
    assemble_implicit_operator,
    export_trajectory_binary,
    export_trajectory_csv,
    implicit_step,
    load_trajectory_binary,
    run_reference_time_scheme,
    run_space_time_scheme,
)
from spdefd.wiener import BrownianIncrements, sample_increments
from spdefd.grids import basis_stencil


def scheme_1d(a11=0.0, p1=0.0, q1=0.0, b01=0.0, b11=0.0, d1=0):
    s = basis_stencil(1)
    a = {((1,), (1,)): a11} if a11 else {}
    p = {(1,): p1} if p1 else {}
    q = {(1,): q1} if q1 else {}
    b = {}
    if b01:
        b[((0,), 1)] = b01
    if b11:
        b[((1,), 1)] = b11
    return DifferenceScheme(stencil=s, d1=d1, a=a, b=b, p=p, q=q,
                            constant_coefficients=True)


def manual_increments(xi, tau):
    xi = np.asarray(xi, dtype=float)
    return BrownianIncrements(n=xi.shape[0], d1=xi.shape[1], tau=tau, seed=0, xi=xi)


from oracles import dense_L_1d, dense_M_1d  # noqa: E402  (shared test oracles)


class TestApplyL:
    def test_constant_field_to_zero(self):
        g = make_torus_grid(1, [1.0], [16])
        s = scheme_1d(a11=0.7)
        out = apply_L(s, g.constant(3.0), g.h, 0)
        np.testing.assert_allclose(out.values, 0.0, atol=1e-13)

    @pytest.mark.parametrize("k", [1, 2])
    def test_fourier_mode_symbol(self, k):
        g = make_torus_grid(1, [1.0], [32])
        a = 0.4
        s = scheme_1d(a11=a)
        P = g.periods[0]
        phi = g.sample(lambda x: np.cos(2 * np.pi * k * x[..., 0] / P))
        out = apply_L(s, phi, g.h, 0)
        factor = -a * (np.sin(2 * np.pi * k * g.h / P) / g.h) ** 2
        np.testing.assert_allclose(out.values, factor * phi.values,
                                   atol=1e-11 * max(abs(factor), 1.0))

    def test_forward_difference_of_linear(self):
        g = make_torus_grid(1, [1.0], [16])
        c = 2.5
        s = scheme_1d(p1=c)
        phi = g.sample(lambda x: x[..., 0])
        out = apply_L(s, phi, g.h, 0)
        np.testing.assert_allclose(out.values[:-1], c, atol=1e-12)

    def test_matches_dense_oracle_variable_coefficients(self):
        g = make_torus_grid(1, [1.0], [8])
        s = DifferenceScheme(
            stencil=basis_stencil(1), d1=0,
            a={((1,), (1,)): lambda i, x: 1.0 + 0.3 * np.sin(2 * np.pi * x[..., 0]),
               ((0,), (0,)): 0.2,
               ((1,), (0,)): lambda i, x: 0.1 * np.cos(2 * np.pi * x[..., 0])},
            p={(1,): lambda i, x: 0.5 + 0.5 * np.cos(2 * np.pi * x[..., 0]) ** 2},
            q={(1,): 0.3})
        rng = np.random.default_rng(0)
        phi = g.field(rng.standard_normal(8))
        ours = apply_L(s, phi, g.h, 0)
        oracle = dense_L_1d(s, g, g.h, 0) @ phi.values
        np.testing.assert_allclose(ours.values, oracle, atol=1e-12)


class TestApplyM:
    def test_zero_order_multiplication(self):
        g = make_torus_grid(1, [1.0], [16])
        s = scheme_1d(b01=1.5, d1=1)
        phi = g.sample(lambda x: np.sin(2 * np.pi * x[..., 0]))
        out = apply_M(s, phi, g.h, 1, 0)
        np.testing.assert_allclose(out.values, 1.5 * phi.values, atol=1e-14)

    def test_constant_field_no_zero_order(self):
        g = make_torus_grid(1, [1.0], [16])
        s = scheme_1d(b11=0.8, d1=1)
        out = apply_M(s, g.constant(4.0), g.h, 1, 0)
        np.testing.assert_allclose(out.values, 0.0, atol=1e-13)

    def test_mode_symbol_via_dft(self):
        g = make_torus_grid(1, [1.0], [32])
        b = 0.6
        k = 2
        s = scheme_1d(b11=b, d1=1)
        P = g.periods[0]
        phi = g.sample(lambda x: np.cos(2 * np.pi * k * x[..., 0] / P))
        out = apply_M(s, phi, g.h, 1, 0)
        # symbol of the centred difference, i b sin(xi h)/h, acts on the
        # conjugate mode pair +-k with opposite signs
        freq = 2 * np.pi * np.fft.fftfreq(32) * 32 / P
        sym = 1j * b * np.sin(freq * g.h) / g.h
        np.testing.assert_allclose(np.fft.fft(out.values),
                                   sym * np.fft.fft(phi.values), atol=1e-10)

    def test_rejects_driver_out_of_range(self):
        g = make_torus_grid(1, [1.0], [8])
        s = scheme_1d(b11=1.0, d1=1)
        with pytest.raises(Exception):
            apply_M(s, g.zeros(), g.h, 2, 0)


class TestImplicitOperator:
    def test_tau_zero_identity(self):
        g = make_torus_grid(1, [1.0], [16])
        s = scheme_1d(a11=1.0)
        op = assemble_implicit_operator(s, g, 0.0, g.h, 0)
        rng = np.random.default_rng(1)
        rhs = g.field(rng.standard_normal(16))
        np.testing.assert_array_equal(op.solve(rhs).values, rhs.values)

    @pytest.mark.parametrize("k", [1, 3])
    def test_heat_mode_division(self, k):
        g = make_torus_grid(1, [1.0], [64])
        a, tau = 0.3, 0.01
        s = scheme_1d(a11=a)
        op = assemble_implicit_operator(s, g, tau, g.h, 0)
        P = g.periods[0]
        phi = g.sample(lambda x: np.cos(2 * np.pi * k * x[..., 0] / P))
        sol = op.solve(phi)
        denom = 1.0 + tau * a * (np.sin(2 * np.pi * k * g.h / P) / g.h) ** 2
        np.testing.assert_allclose(sol.values, phi.values / denom, atol=1e-10)

    def test_tiny_grid_matches_gaussian_elimination(self):
        g = make_torus_grid(1, [1.0], [4])
        s = DifferenceScheme(
            stencil=basis_stencil(1), d1=0,
            a={((1,), (1,)): lambda i, x: 0.8 + 0.2 * np.cos(2 * np.pi * x[..., 0])},
            p={(1,): 0.4})
        tau = 0.05
        op = assemble_implicit_operator(s, g, tau, g.h, 0)
        A = np.eye(4) - tau * dense_L_1d(s, g, g.h, 0)
        rng = np.random.default_rng(3)
        rhs = rng.standard_normal(4)
        ours = op.solve(g.field(rhs)).values
        oracle = np.linalg.solve(A, rhs)
        np.testing.assert_allclose(ours, oracle, atol=1e-12)

    def test_apply_solve_round_trip_direct(self):
        g = make_torus_grid(1, [1.0], [64])
        s = scheme_1d(a11=0.5, p1=0.2)
        op = assemble_implicit_operator(s, g, 0.02, g.h, 0, mode="direct")
        rng = np.random.default_rng(5)
        rhs = g.field(rng.standard_normal(64))
        back = op.apply(op.solve(rhs))
        np.testing.assert_allclose(back.values, rhs.values, rtol=1e-12, atol=1e-13)

    def test_iterative_residual_contract(self):
        g = make_torus_grid(1, [1.0], [64])
        s = scheme_1d(a11=0.5, p1=0.2)
        op = assemble_implicit_operator(s, g, 0.02, g.h, 0, mode="iterative")
        rng = np.random.default_rng(5)
        rhs = g.field(rng.standard_normal(64))
        back = op.apply(op.solve(rhs))
        resid = np.linalg.norm(back.values - rhs.values)
        assert resid <= 1e-11 * np.linalg.norm(rhs.values)

    def test_action_matches_matrix_free(self):
        g = make_torus_grid(2, [1.0, 1.0], [8, 8])
        s = DifferenceScheme(
            stencil=basis_stencil(2), d1=0,
            a={((1, 0), (1, 0)): 0.5, ((0, 1), (0, 1)): 0.25,
               ((1, 0), (0, 1)): 0.1})
        tau = 0.01
        op = assemble_implicit_operator(s, g, tau, g.h, 0)
        rng = np.random.default_rng(6)
        phi = g.field(rng.standard_normal((8, 8)))
        expect = phi.values - tau * apply_L(s, phi, g.h, 0).values
        np.testing.assert_allclose(op.apply(phi).values, expect,
                                   rtol=1e-13, atol=1e-13)


class TestImplicitStep:
    def test_constant_fixed_point(self):
        g = make_torus_grid(1, [1.0], [16])
        s = scheme_1d(a11=0.5)
        tau = 0.1
        op = assemble_implicit_operator(s, g, tau, g.h, 1)
        c = g.constant(2.0)
        out = implicit_step(op, c, g.zeros(), [], np.zeros(0), s, g.h, 1)
        np.testing.assert_allclose(out.values, 2.0, atol=1e-12)

    def test_scalar_multiplicative_recursion(self):
        # all spatial coefficients zero, b^{0,1} = beta: v = v_prev (1 + beta xi)
        g = make_torus_grid(1, [1.0], [8])
        beta = 0.7
        s = scheme_1d(b01=beta, d1=1)
        tau = 0.1
        op = assemble_implicit_operator(s, g, tau, g.h, 1)
        rng = np.random.default_rng(2)
        v_prev = g.field(rng.standard_normal(8))
        xi = np.array([0.23])
        out = implicit_step(op, v_prev, g.zeros(), [g.zeros()], xi, s, g.h, 1)
        np.testing.assert_allclose(out.values, v_prev.values * (1 + beta * xi[0]),
                                   atol=1e-13)

    def test_superposition(self):
        g = make_torus_grid(1, [1.0], [16])
        s = scheme_1d(a11=0.4, b11=0.2, d1=1)
        tau = 0.05
        op = assemble_implicit_operator(s, g, tau, g.h, 1)
        rng = np.random.default_rng(4)
        v1, v2 = g.field(rng.standard_normal(16)), g.field(rng.standard_normal(16))
        f1, f2 = g.field(rng.standard_normal(16)), g.field(rng.standard_normal(16))
        g1, g2 = g.field(rng.standard_normal(16)), g.field(rng.standard_normal(16))
        xi = np.array([-0.4])
        lhs = implicit_step(op, v1 + v2, f1 + f2, [g1 + g2], xi, s, g.h, 1)
        rhs = (implicit_step(op, v1, f1, [g1], xi, s, g.h, 1)
               + implicit_step(op, v2, f2, [g2], xi, s, g.h, 1))
        scale = max(np.max(np.abs(rhs.values)), 1.0)
        np.testing.assert_allclose(lhs.values, rhs.values, atol=1e-12 * scale)


class TestRunSpaceTimeScheme:
    def test_zero_data_zero_trajectory(self):
        p = DifferentialProblem(d=1, d1=0, T=1.0, a={(1, 1): 0.5}, u0=0.0)
        g = make_torus_grid(1, [1.0], [16])
        traj = run_space_time_scheme(p, build_scheme_example1(p), g, 8)
        for fld in traj.fields:
            np.testing.assert_array_equal(fld.values, 0.0)

    def test_deterministic_reduction(self):
        g = make_torus_grid(1, [1.0], [16])
        n = 16
        p0 = make_problem("heat1d")
        p1 = DifferentialProblem(d=1, d1=1, T=0.5, a={(1, 1): 0.1},
                                 u0=p0.u0, constant_coefficients=True)
        t0 = run_space_time_scheme(p0, build_scheme_example1(p0), g, n)
        inc = sample_increments(n, 1, p1.T / n, seed=41)
        t1 = run_space_time_scheme(p1, build_scheme_example1(p1), g, n, inc)
        for f0, f1 in zip(t0.fields, t1.fields):
            np.testing.assert_allclose(f0.values, f1.values, atol=1e-13)

    def test_two_step_dense_oracle_random_coefficients(self):
        # independent dense assembly and elimination, variable coefficients
        rng = np.random.default_rng(10)
        coef = []
        for _ in range(5):
            amp, phase = rng.uniform(0.1, 0.5), rng.uniform(0, 2 * np.pi)
            coef.append((amp, phase))

        def trig(amp, phase, base=0.0):
            return lambda i, x, a=amp, ph=phase, b=base: (
                b + a * np.cos(2 * np.pi * x[..., 0] + ph + 0.1 * i))

        p = DifferentialProblem(
            d=1, d1=1, T=0.2,
            a={(1, 1): trig(*coef[0], base=1.0), (0, 0): trig(*coef[1])},
            b={(1, 1): trig(*coef[2]), (0, 1): trig(*coef[3])},
            f=trig(*coef[4]),
            g={1: trig(0.3, 0.7)},
            u0=lambda x: np.sin(2 * np.pi * x[..., 0]),
            time_independent=False)
        s = build_scheme_example1(p)
        g = make_torus_grid(1, [1.0], [8])
        n = 2
        tau = p.T / n
        inc = sample_increments(n, 1, tau, seed=77)
        traj = run_space_time_scheme(p, s, g, n, inc)

        x = g.coordinates
        v = p.u0(x)
        for i in (1, 2):
            L = dense_L_1d(s, g, g.h, i)
            M = dense_M_1d(s, g, g.h, 1, i - 1)
            rhs = (v + tau * p.f(i, x)
                   + (M @ v + p.g_at(1, i - 1, x)) * inc.step(i)[0])
            v = np.linalg.solve(np.eye(8) - tau * L, rhs)
            np.testing.assert_allclose(traj[i].values, v, atol=1e-11)

    def test_spectral_oracle_equivalence_constant_coefficients(self):
        # discrete symbols of L^h and M^{h,rho} applied per mode
        p = make_problem("stoch-transport", beta=0.3, gamma=0.2,
                         extra_diffusion=0.05)
        s = build_scheme_example1(p)
        g = make_torus_grid(1, [1.0], [32])
        n = 8
        tau = p.T / n
        inc = sample_increments(n, 1, tau, seed=5)
        traj = run_space_time_scheme(p, s, g, n, inc)

        h = g.h
        xi_freq = 2 * np.pi * np.fft.fftfreq(32) * 32 / g.periods[0]
        a = 0.5 * 0.09 + 0.05
        symL = -a * (np.sin(xi_freq * h) / h) ** 2
        symM = 1j * 0.3 * np.sin(xi_freq * h) / h + 0.2
        vhat = np.fft.fft(p.u0(g.coordinates))
        for i in range(1, n + 1):
            vhat = vhat * (1.0 + symM * inc.step(i)[0]) / (1.0 - tau * symL)
            got = traj[i].values
            np.testing.assert_allclose(got, np.real(np.fft.ifft(vhat)), atol=1e-10)

    def test_solution_map_linearity(self):
        g = make_torus_grid(1, [1.0], [16])
        n = 8
        base = dict(d=1, d1=1, T=0.4, a={(1, 1): 0.3}, b={(1, 1): 0.2},
                    constant_coefficients=True)
        inc = sample_increments(n, 1, 0.4 / n, seed=13)
        u1 = lambda x: np.cos(2 * np.pi * x[..., 0])
        u2 = lambda x: np.sin(4 * np.pi * x[..., 0])
        p1 = DifferentialProblem(**base, u0=u1, f=0.5, g={1: 0.1})
        p2 = DifferentialProblem(**base, u0=u2, f=-0.2, g={1: 0.3})
        p12 = DifferentialProblem(**base, u0=lambda x: u1(x) + u2(x),
                                  f=0.3, g={1: 0.4})
        s = build_scheme_example1(p1)
        t1 = run_space_time_scheme(p1, s, g, n, inc)
        t2 = run_space_time_scheme(p2, s, g, n, inc)
        t12 = run_space_time_scheme(p12, s, g, n, inc)
        for a_, b_, c_ in zip(t1.fields, t2.fields, t12.fields):
            scale = max(np.max(np.abs(c_.values)), 1.0)
            np.testing.assert_allclose(a_.values + b_.values, c_.values,
                                       atol=1e-12 * scale)

    def test_implicitness_propagation(self):
        # f at the last index only affects the last field; g at index 0
        # affects every field from v_1 on
        g = make_torus_grid(1, [1.0], [16])
        n = 4
        u0 = lambda x: np.cos(2 * np.pi * x[..., 0])
        base = dict(d=1, d1=1, T=0.4, a={(1, 1): 0.2}, b={(1, 1): 0.1},
                    u0=u0, constant_coefficients=True)
        inc = sample_increments(n, 1, 0.4 / n, seed=3)
        s = build_scheme_example1(DifferentialProblem(**base))

        plain = run_space_time_scheme(DifferentialProblem(**base), s, g, n, inc)
        f_last = DifferentialProblem(
            **base, f=lambda i, x: np.where(i == n, 1.0, 0.0) * np.ones(x.shape[:-1]))
        with_f = run_space_time_scheme(f_last, s, g, n, inc)
        for i in range(n):
            np.testing.assert_array_equal(with_f[i].values, plain[i].values)
        assert np.max(np.abs(with_f[n].values - plain[n].values)) > 1e-12

        g_first = DifferentialProblem(
            **base, g={1: lambda i, x: np.where(i == 0, 1.0, 0.0)
                       * np.ones(x.shape[:-1])})
        with_g = run_space_time_scheme(g_first, s, g, n, inc)
        np.testing.assert_array_equal(with_g[0].values, plain[0].values)
        for i in range(1, n + 1):
            assert np.max(np.abs(with_g[i].values - plain[i].values)) > 1e-14

    def test_degenerate_stability_under_refinement(self):
        p = make_problem("stoch-transport", beta=0.3)
        s = build_scheme_example1(p)
        n = 32
        tau = p.T / n
        norms = []
        for points in (16, 32, 64):
            g = make_torus_grid(1, [1.0], [points])
            vals = []
            for seed in range(4):
                inc = sample_increments(n, 1, tau, seed=seed)
                traj = run_space_time_scheme(p, s, g, n, inc)
                weight = g.h
                vals.append(max(np.sqrt(weight * np.sum(f.values ** 2))
                                for f in traj.fields))
            norms.append(np.mean(vals))
        assert norms[1] <= 1.2 * norms[0]
        assert norms[2] <= 1.2 * norms[1]


class TestReferenceTimeScheme:
    def test_heat_mode_recursion(self):
        p = make_problem("heat1d", nu=0.1, T=0.5)
        g = make_torus_grid(1, [1.0], [32])
        n = 16
        tau = p.T / n
        traj = run_reference_time_scheme(p, g, n, mode="spectral-const-coef")
        x = g.coordinates[..., 0]
        for i in range(n + 1):
            expect = (1.0 + tau * 0.1 * (2 * np.pi) ** 2) ** (-i) * np.cos(2 * np.pi * x)
            np.testing.assert_allclose(traj[i].values, expect, atol=1e-12)

    def test_zero_data(self):
        p = DifferentialProblem(d=1, d1=0, T=1.0, a={(1, 1): 1.0}, u0=0.0,
                                constant_coefficients=True)
        g = make_torus_grid(1, [1.0], [16])
        traj = run_reference_time_scheme(p, g, 4, mode="spectral-const-coef")
        for fld in traj.fields:
            np.testing.assert_array_equal(fld.values, 0.0)

    def test_spectral_rejects_variable_coefficients(self):
        p = make_problem("var-coef1d")
        g = make_torus_grid(1, [1.0], [16])
        with pytest.raises(SpectralModeError):
            run_reference_time_scheme(p, g, 4, mode="spectral-const-coef")

    def test_fine_grid_mode_converges_to_spectral(self):
        p = make_problem("heat1d")
        g = make_torus_grid(1, [1.0], [16])
        n = 16
        spectral = run_reference_time_scheme(p, g, n, mode="spectral-const-coef")
        diffs = []
        for q in (1, 2, 3):
            fine = run_reference_time_scheme(p, g, n, mode="fine-grid", refine=q)
            diffs.append(max(np.max(np.abs(a.values - b.values))
                             for a, b in zip(fine.fields, spectral.fields)))
        # second-order surrogate: each extra refinement divides the gap by ~4
        assert 3.0 <= diffs[0] / diffs[1] <= 5.0
        assert 3.0 <= diffs[1] / diffs[2] <= 5.0

    def test_stochastic_reference_same_increments(self):
        p = make_problem("stoch-transport", beta=0.2, extra_diffusion=0.05)
        g = make_torus_grid(1, [1.0], [32])
        n = 8
        inc = sample_increments(n, 1, p.T / n, seed=21)
        ref = run_reference_time_scheme(p, g, n, inc, mode="spectral-const-coef")
        fine = run_reference_time_scheme(p, g, n, inc, mode="fine-grid", refine=3)
        gap = max(np.max(np.abs(a.values - b.values))
                  for a, b in zip(ref.fields, fine.fields))
        assert gap < 1e-2

    def test_rejects_unknown_mode(self):
        p = make_problem("heat1d")
        g = make_torus_grid(1, [1.0], [16])
        with pytest.raises(ValueError):
            run_reference_time_scheme(p, g, 4, mode="nope")


class TestTrajectoryExport:
    def _traj(self):
        p = make_problem("heat1d")
        g = make_torus_grid(1, [1.0], [8])
        return run_space_time_scheme(p, build_scheme_example1(p), g, 3)

    def test_csv_layout(self, tmp_path):
        traj = self._traj()
        path = tmp_path / "traj.csv"
        export_trajectory_csv(traj, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "i,t,index,x0,value"
        assert len(lines) == 1 + 4 * 8
        first = lines[1].split(",")
        assert first[0] == "0" and first[2] == "0"
        assert float(first[4]) == pytest.approx(1.0)

    def test_binary_round_trip(self, tmp_path):
        traj = self._traj()
        path = tmp_path / "traj.bin"
        export_trajectory_binary(traj, path)
        loaded = load_trajectory_binary(path)
        assert loaded.n == traj.n
        assert loaded.grid == traj.grid
        for a, b in zip(loaded.fields, traj.fields):
            np.testing.assert_array_equal(a.values, b.values)
