import numpy as np
import pytest

from spdefd.cli import main
from spdefd.experiments import (
    ConfigError,
    ExperimentSpec,
    build_problem,
    emit_outputs,
    load_config,
    run_convergence_experiment,
    run_corrector_experiment,
    save_config,
    selfcheck,
)

MINIMAL = """\
[problem]
name = heat1d
"""

FULL = """\
[problem]
name = stoch-transport
beta = 0.3
extra_diffusion = 0.05

[scheme]
constructor = example1

[time]
n = 32

[space]
period = 1.0
points0 = 16
rungs = 3

[extrapolation]
level = 1
base = auto

[reference]
mode = spectral
refine = 2

[run]
seeds = 1,2
expected_order = 2.0
order_tolerance = 0.5
out = out
format = csv
threads = 2
"""


def write(tmp_path, text, name="exp.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoadConfig:
    def test_minimal_defaults(self, tmp_path):
        spec = load_config(write(tmp_path, MINIMAL))
        assert spec.problem == "heat1d"
        assert spec.n == 256
        assert spec.rungs == 3
        assert spec.level == 1
        assert spec.seeds == (1,)

    def test_full_config(self, tmp_path):
        spec = load_config(write(tmp_path, FULL))
        assert spec.problem == "stoch-transport"
        assert spec.params_dict() == {"beta": 0.3, "extra_diffusion": 0.05}
        assert spec.seeds == (1, 2)
        assert spec.threads == 2
        assert spec.reference_mode == "spectral"

    def test_unknown_key_rejected(self, tmp_path):
        text = MINIMAL + "\n[time]\nn = 16\nbogus = 1\n"
        with pytest.raises(ConfigError, match="bogus"):
            load_config(write(tmp_path, text))

    def test_unknown_section_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="mystery"):
            load_config(write(tmp_path, MINIMAL + "\n[mystery]\nx = 1\n"))

    def test_missing_name_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="name"):
            load_config(write(tmp_path, "[time]\nn = 4\n"))

    def test_bad_value_reported(self, tmp_path):
        with pytest.raises(ConfigError, match="n"):
            load_config(write(tmp_path, MINIMAL + "\n[time]\nn = soon\n"))

    def test_parse_error_has_line(self, tmp_path):
        with pytest.raises(ConfigError, match="line"):
            load_config(write(tmp_path, "[problem\nname = heat1d\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.ini")

    def test_round_trip(self, tmp_path):
        spec = load_config(write(tmp_path, FULL))
        out = tmp_path / "echo.ini"
        save_config(spec, out)
        assert load_config(out) == spec

    def test_round_trip_minimal(self, tmp_path):
        spec = load_config(write(tmp_path, MINIMAL))
        out = tmp_path / "echo.ini"
        save_config(spec, out)
        assert load_config(out) == spec


class TestBuildProblem:
    def test_library_with_params(self, tmp_path):
        spec = load_config(write(tmp_path, FULL))
        p = build_problem(spec)
        assert p.d1 == 1
        x = np.array([0.0])
        assert p.a_at(1, 1, 0, x) == pytest.approx(0.5 * 0.09 + 0.05)

    def test_inline_custom_problem(self):
        spec = ExperimentSpec(problem="custom",
                              problem_params=(("T", 0.25), ("a11", 0.2),
                                              ("b11", 0.4)))
        p = build_problem(spec)
        assert p.d1 == 1 and p.T == 0.25
        x = np.array([0.0])
        assert p.a_at(1, 1, 0, x) == pytest.approx(0.2)
        assert p.b_at(1, 1, 0, x) == pytest.approx(0.4)

    def test_inline_unknown_key(self):
        spec = ExperimentSpec(problem="custom", problem_params=(("c7", 1.0),))
        with pytest.raises(ConfigError):
            build_problem(spec)

    def test_unknown_problem(self):
        with pytest.raises(ConfigError):
            build_problem(ExperimentSpec(problem="nope"))


class TestSyntheticSelfTest:
    def test_injected_power_law_recovered(self):
        spec = ExperimentSpec(problem="heat1d", rungs=4)
        result = run_convergence_experiment(spec, synthetic_order=3.0)
        assert result.report.ls_order == pytest.approx(3.0, abs=1e-10)

    def test_rungs_validation(self):
        spec = ExperimentSpec(problem="heat1d", rungs=1)
        with pytest.raises(ConfigError):
            run_convergence_experiment(spec)


class TestConvergenceExperiment:
    def test_heat_order_two(self):
        spec = ExperimentSpec(problem="heat1d", n=64, points0=16, rungs=3,
                              expected_order=2.0, order_tolerance=0.3)
        result = run_convergence_experiment(spec)
        assert result.passed
        assert 1.8 <= result.report.ls_order <= 2.3

    def test_acceleration_raises_order(self):
        spec = ExperimentSpec(problem="heat1d", n=64, points0=16, rungs=3,
                              level=1, expected_order=4.0, order_tolerance=0.5)
        result = run_convergence_experiment(spec, accelerate=True)
        assert result.extras["base"] == 4
        assert result.passed

    def test_deterministic_across_seeds_for_deterministic_problem(self):
        spec = ExperimentSpec(problem="heat1d", n=32, rungs=2, seeds=(1,))
        a = run_convergence_experiment(spec)
        b = run_convergence_experiment(
            ExperimentSpec(problem="heat1d", n=32, rungs=2, seeds=(7,)))
        assert a.report.sup_errors == b.report.sup_errors

    def test_stochastic_same_increments_share_tau_error(self):
        spec = ExperimentSpec(problem="degenerate1d",
                              problem_params=(("beta", 0.3),),
                              n=32, points0=16, rungs=3, seeds=(1, 2, 3, 4))
        result = run_convergence_experiment(spec)
        # pathwise spatial error: order ~2 even at modest n
        assert 1.5 <= result.report.ls_order <= 2.5

    def test_threads_do_not_change_errors(self):
        base = ExperimentSpec(problem="degenerate1d", n=16, rungs=2,
                              seeds=(1, 2))
        seq = run_convergence_experiment(base)
        par = run_convergence_experiment(
            ExperimentSpec(problem="degenerate1d", n=16, rungs=2,
                           seeds=(1, 2), threads=4))
        assert seq.report.sup_errors == par.report.sup_errors


class TestEmitOutputs:
    def _result(self, **kw):
        spec = ExperimentSpec(problem="heat1d", rungs=3, expected_order=2.0, **kw)
        return run_convergence_experiment(spec, synthetic_order=2.0), spec

    def test_report_schema(self, tmp_path):
        result, _ = self._result()
        paths = emit_outputs(result, tmp_path)
        report = (tmp_path / "report.csv").read_text().splitlines()
        assert report[0] == ("h,sup_error,l2h_error,pairwise_order,ls_order,"
                             "expected_order,pass")
        assert len(report) == 4  # header + 3 rungs
        assert (tmp_path / "plot.gp") in paths

    def test_rung_files(self, tmp_path):
        result, _ = self._result(seeds=(1, 2))
        emit_outputs(result, tmp_path)
        rung = (tmp_path / "rung_16.csv").read_text().splitlines()
        assert rung[0] == "seed,sup_error,l2h_error"
        assert len(rung) == 3

    def test_byte_identical_reruns(self, tmp_path):
        spec = ExperimentSpec(problem="degenerate1d", n=16, rungs=2,
                              seeds=(1, 2))
        a = run_convergence_experiment(spec)
        b = run_convergence_experiment(spec)
        emit_outputs(a, tmp_path / "a")
        emit_outputs(b, tmp_path / "b")
        for name in ("report.csv", "rung_16.csv", "rung_32.csv", "plot.gp"):
            assert (tmp_path / "a" / name).read_bytes() == \
                (tmp_path / "b" / name).read_bytes()

    def test_failure_marker_row(self, tmp_path):
        from spdefd.experiments import ExperimentResult
        result = ExperimentResult(kind="converge",
                                  spec=ExperimentSpec(problem="heat1d"),
                                  report=None, rung_points=[16],
                                  per_rung_errors={0: []},
                                  failed=True, failure="step 3: test failure")
        emit_outputs(result, tmp_path)
        report = (tmp_path / "report.csv").read_text()
        assert "FAILED,step 3: test failure" in report
        assert not (tmp_path / "plot.gp").exists()

    def test_plot_script_is_gnuplot(self, tmp_path):
        result, _ = self._result()
        emit_outputs(result, tmp_path)
        script = (tmp_path / "plot.gp").read_text()
        assert "set logscale xy" in script
        assert "$data << EOD" in script
        assert "plot $data" in script


class TestCorrectorExperiment:
    def test_heat_residual_study(self):
        spec = ExperimentSpec(problem="heat1d", n=32, points0=16, rungs=3,
                              refine=1, correctors_k=2,
                              expected_residual_order=4.0, order_tolerance=0.5)
        result = run_corrector_experiment(spec)
        assert not result.failed
        assert result.report.ls_order >= 3.6
        assert result.extras["odd_corrector_ratios"][1] <= 1e-9


class TestSelfcheck:
    def test_all_pass(self):
        results = selfcheck()
        assert len(results) == 3
        for name, ok, detail in results:
            assert ok, f"{name}: {detail}"


class TestCli:
    def test_selfcheck_exit_zero(self, capsys):
        assert main(["selfcheck"]) == 0
        out = capsys.readouterr().out
        assert out.count("PASS") == 3

    def test_converge_pass(self, tmp_path, capsys):
        cfg = write(tmp_path, MINIMAL + "\n[time]\nn = 32\n[run]\n"
                    f"expected_order = 2.0\norder_tolerance = 0.4\n"
                    f"out = {tmp_path / 'out'}\n")
        assert main(["converge", "--config", str(cfg)]) == 0
        assert (tmp_path / "out" / "report.csv").exists()
        assert "PASS" in capsys.readouterr().out

    def test_converge_fail_exit_one(self, tmp_path, capsys):
        cfg = write(tmp_path, MINIMAL + "\n[time]\nn = 32\n[run]\n"
                    f"expected_order = 3.5\norder_tolerance = 0.1\n"
                    f"out = {tmp_path / 'out'}\n")
        assert main(["converge", "--config", str(cfg)]) == 1

    def test_accelerate(self, tmp_path):
        cfg = write(tmp_path, MINIMAL + "\n[time]\nn = 32\n[extrapolation]\n"
                    "level = 1\n[run]\nexpected_order = 4.0\n"
                    f"order_tolerance = 0.5\nout = {tmp_path / 'out'}\n")
        assert main(["accelerate", "--config", str(cfg)]) == 0

    def test_solve_writes_trajectory(self, tmp_path):
        cfg = write(tmp_path, MINIMAL + f"\n[time]\nn = 8\n[run]\n"
                    f"out = {tmp_path / 'out'}\n")
        assert main(["solve", "--config", str(cfg)]) == 0
        assert (tmp_path / "out" / "trajectory.csv").exists()

    def test_solve_binary_format_flag(self, tmp_path):
        cfg = write(tmp_path, MINIMAL + f"\n[time]\nn = 8\n[run]\n"
                    f"out = {tmp_path / 'out'}\n")
        assert main(["solve", "--config", str(cfg), "--format", "binary"]) == 0
        assert (tmp_path / "out" / "trajectory.bin").exists()

    def test_config_error_exit_three(self, tmp_path, capsys):
        cfg = write(tmp_path, "[problem]\nname = nope\n")
        assert main(["converge", "--config", str(cfg)]) == 3
        assert "config error" in capsys.readouterr().err

    def test_missing_config_exit_three(self, tmp_path):
        assert main(["converge", "--config", str(tmp_path / "none.ini")]) == 3

    def test_seed_override(self, tmp_path):
        cfg = write(tmp_path, MINIMAL + f"\n[time]\nn = 8\n[run]\n"
                    f"out = {tmp_path / 'out'}\n")
        assert main(["solve", "--config", str(cfg), "--seeds", "5,6"]) == 0

    def test_correctors_subcommand(self, tmp_path):
        cfg = write(tmp_path, MINIMAL + "\n[time]\nn = 16\n[space]\nrungs = 2\n"
                    "[reference]\nrefine = 1\n[correctors]\nk = 2\n"
                    f"expected_residual_order = 4.0\n[run]\n"
                    f"order_tolerance = 0.6\nout = {tmp_path / 'out'}\n")
        assert main(["correctors", "--config", str(cfg)]) == 0
        assert (tmp_path / "out" / "corrector_order2.csv").exists()

    def test_threads_byte_identical_csv(self, tmp_path):
        body = ("[problem]\nname = degenerate1d\nbeta = 0.3\n"
                "[time]\nn = 16\n[space]\nrungs = 2\n[run]\nseeds = 1,2\n")
        cfg1 = write(tmp_path, body + f"out = {tmp_path / 'o1'}\n", "c1.ini")
        cfg2 = write(tmp_path, body + f"out = {tmp_path / 'o2'}\n", "c2.ini")
        assert main(["converge", "--config", str(cfg1), "--threads", "1"]) == 0
        assert main(["converge", "--config", str(cfg2), "--threads", "4"]) == 0
        for name in ("report.csv", "rung_16.csv", "rung_32.csv", "plot.gp"):
            assert (tmp_path / "o1" / name).read_bytes() == \
                (tmp_path / "o2" / name).read_bytes()
