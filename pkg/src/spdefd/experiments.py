"""Configuration-driven experiment runner with CSV and plot-script outputs.

Experiments are declared in an INI-style file (``[section]`` headers, ``key =
value`` pairs, ``#`` comments).  Unknown sections or keys are errors; every
key has a documented default.  The full schema:

    [problem]       name (required); any further numeric keys are passed to
                    the named problem builder (e.g. nu, beta, gamma,
                    extra_diffusion, chi, T).  name = custom declares a 1-d
                    constant-coefficient problem inline through the keys
                    a00, a01, a10, a11, b01, b11, T.
    [scheme]        constructor = example1 | example2
    [time]          n = 256
    [space]         period = 1.0, points0 = 16, rungs = 3
    [extrapolation] level = 1, base = auto | 2 | 4
    [reference]     mode = auto | spectral | fine-grid, refine = 3
    [correctors]    k = 2, expected_residual_order (optional)
    [run]           seeds = 1 (comma-separated), expected_order (optional),
                    order_tolerance = 0.25, out = out, format = csv | binary,
                    threads = 1

Errors are measured pathwise against the reference time-scheme solution
driven by the same Wiener increments, as max over time of the sup over grid
points; squared errors are averaged over the seed set before order fitting,
so the reported quantity realizes the expected squared sup norm.

Outputs: ``report.csv`` with columns (h, sup_error, l2h_error,
pairwise_order, ls_order, expected_order, pass); one ``rung_<points>.csv``
per mesh with per-seed errors; and ``plot.gp``, a self-contained gnuplot
script (log-log error against h with a reference-slope guide line).  All
output bytes are determined by the spec and seeds alone, regardless of the
thread count.
"""

import concurrent.futures
import configparser
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grids import grid_norms, make_torus_grid
from .problems import (
    DifferentialProblem,
    ProblemError,
    build_scheme_example1,
    build_scheme_example2,
    make_problem,
)
from .richardson import (
    ConvergenceReport,
    estimate_order,
    richardson_combine,
    vandermonde_weights,
)
from .stepper import (
    SolveFailure,
    run_reference_time_scheme,
    run_space_time_scheme,
)
from .wiener import sample_increments


class ConfigError(ValueError):
    """Malformed configuration: parse error, unknown key, or bad value."""


def _parse_seeds(text: str):
    try:
        seeds = tuple(int(tok) for tok in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"bad seeds list {text!r}") from exc
    if not seeds:
        raise ConfigError("seeds list must not be empty")
    return seeds


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything needed to reproduce one experiment byte-for-byte."""

    problem: str = ""
    problem_params: tuple = ()          # sorted (key, value) pairs
    scheme: str = "example1"
    n: int = 256
    period: float = 1.0
    points0: int = 16
    rungs: int = 3
    level: int = 1
    base: str = "auto"
    reference_mode: str = "auto"
    refine: int = 3
    correctors_k: int = 2
    expected_residual_order: float | None = None
    seeds: tuple = (1,)
    expected_order: float | None = None
    order_tolerance: float = 0.25
    out: str = "out"
    format: str = "csv"
    threads: int = 1

    def params_dict(self) -> dict:
        return dict(self.problem_params)


_SCHEMA = {
    "problem": None,  # free-form numeric keys besides "name"
    "scheme": {"constructor": str},
    "time": {"n": int},
    "space": {"period": float, "points0": int, "rungs": int},
    "extrapolation": {"level": int, "base": str},
    "reference": {"mode": str, "refine": int},
    "correctors": {"k": int, "expected_residual_order": float},
    "run": {"seeds": str, "expected_order": float, "order_tolerance": float,
            "out": str, "format": str, "threads": int},
}

_INLINE_KEYS = ("a00", "a01", "a10", "a11", "b01", "b11", "T")


def load_config(path) -> ExperimentSpec:
    """Parse and validate a configuration file into an ExperimentSpec."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",),
                                       interpolation=None, delimiters=("=",))
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
    known = _SCHEMA

    def get(section, key, cast, default):
        if not parser.has_section(section) or not parser.has_option(section, key):
            return default
        raw = parser.get(section, key).strip()
        if raw == "":
            return default
        try:
            return cast(raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: bad value {raw!r}") from exc

    for section, keys in known.items():
        if keys is None or not parser.has_section(section):
            continue
        for key in parser.options(section):
            if key not in keys:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")

    if not parser.has_section("problem") or not parser.has_option("problem", "name"):
        raise ConfigError("missing required key: [problem] name")
    name = parser.get("problem", "name").strip()
    params = []
    for key in parser.options("problem"):
        if key == "name":
            continue
        raw = parser.get("problem", key).strip()
        try:
            params.append((key, float(raw)))
        except ValueError as exc:
            raise ConfigError(f"[problem] {key}: expected a number, got "
                              f"{raw!r}") from exc

    spec = ExperimentSpec(
        problem=name,
        problem_params=tuple(sorted(params)),
        scheme=get("scheme", "constructor", str, "example1"),
        n=get("time", "n", int, 256),
        period=get("space", "period", float, 1.0),
        points0=get("space", "points0", int, 16),
        rungs=get("space", "rungs", int, 3),
        level=get("extrapolation", "level", int, 1),
        base=get("extrapolation", "base", str, "auto"),
        reference_mode=get("reference", "mode", str, "auto"),
        refine=get("reference", "refine", int, 3),
        correctors_k=get("correctors", "k", int, 2),
        expected_residual_order=get("correctors", "expected_residual_order",
                                    float, None),
        seeds=get("run", "seeds", _parse_seeds, (1,)),
        expected_order=get("run", "expected_order", float, None),
        order_tolerance=get("run", "order_tolerance", float, 0.25),
        out=get("run", "out", str, "out"),
        format=get("run", "format", str, "csv"),
        threads=get("run", "threads", int, 1),
    )
    _validate_spec(spec)
    return spec


def _validate_spec(spec: ExperimentSpec):
    if spec.scheme not in ("example1", "example2"):
        raise ConfigError(f"unknown scheme constructor {spec.scheme!r}")
    if spec.base not in ("auto", "2", "4"):
        raise ConfigError(f"extrapolation base must be auto, 2, or 4, "
                          f"not {spec.base!r}")
    if spec.reference_mode not in ("auto", "spectral", "fine-grid"):
        raise ConfigError(f"unknown reference mode {spec.reference_mode!r}")
    if spec.format not in ("csv", "binary"):
        raise ConfigError(f"unknown output format {spec.format!r}")
    if spec.n < 1:
        raise ConfigError("need at least one time step")
    if spec.points0 < 2:
        raise ConfigError("points0 must be >= 2")
    if spec.rungs < 1:
        raise ConfigError("rungs must be >= 1")
    if spec.level < 0:
        raise ConfigError("extrapolation level must be >= 0")
    if spec.refine < 0:
        raise ConfigError("refine must be >= 0")
    if spec.threads < 1:
        raise ConfigError("threads must be >= 1")
    if spec.correctors_k < 0:
        raise ConfigError("correctors k must be >= 0")


def save_config(spec: ExperimentSpec, path) -> None:
    """Serialize a spec back to the configuration format (round-trips)."""
    lines = ["[problem]", f"name = {spec.problem}"]
    for key, value in spec.problem_params:
        lines.append(f"{key} = {format(value, '.17g')}")
    lines += [
        "",
        "[scheme]",
        f"constructor = {spec.scheme}",
        "",
        "[time]",
        f"n = {spec.n}",
        "",
        "[space]",
        f"period = {format(spec.period, '.17g')}",
        f"points0 = {spec.points0}",
        f"rungs = {spec.rungs}",
        "",
        "[extrapolation]",
        f"level = {spec.level}",
        f"base = {spec.base}",
        "",
        "[reference]",
        f"mode = {spec.reference_mode}",
        f"refine = {spec.refine}",
        "",
        "[correctors]",
        f"k = {spec.correctors_k}",
    ]
    if spec.expected_residual_order is not None:
        lines.append("expected_residual_order = "
                     f"{format(spec.expected_residual_order, '.17g')}")
    lines += [
        "",
        "[run]",
        f"seeds = {','.join(str(s) for s in spec.seeds)}",
    ]
    if spec.expected_order is not None:
        lines.append(f"expected_order = {format(spec.expected_order, '.17g')}")
    lines += [
        f"order_tolerance = {format(spec.order_tolerance, '.17g')}",
        f"out = {spec.out}",
        f"format = {spec.format}",
        f"threads = {spec.threads}",
        "",
    ]
    Path(path).write_text("\n".join(lines), encoding="utf-8")


def build_problem(spec: ExperimentSpec) -> DifferentialProblem:
    params = spec.params_dict()
    if spec.problem == "custom":
        unknown = set(params) - set(_INLINE_KEYS)
        if unknown:
            raise ConfigError(f"unknown inline coefficient keys {sorted(unknown)}; "
                              f"allowed: {_INLINE_KEYS}")
        a = {}
        for key, idx in (("a00", (0, 0)), ("a01", (0, 1)), ("a10", (1, 0)),
                         ("a11", (1, 1))):
            if params.get(key):
                a[idx] = params[key]
        b = {}
        for key, idx in (("b01", (0, 1)), ("b11", (1, 1))):
            if params.get(key):
                b[idx] = params[key]
        return DifferentialProblem(
            d=1, d1=1 if b else 0, T=params.get("T", 0.5), a=a, b=b,
            u0=lambda x: np.cos(2.0 * np.pi * x[..., 0]),
            constant_coefficients=True, name="custom")
    try:
        return make_problem(spec.problem, **params)
    except ProblemError as exc:
        raise ConfigError(str(exc)) from exc


def build_scheme(spec: ExperimentSpec, problem: DifferentialProblem):
    if spec.scheme == "example1":
        return build_scheme_example1(problem)
    return build_scheme_example2(problem)


def _resolve_base(spec: ExperimentSpec, scheme) -> int:
    if spec.base == "auto":
        return 4 if scheme.is_symmetric else 2
    return int(spec.base)


def _resolve_reference_mode(spec: ExperimentSpec, problem) -> str:
    if spec.reference_mode == "auto":
        return ("spectral-const-coef" if problem.constant_coefficients
                else "fine-grid")
    if spec.reference_mode == "spectral":
        return "spectral-const-coef"
    return "fine-grid"


def ladder_grids(spec: ExperimentSpec, problem, extra: int = 0):
    d = problem.d
    return [make_torus_grid(d, [spec.period] * d,
                            [spec.points0 * 2 ** j] * d)
            for j in range(spec.rungs + extra)]


@dataclass
class ExperimentResult:
    kind: str
    spec: ExperimentSpec
    report: ConvergenceReport | None
    rung_points: list
    per_rung_errors: dict            # rung index -> [(seed, sup, l2h), ...]
    failed: bool = False
    failure: str = ""
    extras: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return (not self.failed) and self.report is not None and self.report.passed


def _max_error(traj, ref) -> tuple[float, float]:
    """max over time of (sup, l2h) norms of the difference."""
    sup = 0.0
    l2h = 0.0
    for a, b in zip(traj.fields, ref.fields):
        s, l = grid_norms(a - b)
        sup = max(sup, s)
        l2h = max(l2h, l)
    return sup, l2h


def run_convergence_experiment(spec: ExperimentSpec, accelerate: bool = False,
                               synthetic_order: float | None = None) -> ExperimentResult:
    """Measure the convergence order of the plain or extrapolated scheme.

    For every seed the same increments drive every rung; the reference
    solution (same time grid, same increments) is computed once per seed on
    the finest mesh and restricted to each rung's grid.  ``synthetic_order``
    short-circuits the solver and injects an exact power law; it exists to
    validate the harness plumbing end to end.
    """
    kind = "accelerate" if accelerate else "converge"
    if spec.rungs < 2:
        raise ConfigError("convergence experiments need rungs >= 2")

    if synthetic_order is not None:
        hs = [spec.period / (spec.points0 * 2 ** j) for j in range(spec.rungs)]
        errors = [0.5 * h ** synthetic_order for h in hs]
        report = estimate_order(hs, errors, spec.expected_order,
                                spec.order_tolerance, l2h_errors=errors)
        per_rung = {j: [(s, errors[j], errors[j]) for s in spec.seeds]
                    for j in range(spec.rungs)}
        return ExperimentResult(kind=kind, spec=spec, report=report,
                                rung_points=[spec.points0 * 2 ** j
                                             for j in range(spec.rungs)],
                                per_rung_errors=per_rung,
                                extras={"synthetic_order": synthetic_order})

    problem = build_problem(spec)
    scheme = build_scheme(spec, problem)
    level = spec.level if accelerate else 0
    weights = vandermonde_weights(level, _resolve_base(spec, scheme)) \
        if accelerate else None
    ref_mode = _resolve_reference_mode(spec, problem)
    grids = ladder_grids(spec, problem, extra=level)
    tau = problem.T / spec.n

    # one increments object per seed, shared read-only by every rung (all
    # meshes ride the same Wiener path at the fixed time grid)
    increments_by_seed = {
        seed: (sample_increments(spec.n, problem.d1, tau, seed)
               if problem.d1 > 0 else None)
        for seed in spec.seeds}

    def solve_task(seed, mesh_index):
        return run_space_time_scheme(problem, scheme, grids[mesh_index],
                                     spec.n, increments_by_seed[seed])

    tasks = [(seed, j) for seed in spec.seeds for j in range(len(grids))]
    solutions = {}
    failures = {}
    if spec.threads > 1:
        with concurrent.futures.ThreadPoolExecutor(spec.threads) as pool:
            futures = {pool.submit(solve_task, seed, j): (seed, j)
                       for seed, j in tasks}
            for fut in concurrent.futures.as_completed(futures):
                key = futures[fut]
                try:
                    solutions[key] = fut.result()
                except SolveFailure as exc:
                    failures[key] = str(exc)
    else:
        for seed, j in tasks:
            try:
                solutions[(seed, j)] = solve_task(seed, j)
            except SolveFailure as exc:
                failures[(seed, j)] = str(exc)
                break
    # report the first failure in task order so output bytes do not depend
    # on the thread schedule
    failure = None
    for key in tasks:
        if key in failures:
            failure = f"seed {key[0]}, mesh {key[1]}: {failures[key]}"
            break

    rung_points = [spec.points0 * 2 ** j for j in range(spec.rungs)]
    per_rung = {j: [] for j in range(spec.rungs)}
    if failure is not None:
        return ExperimentResult(kind=kind, spec=spec, report=None,
                                rung_points=rung_points, per_rung_errors=per_rung,
                                failed=True, failure=failure)

    hs = [g.h for g in grids[:spec.rungs]]
    sup_sq = np.zeros(spec.rungs)
    l2h_sq = np.zeros(spec.rungs)
    for seed in spec.seeds:
        increments = (sample_increments(spec.n, problem.d1, tau, seed)
                      if problem.d1 > 0 else None)
        try:
            reference = run_reference_time_scheme(
                problem, grids[-1], spec.n, increments, mode=ref_mode,
                refine=spec.refine)
        except SolveFailure as exc:
            return ExperimentResult(kind=kind, spec=spec, report=None,
                                    rung_points=rung_points,
                                    per_rung_errors=per_rung, failed=True,
                                    failure=f"reference, seed {seed}: {exc}")
        for j in range(spec.rungs):
            if accelerate:
                window = [solutions[(seed, j + m)] for m in range(level + 1)]
                candidate = richardson_combine(window, weights)
            else:
                candidate = solutions[(seed, j)]
            ref_j = reference.restricted(grids[-1].shape[0]
                                         // candidate.grid.shape[0])
            sup, l2h = _max_error(candidate, ref_j)
            per_rung[j].append((seed, sup, l2h))
            sup_sq[j] += sup ** 2
            l2h_sq[j] += l2h ** 2

    nseeds = len(spec.seeds)
    sup_errors = list(np.sqrt(sup_sq / nseeds))
    l2h_errors = list(np.sqrt(l2h_sq / nseeds))
    report = estimate_order(hs, sup_errors, spec.expected_order,
                            spec.order_tolerance, l2h_errors=l2h_errors)
    extras = {"reference_mode": ref_mode}
    if accelerate:
        extras.update(base=weights.base, level=level)
    return ExperimentResult(kind=kind, spec=spec, report=report,
                            rung_points=rung_points, per_rung_errors=per_rung,
                            extras=extras)


# ---------------------------------------------------------------------------
# Output emission
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, float):
        if math.isnan(x):
            return ""
        return format(x, ".17g")
    return str(x)


REPORT_HEADER = "h,sup_error,l2h_error,pairwise_order,ls_order,expected_order,pass"


def emit_outputs(result: ExperimentResult, out_dir) -> list:
    """Write report.csv, per-rung CSVs, and plot.gp; returns written paths.

    A failed experiment flushes whatever rows exist plus a FAILED marker row.
    An empty ladder produces the report only (no plot). Identical inputs give
    byte-identical outputs.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []

    report_path = out / "report.csv"
    buf = io.StringIO()
    buf.write(REPORT_HEADER + "\n")
    if result.report is not None:
        for row in result.report.csv_rows():
            buf.write(",".join(_fmt(v) for v in row) + "\n")
    if result.failed:
        buf.write(f"FAILED,{result.failure}\n")
    report_path.write_text(buf.getvalue(), encoding="utf-8")
    paths.append(report_path)

    for j, points in enumerate(result.rung_points):
        rung_path = out / f"rung_{points}.csv"
        rows = ["seed,sup_error,l2h_error"]
        for seed, sup, l2h in result.per_rung_errors.get(j, []):
            rows.append(f"{seed},{_fmt(sup)},{_fmt(l2h)}")
        if result.failed:
            rows.append("FAILED,,")
        rung_path.write_text("\n".join(rows) + "\n", encoding="utf-8")
        paths.append(rung_path)

    if result.report is not None and result.report.hs and not result.failed:
        paths.append(_emit_plot_script(result, out / "plot.gp"))
    return paths


def _emit_plot_script(result: ExperimentResult, path: Path) -> Path:
    report = result.report
    guide_order = (report.expected_order if report.expected_order is not None
                   else round(report.ls_order, 1))
    anchor_h = report.hs[0]
    anchor_e = report.sup_errors[0]
    c = anchor_e / anchor_h ** guide_order if anchor_h > 0 else 1.0
    lines = [
        f"# {result.kind} study: sup/l2h error against mesh width",
        "set logscale xy",
        "set xlabel 'h'",
        "set ylabel 'error'",
        "set key left top",
        "set grid",
        "$data << EOD",
    ]
    for h, sup, l2h in zip(report.hs, report.sup_errors,
                           report.l2h_errors or [float("nan")] * len(report.hs)):
        lines.append(f"{_fmt(h)} {_fmt(sup)} {_fmt(l2h)}")
    lines += [
        "EOD",
        "plot $data using 1:2 with linespoints title 'sup error', \\",
        "     $data using 1:3 with linespoints title 'l2h error', \\",
        f"     {_fmt(c)}*x**{_fmt(float(guide_order))} "
        f"with lines dashtype 2 title 'order {_fmt(float(guide_order))} guide'",
        "",
    ]
    path.write_text("\n".join(lines), encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Corrector study and self-check
# ---------------------------------------------------------------------------

def run_corrector_experiment(spec: ExperimentSpec) -> ExperimentResult:
    """Expansion-residual decay over the mesh ladder plus the odd-corrector
    vanishing check for symmetric schemes."""
    from .correctors import expansion_residual, run_corrector_system

    if spec.rungs < 2:
        raise ConfigError("corrector experiments need rungs >= 2")
    problem = build_problem(spec)
    scheme = build_scheme(spec, problem)
    ref_mode = _resolve_reference_mode(spec, problem)
    grids = ladder_grids(spec, problem)
    refgrid = grids[-1].refined(2 ** spec.refine)
    tau = problem.T / spec.n
    seed = spec.seeds[0]
    increments = (sample_increments(spec.n, problem.d1, tau, seed)
                  if problem.d1 > 0 else None)

    try:
        cs = run_corrector_system(spec.correctors_k, problem, scheme, refgrid,
                                  spec.n, increments, reference_mode=ref_mode,
                                  refine=spec.refine)
        hs, sups, l2hs = [], [], []
        per_rung = {}
        for j, g in enumerate(grids):
            traj = run_space_time_scheme(problem, scheme, g, spec.n, increments)
            rep = expansion_residual(traj, cs)
            hs.append(g.h)
            sups.append(rep.max_sup)
            l2hs.append(rep.max_l2h)
            per_rung[j] = [(seed, rep.max_sup, rep.max_l2h)]
    except SolveFailure as exc:
        return ExperimentResult(kind="correctors", spec=spec, report=None,
                                rung_points=[g.shape[0] for g in grids],
                                per_rung_errors={}, failed=True,
                                failure=str(exc))

    report = estimate_order(hs, sups, spec.expected_residual_order,
                            spec.order_tolerance, l2h_errors=l2hs)
    scale = max(max(np.max(np.abs(f.values)) for f in cs[0].fields), 1e-300)
    odd_ratios = {}
    for j in range(1, spec.correctors_k + 1, 2):
        worst = max(np.max(np.abs(f.values)) for f in cs[j].fields)
        odd_ratios[j] = worst / scale
    return ExperimentResult(kind="correctors", spec=spec, report=report,
                            rung_points=[g.shape[0] for g in grids],
                            per_rung_errors=per_rung,
                            extras={"odd_corrector_ratios": odd_ratios,
                                    "reference_mode": ref_mode,
                                    "corrector_set": cs})


def selfcheck() -> list[tuple[str, bool, str]]:
    """Fast structural checks: weight identities, summation by parts, and a
    dense-elimination oracle for the implicit solve.  Returns (name, ok,
    detail) triples."""
    from .grids import forward_difference
    from .problems import DifferenceScheme
    from .grids import basis_stencil
    from .stepper import assemble_implicit_operator

    results = []

    worst = 0.0
    for k in range(7):
        for base in (2, 4):
            worst = max(worst, vandermonde_weights(k, base).identity_residual())
    results.append(("weight-identities", worst <= 1e-12,
                    f"max residual {worst:.2e}"))

    g = make_torus_grid(2, [1.0, 1.0], [8, 8])
    rng = np.random.default_rng(12345)
    worst = 0.0
    for _ in range(4):
        f = g.field(rng.standard_normal(g.shape))
        w = g.field(rng.standard_normal(g.shape))
        lam = (1, 1)
        lhs = g.h ** 2 * np.sum(forward_difference(f, lam, g.h).values * w.values)
        rhs = -g.h ** 2 * np.sum(f.values
                                 * forward_difference(w, lam, g.h, -1).values)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1.0))
    results.append(("summation-by-parts", worst <= 1e-12,
                    f"max relative residual {worst:.2e}"))

    g1 = make_torus_grid(1, [1.0], [8])
    scheme = DifferenceScheme(
        stencil=basis_stencil(1), d1=0,
        a={((1,), (1,)): lambda i, x: 1.0 + 0.4 * np.sin(2 * np.pi * x[..., 0])},
        p={(1,): 0.3})
    tau = 0.05
    op = assemble_implicit_operator(scheme, g1, tau, g1.h, 0)
    # dense oracle: shift matrices composed with plain matrix algebra
    N = 8
    x = g1.coordinates
    eye = np.eye(N)
    rows = np.arange(N)
    T_plus = np.zeros((N, N)); T_plus[rows, (rows + 1) % N] = 1.0
    T_minus = np.zeros((N, N)); T_minus[rows, (rows - 1) % N] = 1.0
    sym = (T_plus - T_minus) / (2 * g1.h)
    L = (np.diag(1.0 + 0.4 * np.sin(2 * np.pi * x[..., 0])) @ sym @ sym
         + 0.3 * (T_plus - eye) / g1.h)
    rhs = rng.standard_normal(N)
    ours = op.solve(g1.field(rhs)).values
    oracle = np.linalg.solve(eye - tau * L, rhs)
    gap = float(np.max(np.abs(ours - oracle)))
    results.append(("dense-solve-oracle", gap <= 1e-11, f"max gap {gap:.2e}"))
    return results
