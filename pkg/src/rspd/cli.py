"""Experiment harness: JSON run configurations, P* estimation, CSV traces,
SVG convergence plots and the ``rspd`` command line.
"""

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import algorithms
from .algorithms import SolverConfig, SolverResult
from .core import RunTrace, TraceRecord
from .data import load_libsvm, normalize_rows, train_test_split
from .errors import ConfigurationError, ContractViolation, NumericalFailure, RspdError
from .problems import AucProblem, DroProblem, make_synthetic

OUTPUT_ROOT_ENV = "RSPD_OUTPUT_ROOT"
CSV_HEADER = ["gradients", "seconds", "objective", "gap", "metric", "stage", "restart"]
PROBLEM_KINDS = ("dro", "auc", "synthetic")
SOLVER_KINDS = ("pdsg", "rspd_sc", "rspd", "arspd")
STEP_GRID = tuple(10.0**k for k in range(-5, 4))
PSTAR_BUDGET_FACTOR = 10
PSTAR_MIN_BUDGET = 10**5

_SOLVER_FIELDS = {f.name for f in fields(SolverConfig)} - {"seed", "budget"}
_PROBLEM_PARAMS = {
    "synthetic": {"n", "d", "mu_p", "lambda_d", "seed", "op_norm"},
    "dro": {"lambda1", "lambda2", "regularizer", "M", "B", "probe_radius"},
    "auc": {"radius", "ball", "lambda_reg", "M", "B", "probe_radius"},
}


@dataclass
class ExperimentConfig:
    """Declarative description of one experiment.

    ``problem`` holds ``kind``, an optional ``dataset`` path (plus
    ``test_dataset`` or ``test_fraction`` for AUC, ``subset``,
    ``normalize``, ``n_features``) and a ``params`` mapping. ``solver``
    holds ``kind`` and SolverConfig fields; PDSG takes ``eta_x``/``eta_y``.
    """

    problem: dict
    solver: dict
    seeds: list
    budget: int
    outputs: str = "outputs"
    name: str = "run"
    clock: str = "wall"
    step_grid: list = field(default_factory=lambda: list(STEP_GRID))

    @classmethod
    def from_dict(cls, raw):
        violations = validate_config(raw)
        if violations:
            raise ConfigurationError("invalid experiment configuration", violations)
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in raw.items() if k in known})

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(raw)

    def output_dir(self):
        out = Path(self.outputs)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not out.is_absolute():
            out = Path(root) / out
        return out

    def solver_config(self, seed, budget=None):
        kw = {k: v for k, v in self.solver.items() if k in _SOLVER_FIELDS}
        return SolverConfig(seed=seed, budget=self.budget if budget is None else budget, **kw)

    def hash(self):
        """Digest of everything that determines P*: problem, solver and budget."""
        blob = json.dumps({"problem": self.problem, "solver": self.solver, "budget": self.budget}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def validate_config(raw):
    """Return every violation found in a raw configuration mapping."""
    bad = []
    if not isinstance(raw, dict):
        return ["configuration must be a JSON object"]
    known = {f.name for f in fields(ExperimentConfig)}
    bad += [f"unknown top-level field {k!r}" for k in raw if k not in known]
    problem = raw.get("problem")
    if not isinstance(problem, dict):
        bad.append("problem: required object")
        problem = {}
    kind = problem.get("kind")
    if kind not in PROBLEM_KINDS:
        bad.append(f"problem.kind must be one of {PROBLEM_KINDS}, got {kind!r}")
    if kind in ("dro", "auc"):
        path = problem.get("dataset")
        if not path:
            bad.append("problem.dataset: required for dro/auc")
        elif not Path(path).exists():
            bad.append(f"problem.dataset: file {path!r} does not exist")
        test = problem.get("test_dataset")
        if test and not Path(test).exists():
            bad.append(f"problem.test_dataset: file {test!r} does not exist")
    params = problem.get("params", {})
    if not isinstance(params, dict):
        bad.append("problem.params must be an object")
    elif kind in _PROBLEM_PARAMS:
        bad += [f"problem.params: unknown parameter {k!r} for {kind}" for k in params if k not in _PROBLEM_PARAMS[kind]]
    subset = problem.get("subset")
    if subset is not None and not (isinstance(subset, int) and subset >= 1):
        bad.append(f"problem.subset must be a positive integer, got {subset!r}")
    tf = problem.get("test_fraction")
    if tf is not None and not (isinstance(tf, (int, float)) and 0 < tf < 1):
        bad.append(f"problem.test_fraction must lie in (0, 1), got {tf!r}")
    if problem.get("normalize", "none") not in ("none", "unit_l2"):
        bad.append("problem.normalize must be 'none' or 'unit_l2'")

    solver = raw.get("solver")
    if not isinstance(solver, dict):
        bad.append("solver: required object")
        solver = {}
    skind = solver.get("kind")
    if skind not in SOLVER_KINDS:
        bad.append(f"solver.kind must be one of {SOLVER_KINDS}, got {skind!r}")
    bad += [f"solver: unknown field {k!r}" for k in solver if k != "kind" and k not in _SOLVER_FIELDS]
    if skind == "pdsg":
        for name in ("eta_x", "eta_y"):
            val = solver.get(name)
            if not (isinstance(val, (int, float)) and val > 0):
                bad.append(f"solver.{name}: pdsg needs a positive step size")
    if skind == "rspd_sc" and kind == "auc":
        bad.append("solver.kind rspd_sc needs a strongly convex problem; auc has no mu")
    if skind == "rspd_sc" and kind == "dro" and params.get("regularizer", "l2_squared") != "l2_squared":
        bad.append("solver.kind rspd_sc needs the l2_squared regularizer for dro")
    try:
        SolverConfig(**{k: v for k, v in solver.items() if k in _SOLVER_FIELDS})
    except ConfigurationError as exc:
        bad += [f"solver: {v}" for v in exc.violations]
    except TypeError as exc:
        bad.append(f"solver: {exc}")

    seeds = raw.get("seeds")
    if not (isinstance(seeds, list) and seeds and all(isinstance(s, int) and s >= 0 for s in seeds)):
        bad.append("seeds: need a nonempty list of nonnegative integers")
    budget = raw.get("budget")
    if not (isinstance(budget, int) and not isinstance(budget, bool) and budget >= 0):
        bad.append(f"budget must be a nonnegative integer, got {budget!r}")
    if raw.get("clock", "wall") not in ("wall", "none"):
        bad.append("clock must be 'wall' or 'none'")
    grid = raw.get("step_grid")
    if grid is not None and not (isinstance(grid, list) and grid and all(isinstance(g, (int, float)) and g > 0 for g in grid)):
        bad.append("step_grid must be a nonempty list of positive numbers")
    return bad


def build_problem(config):
    """Instantiate the problem described by ``config.problem``."""
    spec = config.problem
    params = dict(spec.get("params", {}))
    kind = spec["kind"]
    if kind == "synthetic":
        return make_synthetic(
            params.pop("n", 10), params.pop("d", 5), params.pop("mu_p", 1.0),
            params.pop("lambda_d", 1.0), seed=params.pop("seed", 0), op_norm=params.pop("op_norm", 1.0),
        )
    dataset = load_libsvm(spec["dataset"], n_features=spec.get("n_features"))
    if spec.get("subset"):
        dataset = dataset.subset(np.arange(min(spec["subset"], dataset.n)))
    dataset = normalize_rows(dataset, spec.get("normalize", "none"))
    if kind == "dro":
        return DroProblem(dataset, **params)
    test = None
    if spec.get("test_dataset"):
        test = load_libsvm(spec["test_dataset"], n_features=dataset.d)
        test = normalize_rows(test, spec.get("normalize", "none"))
    elif spec.get("test_fraction"):
        dataset, test = train_test_split(dataset, spec["test_fraction"], seed=0)
    return AucProblem(dataset, eval_dataset=test, **params)


def _clock(config):
    return time.perf_counter if config.clock == "wall" else (lambda: 0.0)


def run_solver(problem, config, seed, budget=None, eta=None):
    """One run of the configured solver; ``eta`` overrides both step sizes."""
    budget = config.budget if budget is None else budget
    kind = config.solver["kind"]
    if kind == "pdsg":
        eta_x = config.solver["eta_x"] if eta is None else eta
        eta_y = config.solver["eta_y"] if eta is None else eta
        return algorithms.pdsg(
            problem, budget, eta_x, eta_y, seed=seed,
            log_interval=config.solver.get("log_interval"), clock=_clock(config),
        )
    scfg = config.solver_config(seed, budget)
    if eta is not None:
        scfg = replace(scfg, eta_x=eta, eta_y=eta)
    return algorithms.SOLVERS[kind](problem, scfg, clock=_clock(config))


def run_experiment(config, problem=None):
    """Run the configured solver once per seed; returns the results in seed order."""
    problem = build_problem(config) if problem is None else problem
    return [run_solver(problem, config, seed) for seed in config.seeds]


@dataclass(frozen=True)
class PStarEstimate:
    value: float
    method: str
    gradients_spent: int
    config_hash: str


class PStarCache:
    """JSON-file cache of P* estimates keyed by configuration hash."""

    def __init__(self, path=None):
        self.path = None if path is None else Path(path)
        self._memory = {}
        if self.path is not None and self.path.exists():
            with open(self.path) as fh:
                self._memory = json.load(fh)

    def get(self, key):
        hit = self._memory.get(key)
        return None if hit is None else PStarEstimate(**hit)

    def put(self, est):
        self._memory[est.config_hash] = asdict(est)
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            tmp = self.path.with_suffix(".tmp")
            with open(tmp, "w") as fh:
                json.dump(self._memory, fh, indent=1, sort_keys=True)
            os.replace(tmp, self.path)


def estimate_pstar(problem, budget, config_hash="", cache=None, solver_config=None, eta=None, seed=0):
    """Reference optimal value for gap curves.

    Closed form when the problem knows P*. Otherwise the smallest objective
    seen along a long run (rspd_sc when the problem is strongly convex,
    otherwise PDSG with step ``eta``); that is an upper bound on P*, so gaps
    computed from it are conservative.
    """
    if cache is not None:
        hit = cache.get(config_hash)
        if hit is not None:
            return hit
    if problem.optimal_value is not None:
        est = PStarEstimate(float(problem.optimal_value), "analytic", 0, config_hash)
    else:
        if budget < PSTAR_MIN_BUDGET:
            raise ConfigurationError(f"long-run P* estimation needs a budget >= {PSTAR_MIN_BUDGET}, got {budget}")
        if problem.constants.mu is not None:
            scfg = solver_config or SolverConfig(S_override=40, T_override=10**4)
            scfg = replace(scfg, seed=seed, budget=budget)
            if scfg.S_override is None and scfg.eps_target is None:
                scfg = replace(scfg, S_override=40)
            result = algorithms.rspd_sc(problem, scfg)
        else:
            step = eta if eta is not None else 1e-2
            result = algorithms.pdsg(problem, budget, step, step, seed=seed)
        best = min(float(np.nanmin(result.trace.column("objective"))), problem.primal_objective(result.final_primal))
        est = PStarEstimate(best, "long_run", result.gradients_total, config_hash)
    if cache is not None:
        cache.put(est)
    return est


def experiment_pstar(config, problem, cache=None):
    """P* for an experiment: long runs get ``PSTAR_BUDGET_FACTOR`` x its budget."""
    kind = config.solver["kind"]
    scfg = None
    eta = None
    if kind == "rspd_sc":
        scfg = config.solver_config(0)
    elif kind == "pdsg":
        eta = config.solver["eta_x"]
    budget = max(PSTAR_BUDGET_FACTOR * config.budget, PSTAR_MIN_BUDGET)
    return estimate_pstar(problem, budget, config.hash(), cache, solver_config=scfg, eta=eta)


def _fmt(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{x:.17g}"


def write_trace_csv(result, path, pstar=None):
    """Write one trace as CSV; ``gap`` is objective - pstar (blank without pstar)."""
    path = Path(path)
    trace = result.trace if isinstance(result, SolverResult) else result
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in trace:
                gap = None if pstar is None else r.objective - pstar
                w.writerow([_fmt(r.gradients), _fmt(r.seconds), _fmt(r.objective), _fmt(gap),
                            _fmt(r.metric), _fmt(r.stage), _fmt(r.restart)])
    except OSError as exc:
        raise OSError(f"cannot write trace {path}: {exc}") from exc
    return path


def write_traces(results, seeds, directory, pstar=None, prefix="seed"):
    return [write_trace_csv(r, Path(directory) / f"{prefix}{s}.csv", pstar) for r, s in zip(results, seeds)]


def read_trace_csv(path):
    """Parse a trace CSV back; returns ``(RunTrace, gaps)``."""
    trace = RunTrace()
    gaps = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise ContractViolation(f"{path}: unexpected header {header}")
        for row in reader:
            g, sec, obj, gap, metric, stage, restart = row
            trace.append(TraceRecord(
                int(g), float(sec), float(obj),
                None if metric == "" else float(metric),
                int(stage),
                None if restart == "" else int(restart),
            ))
            gaps.append(None if gap == "" else float(gap))
    return trace, gaps


# ---------------------------------------------------------------- plotting

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")
_W, _H = 640, 420
_ML, _MR, _MT, _MB = 80, 170, 30, 60


def decade_ticks(lo, hi):
    """Exponents of the powers of ten covering [lo, hi] (both > 0)."""
    if not (lo > 0 and hi >= lo):
        raise ContractViolation(f"need 0 < lo <= hi, got [{lo}, {hi}]")
    a = math.floor(math.log10(lo) + 1e-12)
    b = math.ceil(math.log10(hi) - 1e-12)
    return list(range(a, max(b, a + 1) + 1)) if b == a else list(range(a, b + 1))


def _linear_ticks(lo, hi, count=5):
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * k / (count - 1) for k in range(count)]


def _read_columns(path, x_column, y_column):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and (x_column not in rows[0] or y_column not in rows[0]):
        raise ContractViolation(f"{path}: missing column {x_column!r} or {y_column!r}")
    xs, ys = [], []
    for r in rows:
        if r[x_column] == "" or r[y_column] == "":
            continue
        xs.append(float(r[x_column]))
        ys.append(float(r[y_column]))
    return xs, ys


def emit_plot(csv_paths, y_column, x_column, path):
    """Line chart of trace CSVs as a standalone SVG file.

    The gap axis is logarithmic with ticks at every decade; nonpositive gaps
    are omitted there. Output bytes depend only on the inputs.
    """
    if y_column not in ("gap", "metric") or x_column not in ("gradients", "seconds"):
        raise ContractViolation(f"unsupported axes x={x_column!r}, y={y_column!r}")
    if not csv_paths:
        raise ContractViolation("need at least one trace to plot")
    log_y = y_column == "gap"
    series = []
    for p in csv_paths:
        xs, ys = _read_columns(p, x_column, y_column)
        if log_y:
            keep = [(x, y) for x, y in zip(xs, ys) if y > 0]
            xs, ys = [k[0] for k in keep], [k[1] for k in keep]
        series.append((Path(p).stem, xs, ys))
    all_x = [x for _, xs, _ in series for x in xs]
    all_y = [y for _, _, ys in series for y in ys]
    if not all_x:
        raise ContractViolation(f"no plottable {y_column!r} values in the given traces")
    x_lo, x_hi = min(all_x), max(all_x)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if log_y:
        ticks = decade_ticks(min(all_y), max(all_y))
        y_lo, y_hi = float(ticks[0]), float(ticks[-1])
        ty = math.log10
        y_ticks = [(float(k), f"1e{k}") for k in ticks]
    else:
        y_lo, y_hi = min(all_y), max(all_y)
        if y_hi == y_lo:
            y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
        ty = float
        y_ticks = [(v, f"{v:.3g}") for v in _linear_ticks(y_lo, y_hi)]
    pw, ph = _W - _ML - _MR, _H - _MT - _MB

    def px(x):
        return _ML + pw * (x - x_lo) / (x_hi - x_lo)

    def py(v):
        return _MT + ph * (1.0 - (v - y_lo) / (y_hi - y_lo))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="11">',
        f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" fill="none" stroke="#000"/>',
    ]
    for v, label in y_ticks:
        y = py(v)
        out.append(f'<line class="ytick" x1="{_ML - 4}" y1="{y:.2f}" x2="{_ML + pw}" y2="{y:.2f}" stroke="#ddd"/>')
        out.append(f'<text x="{_ML - 6}" y="{y + 4:.2f}" text-anchor="end">{label}</text>')
    for v in _linear_ticks(x_lo, x_hi):
        x = px(v)
        out.append(f'<line x1="{x:.2f}" y1="{_MT + ph}" x2="{x:.2f}" y2="{_MT + ph + 4}" stroke="#000"/>')
        out.append(f'<text x="{x:.2f}" y="{_MT + ph + 16}" text-anchor="middle">{v:.4g}</text>')
    out.append(f'<text x="{_ML + pw / 2:.2f}" y="{_H - 15}" text-anchor="middle">{x_column}</text>')
    out.append(f'<text x="18" y="{_MT + ph / 2:.2f}" text-anchor="middle" transform="rotate(-90 18 {_MT + ph / 2:.2f})">{y_column}</text>')
    for k, (label, xs, ys) in enumerate(series):
        color = _PALETTE[k % len(_PALETTE)]
        if xs:
            pts = " L ".join(f"{px(x):.2f} {py(ty(y)):.2f}" for x, y in zip(xs, ys))
            out.append(f'<path class="series" d="M {pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = _MT + 14 + 16 * k
        out.append(f'<line x1="{_ML + pw + 10}" y1="{ly - 4}" x2="{_ML + pw + 30}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{_ML + pw + 34}" y="{ly}">{_escape(label)}</text>')
    out.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(out) + "\n")
    return path


def _escape(s):
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


# --------------------------------------------------------------- commands


def sweep(config, problem=None, seed=None):
    """Tune the step size over ``config.step_grid`` on one seed.

    Both step sizes are set to each grid value; the value with the lowest
    final objective wins. Diverged runs score +inf.
    """
    problem = build_problem(config) if problem is None else problem
    seed = config.seeds[0] if seed is None else seed
    rows = []
    for eta in config.step_grid:
        try:
            res = run_solver(problem, config, seed, eta=eta)
            final = float(problem.primal_objective(res.final_primal))
            status = "ok" if math.isfinite(final) else "diverged"
        except NumericalFailure:
            res, final, status = None, math.inf, "diverged"
        rows.append({"eta": eta, "final_objective": final, "status": status, "result": res})
    best = min(rows, key=lambda r: r["final_objective"])
    return best["eta"], rows


def cmd_run(args):
    config = ExperimentConfig.load(args.config)
    problem = build_problem(config)
    out = config.output_dir() / config.name
    cache = PStarCache(config.output_dir() / "pstar_cache.json")
    pstar = experiment_pstar(config, problem, cache)
    results = run_experiment(config, problem)
    paths = write_traces(results, config.seeds, out, pstar.value)
    summary = {
        "config_hash": config.hash(),
        "pstar": asdict(pstar),
        "runs": [
            {"seed": s, "csv": str(p), "gradients": r.gradients_total,
             "final_objective": float(problem.primal_objective(r.final_primal)),
             "stages_completed": r.stages_completed}
            for s, p, r in zip(config.seeds, paths, results)
        ],
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    for p in paths:
        print(p)
    return 0


def cmd_pstar(args):
    config = ExperimentConfig.load(args.config)
    problem = build_problem(config)
    cache = PStarCache(config.output_dir() / "pstar_cache.json")
    est = experiment_pstar(config, problem, cache)
    print(json.dumps(asdict(est), sort_keys=True))
    return 0


def cmd_plot(args):
    print(emit_plot(args.csv, args.y, args.x, args.output))
    return 0


def cmd_sweep(args):
    config = ExperimentConfig.load(args.config)
    problem = build_problem(config)
    best, rows = sweep(config, problem)
    out = config.output_dir() / config.name / "tuning"
    for r in rows:
        if r["result"] is not None:
            write_trace_csv(r["result"], out / f"tuning_eta{r['eta']:g}.csv")
    table = [{k: v for k, v in r.items() if k != "result"} for r in rows]
    for r in table:
        if not math.isfinite(r["final_objective"]):
            r["final_objective"] = None
    (out / "sweep.json").write_text(json.dumps({"best_eta": best, "grid": table}, indent=1) + "\n")
    print(json.dumps({"best_eta": best}))
    return 0


def make_parser():
    parser = argparse.ArgumentParser(prog="rspd", description="Restarted stochastic primal-dual experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run an experiment and write CSV traces")
    p.add_argument("config")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("pstar", help="estimate (and cache) the reference optimal value")
    p.add_argument("config")
    p.set_defaults(func=cmd_pstar)
    p = sub.add_parser("plot", help="draw trace CSVs as an SVG line chart")
    p.add_argument("--x", choices=("gradients", "seconds"), default="gradients")
    p.add_argument("--y", choices=("gap", "metric"), default="gap")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("csv", nargs="+")
    p.set_defaults(func=cmd_plot)
    p = sub.add_parser("sweep", help="tune the step size over a grid of decades")
    p.add_argument("config")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except RspdError as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error [io]: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
