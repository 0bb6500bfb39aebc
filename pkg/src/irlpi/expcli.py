"""Experiment harness: configuration files, training runs, rollouts and
controller comparisons.

Configuration files are plain ``key = value`` text grouped into the sections
``[scenario]``, ``[solver]``, ``[run]`` and ``[output]``.  Numbers may be
written as simple arithmetic in ``pi`` (``-pi``, ``pi/2``); vectors are
comma separated.  Keys may use ``-`` or ``_``.
"""

import argparse
import ast
import configparser
import csv
import dataclasses
import json
import logging
import math
import operator
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import circumnav as cn
from .costfn import CostConfig, quadratic_state_cost
from .errors import ConfigError, DimensionError, IRLError
from .pisolver import IRLProblem, SolverConfig, make_policy, solve, write_log
from .sysmodel import scalar_linear_model
from .valuefn import ValueApproximator, load_weights, make_paper_basis, save_weights, tensor_basis

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_SIMULATION = 0, 2, 3, 4

CSV_COLUMNS = (
    "t", "x", "y", "theta", "x_t", "y_t", "theta_t", "r_h", "e_r", "eta",
    "u_s", "u_hat", "u_theta", "q_hat", "sqrtL", "D_accum", "J_accum",
)

ETA_TOL = 0.05
ETA_HOLD = 2.0
APPROACH_SKIP = 2.0


# -- configuration -----------------------------------------------------------

@dataclass(frozen=True)
class SolverSettings:
    T: float = 0.05
    dt: float = 0.005
    samples: int = 2000
    mode: str = "mesh"
    ridge: float = 1e-8
    eps: float = 1e-3
    max_iterations: int = 20
    domain_lower: tuple = (-3.0, -1.0, -math.pi, 0.0)
    domain_upper: tuple = (65.0, 1.0, math.pi, math.pi / 2)
    probe_count: int = 10
    probe_horizon: float = 30.0
    basis: str = "paper"


@dataclass(frozen=True)
class RunSettings:
    duration: float = 60.0
    r_h0: float = 110.0
    eta0: float = 0.5
    theta0: float = 0.0
    theta_t0: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class OutputSettings:
    directory: str = "out"
    csv: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    """Parsed experiment file.

    ``kind`` selects the plant: ``circumnav`` (the default preset) or
    ``lqr``, the scalar system ``dx/dt = a x + b u`` with ``|u| <= lam``
    and cost ``x**2 + U(u)``, which only supports ``solve``.
    """

    kind: str = "circumnav"
    scenario: cn.CircumnavScenario = field(default_factory=cn.CircumnavScenario)
    lqr: dict = field(default_factory=lambda: {"a": -1.0, "b": 1.0, "lam": 50.0})
    solver: SolverSettings = field(default_factory=SolverSettings)
    run: RunSettings = field(default_factory=RunSettings)
    output: OutputSettings = field(default_factory=OutputSettings)


LQR_SOLVER = SolverSettings(samples=50, eps=1e-6, max_iterations=20, domain_lower=(-1.0,),
                            domain_upper=(1.0,), probe_count=10, probe_horizon=5.0, basis="x2")

PRESETS = {
    "circumnav": ExperimentConfig(),
    "lqr": ExperimentConfig(kind="lqr", solver=LQR_SOLVER),
}

_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
        ast.Div: operator.truediv, ast.USub: operator.neg, ast.UAdd: operator.pos}


def _eval_node(node):
    if isinstance(node, ast.Expression):
        return _eval_node(node.body)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return float(node.value)
    if isinstance(node, ast.Name) and node.id == "pi":
        return math.pi
    if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
        return _OPS[type(node.op)](_eval_node(node.left), _eval_node(node.right))
    if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
        return _OPS[type(node.op)](_eval_node(node.operand))
    raise ValueError("unsupported expression")


def parse_number(text):
    """Float from a literal or a small arithmetic expression in ``pi``."""
    try:
        return _eval_node(ast.parse(text.strip(), mode="eval"))
    except (SyntaxError, ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"not a number: {text!r}") from exc


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _coerce(name, text, default):
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        value = parse_number(text)
        if value != int(value):
            raise ConfigError(f"{name} must be an integer")
        return int(value)
    if isinstance(default, float) or default is None:
        if default is None and text.strip().lower() in ("none", "auto", ""):
            return None
        return parse_number(text)
    if isinstance(default, tuple):
        return tuple(parse_number(p) for p in text.split(","))
    return text.strip()


def _update(obj, section, items):
    known = {f.name: f for f in dataclasses.fields(obj) if f.name != "target_turn"}
    changes = {}
    for key, text in items:
        name = key.strip().replace("-", "_")
        if name not in known:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        changes[name] = _coerce(f"{section}.{name}", text, getattr(obj, name))
    try:
        return dataclasses.replace(obj, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


def _validate(cfg):
    s = cfg.solver
    if cfg.kind not in PRESETS:
        raise ConfigError(f"unknown scenario kind {cfg.kind!r}")
    if s.mode not in ("mesh", "trajectory"):
        raise ConfigError("solver.mode must be 'mesh' or 'trajectory'")
    if s.basis not in ("paper", "paper-verbatim", "x2"):
        raise ConfigError("solver.basis must be 'paper', 'paper-verbatim' or 'x2'")
    for name in ("T", "dt", "ridge", "eps", "probe_horizon"):
        if not getattr(s, name) > 0:
            raise ConfigError(f"solver.{name} must be positive")
    if s.samples < 1 or s.probe_count < 1 or s.max_iterations < 0:
        raise ConfigError("solver counts must be positive (max_iterations may be 0)")
    lo, hi = np.asarray(s.domain_lower), np.asarray(s.domain_upper)
    n = 1 if cfg.kind == "lqr" else 4
    if lo.shape != (n,) or hi.shape != (n,):
        raise ConfigError(f"training domain bounds need {n} entries")
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) and np.all(lo < hi)):
        raise ConfigError("training domain bounds must be finite with lower < upper")
    if abs(s.T / s.dt - round(s.T / s.dt)) > 1e-9:
        raise ConfigError("solver.T must be an integer multiple of solver.dt")
    r = cfg.run
    if r.duration < 0:
        raise ConfigError("run.duration must be nonnegative")
    if r.r_h0 <= 0:
        raise ConfigError("run.r_h0 must be positive")
    return cfg


def load_config(path=None, preset=None):
    """Read an experiment file on top of a preset.

    The preset is taken from ``[scenario] kind`` when present, else from
    ``preset`` (default ``circumnav``).
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    if path is not None:
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
    extra = set(parser.sections()) - {"scenario", "solver", "run", "output"}
    if extra:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(extra))}")
    scen_items = dict(parser.items("scenario")) if parser.has_section("scenario") else {}
    kind = scen_items.pop("kind", preset or "circumnav").strip()
    if kind not in PRESETS:
        raise ConfigError(f"unknown scenario kind {kind!r}")
    cfg = PRESETS[kind]
    lqr_keys = {k: scen_items.pop(k) for k in list(scen_items) if k.startswith("lqr_")}
    lqr = dict(cfg.lqr)
    for key, text in lqr_keys.items():
        name = key[4:]
        if name not in lqr:
            raise ConfigError(f"unknown key {key!r} in [scenario]")
        lqr[name] = parse_number(text)
    scenario = _update(cfg.scenario, "scenario", scen_items.items())
    sections = {}
    for name in ("solver", "run", "output"):
        obj = getattr(cfg, name)
        items = parser.items(name) if parser.has_section(name) else []
        sections[name] = _update(obj, name, items)
    cfg = ExperimentConfig(kind, scenario, lqr, **sections)
    return _validate(cfg)


# -- problem assembly --------------------------------------------------------

def build_problem(cfg):
    """``(IRLProblem, shaping or None)`` for the configured plant."""
    if cfg.kind == "lqr":
        model = scalar_linear_model(cfg.lqr["a"], cfg.lqr["b"], cfg.lqr["lam"])
        cost = CostConfig([1.0], quadratic_state_cost([1.0]))
        return IRLProblem(model, cost, tensor_basis(1, 0, [2])), None
    scn = cfg.scenario
    shaping = cn.solve_kappa(scn)
    basis = make_paper_basis(verbatim=cfg.solver.basis == "paper-verbatim")
    return IRLProblem(cn.make_model(scn), cn.make_cost(scn, shaping), basis), shaping


def initial_state(cfg):
    r = cfg.run
    return cn.CircumnavState.from_relative(cfg.scenario, r.r_h0, r.eta0, r.theta0, r.theta_t0)


def solver_config(cfg):
    s = cfg.solver
    lo, hi = np.array(s.domain_lower), np.array(s.domain_upper)
    rng = np.random.default_rng([cfg.run.seed, 1])
    probes = lo + (hi - lo) * rng.random((s.probe_count, lo.size))
    x0 = initial_state(cfg).vector if cfg.kind == "circumnav" else None
    return SolverConfig(T=s.T, dt=s.dt, samples=s.samples, mode=s.mode, domain=(lo, hi), x0=x0,
                        ridge=s.ridge, eps=s.eps, max_iterations=s.max_iterations, seed=cfg.run.seed,
                        probe_states=probes, probe_horizon=s.probe_horizon)


# -- run summaries -----------------------------------------------------------

@dataclass(frozen=True)
class RunSummary:
    final_r_h: float
    t_eta_converged: float
    D: float
    J: float
    max_abs_u_theta: float
    iterations: Optional[int] = None

    def as_dict(self):
        return dataclasses.asdict(self)


def eta_convergence_time(t, eta, tol=ETA_TOL, hold=ETA_HOLD):
    """First time after which ``|eta| < tol`` holds for ``hold`` seconds; NaN if never."""
    t = np.asarray(t, dtype=float)
    ok = np.abs(np.asarray(eta, dtype=float)) < tol
    if t.size < 2:
        return float("nan")
    n_hold = int(round(hold / (t[1] - t[0])))
    if ok.size <= n_hold:
        return float("nan")
    bad = np.concatenate([[0], np.cumsum(~ok)])
    # window i..i+n_hold clean <=> no bad sample inside
    clean = bad[n_hold + 1:] - bad[: ok.size - n_hold] == 0
    idx = np.flatnonzero(clean)
    return float(t[idx[0]]) if idx.size else float("nan")


def summarize(rollout, metrics, scn, iterations=None):
    return RunSummary(
        final_r_h=float(scn.r_d + rollout.X[-1, 0]),
        t_eta_converged=eta_convergence_time(rollout.t, rollout.X[:, 1]),
        D=metrics.D,
        J=metrics.J,
        max_abs_u_theta=float(np.max(np.abs(rollout.u_theta))),
        iterations=iterations,
    )


def summary_from_table(table, iterations=None):
    """Recompute a :class:`RunSummary` from trajectory columns."""
    return RunSummary(
        final_r_h=float(table["r_h"][-1]),
        t_eta_converged=eta_convergence_time(table["t"], table["eta"]),
        D=float(table["D_accum"][-1]),
        J=float(table["J_accum"][-1]),
        max_abs_u_theta=float(np.max(np.abs(table["u_theta"]))),
        iterations=iterations,
    )


def trajectory_table(rollout, metrics, scn):
    X, W = rollout.X, rollout.world
    return {
        "t": rollout.t, "x": W[:, 0], "y": W[:, 1], "theta": X[:, 2],
        "x_t": W[:, 2], "y_t": W[:, 3], "theta_t": X[:, 3],
        "r_h": scn.r_d + X[:, 0], "e_r": X[:, 0], "eta": X[:, 1],
        "u_s": rollout.u_s, "u_hat": rollout.u_hat, "u_theta": rollout.u_theta,
        "q_hat": metrics.q_hat, "sqrtL": metrics.sqrtL,
        "D_accum": metrics.D_accum, "J_accum": metrics.J_accum,
    }


def write_table(path, table, columns=CSV_COLUMNS):
    cols = [np.asarray(table[c], dtype=float) for c in columns]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(columns) + "\n")
        for row in zip(*cols):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_table(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(v) for v in row] for row in reader], dtype=float).reshape(-1, len(header))
    return {name: rows[:, i] for i, name in enumerate(header)}


def _write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# -- commands ----------------------------------------------------------------

def _require_circumnav(cfg, command):
    if cfg.kind != "circumnav":
        raise ConfigError(f"'{command}' needs a circumnav scenario")


def _outdir(cfg, out):
    d = Path(out if out is not None else cfg.output.directory)
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_solve(cfg, out=None, stream=None):
    """Train, then write ``weights.txt``, ``solve_log.csv`` and ``solve_summary.json``."""
    problem, _ = build_problem(cfg)
    scfg = solver_config(cfg)
    d = _outdir(cfg, out)

    def report(it):
        print(f"iteration {it.k}: residual_rms={it.residual_rms:.6e} perf={it.perf:.9g}", file=stream, flush=True)

    t0 = time.perf_counter()
    result = solve(problem, scfg, on_iterate=report)
    elapsed = time.perf_counter() - t0
    save_weights(d / "weights.txt", result.final.va.weights)
    write_log(d / "solve_log.csv", result.log_rows)
    summary = {"iterations": result.final.k, "converged": result.converged,
               "perf": [row[2] for row in result.log_rows], "runtime_s": elapsed}
    _write_json(d / "solve_summary.json", summary)
    print(f"wrote {d / 'weights.txt'} after {result.final.k} iteration(s), converged={result.converged}",
          file=stream)
    return result


def _load_policy(cfg, problem, weights):
    if weights is None:
        raise ConfigError("the optimal controller needs --weights")
    try:
        w = load_weights(weights, problem.basis)
    except OSError as exc:
        raise ConfigError(f"cannot read weights {weights}: {exc}") from exc
    except (ValueError, DimensionError) as exc:
        raise ConfigError(f"bad weight file {weights}: {exc}") from exc
    return make_policy(problem, ValueApproximator(problem.basis, w))


def run_controller(cfg, controller, weights=None, policy=None):
    """Simulate one controller; returns ``(rollout, metrics)``."""
    _require_circumnav(cfg, "simulate")
    problem, shaping = build_problem(cfg)
    scn = cfg.scenario
    if controller == "vf":
        control = cn.vf_controller(scn)
    elif controller == "optimal":
        policy = _load_policy(cfg, problem, weights) if policy is None else policy
        control = cn.optimal_controller(scn, problem.model, policy)
    else:
        raise ConfigError(f"unknown controller {controller!r}")
    rollout = cn.simulate(scn, control, initial_state(cfg), cfg.run.duration, cfg.solver.dt)
    return rollout, cn.accumulate_metrics(rollout, scn, shaping)


def cmd_simulate(cfg, weights=None, controller="vf", out=None, stream=None):
    """Roll out one controller; writes ``trajectory_<controller>.csv`` and a summary."""
    rollout, metrics = run_controller(cfg, controller, weights)
    summary = summarize(rollout, metrics, cfg.scenario)
    d = _outdir(cfg, out)
    if cfg.output.csv:
        write_table(d / f"trajectory_{controller}.csv", trajectory_table(rollout, metrics, cfg.scenario))
    _write_json(d / f"summary_{controller}.json", summary.as_dict())
    for key, value in summary.as_dict().items():
        print(f"{key} = {value}", file=stream)
    return summary


def approach_fraction(q_opt, q_vf, t, t_end):
    """Share of steps in ``[APPROACH_SKIP, t_end]`` where ``q_opt >= q_vf``."""
    sel = (t >= APPROACH_SKIP) & (t <= t_end)
    if not np.any(sel):
        return float("nan")
    return float(np.mean(q_opt[sel] >= q_vf[sel]))


def cmd_compare(cfg, weights=None, out=None, stream=None):
    """Run both controllers from the same start.

    Trains first when no weight file is given.  Writes both trajectories,
    ``q_hat_series.csv`` and ``compare.json``.
    """
    _require_circumnav(cfg, "compare")
    d = _outdir(cfg, out)
    iterations = None
    if weights is None:
        result = cmd_solve(cfg, out=d, stream=stream)
        weights = d / "weights.txt"
        iterations = result.final.k
    ro, mo = run_controller(cfg, "optimal", weights)
    rv, mv = run_controller(cfg, "vf")
    scn = cfg.scenario
    so = summarize(ro, mo, scn, iterations)
    sv = summarize(rv, mv, scn)
    if cfg.output.csv:
        write_table(d / "trajectory_optimal.csv", trajectory_table(ro, mo, scn))
        write_table(d / "trajectory_vf.csv", trajectory_table(rv, mv, scn))
        write_table(d / "q_hat_series.csv", {"t": ro.t, "q_hat_optimal": mo.q_hat, "q_hat_vf": mv.q_hat},
                    columns=("t", "q_hat_optimal", "q_hat_vf"))
    t_end = sv.t_eta_converged if np.isfinite(sv.t_eta_converged) else float(ro.t[-1])
    report = {
        "D_optimal": mo.D, "D_vf": mv.D, "delta_D": mo.D - mv.D,
        "J_optimal": mo.J, "J_vf": mv.J,
        "approach_end": t_end,
        "approach_q_hat_fraction": approach_fraction(mo.q_hat, mv.q_hat, ro.t, t_end),
        "optimal": so.as_dict(), "vf": sv.as_dict(),
    }
    _write_json(d / "compare.json", report)
    for key in ("D_optimal", "D_vf", "delta_D", "J_optimal", "J_vf", "approach_q_hat_fraction"):
        print(f"{key} = {report[key]}", file=stream)
    return report


def kappa_report(scn, delta=1e-4):
    sh = cn.solve_kappa(scn)
    qp = cn.q_hat(scn, sh, scn.r_d + delta, 0.0)
    qm = cn.q_hat(scn, sh, scn.r_d - delta, 0.0)
    return {"kappa": sh.kappa, "q_max": sh.q_max, "c1": sh.c1,
            "alpha_residual": sh.alpha_residual,
            "stationarity_residual": float(abs(qp - qm) / (2 * delta))}


def cmd_kappa(cfg, stream=None):
    """Print the shaping constants as JSON."""
    _require_circumnav(cfg, "kappa")
    report = kappa_report(cfg.scenario)
    print(json.dumps(report, sort_keys=True), file=stream)
    return report


# -- entry point -------------------------------------------------------------

def _parser():
    p = argparse.ArgumentParser(prog="irlpi", description="IRL policy iteration experiments")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("solve", "simulate", "compare", "kappa"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="experiment file (key = value sections)")
        sp.add_argument("--preset", choices=sorted(PRESETS), help="base preset (default circumnav)")
        sp.add_argument("--out", help="output directory (overrides [output] directory)")
        sp.add_argument("--seed", type=int, help="overrides [run] seed")
        if name in ("simulate", "compare"):
            sp.add_argument("--weights", help="weight file written by 'solve'")
        if name == "simulate":
            sp.add_argument("--controller", choices=("vf", "optimal"), default="vf")
    return p


def _guarded(code, label, fn, *args, **kwargs):
    """Run ``fn``; package errors other than config errors map to ``code``."""
    try:
        return fn(*args, **kwargs), EXIT_OK
    except ConfigError:
        raise
    except (IRLError, ArithmeticError) as exc:
        print(f"{label} error: {exc}", file=sys.stderr)
        return None, code


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.preset)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, run=dataclasses.replace(cfg.run, seed=args.seed))
        if args.command == "kappa":
            _, code = _guarded(EXIT_SIMULATION, "kappa", cmd_kappa, cfg)
        elif args.command == "solve":
            _, code = _guarded(EXIT_SOLVER, "solver", cmd_solve, cfg, out=args.out)
        elif args.command == "simulate":
            _, code = _guarded(EXIT_SIMULATION, "simulation", cmd_simulate, cfg, args.weights,
                               args.controller, out=args.out)
        else:
            weights = args.weights
            code = EXIT_OK
            if weights is None:
                _require_circumnav(cfg, "compare")
                _, code = _guarded(EXIT_SOLVER, "solver", cmd_solve, cfg, out=args.out)
                weights = _outdir(cfg, args.out) / "weights.txt"
            if code == EXIT_OK:
                _, code = _guarded(EXIT_SIMULATION, "simulation", cmd_compare, cfg, weights, out=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return code


if __name__ == "__main__":
    sys.exit(main())
