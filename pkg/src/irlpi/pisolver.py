"""Integral-reinforcement policy iteration with saturated greedy improvement.

Each iteration

1. rolls out the current policy over windows of length ``T`` and records the
   basis increment ``rho = sigma(X(t+T)) - sigma(X(t))`` together with the
   integrated running cost, using only observed transitions;
2. fits value weights by ridge least squares on ``rho . w + cost = 0``;
3. improves the policy to ``u_hat = -lam tanh(G^T V_X / (2 lam R))``, where
   the side-dependent scale ``lam`` follows the sign of ``-G^T V_X``.

The internal dynamics ``f1``/``f2`` appear only inside the simulator that
generates transitions.
"""

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .costfn import CostConfig, select_lambda_bar, window_cost
from .errors import DimensionError, IRLError, RankDeficient
from .sysmodel import SystemModel, _as_batch, _window_batch, input_matrix, rk4_step
from .valuefn import BasisSet, ValueApproximator

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class IRLProblem:
    model: SystemModel
    cost: CostConfig
    basis: BasisSet

    def __post_init__(self):
        if self.basis.n != self.model.n or self.basis.n1 != self.model.n1:
            raise DimensionError("basis dimensions do not match the model")
        if self.cost.R.shape != (self.model.m,):
            raise DimensionError("R must have one weight per input channel")


@dataclass(frozen=True)
class SolverConfig:
    """Sampling and stopping parameters for policy iteration.

    ``domain`` is the pair ``(lower, upper)`` bounding the training region;
    mesh mode draws window start states uniformly from it, trajectory mode
    starts a single rollout at ``x0``.
    """

    T: float = 0.05
    dt: float = 0.005
    samples: int = 200
    mode: str = "mesh"
    domain: Optional[tuple] = None
    x0: Optional[np.ndarray] = None
    ridge: float = 1e-8
    eps: float = 1e-4
    max_iterations: int = 20
    seed: int = 0
    probe_states: Optional[np.ndarray] = None
    probe_horizon: float = 5.0
    cond_limit: float = 1e12

    @property
    def window_steps(self):
        n = self.T / self.dt
        steps = int(round(n))
        if steps < 1 or abs(n - steps) > 1e-9:
            raise ValueError("T must be a positive integer multiple of dt")
        return steps


@dataclass(frozen=True)
class TrainingSample:
    X_t: np.ndarray
    X_tT: np.ndarray
    rho: np.ndarray
    reinforcement: float


@dataclass(frozen=True)
class LSFit:
    weights: np.ndarray
    residual_rms: float
    condition: float


@dataclass(frozen=True)
class PolicyIterate:
    va: ValueApproximator
    k: int = 0
    perf: float = float("nan")
    residual_rms: float = float("nan")


# -- policy ------------------------------------------------------------------

def _greedy_batch(problem, va, Xb):
    model = problem.model
    if model.wrap is not None:
        Xb = model.wrap(Xb)
    window = _window_batch(model, Xb[:, : model.n1], Xb[:, model.n1:])
    if va is None or not np.any(va.weights):
        return np.zeros((Xb.shape[0], model.m)), window
    _, V_X = va.value_and_gradient(Xb)
    GtV = np.einsum("bij,bi->bj", input_matrix(model, Xb), V_X)
    lam = select_lambda_bar(window, -GtV)
    u = -lam.values * np.tanh(GtV / (2.0 * lam.values * problem.cost.R))
    # Keep strictly inside the window when tanh rounds to +-1.
    cap = np.nextafter(lam.values, 0.0)
    u = np.clip(u, -cap, cap)
    return u, window


def greedy_policy(problem, va, X):
    """Saturated greedy virtual input for ``va`` at ``X``; ``(m,)`` or ``(B, m)``."""
    Xb, single = _as_batch(problem.model, X)
    u, _ = _greedy_batch(problem, va, Xb)
    return u[0] if single else u


def make_policy(problem, va):
    """Batched callable ``X -> u_hat`` for use with the integrators."""
    def policy(Xb):
        return _greedy_batch(problem, va, np.atleast_2d(Xb))[0]
    return policy


def running_cost(problem, Xb, u_hat):
    """``Q(x1) + U(u_hat)`` at each row of ``Xb``."""
    model = problem.model
    if model.wrap is not None:
        Xb = model.wrap(Xb)
    x1, x2 = Xb[:, : model.n1], Xb[:, model.n1:]
    window = _window_batch(model, x1, x2)
    return np.asarray(problem.cost.state_cost(x1, x2), dtype=float) + window_cost(u_hat, window, problem.cost.R)


# -- data collection ---------------------------------------------------------

def _rollout_windows(problem, policy, X0b, steps, dt):
    """Integrate a batch for ``steps`` RK4 steps; return end states and the
    trapezoidal integral of the running cost."""
    X = X0b.copy()
    acc = np.zeros(X.shape[0])
    for i in range(steps):
        Xn, u1 = rk4_step(problem.model, policy, X, dt)
        acc += (0.5 if i == 0 else 1.0) * dt * running_cost(problem, X, u1)
        X = Xn
    u_end = np.atleast_2d(policy(X)).reshape(X.shape[0], problem.model.m)
    acc += 0.5 * dt * running_cost(problem, X, u_end)
    return X, acc


def _crossed_wrap(model, X_end):
    if model.wrap is None:
        return np.zeros(X_end.shape[0], dtype=bool)
    return np.any(np.abs(model.wrap(X_end) - X_end) > 1e-12, axis=1)


def collect_samples(problem, policy, config, rng=None, X0=None):
    """Gather ``config.samples`` IRL tuples under ``policy``.

    Mesh mode integrates independent windows from uniform draws over
    ``config.domain``; trajectory mode chains consecutive, non-overlapping
    windows along one rollout from ``X0`` (or ``config.x0``).  Windows whose
    state leaves the wrapping range of a periodic coordinate are dropped and
    replaced.
    """
    model = problem.model
    steps = config.window_steps
    rng = np.random.default_rng(config.seed) if rng is None else rng
    starts, ends, rewards = [], [], []
    have = 0
    if config.mode == "mesh":
        if config.domain is None:
            raise ValueError("mesh mode needs a training domain")
        lo, hi = (np.asarray(b, dtype=float) for b in config.domain)
        for _ in range(20):
            need = config.samples - have
            if need <= 0:
                break
            draw = int(np.ceil(need * 1.2)) + 4
            Xs = lo + (hi - lo) * rng.random((draw, model.n))
            Xe, R = _rollout_windows(problem, policy, Xs, steps, config.dt)
            keep = ~_crossed_wrap(model, Xe)
            starts.append(Xs[keep]); ends.append(Xe[keep]); rewards.append(R[keep])
            have += int(keep.sum())
    elif config.mode == "trajectory":
        X = np.asarray(config.x0 if X0 is None else X0, dtype=float).reshape(1, model.n)
        for _ in range(config.samples * 3):
            if have >= config.samples:
                break
            Xe, R = _rollout_windows(problem, policy, X, steps, config.dt)
            if not _crossed_wrap(model, Xe)[0]:
                starts.append(X); ends.append(Xe); rewards.append(R)
                have += 1
            X = model.wrap(Xe) if model.wrap is not None else Xe
    else:
        raise ValueError(f"unknown sampling mode {config.mode!r}")
    Xs = np.concatenate(starts)[: config.samples]
    Xe = np.concatenate(ends)[: config.samples]
    R = np.concatenate(rewards)[: config.samples]
    rho = problem.basis.features(Xe) - problem.basis.features(Xs)
    return [TrainingSample(Xs[i], Xe[i], rho[i], float(R[i])) for i in range(Xs.shape[0])]


# -- policy evaluation -------------------------------------------------------

def _stack(samples):
    L = np.array([s.rho for s in samples], dtype=float)
    Y = np.array([s.reinforcement for s in samples], dtype=float)
    return L, Y


def ls_update(samples, ridge=1e-8, cond_limit=1e12):
    """Solve ``min_w |Y + L w|^2`` with a relative ridge term.

    Columns of ``L`` are equilibrated to unit norm before the ridge
    ``ridge * mean(diag(L^T L))`` is added, so polynomial terms of very
    different magnitude are regularized evenly.
    """
    L, Y = _stack(samples)
    p, M = L.shape
    if p < M:
        raise RankDeficient(f"{p} samples cannot determine {M} weights")
    scale = np.sqrt(np.sum(L * L, axis=0))
    scale[scale == 0.0] = 1.0
    Ls = L / scale
    A = Ls.T @ Ls
    A = A + ridge * np.mean(np.diag(A)) * np.eye(M)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > cond_limit:
        raise RankDeficient(f"normal equations ill-conditioned (cond={cond:.3g})")
    ws = -np.linalg.solve(A, Ls.T @ Y)
    w = ws / scale
    resid = Y + L @ w
    return LSFit(w, float(np.sqrt(np.mean(resid**2))), float(cond))


def bellman_residual(va, samples):
    """RMS of ``cost + w . rho`` over ``samples``."""
    L, Y = _stack(samples)
    return float(np.sqrt(np.mean((Y + L @ va.weights) ** 2)))


# -- performance and iteration -----------------------------------------------

def rollout_cost(problem, va, X0, horizon, dt):
    """Trapezoidal cost of greedy rollouts from each row of ``X0`` plus the
    final states; raises on divergence."""
    policy = make_policy(problem, va)
    X0b = np.atleast_2d(np.asarray(X0, dtype=float))
    steps = int(round(horizon / dt))
    Xe, J = _rollout_windows(problem, policy, X0b, steps, dt)
    return J, Xe


def probe_performance(problem, va, config):
    """Mean integrated cost over the fixed probe states."""
    if config.probe_states is None:
        raise ValueError("probe_states are required to measure performance")
    J, _ = rollout_cost(problem, va, config.probe_states, config.probe_horizon, config.dt)
    return float(np.mean(J))


def initial_iterate(problem, config):
    """Iterate 0: zero weights, i.e. the baseline policy with ``u_hat = 0``."""
    va = ValueApproximator.zeros(problem.basis)
    perf = probe_performance(problem, va, config) if config.probe_states is not None else float("nan")
    return PolicyIterate(va, 0, perf)


def iterate(problem, current, config):
    """One evaluation + improvement step.

    The samples are generated by the policy greedy in ``current.va``; the
    fitted value is that policy's value and defines the next policy.
    """
    # Same mesh every iteration, so successive fits differ only through the policy.
    rng = np.random.default_rng(config.seed)
    policy = make_policy(problem, current.va)
    samples = collect_samples(problem, policy, config, rng=rng)
    fit = ls_update(samples, ridge=config.ridge, cond_limit=config.cond_limit)
    va = ValueApproximator(problem.basis, fit.weights)
    perf = probe_performance(problem, va, config) if config.probe_states is not None else float("nan")
    return PolicyIterate(va, current.k + 1, perf, fit.residual_rms)


def has_converged(prev, nxt, eps):
    if not np.array_equal(prev.va.basis.terms, nxt.va.basis.terms):
        raise ValueError("iterates use different bases")
    if np.array_equal(prev.va.weights, nxt.va.weights) and (prev.perf == nxt.perf or np.isnan(prev.perf)):
        return True
    return bool(abs(nxt.perf - prev.perf) < eps)


@dataclass
class SolveResult:
    iterates: list
    converged: bool
    log_rows: list = field(default_factory=list)

    @property
    def final(self):
        return self.iterates[-1]


LOG_HEADER = ("k", "residual_rms", "perf", "weight_delta")


def solve(problem, config, initial=None, on_iterate: Optional[Callable] = None):
    """Run policy iteration until the probe performance settles or the
    iteration budget is spent."""
    it = initial_iterate(problem, config) if initial is None else initial
    iterates = [it]
    rows = [(it.k, it.residual_rms, it.perf, 0.0)]
    converged = False
    for _ in range(config.max_iterations):
        try:
            nxt = iterate(problem, it, config)
        except IRLError as exc:
            raise type(exc)(f"iteration {it.k + 1}: {exc}") from exc
        delta = float(np.linalg.norm(nxt.va.weights - it.va.weights))
        rows.append((nxt.k, nxt.residual_rms, nxt.perf, delta))
        log.info("iteration %d: residual=%.3e perf=%.6g dw=%.3e", nxt.k, nxt.residual_rms, nxt.perf, delta)
        iterates.append(nxt)
        if on_iterate is not None:
            on_iterate(nxt)
        done = has_converged(it, nxt, config.eps)
        it = nxt
        if done:
            converged = True
            break
    return SolveResult(iterates, converged, rows)


def write_log(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_HEADER)
        for k, res, perf, delta in rows:
            writer.writerow([k, f"{res:.17g}", f"{perf:.17g}", f"{delta:.17g}"])
