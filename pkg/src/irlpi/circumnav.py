"""Fixed-wing circumnavigation of a moving, turning ground target.

The reduced state is ``X = (e_r, eta, theta, theta_t)``: loiter-radius error,
bearing-alignment angle, vehicle heading and target heading.  The vehicle
adjusts its airspeed so the relative speed stays at ``v_r`` and steers with
the turn rate ``u_theta``, bounded by ``omega_max``.  On the desired orbit
``e_r = eta = 0``.

Relative geometry follows ``s_r = s_target - s_uav``: ``phi`` is the bearing
of ``s_r`` and ``theta_r`` the direction of its time derivative.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .costfn import CostConfig, window_cost
from .errors import DegenerateGeometry, DivergenceError, NearSingular
from .sysmodel import ConstraintWindow, SystemModel

SINGULARITY_FLOOR = 0.05


def default_target_turn(theta_t):
    return 0.5 - 0.5 * np.sin(theta_t) ** 2


def wrap_angle(a):
    """Map angles onto ``(-pi, pi]``."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2.0 * np.pi)


@dataclass(frozen=True)
class CircumnavScenario:
    """Vehicle, target, sensor and shaping parameters.

    ``baseline_margin`` keeps the baseline turn rate strictly inside
    ``(-omega_max, omega_max)`` when it is used as the anchor of the
    optimized controller; ``r_weight`` is the input weight of the saturation
    cost.  ``c1 = None`` selects ``1 / Q_max``.  With ``vf_feedforward`` the
    vector-field law adds the rate of its own heading reference, which makes
    the orbit invariant under the baseline alone.
    """

    v_t: float = 5.0
    v_r: float = 10.0
    h_alt: float = 80.0
    r_d: float = 50.0
    omega_max: float = 1.5
    sigma_r: float = 1e-3
    sigma_phi: float = 1e-4 * np.pi
    c1: float = None
    k_vf: float = 1.0
    vf_feedforward: bool = True
    r_weight: float = 1.0
    baseline_margin: float = 0.015
    target_turn: Callable = field(default=default_target_turn, compare=False)

    def __post_init__(self):
        if not (self.v_r > self.v_t >= 0):
            raise ValueError("need v_r > v_t >= 0")
        if self.r_d <= 0 or self.omega_max <= 0 or self.h_alt < 0:
            raise ValueError("r_d and omega_max must be positive")
        if self.sigma_r <= 0 or self.sigma_phi <= 0:
            raise ValueError("noise scales must be positive")
        if not (0 <= self.baseline_margin < self.omega_max):
            raise ValueError("baseline_margin must lie in [0, omega_max)")


@dataclass(frozen=True)
class CircumnavState:
    """Reduced state plus the planar world poses it was derived from."""

    e_r: float
    eta: float
    theta: float
    theta_t: float
    x: float = 0.0
    y: float = 0.0
    x_t: float = 0.0
    y_t: float = 0.0

    @property
    def vector(self):
        return np.array([self.e_r, self.eta, self.theta, self.theta_t])

    @classmethod
    def from_world(cls, scn, x, y, theta, x_t, y_t, theta_t):
        x_r, y_r = x_t - x, y_t - y
        r_h = np.hypot(x_r, y_r)
        v = speed_command(scn, theta, theta_t)
        th_r = relative_heading(scn, v, theta, theta_t)
        eta = wrap_angle(np.pi / 2 - (th_r - np.arctan2(y_r, x_r)))
        return cls(float(r_h - scn.r_d), float(eta), float(wrap_angle(theta)), float(wrap_angle(theta_t)),
                   float(x), float(y), float(x_t), float(y_t))

    @classmethod
    def from_relative(cls, scn, r_h, eta, theta, theta_t, x_t=0.0, y_t=0.0):
        """Place the vehicle so the target at ``(x_t, y_t)`` sits at loiter
        radius ``r_h`` with alignment ``eta``."""
        phi = bearing_from_state(scn, eta, theta, theta_t)
        x = x_t - r_h * np.cos(phi)
        y = y_t - r_h * np.sin(phi)
        return cls(float(r_h - scn.r_d), float(wrap_angle(eta)), float(wrap_angle(theta)),
                   float(wrap_angle(theta_t)), float(x), float(y), float(x_t), float(y_t))


@dataclass(frozen=True)
class ShapingParams:
    kappa: float
    q_max: float
    c1: float
    alpha_residual: float


# -- kinematics --------------------------------------------------------------

def speed_command(scn, theta, theta_t):
    """Positive airspeed root of ``v^2 + v_t^2 - 2 v v_t cos(theta - theta_t) = v_r^2``."""
    delta = np.asarray(theta, dtype=float) - np.asarray(theta_t, dtype=float)
    return scn.v_t * np.cos(delta) + np.sqrt(scn.v_r**2 - (scn.v_t * np.sin(delta)) ** 2)


def relative_heading(scn, v, theta, theta_t):
    """Direction ``theta_r`` of ``d s_r / dt = v_t e(theta_t) - v e(theta)``."""
    return np.arctan2(
        scn.v_t * np.sin(theta_t) - v * np.sin(theta),
        scn.v_t * np.cos(theta_t) - v * np.cos(theta),
    )


def bearing_from_state(scn, eta, theta, theta_t):
    """Bearing ``phi`` of ``s_r`` recovered from ``eta = pi/2 - (theta_r - phi)``."""
    v = speed_command(scn, theta, theta_t)
    return relative_heading(scn, v, theta, theta_t) + eta - np.pi / 2


def heading_coefficients(scn, e_r, eta, theta, theta_t):
    """``(b1, b2)`` with ``d eta / dt = b1 + b2 u_theta``.

    ``b1`` contains the target turn rate and is only meaningful to the
    simulator; ``b2`` is the known input gain.
    """
    v = speed_command(scn, theta, theta_t)
    th_r = relative_heading(scn, v, theta, theta_t)
    c = np.cos(th_r - theta)
    if np.any(np.abs(c) < SINGULARITY_FLOOR):
        raise NearSingular(f"|cos(theta_r - theta)| below {SINGULARITY_FLOOR}")
    denom = scn.v_r * c
    r_h = scn.r_d + np.asarray(e_r, dtype=float)
    b1 = scn.v_r * np.cos(eta) / r_h - scn.v_t * np.cos(theta - theta_t) / denom * scn.target_turn(theta_t)
    b2 = v / denom
    return b1, b2


def x_dynamics(scn, state, u_theta):
    """Time derivative of ``(e_r, eta, theta, theta_t)``; accepts ``(4,)`` or ``(B, 4)``."""
    X = np.asarray(state, dtype=float)
    single = X.ndim == 1
    Xb = np.atleast_2d(X)
    e_r, eta, theta, theta_t = Xb.T
    if np.any(scn.r_d + e_r <= 0):
        raise DegenerateGeometry("loiter radius must stay positive")
    b1, b2 = heading_coefficients(scn, e_r, eta, theta, theta_t)
    u = np.broadcast_to(np.asarray(u_theta, dtype=float).reshape(-1), e_r.shape)
    out = np.stack([scn.v_r * np.sin(eta), b1 + b2 * u, u, scn.target_turn(theta_t)], axis=1)
    return out[0] if single else out


# -- vector-field baseline ---------------------------------------------------

def field_heading(scn, x_r, y_r):
    """Direction ``theta_d`` of the guidance field evaluated at ``s_r``."""
    x_r = np.asarray(x_r, dtype=float)
    y_r = np.asarray(y_r, dtype=float)
    r_h = np.hypot(x_r, y_r)
    if np.any(r_h == 0):
        raise DegenerateGeometry("field undefined at zero range")
    k = -scn.v_r / (r_h * (r_h**2 + scn.r_d**2))
    fx = k * (x_r * (r_h**2 - scn.r_d**2) + y_r * (2 * scn.r_d * r_h))
    fy = k * (y_r * (r_h**2 - scn.r_d**2) - x_r * (2 * scn.r_d * r_h))
    return np.arctan2(fy, fx)


def heading_reference(scn, theta_d, theta_t):
    """Vehicle heading that makes ``d s_r / dt`` point along ``theta_d``."""
    return np.arctan2(
        scn.v_t * np.sin(theta_t) - scn.v_r * np.sin(theta_d),
        scn.v_t * np.cos(theta_t) - scn.v_r * np.cos(theta_d),
    )


def vf_turn_rate(scn, theta, theta_ref, limit=None, feedforward=0.0):
    """Saturated heading law ``feedforward - k (theta - theta_ref)``.

    The heading error is wrapped, so ``theta < theta_ref`` means a positive
    wrapped difference ``theta_ref - theta``.
    """
    limit = scn.omega_max if limit is None else limit
    err = wrap_angle(np.asarray(theta, dtype=float) - theta_ref)
    return np.clip(feedforward - scn.k_vf * err, -limit, limit)


def _reference_rate(scn, r_h, eta, theta_d, theta_t):
    # d theta_ref / dt; the bearing, the field angle and the target heading
    # all evolve independently of the turn-rate input.
    psi_dot = scn.v_r * np.cos(eta) / r_h + 2.0 * scn.r_d * scn.v_r * np.sin(eta) / (r_h**2 + scn.r_d**2)
    tt_dot = scn.target_turn(theta_t)
    nx = scn.v_t * np.cos(theta_t) - scn.v_r * np.cos(theta_d)
    ny = scn.v_t * np.sin(theta_t) - scn.v_r * np.sin(theta_d)
    dnx = -scn.v_t * np.sin(theta_t) * tt_dot + scn.v_r * np.sin(theta_d) * psi_dot
    dny = scn.v_t * np.cos(theta_t) * tt_dot - scn.v_r * np.cos(theta_d) * psi_dot
    return (nx * dny - ny * dnx) / (nx**2 + ny**2)


def vf_baseline(scn, state, limit=None):
    """Vector-field turn-rate command from the reduced state(s)."""
    X = np.asarray(state, dtype=float)
    e_r, eta, theta, theta_t = np.atleast_2d(X).T
    r_h = scn.r_d + e_r
    if np.any(r_h <= 0):
        raise DegenerateGeometry("loiter radius must stay positive")
    phi = bearing_from_state(scn, eta, theta, theta_t)
    theta_d = field_heading(scn, r_h * np.cos(phi), r_h * np.sin(phi))
    ff = _reference_rate(scn, r_h, eta, theta_d, theta_t) if scn.vf_feedforward else 0.0
    u = vf_turn_rate(scn, theta, heading_reference(scn, theta_d, theta_t), limit, ff)
    return u[0] if X.ndim == 1 else u


# -- Fisher information ------------------------------------------------------

def fisher_matrix(scn, x_r, y_r):
    """Range/bearing Fisher information matrix at relative position ``s_r``."""
    x_r = float(x_r)
    y_r = float(y_r)
    rh2 = x_r**2 + y_r**2
    if rh2 == 0.0:
        raise DegenerateGeometry("planar range is zero")
    r2 = rh2 + scn.h_alt**2
    rng = 1.0 / (r2**3 * scn.sigma_r**2) + 8.0 / r2**2
    brg = 1.0 / (rh2**2 * scn.sigma_phi**2)
    return np.array([
        [x_r * x_r * rng + y_r * y_r * brg, x_r * y_r * (rng - brg)],
        [x_r * y_r * (rng - brg), y_r * y_r * rng + x_r * x_r * brg],
    ])


def fisher_L(scn, r_h, eta):
    """Information rate ``L(r_h, eta)`` along the relative velocity direction."""
    r_h = np.asarray(r_h, dtype=float)
    if np.any(r_h == 0):
        raise DegenerateGeometry("planar range is zero")
    r2 = r_h**2 + scn.h_alt**2
    s2 = np.sin(eta) ** 2
    return (
        scn.v_r**2 * r_h**2 / (r2**3 * scn.sigma_r**2) * s2
        + 8.0 * r_h**2 * scn.v_r**2 / r2**2 * s2
        + scn.v_r**2 / (r_h**2 * scn.sigma_phi**2) * np.cos(eta) ** 2
    )


def kappa_residual(r_d, kappa):
    """``alpha(kappa) = -tanh(r_d - kappa) + r_d (1 - tanh^2(r_d - kappa))``."""
    t = np.tanh(r_d - kappa)
    return -t + r_d * (1.0 - t * t)


def solve_kappa(scn, tol=1e-13):
    """Bias ``kappa`` placing the maximum of ``Q_hat(., 0)`` at ``r_d``.

    ``alpha`` is negative at 0, equals ``r_d`` at ``r_d`` and increases in
    between, so bisection on ``(0, r_d)`` converges.
    """
    r_d = scn.r_d
    lo, hi = 0.0, r_d
    a_lo, a_hi = kappa_residual(r_d, lo), kappa_residual(r_d, hi)
    if not (a_lo < 0 < a_hi):
        raise ArithmeticError(f"kappa bracket lost its sign change: alpha(0)={a_lo}, alpha(r_d)={a_hi}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if kappa_residual(r_d, mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    kappa = 0.5 * (lo + hi)
    q_max = float(np.sqrt(fisher_L(scn, r_d, 0.0)) * np.tanh(r_d - kappa))
    c1 = 1.0 / q_max if scn.c1 is None else scn.c1
    return ShapingParams(kappa, q_max, c1, float(kappa_residual(r_d, kappa)))


def q_hat(scn, shaping, r_h, eta):
    """Shaped information reward ``sqrt(L) tanh(r_h - kappa)``."""
    return np.sqrt(fisher_L(scn, r_h, eta)) * np.tanh(np.asarray(r_h, dtype=float) - shaping.kappa)


def state_cost(scn, shaping, e_r, eta):
    return shaping.c1 * (shaping.q_max - q_hat(scn, shaping, scn.r_d + np.asarray(e_r), eta))


# -- plant model for the solver ----------------------------------------------

def _wrap_reduced(Xb):
    out = np.array(Xb, dtype=float, copy=True)
    out[:, 1:] = wrap_angle(out[:, 1:])
    return out


def make_model(scn):
    """Reduced circumnavigation plant with ``x1 = (e_r, eta)`` and
    ``x2 = (theta, theta_t)``; the heading rate enters ``x2`` through ``g2``.
    """
    om = scn.omega_max
    anchor_limit = om - scn.baseline_margin

    def f1(x1, x2):
        e_r, eta = x1[:, 0], x1[:, 1]
        th, tt = x2[:, 0], x2[:, 1]
        b1, _ = heading_coefficients(scn, e_r, eta, th, tt)
        return np.stack([scn.v_r * np.sin(eta), b1], axis=1)

    def g1(x1, x2):
        _, b2 = heading_coefficients(scn, x1[:, 0], x1[:, 1], x2[:, 0], x2[:, 1])
        G = np.zeros((x1.shape[0], 2, 1))
        G[:, 1, 0] = b2
        return G

    def f2(x2):
        return np.stack([np.zeros(x2.shape[0]), scn.target_turn(x2[:, 1])], axis=1)

    def g2(x1, x2):
        G = np.zeros((x1.shape[0], 2, 1))
        G[:, 0, 0] = 1.0
        return G

    def constraint(x1, x2):
        B = x1.shape[0]
        return np.full((B, 1), -om), np.full((B, 1), om)

    def baseline(x1, x2):
        X = np.concatenate([x1, x2], axis=1)
        return vf_baseline(scn, X, limit=anchor_limit).reshape(-1, 1)

    return SystemModel(2, 2, 1, f1=f1, g1=g1, f2=f2, constraint=constraint, baseline=baseline,
                       g2=g2, wrap=_wrap_reduced, name="circumnav")


def make_cost(scn, shaping):
    def q(x1, x2):
        return state_cost(scn, shaping, x1[:, 0], x1[:, 1])
    return CostConfig(np.array([scn.r_weight]), q)


# -- closed-loop simulation --------------------------------------------------

@dataclass
class Rollout:
    t: np.ndarray
    X: np.ndarray        # reduced states (N, 4)
    world: np.ndarray    # (x, y, x_t, y_t) per row
    u_s: np.ndarray
    u_hat: np.ndarray

    @property
    def u_theta(self):
        return self.u_s + self.u_hat


def vf_controller(scn):
    """Plain vector-field law: ``u_s`` saturates at ``omega_max``, ``u_hat = 0``."""
    def control(Xb):
        u_s = vf_baseline(scn, Xb).reshape(-1)
        return u_s, np.zeros_like(u_s)
    return control


def optimal_controller(scn, model, policy):
    """Baseline anchor plus the virtual input produced by ``policy``."""
    def control(Xb):
        x1, x2 = Xb[:, :2], Xb[:, 2:]
        u_s = np.asarray(model.baseline(x1, x2)).reshape(-1)
        return u_s, np.asarray(policy(Xb)).reshape(-1)
    return control


def _sim_rhs(scn, S, control):
    X = S[:, :4]
    u_s, u_hat = control(X)
    u = u_s + u_hat
    dX = x_dynamics(scn, X, u)
    theta, theta_t = X[:, 2], X[:, 3]
    v = speed_command(scn, theta, theta_t)
    dW = np.stack([v * np.cos(theta), v * np.sin(theta),
                   scn.v_t * np.cos(theta_t), scn.v_t * np.sin(theta_t)], axis=1)
    return np.concatenate([dX, dW], axis=1), u_s, u_hat


def simulate(scn, control, initial, duration, dt=0.005):
    """RK4 rollout of the reduced state with world poses carried alongside.

    ``control`` maps a batch of reduced states to ``(u_s, u_hat)``.  Returns
    one row per step including the initial state.
    """
    steps = int(round(duration / dt))
    S = np.concatenate([initial.vector, [initial.x, initial.y, initial.x_t, initial.y_t]])[None, :]
    N = steps + 1
    states = np.empty((N, 8))
    us = np.empty(N)
    uh = np.empty(N)
    for i in range(steps):
        k1, u_s, u_hat = _sim_rhs(scn, S, control)
        states[i], us[i], uh[i] = S[0], u_s[0], u_hat[0]
        k2, _, _ = _sim_rhs(scn, S + 0.5 * dt * k1, control)
        k3, _, _ = _sim_rhs(scn, S + 0.5 * dt * k2, control)
        k4, _, _ = _sim_rhs(scn, S + dt * k3, control)
        S = S + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        S[:, 1:4] = wrap_angle(S[:, 1:4])
        if not np.all(np.isfinite(S)):
            raise DivergenceError("non-finite state in circumnavigation rollout")
    u_s, u_hat = control(S[:, :4])
    states[-1], us[-1], uh[-1] = S[0], u_s[0], u_hat[0]
    return Rollout(np.arange(N) * dt, states[:, :4], states[:, 4:], us, uh)


def world_twin(scn, control, initial, duration, dt=0.005):
    """Independent world-frame rollout of vehicle and target; returns
    ``(t, e_r, eta)`` recovered from the simulated positions."""
    steps = int(round(duration / dt))
    S = np.array([initial.x, initial.y, initial.theta, initial.x_t, initial.y_t, initial.theta_t])

    def reduced(S):
        return CircumnavState.from_world(scn, S[0], S[1], S[2], S[3], S[4], S[5]).vector

    def rhs(S):
        u_s, u_hat = control(reduced(S)[None, :])
        v = speed_command(scn, S[2], S[5])
        return np.array([v * np.cos(S[2]), v * np.sin(S[2]), u_s[0] + u_hat[0],
                         scn.v_t * np.cos(S[5]), scn.v_t * np.sin(S[5]), scn.target_turn(S[5])])

    out = np.empty((steps + 1, 2))
    out[0] = reduced(S)[:2]
    for i in range(steps):
        k1 = rhs(S)
        k2 = rhs(S + 0.5 * dt * k1)
        k3 = rhs(S + 0.5 * dt * k2)
        k4 = rhs(S + dt * k3)
        S = S + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[i + 1] = reduced(S)[:2]
    return np.arange(steps + 1) * dt, out[:, 0], out[:, 1]


@dataclass(frozen=True)
class Metrics:
    D: float
    J: float
    sqrtL: np.ndarray
    q_hat: np.ndarray
    D_accum: np.ndarray
    J_accum: np.ndarray


def _cumtrapz(y, dt):
    out = np.zeros_like(y)
    if y.size > 1:
        out[1:] = np.cumsum(0.5 * dt * (y[1:] + y[:-1]))
    return out


def accumulate_metrics(rollout, scn, shaping):
    """Accumulated information ``D = int sqrt(L)`` and performance index ``J``."""
    dt = rollout.t[1] - rollout.t[0] if rollout.t.size > 1 else 0.0
    r_h = scn.r_d + rollout.X[:, 0]
    eta = rollout.X[:, 1]
    sqrtL = np.sqrt(fisher_L(scn, r_h, eta))
    qh = sqrtL * np.tanh(r_h - shaping.kappa)
    N = rollout.t.size
    window = ConstraintWindow(np.full((N, 1), -scn.omega_max), np.full((N, 1), scn.omega_max),
                              rollout.u_s.reshape(-1, 1)) if np.any(rollout.u_hat) else None
    u_cost = window_cost(rollout.u_hat.reshape(-1, 1), window, np.array([scn.r_weight])) if window else np.zeros(N)
    integrand = shaping.c1 * (shaping.q_max - qh) + u_cost
    D_acc = _cumtrapz(sqrtL, dt)
    J_acc = _cumtrapz(integrand, dt)
    return Metrics(float(D_acc[-1]), float(J_acc[-1]), sqrtL, qh, D_acc, J_acc)
