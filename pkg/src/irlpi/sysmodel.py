"""Control-affine plants with state-dependent, unsymmetrical input bounds.

A plant is split into a controlled block ``x1`` and an exogenous block ``x2``::

    dx1/dt = f1(x1, x2) + g1(x1, x2) u
    dx2/dt = f2(x2)     + g2(x1, x2) u        (g2 defaults to zero)

with ``d(x1, x2) <= u <= h(x1, x2)`` and a baseline admissible policy
``u_s(x1, x2)``.  The input is written ``u = u_s + u_hat`` so the solver only
ever designs the virtual input ``u_hat``.

All model callbacks are *batched*: they receive ``x1`` of shape ``(B, n1)``
and ``x2`` of shape ``(B, n2)`` and return arrays with the same leading
batch axis.  The public functions below accept either a single state of
shape ``(n,)`` or a batch ``(B, n)`` and return results of matching rank.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import AssumptionViolated, ConstraintViolation, DimensionError, DivergenceError

Policy = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SystemModel:
    """Batched evaluation callbacks for a control-affine plant.

    ``f1`` and ``f2`` are only called by the simulator; solver code restricts
    itself to :func:`input_matrix`, :func:`constraint_window` and observed
    transitions.  ``wrap``, when given, maps a batch of states onto the
    canonical range of any periodic coordinates.
    """

    n1: int
    n2: int
    m: int
    f1: Callable
    g1: Callable
    f2: Callable
    constraint: Callable
    baseline: Callable
    g2: Optional[Callable] = None
    wrap: Optional[Callable] = None
    name: str = "model"

    @property
    def n(self):
        return self.n1 + self.n2


@dataclass(frozen=True)
class AugmentedState:
    x1: np.ndarray
    x2: np.ndarray

    @property
    def vector(self):
        return np.concatenate([np.atleast_1d(self.x1), np.atleast_1d(self.x2)]).astype(float)

    @classmethod
    def from_vector(cls, model, X):
        X = np.asarray(X, dtype=float)
        if X.shape != (model.n,):
            raise DimensionError(f"expected state of length {model.n}, got shape {X.shape}")
        return cls(X[: model.n1].copy(), X[model.n1:].copy())


@dataclass(frozen=True)
class ConstraintWindow:
    """Lower bound ``d``, upper bound ``h`` and baseline ``us`` per channel.

    Construction fails with :class:`AssumptionViolated` unless
    ``d < us < h`` holds on every channel of every batch row.
    """

    d: np.ndarray
    h: np.ndarray
    us: np.ndarray

    def __post_init__(self):
        d, h, us = (np.asarray(a, dtype=float) for a in (self.d, self.h, self.us))
        if not (d.shape == h.shape == us.shape):
            raise DimensionError(f"window shapes differ: {d.shape}, {h.shape}, {us.shape}")
        bad = ~((d < us) & (us < h))
        if np.any(bad):
            idx = np.argwhere(bad)[0]
            raise AssumptionViolated(
                f"baseline not strictly inside bounds at index {tuple(idx)}: "
                f"d={d[tuple(idx)]!r}, us={us[tuple(idx)]!r}, h={h[tuple(idx)]!r}"
            )
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "us", us)

    @property
    def virtual_lower(self):
        return self.d - self.us

    @property
    def virtual_upper(self):
        return self.h - self.us


def _as_batch(model, X):
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    Xb = np.atleast_2d(X)
    if Xb.ndim != 2 or Xb.shape[1] != model.n:
        raise DimensionError(f"expected state(s) of length {model.n}, got shape {X.shape}")
    return Xb, single


def split(model, X):
    """Return ``(x1, x2)`` batches for a state or batch of states."""
    Xb, _ = _as_batch(model, X)
    return Xb[:, : model.n1], Xb[:, model.n1:]


def _window_batch(model, x1, x2):
    d, h = model.constraint(x1, x2)
    us = model.baseline(x1, x2)
    B = x1.shape[0]
    d, h, us = (np.broadcast_to(np.asarray(a, dtype=float), (B, model.m)) for a in (d, h, us))
    return ConstraintWindow(d, h, us)


def constraint_window(model, X):
    """Bounds and baseline value at ``X``.

    The admissible set for the virtual input is
    ``(window.virtual_lower, window.virtual_upper)``, which always contains 0.
    """
    Xb, single = _as_batch(model, X)
    w = _window_batch(model, Xb[:, : model.n1], Xb[:, model.n1:])
    if single:
        return ConstraintWindow(w.d[0], w.h[0], w.us[0])
    return w


def input_matrix(model, X):
    """``G(X)`` of the augmented dynamics, shape ``(B, n, m)`` (or ``(n, m)``)."""
    Xb, single = _as_batch(model, X)
    x1, x2 = Xb[:, : model.n1], Xb[:, model.n1:]
    G = np.zeros((Xb.shape[0], model.n, model.m))
    g1 = np.asarray(model.g1(x1, x2), dtype=float)
    if g1.shape != (Xb.shape[0], model.n1, model.m):
        raise DimensionError(f"g1 returned shape {g1.shape}, expected {(Xb.shape[0], model.n1, model.m)}")
    G[:, : model.n1, :] = g1
    if model.g2 is not None:
        G[:, model.n1:, :] = model.g2(x1, x2)
    return G[0] if single else G


def _dynamics_batch(model, Xb, u_hat, window=None):
    x1, x2 = Xb[:, : model.n1], Xb[:, model.n1:]
    if window is None:
        window = _window_batch(model, x1, x2)
    u = window.us + u_hat
    g1 = np.asarray(model.g1(x1, x2), dtype=float)
    dx1 = np.asarray(model.f1(x1, x2), dtype=float) + np.einsum("bij,bj->bi", g1, u)
    dx2 = np.asarray(model.f2(x2), dtype=float).reshape(Xb.shape[0], model.n2)
    if model.g2 is not None:
        dx2 = dx2 + np.einsum("bij,bj->bi", model.g2(x1, x2), u)
    return np.concatenate([dx1, dx2], axis=1)


def eval_augmented_dynamics(model, X, u_hat):
    """``F(X) + G(X) u_hat`` with ``F = [f1 + g1 u_s; f2 + g2 u_s]``."""
    Xb, single = _as_batch(model, X)
    u_hat = np.asarray(u_hat, dtype=float)
    ub = np.atleast_2d(u_hat) if single else u_hat
    if ub.shape != (Xb.shape[0], model.m):
        raise DimensionError(f"u_hat has shape {u_hat.shape}, expected {(Xb.shape[0], model.m)}")
    out = _dynamics_batch(model, Xb, ub)
    return out[0] if single else out


def _checked_policy(model, policy, Xb, check):
    # Policy and window both see the canonical (wrapped) state.
    Xw = model.wrap(Xb) if model.wrap is not None else Xb
    window = _window_batch(model, Xw[:, : model.n1], Xw[:, model.n1:])
    u_hat = np.asarray(policy(Xw), dtype=float).reshape(Xb.shape[0], model.m)
    if check:
        lo, hi = window.virtual_lower, window.virtual_upper
        if np.any(u_hat < lo) or np.any(u_hat > hi) or not np.all(np.isfinite(u_hat)):
            raise ConstraintViolation("policy output left the admissible virtual interval")
    return u_hat, window


def rk4_step(model, policy, Xb, dt, check=True):
    """Advance a batch one RK4 step; returns ``(X_next, u_hat at stage 1)``.

    The policy is re-evaluated at every stage.
    """
    u1, w1 = _checked_policy(model, policy, Xb, check)
    k1 = _dynamics_batch(model, Xb, u1, w1)
    X2 = Xb + 0.5 * dt * k1
    u2, w2 = _checked_policy(model, policy, X2, check)
    k2 = _dynamics_batch(model, X2, u2, w2)
    X3 = Xb + 0.5 * dt * k2
    u3, w3 = _checked_policy(model, policy, X3, check)
    k3 = _dynamics_batch(model, X3, u3, w3)
    X4 = Xb + dt * k3
    u4, w4 = _checked_policy(model, policy, X4, check)
    k4 = _dynamics_batch(model, X4, u4, w4)
    Xn = Xb + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(Xn)):
        raise DivergenceError("non-finite state encountered during RK4 step")
    return Xn, u1


def integrate_rk4(model, policy, X0, dt, steps, check=True, wrap=True):
    """Fixed-step RK4 rollout.

    Parameters
    ----------
    model : SystemModel
    policy : callable
        Maps a batch of states ``(B, n)`` to virtual inputs ``(B, m)``.
    X0 : array_like
        Initial state ``(n,)`` or batch ``(B, n)``.
    dt : float
        Step size in seconds.
    steps : int
        Number of steps; the result holds ``steps + 1`` states.
    wrap : bool
        Apply ``model.wrap`` after every step.

    Returns
    -------
    ndarray
        ``(steps + 1, n)`` for a single initial state, else ``(steps + 1, B, n)``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    Xb, single = _as_batch(model, X0)
    traj = np.empty((int(steps) + 1,) + Xb.shape)
    traj[0] = Xb
    for i in range(int(steps)):
        Xb, _ = rk4_step(model, policy, Xb, dt, check)
        if wrap and model.wrap is not None:
            Xb = model.wrap(Xb)
        traj[i + 1] = Xb
    return traj[:, 0, :] if single else traj


def zero_policy(model):
    """Policy returning ``u_hat = 0``, i.e. applying the baseline unchanged."""
    def policy(Xb):
        return np.zeros((np.atleast_2d(Xb).shape[0], model.m))
    return policy


def symmetric_bounds(lam, m=1):
    """Constraint callback for the fixed symmetric set ``|u_i| <= lam``."""
    lam = float(lam)

    def constraint(x1, x2):
        B = x1.shape[0]
        return np.full((B, m), -lam), np.full((B, m), lam)
    return constraint


def zero_baseline(m=1):
    def baseline(x1, x2):
        return np.zeros((x1.shape[0], m))
    return baseline


def scalar_linear_model(a=-1.0, b=1.0, lam=50.0):
    """``dx/dt = a x + b u`` with ``|u| <= lam`` and a zero baseline.

    The plant has no exogenous block (``n2 = 0``); with a large ``lam`` the
    saturation never binds and the problem reduces to scalar LQR.
    """
    def f1(x1, x2):
        return a * x1

    def g1(x1, x2):
        return np.full((x1.shape[0], 1, 1), float(b))

    def f2(x2):
        return np.zeros((x2.shape[0], 0))

    return SystemModel(1, 0, 1, f1=f1, g1=g1, f2=f2, constraint=symmetric_bounds(lam),
                       baseline=zero_baseline(1), name="scalar-linear")
