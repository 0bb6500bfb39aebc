"""Non-quadratic saturation cost, side-dependent scale selection and Hamiltonian.

For a channel with saturation scale ``lam`` and weight ``r`` the control cost is

    U(u) = 2 r lam * integral_0^u atanh(s / lam) ds
         = 2 r lam u atanh(u / lam) + r lam**2 ln(1 - (u / lam)**2),

which is convex and zero only at ``u = 0``.  It stays finite at the bound
(``U -> 2 r lam**2 ln 2``) while its slope diverges, which is what keeps the
greedy input strictly inside the window.
Functions accept a single input vector ``(m,)`` or a batch ``(B, m)``.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DimensionError, SaturationExceeded
from .sysmodel import ConstraintWindow

@dataclass(frozen=True)
class CostConfig:
    """Diagonal input weights ``R`` and the state cost ``Q(x1)``.

    ``state_cost`` is batched: it maps ``x1`` of shape ``(B, n1)`` (and the
    matching ``x2``, which it may ignore) to ``(B,)`` nonnegative values.
    """

    R: np.ndarray
    state_cost: Callable

    def __post_init__(self):
        R = np.atleast_1d(np.asarray(self.R, dtype=float))
        if R.ndim == 2:
            R = np.diag(R).copy()
        if np.any(R <= 0):
            raise ValueError("input weights must be strictly positive")
        object.__setattr__(self, "R", R)


def quadratic_state_cost(weights):
    """``Q(x1) = sum_i q_i x1_i**2`` as a batched callback."""
    q = np.asarray(weights, dtype=float)

    def state_cost(x1, x2):
        return np.sum(q * np.asarray(x1) ** 2, axis=-1)
    return state_cost


@dataclass(frozen=True)
class LambdaBar:
    """Per-channel saturation scale and the branch it came from.

    ``side`` is True where the upper bound was used (``z >= 0``).
    """

    values: np.ndarray
    side: np.ndarray


def select_lambda_bar(window: ConstraintWindow, z) -> LambdaBar:
    """Pick ``h - u_s`` where ``z >= 0`` and ``u_s - d`` where ``z < 0``.

    ``z`` is the descent direction ``-G^T V_X``; the greedy input shares its sign.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != window.us.shape:
        raise DimensionError(f"z has shape {z.shape}, window has {window.us.shape}")
    upper = z >= 0
    vals = np.where(upper, window.h - window.us, window.us - window.d)
    return LambdaBar(vals, upper)


def _lam_values(lam):
    return lam.values if isinstance(lam, LambdaBar) else np.asarray(lam, dtype=float)


def _channel_cost(u_hat, lam, R):
    ratio = u_hat / lam
    if np.any(np.abs(ratio) >= 1.0) or not np.all(np.isfinite(ratio)):
        raise SaturationExceeded("|u_hat| must stay strictly below the saturation scale")
    return 2.0 * R * lam * u_hat * np.arctanh(ratio) + R * lam**2 * np.log1p(-(ratio**2))


def control_cost(u_hat, lam, R):
    """Saturation cost summed over channels; scalar or ``(B,)``."""
    u_hat = np.asarray(u_hat, dtype=float)
    return np.sum(_channel_cost(u_hat, _lam_values(lam), np.asarray(R, dtype=float)), axis=-1)


def window_cost(u_hat, window: ConstraintWindow, R):
    """Control cost with the scale chosen by the sign of ``u_hat`` itself.

    This is the cost of an arbitrary admissible input; for the greedy input it
    coincides with :func:`control_cost` under :func:`select_lambda_bar`.
    """
    u_hat = np.asarray(u_hat, dtype=float)
    return control_cost(u_hat, select_lambda_bar(window, u_hat), R)


def hamiltonian(V_X, F, G, u_hat, Q_val, lam, R):
    """``V_X^T (F + G u_hat) + Q + U(u_hat)``."""
    V_X = np.asarray(V_X, dtype=float)
    drift = np.asarray(F, dtype=float) + np.einsum("...ij,...j->...i", np.asarray(G, dtype=float), u_hat)
    return np.sum(V_X * drift, axis=-1) + Q_val + control_cost(u_hat, lam, R)


def optimality_gap(u_hat, u_hat_star, V_X, G, lam, R):
    """``U(u) - U(u*) + V_X^T G (u - u*)``; nonnegative when ``u*`` is greedy for ``V_X``."""
    u_hat = np.asarray(u_hat, dtype=float)
    u_hat_star = np.asarray(u_hat_star, dtype=float)
    GtV = np.einsum("...ij,...i->...j", np.asarray(G, dtype=float), np.asarray(V_X, dtype=float))
    return (
        control_cost(u_hat, lam, R)
        - control_cost(u_hat_star, lam, R)
        + np.sum(GtV * (u_hat - u_hat_star), axis=-1)
    )
