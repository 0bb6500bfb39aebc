"""Pure numpy implementations of the monomial-basis kernels.

These mirror the compiled routines in ``_ckernels.pyx`` one for one and are
used whenever the extension is unavailable or disabled.
"""

import numpy as np


def _power_table(X, max_deg):
    # pw[b, k, p] = X[b, k] ** p, built by repeated multiplication so that the
    # result matches the compiled kernel term for term.
    B, d = X.shape
    pw = np.empty((B, d, max_deg + 1))
    pw[:, :, 0] = 1.0
    for p in range(1, max_deg + 1):
        pw[:, :, p] = pw[:, :, p - 1] * X
    return pw


def basis_values(X, E):
    """Evaluate every monomial ``prod_k X[b, k] ** E[j, k]``; shape (B, M)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    E = np.ascontiguousarray(E, dtype=np.int64)
    B, d = X.shape
    pw = _power_table(X, int(E.max(initial=0)))
    out = np.ones((B, E.shape[0]))
    for k in range(d):
        out *= pw[:, k, E[:, k]]
    return out


def basis_jacobian(X, E):
    """Derivatives of each monomial w.r.t. each coordinate; shape (B, M, d)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    E = np.ascontiguousarray(E, dtype=np.int64)
    B, d = X.shape
    M = E.shape[0]
    pw = _power_table(X, int(E.max(initial=0)))
    factors = np.stack([pw[:, k, E[:, k]] for k in range(d)], axis=2)  # (B, M, d)
    jac = np.empty((B, M, d))
    for k in range(d):
        e = E[:, k]
        dk = e * pw[:, k, np.maximum(e - 1, 0)]
        others = np.ones((B, M))
        for l in range(d):
            if l != k:
                others *= factors[:, :, l]
        jac[:, :, k] = dk * others
    return jac


def value_and_gradient(X, E, w):
    """Return ``(V, dV/dX)`` for ``V = sum_j w_j sigma_j(X)``; shapes (B,), (B, d)."""
    w = np.ascontiguousarray(w, dtype=np.float64)
    phi = basis_values(X, E)
    jac = basis_jacobian(X, E)
    return phi @ w, np.einsum("bmd,m->bd", jac, w)
