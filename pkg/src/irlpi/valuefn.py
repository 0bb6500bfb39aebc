"""Polynomial value-function approximators ``V(X) = w . sigma(X)``.

Every basis term is a monomial in the augmented state whose degree in the
controlled block ``x1`` is at least one, so ``V`` vanishes wherever ``x1 = 0``.
"""

import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DimensionError


@dataclass(frozen=True)
class BasisSet:
    """Monomial exponent table ``terms[j, k]`` over the state coordinates."""

    terms: np.ndarray
    n1: int

    def __post_init__(self):
        E = np.ascontiguousarray(np.asarray(self.terms, dtype=np.int64))
        if E.ndim != 2 or E.shape[0] == 0:
            raise ValueError("terms must be a non-empty (M, n) integer array")
        if np.any(E < 0):
            raise ValueError("exponents must be nonnegative")
        if not (0 < self.n1 <= E.shape[1]):
            raise ValueError("n1 must lie in 1..n")
        if np.any(E[:, : self.n1].sum(axis=1) < 1):
            raise ValueError("every term needs positive degree in the x1 block")
        if len({tuple(row) for row in E}) != E.shape[0]:
            raise ValueError("basis terms must be distinct")
        E.setflags(write=False)
        object.__setattr__(self, "terms", E)

    @property
    def M(self):
        return self.terms.shape[0]

    @property
    def n(self):
        return self.terms.shape[1]

    @property
    def max_degree(self):
        return int(self.terms.sum(axis=1).max())

    def _check(self, X):
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        Xb = np.atleast_2d(X)
        if Xb.ndim != 2 or Xb.shape[1] != self.n:
            raise DimensionError(f"basis expects states of length {self.n}, got shape {X.shape}")
        return Xb, single

    def features(self, X):
        """``sigma(X)``: shape ``(M,)`` or ``(B, M)``."""
        Xb, single = self._check(X)
        phi = kernels.basis_values(Xb, self.terms)
        return phi[0] if single else phi

    def jacobian(self, X):
        """``d sigma / dX``: shape ``(M, n)`` or ``(B, M, n)``."""
        Xb, single = self._check(X)
        jac = kernels.basis_jacobian(Xb, self.terms)
        return jac[0] if single else jac


def _monomials(nvars, degree):
    """Exponent tuples of total degree ``degree`` in lexicographic (descending) order."""
    out = [e for e in itertools.product(range(degree, -1, -1), repeat=nvars) if sum(e) == degree]
    return out


def tensor_basis(n1, n2, x1_degrees, x2_max_degree=0):
    """Products of ``x1`` monomials (any degree in ``x1_degrees``) and ``x2``
    monomials up to ``x2_max_degree``, ordered row-major over (x1 term, x2 term).

    >>> tensor_basis(1, 0, [2]).terms.tolist()
    [[2]]
    """
    a_terms = [e for deg in sorted(set(x1_degrees)) for e in _monomials(n1, deg)]
    if n2 > 0:
        b_terms = [e for deg in range(x2_max_degree + 1) for e in _monomials(n2, deg)]
    else:
        b_terms = [()]
    rows = [tuple(a) + tuple(b) for a in a_terms for b in b_terms]
    return BasisSet(np.array(rows, dtype=np.int64).reshape(len(rows), n1 + n2), n1)


# Exponents (e_r, eta) of the 15 radial/bearing factors and (theta, theta_t) of
# the 10 heading factors of the circumnavigation value network.
PAPER_A_LISTED = [
    (2, 0), (1, 1), (0, 2),
    (4, 0), (3, 1), (2, 2), (1, 3), (0, 4),
    (6, 0), (5, 2), (4, 2), (3, 3), (2, 4), (5, 1), (0, 6),
]
PAPER_A = [e if e != (5, 2) else (1, 5) for e in PAPER_A_LISTED]
PAPER_B = [
    (0, 0),
    (1, 0), (0, 1),
    (2, 0), (1, 1), (0, 2),
    (3, 0), (2, 1), (1, 2), (0, 3),
]


def make_paper_basis(verbatim=False):
    """The 150-term circumnavigation basis ``a_i * b_j`` with index ``10 i + j``.

    By default the radial factors are the complete sets of degree 2, 4 and 6
    monomials in ``(e_r, eta)`` (3 + 5 + 7 terms), which caps total degree at
    nine.  ``verbatim=True`` keeps the printed list, where ``e_r**5 eta**2``
    stands in place of ``e_r eta**5``.
    """
    A = PAPER_A_LISTED if verbatim else PAPER_A
    rows = [a + b for a in A for b in PAPER_B]
    return BasisSet(np.array(rows, dtype=np.int64), n1=2)


@dataclass(frozen=True)
class ValueApproximator:
    basis: BasisSet
    weights: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(np.asarray(self.weights, dtype=float).reshape(-1))
        if w.shape[0] != self.basis.M:
            raise DimensionError(f"{w.shape[0]} weights for a basis of {self.basis.M} terms")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def zeros(cls, basis):
        return cls(basis, np.zeros(basis.M))

    def value_and_gradient(self, X):
        Xb, single = self.basis._check(X)
        V, dV = kernels.value_and_gradient(Xb, self.basis.terms, self.weights)
        return (V[0], dV[0]) if single else (V, dV)


def eval_value(va, X):
    """``w . sigma(X)``; scalar or ``(B,)``."""
    return va.basis.features(X) @ va.weights


def eval_gradient(va, X):
    """Analytic ``dV/dX``; ``(n,)`` or ``(B, n)``."""
    return va.value_and_gradient(X)[1]


def save_weights(path, weights):
    """Write one weight per line with 17 significant digits."""
    text = "".join(f"{float(x):.17g}\n" for x in np.asarray(weights).reshape(-1))
    Path(path).write_text(text)


def load_weights(path, basis=None):
    values = [float(line) for line in Path(path).read_text().split() if line.strip()]
    w = np.array(values, dtype=float)
    if basis is not None and w.shape[0] != basis.M:
        raise DimensionError(f"weight file has {w.shape[0]} entries, basis has {basis.M}")
    return w
