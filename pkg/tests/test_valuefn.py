import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irlpi import _pykernels, kernels
from irlpi.errors import DimensionError
from irlpi.valuefn import (
    PAPER_A,
    PAPER_A_LISTED,
    PAPER_B,
    BasisSet,
    ValueApproximator,
    eval_gradient,
    eval_value,
    load_weights,
    make_paper_basis,
    save_weights,
    tensor_basis,
)


def _naive_paper_value(w, e_r, eta, theta, theta_t, A=PAPER_A):
    total = 0.0
    for i, (p, q) in enumerate(A):
        a = e_r**p * eta**q
        for j, (s, t) in enumerate(PAPER_B):
            total += w[10 * i + j] * a * theta**s * theta_t**t
    return total


def test_single_term_examples():
    va = ValueApproximator(tensor_basis(1, 0, [2]), [2.0])
    assert eval_value(va, [3.0]) == 18.0
    va1 = ValueApproximator(tensor_basis(1, 0, [2]), [1.0])
    np.testing.assert_allclose(eval_gradient(va1, [3.0]), [6.0])


def test_product_rule_at_origin():
    basis = BasisSet(np.array([[1, 1]]), n1=1)
    va = ValueApproximator(basis, [2.5])
    g = eval_gradient(va, [0.0, 0.7])
    assert g[1] == 0.0
    assert g[0] == pytest.approx(2.5 * 0.7)


def test_paper_basis_shape():
    b = make_paper_basis()
    assert b.M == 150
    assert b.max_degree == 9
    assert np.all(b.terms[:, :2].sum(axis=1) >= 1)
    assert len({tuple(r) for r in b.terms}) == 150
    # complete sets of degree 2, 4 and 6 in (e_r, eta)
    degs = sorted(p + q for p, q in PAPER_A)
    assert degs == [2] * 3 + [4] * 5 + [6] * 7


def test_paper_basis_verbatim_listing():
    b = make_paper_basis(verbatim=True)
    assert b.M == 150
    assert b.max_degree == 10
    assert (5, 2) in PAPER_A_LISTED and (5, 2) not in PAPER_A


def test_paper_basis_row_major_order():
    b = make_paper_basis()
    for i, a in enumerate(PAPER_A):
        for j, bb in enumerate(PAPER_B):
            assert tuple(b.terms[10 * i + j]) == a + bb


def test_paper_basis_matches_naive_evaluator():
    X = np.array([1.0, 0.1, 0.2, 0.3])
    ones = np.ones(150)
    va = ValueApproximator(make_paper_basis(), ones)
    assert eval_value(va, X) == pytest.approx(_naive_paper_value(ones, *X), rel=1e-13)
    rng = np.random.default_rng(0)
    w = rng.normal(size=150)
    for _ in range(20):
        X = rng.uniform([-20, -1, -np.pi, 0], [60, 1, np.pi, np.pi / 2])
        va = ValueApproximator(make_paper_basis(), w)
        ref = _naive_paper_value(w, *X)
        assert eval_value(va, X) == pytest.approx(ref, rel=1e-10, abs=1e-9 * abs(ref))


def test_value_vanishes_on_x1_zero():
    rng = np.random.default_rng(1)
    va = ValueApproximator(make_paper_basis(), rng.normal(size=150))
    X = np.column_stack([np.zeros(200), np.zeros(200), rng.uniform(-3, 3, (200, 2))])
    assert np.all(eval_value(va, X) == 0.0)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    va = ValueApproximator(make_paper_basis(), rng.normal(size=150))
    h = 1e-5
    lo = np.array([-3.0, -1.0, -np.pi, 0.0])
    hi = np.array([65.0, 1.0, np.pi, np.pi / 2])
    for _ in range(100):
        X = lo + (hi - lo) * rng.random(4)
        g = eval_gradient(va, X)
        fd = np.empty(4)
        for k in range(4):
            e = np.zeros(4)
            e[k] = h
            fd[k] = (eval_value(va, X + e) - eval_value(va, X - e)) / (2 * h)
        assert np.max(np.abs(g - fd)) <= 1e-6 * np.max(np.abs(g))


def test_backends_agree():
    rng = np.random.default_rng(3)
    X = rng.uniform(-1.5, 1.5, (64, 4))
    E = make_paper_basis().terms
    w = rng.normal(size=150)
    np.testing.assert_allclose(kernels.basis_values(X, E), _pykernels.basis_values(X, E), rtol=1e-13, atol=1e-14)
    np.testing.assert_allclose(kernels.basis_jacobian(X, E), _pykernels.basis_jacobian(X, E), rtol=1e-13, atol=1e-14)
    V1, G1 = kernels.value_and_gradient(X, E, w)
    V2, G2 = _pykernels.value_and_gradient(X, E, w)
    np.testing.assert_allclose(V1, V2, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(G1, G2, rtol=1e-12, atol=1e-12)


def test_features_and_jacobian_consistent_with_gradient():
    rng = np.random.default_rng(4)
    b = tensor_basis(2, 1, [2, 3], 2)
    w = rng.normal(size=b.M)
    X = rng.normal(size=(10, 3))
    va = ValueApproximator(b, w)
    V, G = va.value_and_gradient(X)
    np.testing.assert_allclose(V, b.features(X) @ w, rtol=1e-12)
    np.testing.assert_allclose(G, np.einsum("bmn,m->bn", b.jacobian(X), w), rtol=1e-12, atol=1e-13)


def test_basis_validation():
    with pytest.raises(ValueError):
        BasisSet(np.array([[0, 2]]), n1=1)
    with pytest.raises(ValueError):
        BasisSet(np.array([[1, 0], [1, 0]]), n1=1)
    with pytest.raises(ValueError):
        BasisSet(np.array([[-1, 0]]), n1=1)
    with pytest.raises(DimensionError):
        make_paper_basis().features(np.zeros(3))
    with pytest.raises(DimensionError):
        ValueApproximator(make_paper_basis(), np.zeros(149))


def test_evaluation_is_deterministic():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(32, 4))
    b = make_paper_basis()
    assert np.array_equal(b.features(X), b.features(X.copy()))


def test_weights_roundtrip(tmp_path):
    rng = np.random.default_rng(6)
    w = rng.normal(size=150) * 10.0 ** rng.integers(-12, 12, 150)
    path = tmp_path / "w.txt"
    save_weights(path, w)
    assert len(path.read_text().splitlines()) == 150
    np.testing.assert_array_equal(load_weights(path, make_paper_basis()), w)
    with pytest.raises(DimensionError):
        load_weights(path, tensor_basis(1, 0, [2]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_tensor_basis_value_vanishes_with_x1(x2_and_x1):
    b = tensor_basis(1, 2, [1, 2], 2)
    va = ValueApproximator(b, np.arange(b.M, dtype=float))
    X = np.array([0.0, x2_and_x1[1], x2_and_x1[2]])
    assert eval_value(va, X) == 0.0
