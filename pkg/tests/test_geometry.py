import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import logit_vectors, states
from logitdyn import geometry as geo
from logitdyn import oracle as orc
from logitdyn.errors import DegenerateFeatureError, InvalidInputError, NumericalFailureError


# softmax / cross-entropy


def test_softmax_uniform():
    np.testing.assert_allclose(geo.softmax(np.zeros(3)), np.full(3, 1 / 3), rtol=0, atol=1e-16)


@pytest.mark.parametrize("c", [-700.0, -3.0, 0.0, 12.5, 800.0])
def test_softmax_shift_ratio_two(c):
    np.testing.assert_allclose(geo.softmax(np.array([c, c + math.log(2)])), [1 / 3, 2 / 3], atol=1e-15)


def test_softmax_matches_extended_precision():
    z = np.array([1.0, 2.0, 3.0])
    ref = [float(v) for v in orc.mp_softmax(z)]
    np.testing.assert_allclose(geo.softmax(z), ref, rtol=1e-15)


def test_softmax_rejects_nonfinite():
    with pytest.raises(InvalidInputError):
        geo.softmax(np.array([0.0, np.nan]))
    with pytest.raises(InvalidInputError):
        geo.softmax(np.array([0.0, np.inf]))


def test_cross_entropy_uniform_is_log2():
    assert geo.cross_entropy(np.zeros(2), 0) == pytest.approx(math.log(2), abs=1e-15)


def test_cross_entropy_decreases_to_zero():
    vals = [geo.cross_entropy(np.array([zy, 0.0, 0.0]), 0) for zy in (0.0, 5.0, 20.0, 50.0)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert 0 <= vals[-1] < 1e-20


def test_cross_entropy_matches_extended_precision():
    z = np.array([1.0, 2.0, 3.0])
    assert geo.cross_entropy(z, 2) == pytest.approx(orc.mp_cross_entropy(z, 2), rel=1e-15)


def test_cross_entropy_bad_label():
    with pytest.raises(InvalidInputError):
        geo.cross_entropy(np.zeros(3), 3)


@given(logit_vectors(), st.floats(-50, 50))
def test_softmax_shift_invariance(z, c):
    np.testing.assert_allclose(geo.softmax(z + c), geo.softmax(z), atol=1e-12)


@given(logit_vectors())
def test_softmax_on_simplex(z):
    p = geo.softmax(z)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1) < 1e-12


# gradient and Hessian


def test_gradient_near_degenerate_limit():
    p = np.array([1 - 1e-9, 5e-10, 5e-10])
    assert np.max(np.abs(geo.logit_gradient(p, 0))) < 2e-9


def test_gradient_uniform():
    np.testing.assert_allclose(geo.logit_gradient(np.full(3, 1 / 3), 1), [1 / 3, -2 / 3, 1 / 3], atol=1e-16)


def test_gradient_matches_finite_differences(rng):
    for _ in range(20):
        z = rng.standard_normal(4)
        y = int(rng.integers(4))
        fd = orc.fd_checked(orc.fd_gradient, lambda x: geo.cross_entropy(x, y), z, 1e-6)
        assert orc.compare("g", geo.logit_gradient(geo.softmax(z), y), fd, 1e-6, "rel").passed


def test_hessian_symmetric_point():
    np.testing.assert_array_equal(geo.logit_hessian(np.array([0.5, 0.5])), [[0.25, -0.25], [-0.25, 0.25]])


def test_hessian_vertex_limit():
    assert np.max(np.abs(geo.logit_hessian(np.array([1 - 1e-12, 1e-12])))) < 1e-11


def test_hessian_matches_finite_differences(rng):
    for _ in range(20):
        z = rng.standard_normal(3)
        fd = orc.fd_checked(orc.fd_jacobian, lambda x: geo.logit_gradient(geo.softmax(x), 0), z, 1e-5)
        assert orc.compare("H", geo.logit_hessian(geo.softmax(z)), fd, 1e-5, "rel").passed


@given(logit_vectors(), st.data())
def test_hessian_residual_closed_form(z, data):
    p = geo.softmax(z)
    y = data.draw(st.integers(0, len(z) - 1))
    ref = orc.oracle_logit_hessian(p) @ geo.logit_gradient(p, y).astype(np.longdouble)
    np.testing.assert_allclose(geo.hessian_residual_product(p, y), ref.astype(float), atol=1e-12)


@given(logit_vectors())
def test_hessian_kernel_and_norm(z):
    p = geo.softmax(z)
    h = geo.logit_hessian(p)
    assert np.max(np.abs(h @ np.ones(len(p)))) <= 1e-12
    assert np.linalg.norm(h, 2) <= 0.5 + 1e-12


@given(logit_vectors(min_v=3), st.data())
def test_hessian_positive_on_sum_zero_subspace(z, data):
    p = geo.softmax(z)
    if p.min() < 1e-3:
        p = 0.5 * p + 0.5 / len(p)
    v = np.array(data.draw(st.lists(st.floats(-1, 1), min_size=len(p), max_size=len(p))))
    v = v - v.mean()
    if np.linalg.norm(v) < 1e-3:
        return
    v /= np.linalg.norm(v)
    assert v @ geo.logit_hessian(p) @ v > 0


@given(logit_vectors(), st.data())
def test_residual_norm_bound(z, data):
    y = data.draw(st.integers(0, len(z) - 1))
    assert np.linalg.norm(geo.logit_gradient(geo.softmax(z), y)) <= math.sqrt(2) + 1e-15


# parameter-space maps


def test_parameter_gradient_zero():
    assert not np.any(geo.parameter_gradient(np.zeros(3), np.ones(4)))


def test_parameter_gradient_forced_case():
    out = geo.parameter_gradient(np.array([1.0, -1.0]), np.array([1.0, 0.0, 0.0]))
    expected = np.zeros((2, 3))
    expected[0, 0], expected[1, 0] = 1.0, -1.0
    np.testing.assert_array_equal(out, expected)


def test_parameter_gradient_matches_finite_differences(rng):
    w = rng.standard_normal((3, 4))
    phi = rng.standard_normal(4)
    fd = orc.fd_checked(orc.fd_gradient, lambda x: geo.cross_entropy(x @ phi, 1), w, 1e-6)
    g = geo.logit_gradient(geo.softmax(w @ phi), 1)
    assert orc.compare("G", geo.parameter_gradient(g, phi), fd, 1e-6, "rel").passed


def test_parameter_hessian_kernel_of_feature_map():
    phi = np.array([1.0, 2.0, 0.0])
    dw = np.outer([1.0, -3.0, 0.5], [2.0, -1.0, 7.0])  # dw @ phi = 0
    h = geo.logit_hessian(np.array([0.2, 0.3, 0.5]))
    assert not np.any(geo.apply_parameter_hessian(h, dw, phi))


def test_parameter_hessian_small_dense_case():
    p = np.array([0.3, 0.7])
    phi = np.array([0.5, -2.0])
    dw = np.array([[1.0, 2.0], [-0.5, 0.25]])
    dense = orc.dense_kronecker_hessian(p, phi)
    out = orc.vec(geo.apply_parameter_hessian(geo.logit_hessian(p), dw, phi))
    np.testing.assert_allclose(out, dense @ orc.vec(dw), atol=1e-12)


@given(states(), st.data())
def test_pullback_identity(state, data):
    w, phi, _ = state
    v, d = w.shape
    seed = data.draw(st.integers(0, 2**32))
    r = np.random.default_rng(seed)
    dw1, dw2 = r.standard_normal((2, v, d))
    p = geo.softmax(w @ phi)
    main = np.sum(dw1 * geo.apply_parameter_hessian(geo.logit_hessian(p), dw2, phi))
    ref = (dw1 @ phi).astype(np.longdouble) @ orc.oracle_logit_hessian(p) @ (dw2 @ phi).astype(np.longdouble)
    assert abs(main - float(ref)) <= 1e-10 * max(1.0, abs(float(ref)))


@given(states())
def test_kronecker_rank(state):
    w, phi, _ = state
    p = geo.softmax(w @ phi)
    mu = float(phi @ phi)
    assert orc.numerical_rank(orc.dense_kronecker_hessian(p, phi), mu * 1e-9) == len(p) - 1 or p.min() < 1e-8


def test_min_norm_preimage_zero():
    assert not np.any(geo.min_norm_preimage(np.zeros(3), np.ones(2)))


def test_min_norm_preimage_forced_case():
    out = geo.min_norm_preimage(np.array([1.0, 0.0]), np.array([2.0, 0.0]))
    np.testing.assert_array_equal(out, [[0.5, 0.0], [0.0, 0.0]])


def test_min_norm_preimage_is_shortest(rng):
    for _ in range(20):
        phi = rng.standard_normal(4)
        dz = rng.standard_normal(3)
        w0 = geo.min_norm_preimage(dz, phi)
        np.testing.assert_allclose(w0 @ phi, dz, atol=1e-12)
        k = rng.standard_normal((3, 4))
        k -= np.outer(k @ phi, phi) / (phi @ phi)  # kernel element: k @ phi = 0
        assert np.linalg.norm(w0 + k) > np.linalg.norm(w0)


def test_min_norm_preimage_zero_feature():
    with pytest.raises(DegenerateFeatureError):
        geo.min_norm_preimage(np.ones(2), np.zeros(3))


# spectral decomposition


def test_spectral_two_classes():
    b = geo.spectral_decompose(geo.logit_hessian(np.array([0.5, 0.5])))
    assert b.eigenvalues[0] == pytest.approx(0.5, abs=1e-15)
    np.testing.assert_allclose(np.abs(b.eigenvectors[:, 0]), [2**-0.5, 2**-0.5], atol=1e-15)
    assert b.eigenvectors[0, 0] * b.eigenvectors[1, 0] < 0


def test_spectral_uniform_three_classes():
    b = geo.spectral_decompose(geo.logit_hessian(np.full(3, 1 / 3)))
    np.testing.assert_allclose(b.eigenvalues, [1 / 3, 1 / 3], atol=1e-15)
    dense = np.sort(np.linalg.eigvalsh(geo.logit_hessian(np.full(3, 1 / 3))))
    np.testing.assert_allclose(np.sort(b.eigenvalues), dense[1:], atol=1e-15)


@given(logit_vectors(min_v=2, max_v=6))
def test_spectral_basis_properties(z):
    p = geo.softmax(z)
    p = 0.9 * p + 0.1 / len(p)
    h = geo.logit_hessian(p)
    b = geo.spectral_decompose(h)
    vecs, vals = b.eigenvectors, b.eigenvalues
    assert np.all(vals > 0)
    assert np.all(np.diff(vals) <= 1e-12)
    np.testing.assert_allclose(vecs.T @ vecs, np.eye(len(vals)), atol=1e-10)
    assert np.max(np.abs(vecs.T @ np.ones(len(p)))) <= 1e-10
    for k in range(len(vals)):
        assert np.linalg.norm(h @ vecs[:, k] - vals[k] * vecs[:, k]) <= 1e-9
        col = vecs[:, k]
        top = np.max(np.abs(col))
        assert col[np.flatnonzero(np.abs(col) >= top - 1e-12)[0]] > 0
    g = p - np.eye(len(p))[0]
    e = b.coefficients(g)
    assert abs(e @ e - g @ g) <= 1e-9


def test_spectral_random_five_class_residuals(rng):
    for _ in range(20):
        p = geo.softmax(rng.standard_normal(5))
        h = geo.logit_hessian(p)
        b = geo.spectral_decompose(h)
        res = np.linalg.norm(h @ b.eigenvectors - b.eigenvectors * b.eigenvalues, axis=0)
        assert np.all(res <= 1e-9)


def test_spectral_rejects_non_hessian():
    with pytest.raises(InvalidInputError):
        geo.spectral_decompose(np.eye(3))
    with pytest.raises(InvalidInputError):
        geo.spectral_decompose(np.array([[1.0, 0.0], [1.0, 1.0]]))


def test_jacobi_matches_dense_solver(rng):
    a = rng.standard_normal((6, 6))
    a = a + a.T
    vals, vecs = geo.jacobi_eigh(a)
    np.testing.assert_allclose(np.sort(vals), np.linalg.eigvalsh(a), atol=1e-12)
    np.testing.assert_allclose(a @ vecs, vecs * vals, atol=1e-12)


def test_jacobi_sweep_cap():
    a = np.array([[1.0, 0.5], [0.5, 2.0]])
    with pytest.raises(NumericalFailureError):
        geo.jacobi_eigh(np.kron(a, a) + 0.1, max_sweeps=0)


def test_mp_softmax_independent_of_numpy_path():
    with mpmath.workdps(50):
        ref = mpmath.exp(1) / (mpmath.exp(1) + mpmath.exp(2) + mpmath.exp(3))
    assert float(orc.mp_softmax([1.0, 2.0, 3.0])[0]) == pytest.approx(float(ref), rel=1e-15)
