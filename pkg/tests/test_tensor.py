import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dtfa import tensor
from dtfa.errors import ParameterError

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
angles = st.floats(-2 * np.pi, 2 * np.pi, allow_nan=False)


def test_plane_strain_normal_entry():
    L = tensor.isotropic_stiffness(2670.0, 0.3)
    # hand evaluation of E (1 - nu) / ((1 + nu)(1 - 2 nu))
    assert L[0, 0] == pytest.approx(2670.0 * 0.7 / (1.3 * 0.4), rel=1e-14)
    assert L[0, 0] == pytest.approx(3594.23, abs=5e-3)


def test_zero_poisson_unit_modulus_is_identity():
    np.testing.assert_allclose(tensor.isotropic_stiffness(1.0, 0.0), np.eye(3),
                               atol=1e-15)


def test_shear_entry_is_twice_shear_modulus():
    L = tensor.isotropic_stiffness(80000.0, 0.3)
    assert L[2, 2] == pytest.approx(61538.46, abs=5e-3)


@pytest.mark.parametrize("E, nu", [(0.0, 0.3), (-1.0, 0.3), (1.0, 0.5),
                                   (1.0, -1.0), (1.0, 0.7)])
def test_invalid_elastic_constants(E, nu):
    with pytest.raises(ParameterError):
        tensor.isotropic_stiffness(E, nu)


def test_3d_isotropic_matches_lame_form():
    E, nu = 200.0, 0.25
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    mu = E / (2 * (1 + nu))
    c = np.zeros((3, 3, 3, 3))
    d = np.eye(3)
    for i, j, k, l in np.ndindex(3, 3, 3, 3):
        c[i, j, k, l] = lam * d[i, j] * d[k, l] + mu * (d[i, k] * d[j, l]
                                                        + d[i, l] * d[j, k])
    np.testing.assert_allclose(tensor.isotropic_stiffness(E, nu, "3d"),
                               tensor.tensor4_to_mandel(c), atol=1e-12)


def test_max_principal_examples():
    assert tensor.max_principal(tensor.to_mandel(np.diag([0.01, 0.002]))) == \
        pytest.approx(0.01)
    shear = tensor.to_mandel(np.array([[0.0, 0.005], [0.005, 0.0]]))
    assert tensor.max_principal(shear) == pytest.approx(0.005, abs=1e-15)
    assert tensor.max_principal(np.zeros(3)) == 0.0


@given(arrays(float, 3, elements=finite))
def test_mandel_round_trip_and_norm(v):
    m = tensor.from_mandel(v)
    np.testing.assert_allclose(tensor.to_mandel(m), v, atol=1e-12)
    # the Mandel dot product is the tensor double contraction
    assert np.dot(v, v) == pytest.approx(np.sum(m * m), rel=1e-12, abs=1e-12)


@given(arrays(float, 3, elements=finite))
def test_max_principal_matches_eigvalsh(v):
    ref = np.linalg.eigvalsh(tensor.from_mandel(v))[-1]
    assert tensor.max_principal(v) == pytest.approx(ref, rel=1e-10, abs=1e-10)


@given(arrays(float, 3, elements=st.floats(-1, 1)))
def test_max_principal_gradient_by_differences(v):
    val, g = tensor.max_principal_grad(v)
    ev = np.linalg.eigvalsh(tensor.from_mandel(v))
    if ev[1] - ev[0] < 1e-3:
        return
    h = 1e-7
    fd = np.array([(tensor.max_principal(v + h * e) - tensor.max_principal(v - h * e))
                   / (2 * h) for e in np.eye(3)])
    np.testing.assert_allclose(g, fd, atol=1e-6)


def test_isotropic_invariant_under_rotation():
    L = tensor.isotropic_stiffness(2670.0, 0.3)
    np.testing.assert_allclose(tensor.rotate_stiffness(L, np.pi / 4), L,
                               atol=1e-12 * L.max())


def _orthotropic():
    return np.array([[100.0, 7.0, 0.0], [7.0, 20.0, 0.0], [0.0, 0.0, 9.0]])


def test_quarter_turn_swaps_axes():
    R = tensor.rotate_stiffness(_orthotropic(), np.pi / 2)
    assert R[0, 0] == pytest.approx(20.0)
    assert R[1, 1] == pytest.approx(100.0)
    assert R[0, 1] == pytest.approx(7.0)
    assert R[2, 2] == pytest.approx(9.0)


@given(angles)
def test_rotation_matches_index_notation(theta):
    L = _orthotropic()
    c = tensor.mandel_to_tensor4(L)
    r = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    ref = np.einsum("ip,jq,kr,ls,pqrs->ijkl", r, r, r, r, c)
    np.testing.assert_allclose(tensor.rotate_stiffness(L, theta),
                               tensor.tensor4_to_mandel(ref), atol=1e-10)


@given(angles, arrays(float, 3, elements=finite))
def test_vector_rotation_matches_matrix_rotation(theta, v):
    r = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    ref = tensor.to_mandel(r @ tensor.from_mandel(v) @ r.T)
    np.testing.assert_allclose(tensor.rotate_vector(v, theta), ref, atol=1e-9)
    Q = tensor.rotation_matrix(theta)
    np.testing.assert_allclose(Q @ Q.T, np.eye(3), atol=1e-12)


def test_tensor4_round_trip_3d():
    L = tensor.isotropic_stiffness(10.0, 0.2, "3d")
    np.testing.assert_allclose(
        tensor.tensor4_to_mandel(tensor.mandel_to_tensor4(L)), L, atol=1e-12)


def test_unsupported_dimension():
    with pytest.raises(ParameterError):
        tensor.n_components(4)
