import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.integrate import quad_vec
from scipy.linalg import expm, logm

from lie_cstep import groups as g
from lie_cstep.groups import SE2, SE3, SE23, SO3, Composite, GroupElement, Rn

ALL = [SO3, SE2, SE3, SE23]
POSES = [SE2, SE3, SE23]


def tangent_strategy(kind, max_angle=3.0):
    finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)

    def clip(xi):
        xi = np.array(xi)
        k = 1 if kind is SE2 else 3
        n = np.linalg.norm(xi[:k])
        if n > max_angle:
            xi[:k] *= max_angle / n
        return xi
    return arrays(float, kind.dof, elements=finite).map(clip)


# ---- complexified scalar kit ------------------------------------------------

def test_transpose_does_not_conjugate():
    A = np.array([[1 + 2j, 3], [4j, 5]])
    assert np.array_equal(g.ctranspose(A), A.T)


def test_cnorm_is_unconjugated():
    z = np.array([3 + 1e-20j, 4.0])
    n = g.cnorm(z)
    assert n.real == pytest.approx(5.0)
    assert n.imag / 1e-20 == pytest.approx(3 / 5)


def test_cabs_cmax_cmin_decide_on_real_part():
    z = np.array([-2 + 1j, 3 - 1j])
    assert np.array_equal(g.cabs(z), np.array([2 - 1j, 3 - 1j]))
    assert g.cmax(1 + 5j, 2 - 1j) == 2 - 1j
    assert g.cmin(1 + 5j, 2 - 1j) == 1 + 5j


def test_complexified_atan2_derivative():
    h = 1e-20
    y0, x0 = 0.7, -0.4
    z = g.complexified_atan2(y0 + 1j * h, x0)
    assert z.real == pytest.approx(np.arctan2(y0, x0))
    assert z.imag / h == pytest.approx(x0 / (x0 ** 2 + y0 ** 2), rel=1e-14)
    with pytest.raises(ValueError):
        g.complexified_atan2(0.0, 0.0)


@given(st.floats(-50, 50, allow_nan=False))
def test_wrap_angle_real_part_in_range(a):
    w = g.wrap_angle(a + 1e-20j)
    assert -np.pi < w.real <= np.pi
    assert w.imag == 1e-20
    assert np.isclose(np.exp(1j * w.real), np.exp(1j * a))


# ---- exp / log --------------------------------------------------------------

@pytest.mark.parametrize("kind", ALL)
@settings(max_examples=60, deadline=None)
@given(data=st.data())
def test_exp_matches_matrix_exponential(kind, data):
    xi = data.draw(tangent_strategy(kind))
    assert np.allclose(kind.exp(xi), expm(kind.wedge(xi)), atol=1e-10)


@pytest.mark.parametrize("kind", ALL)
@settings(max_examples=60, deadline=None)
@given(data=st.data())
def test_log_exp_roundtrip(kind, data):
    xi = data.draw(tangent_strategy(kind))
    X = g.exp_map(xi, kind)
    assert np.allclose(g.log_map(X), xi, atol=1e-9)
    assert not X.validate()


@pytest.mark.parametrize("kind", ALL)
def test_log_matches_matrix_logarithm(kind):
    rng = np.random.default_rng(1)
    for _ in range(20):
        X = g.random_element(kind, rng)
        assert np.allclose(g.wedge(g.log_map(X), kind), np.real(logm(X.matrix)), atol=1e-9)


@pytest.mark.parametrize("kind", ALL)
def test_small_angle_branch_is_continuous(kind):
    rng = np.random.default_rng(2)
    d = rng.standard_normal(kind.dof)
    for scale in (1e-3, 1e-6, 1e-7, 1e-9, 1e-12):
        xi = d * scale
        assert np.allclose(kind.exp(xi), expm(kind.wedge(xi)), atol=1e-15, rtol=0)
        assert np.allclose(kind.log(kind.exp(xi)), xi, rtol=1e-9, atol=1e-20)


def test_exp_of_zero_is_identity():
    for kind in ALL:
        assert np.array_equal(kind.exp(np.zeros(kind.dof)), np.eye(kind.dim))


def test_so3_log_rejects_angle_pi():
    C = SO3.exp(np.array([0.0, 0.0, np.pi]))
    with pytest.raises(g.LogDomainError):
        SO3.log(C)


def test_se2_log_accepts_headings_near_pi():
    xi = np.array([np.pi - 1e-12, 0.3, -0.2])
    assert np.allclose(SE2.log(SE2.exp(xi)), xi, atol=1e-9)


def test_so3_left_jacobian_is_integral_of_exp():
    phi = np.array([0.4, -1.1, 0.7])
    J, _ = quad_vec(lambda a: SO3.exp(a * phi), 0.0, 1.0, epsabs=1e-14)
    assert np.allclose(g.so3_left_jacobian(phi), J, atol=1e-12)
    assert np.allclose(g.so3_inv_left_jacobian(phi) @ J, np.eye(3), atol=1e-12)


def test_series_agrees_with_long_taylor_sum():
    for phi in (1e-7, 5e-7, 9.9e-7):
        x = phi * phi
        taylor = sum((-x) ** k / np.prod(np.arange(1.0, 2 * k + 2)) for k in range(30))
        assert abs(g._sinc(x) - taylor) < 1e-15


# ---- adjoint, odot, wedge/vee ------------------------------------------------

@pytest.mark.parametrize("kind", ALL + [Rn(2)])
@settings(max_examples=40, deadline=None)
@given(data=st.data())
def test_adjoint_identity(kind, data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2 ** 32 - 1)))
    X = g.random_element(kind, rng).matrix
    z = rng.standard_normal(kind.dof)
    assert np.allclose(kind.wedge(kind.adjoint(X) @ z), X @ kind.wedge(z) @ kind.inverse(X), atol=1e-10)


@pytest.mark.parametrize("kind", POSES)
@settings(max_examples=40, deadline=None)
@given(data=st.data())
def test_odot_identity(kind, data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2 ** 32 - 1)))
    xi = rng.standard_normal(kind.dof)
    p = rng.standard_normal(kind.dim)
    assert np.allclose(kind.wedge(xi) @ p, g.odot(p, kind) @ xi, atol=1e-12)


@pytest.mark.parametrize("kind", ALL)
def test_vee_inverts_wedge_and_rejects_off_pattern(kind):
    xi = np.arange(1.0, kind.dof + 1)
    Xi = g.wedge(xi, kind)
    assert np.array_equal(g.vee(Xi, kind), xi)
    bad = Xi.copy()
    bad[-1, 0] = 1.0
    with pytest.raises(ValueError):
        g.vee(bad, kind)


def test_dof_checks():
    with pytest.raises(ValueError):
        g.exp_map(np.zeros(5), SE3)
    with pytest.raises(ValueError):
        g.odot(np.zeros(3), SE3)


def test_adjoint_of_product_is_product_of_adjoints():
    rng = np.random.default_rng(3)
    for kind in ALL:
        X, Y = g.random_element(kind, rng), g.random_element(kind, rng)
        assert np.allclose((X @ Y).adjoint(), X.adjoint() @ Y.adjoint(), atol=1e-10)


def test_bch_first_order_for_small_perturbations():
    rng = np.random.default_rng(4)
    for kind in POSES:
        a = 1e-5 * rng.standard_normal(kind.dof)
        b = 1e-5 * rng.standard_normal(kind.dof)
        ab = kind.log(kind.exp(a) @ kind.exp(b))
        assert np.max(np.abs(ab - (a + b))) < 1e-9


# ---- complex inputs -----------------------------------------------------------

@pytest.mark.parametrize("kind", ALL)
def test_complex_exp_imaginary_part_is_the_generator(kind):
    h = 1e-20
    for i in range(kind.dof):
        e = np.zeros(kind.dof)
        e[i] = 1.0
        E = kind.exp(1j * h * e)
        assert np.allclose(E.real, np.eye(kind.dim), atol=0)
        assert np.allclose(E.imag / h, kind.wedge(e), atol=1e-15)


# ---- composite ----------------------------------------------------------------

def test_composite_block_exp_and_log():
    rng = np.random.default_rng(5)
    kinds = [SE3, SE2, SO3, SE23]
    comp = Composite(kinds)
    parts = [g.random_tangent(k, rng) for k in kinds]
    X = g.exp_map(np.concatenate(parts), comp)
    for k, xi, B in zip(kinds, parts, comp.blocks(X.matrix)):
        assert np.allclose(B, k.exp(xi), atol=1e-14)
    assert np.allclose(g.log_map(X), np.concatenate(parts), atol=1e-10)
    assert comp.dof == sum(k.dof for k in kinds)


def test_composite_pack_unpack_roundtrip():
    rng = np.random.default_rng(6)
    els = [g.random_element(SE3, rng) for _ in range(3)]
    X = g.composite_pack(els)
    assert X.matrix.shape == (12, 12)
    for a, b in zip(g.composite_unpack(X), els):
        assert np.array_equal(a.matrix, b.matrix)
    with pytest.raises(ValueError):
        g.composite_pack([])


def test_composite_adjoint_is_block_diagonal():
    rng = np.random.default_rng(7)
    els = [g.random_element(SE2, rng), g.random_element(SE3, rng)]
    X = g.composite_pack(els)
    Ad = X.adjoint()
    assert np.allclose(Ad[:3, :3], els[0].adjoint())
    assert np.allclose(Ad[3:, 3:], els[1].adjoint())
    assert np.all(Ad[:3, 3:] == 0)


def test_group_element_checks():
    with pytest.raises(ValueError):
        GroupElement(SE3, np.eye(3))
    bad = np.eye(4)
    bad[0, 0] = 2.0
    with pytest.raises(ValueError):
        GroupElement.from_matrix(SE3, bad)
    X = GroupElement.identity(SE23)
    assert X.is_real and np.array_equal((X @ X.inverse()).matrix, np.eye(5))
