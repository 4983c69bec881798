import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driftdg.femcore import (
    MAX_SEGMENT_EXACTNESS,
    MAX_TRIANGLE_EXACTNESS,
    SegmentBasis,
    TriangleBasis,
    local_face_mass,
    local_mass_matrix,
    segment_quadrature,
    segment_tables,
    triangle_quadrature,
)
from driftdg.mesh import Mesh, compute_geometry
from conftest import random_points_in_triangle


def tri_monomial_integral(a, b):
    """Exact int_T x^a y^b over the reference triangle: a! b! / (a+b+2)!."""
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


def test_triangle_quadrature_basics():
    r = triangle_quadrature(4)
    x, y = r.points.T
    assert (r.weights > 0).all()
    assert abs(r.weights.sum() - 0.5) < 1e-14
    assert abs((r.weights * x).sum() - 1.0 / 6.0) < 1e-14
    assert abs((r.weights * x**2 * y).sum() - 1.0 / 60.0) < 1e-14


@pytest.mark.parametrize("deg", [0, 1, 2, 5, 8, 12, 13])
def test_triangle_quadrature_monomial_ladder(deg):
    r = triangle_quadrature(deg)
    x, y = r.points.T
    for a in range(deg + 1):
        for b in range(deg + 1 - a):
            val = (r.weights * x**a * y**b).sum()
            exact = tri_monomial_integral(a, b)
            assert abs(val - exact) < 1e-13 * max(1.0, abs(exact)), (a, b)


def test_triangle_quadrature_beyond_table():
    with pytest.raises(ValueError, match=str(MAX_TRIANGLE_EXACTNESS)):
        triangle_quadrature(MAX_TRIANGLE_EXACTNESS + 1)


def test_segment_quadrature_basics():
    r = segment_quadrature(6)
    assert abs(r.weights.sum() - 1.0) < 1e-14
    assert abs((r.weights * r.points**3).sum() - 0.25) < 1e-14
    assert abs((r.weights * r.points**6).sum() - 1.0 / 7.0) < 1e-14


def test_segment_quadrature_beyond_table():
    with pytest.raises(ValueError, match=str(MAX_SEGMENT_EXACTNESS)):
        segment_quadrature(MAX_SEGMENT_EXACTNESS + 1)


@given(a=st.integers(min_value=0, max_value=9), b=st.integers(min_value=0, max_value=9))
@settings(max_examples=30, deadline=None)
def test_segment_quadrature_exactness_property(a, b):
    deg = a + b
    r = segment_quadrature(deg)
    val = (r.weights * r.points**deg).sum()
    assert abs(val - 1.0 / (deg + 1)) < 1e-13


@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_triangle_basis_gram_identity(k):
    basis = TriangleBasis(k)
    assert basis.dim == (k + 1) * (k + 2) // 2
    r = triangle_quadrature(2 * k)
    V = basis.eval(r.points)
    G = (V.T * r.weights) @ V
    assert np.abs(G - np.eye(basis.dim)).max() < 1e-13
    assert np.all(np.linalg.eigvalsh(G) > 0)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_triangle_basis_reproduces_monomials(k, rng):
    # solve the Gram system for each monomial and compare pointwise
    basis = TriangleBasis(k)
    r = triangle_quadrature(2 * k + 2)
    V = basis.eval(r.points)
    pts = random_points_in_triangle(rng, 20)
    Vp = basis.eval(pts)
    for a in range(k + 1):
        for b in range(k + 1 - a):
            target = r.points[:, 0]**a * r.points[:, 1]**b
            coeff = (V.T * r.weights) @ target    # Gram is the identity
            vals = Vp @ coeff
            exact = pts[:, 0]**a * pts[:, 1]**b
            assert np.abs(vals - exact).max() < 1e-10


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_triangle_basis_gradients_match_fd(k, rng):
    basis = TriangleBasis(k)
    pts = random_points_in_triangle(rng, 40)
    _, grads = basis.eval_with_grad(pts)
    h = 1e-6
    gx = (basis.eval(pts + [h, 0.0]) - basis.eval(pts - [h, 0.0])) / (2 * h)
    gy = (basis.eval(pts + [0.0, h]) - basis.eval(pts - [0.0, h])) / (2 * h)
    assert np.abs(grads[..., 0] - gx).max() < 1e-5
    assert np.abs(grads[..., 1] - gy).max() < 1e-5


@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_segment_basis_gram(k):
    basis = SegmentBasis(k)
    r = segment_quadrature(2 * k)
    V = basis.eval(r.points)
    G = (V.T * r.weights) @ V
    assert np.abs(G - np.eye(k + 1)).max() < 1e-13


class _UnitConstantBasis:
    degree = 0
    dim = 1

    def eval(self, pts):
        return np.ones((len(pts), 1))


def test_local_mass_p0_is_area(reference_mesh):
    # mass of the constant function 1 is the element area
    geom = compute_geometry(reference_mesh, 0)
    M = local_mass_matrix(_UnitConstantBasis(), geom)
    assert M.shape == (1, 1)
    assert M[0, 0] == pytest.approx(0.5)
    # with the orthonormal basis the mass matrix is det(J) times the identity
    M2 = local_mass_matrix(TriangleBasis(2), geom)
    assert np.abs(M2 - geom.det_jacobian * np.eye(6)).max() < 1e-14


def test_local_mass_symmetric(mesh_n2):
    geom = compute_geometry(mesh_n2, 3)
    M = local_mass_matrix(TriangleBasis(2), geom)
    assert np.abs(M - M.T).max() < 1e-14


def test_local_mass_trace_against_fine_quadrature(reference_mesh):
    # oracle: recompute sum_i int phi_i^2 with an exactness-10 rule
    geom = compute_geometry(reference_mesh, 0)
    basis = TriangleBasis(1)
    M = local_mass_matrix(basis, geom)
    r = triangle_quadrature(10)
    V = basis.eval(r.points)
    trace_oracle = geom.det_jacobian * (r.weights[:, None] * V**2).sum()
    assert np.trace(M) == pytest.approx(trace_oracle, abs=1e-13)


def test_local_mass_degenerate_rejected(reference_mesh):
    geom = compute_geometry(reference_mesh, 0)
    bad = type(geom)(element_id=0, origin=geom.origin, jacobian=geom.jacobian,
                     inv_jacobian=geom.inv_jacobian, det_jacobian=0.0,
                     normals=geom.normals, face_lengths=geom.face_lengths,
                     diameter=geom.diameter)
    with pytest.raises(ValueError, match="degenerate"):
        local_mass_matrix(TriangleBasis(1), bad)


def test_face_mass_constants():
    rule, seg = segment_tables(0, 4)
    ones = np.ones((len(rule.weights), 1))
    M = local_face_mass(ones, ones, rule.weights, 0.75)
    assert M[0, 0] == pytest.approx(0.75)


def test_face_mass_mixed_shape():
    # triangle P^{k+1} trace against segment P^k: rectangular block
    k = 1
    from driftdg.femcore import edge_tables
    rule, tabs = edge_tables(k + 1, 6)
    _, seg = segment_tables(k, 6)
    M = local_face_mass(tabs[0][0], seg, rule.weights, 1.0)
    assert M.shape == ((k + 2) * (k + 3) // 2, k + 1)


def test_face_mass_linear_moment():
    # int_e x ds on the unit horizontal face [0,1] x {0} equals 1/2
    rule = segment_quadrature(4)
    x = rule.points[:, None]
    ones = np.ones_like(x)
    M = local_face_mass(x, ones, rule.weights, 1.0)
    assert M[0, 0] == pytest.approx(0.5)


def test_face_mass_zero_length_rejected():
    rule = segment_quadrature(2)
    ones = np.ones((len(rule.weights), 1))
    with pytest.raises(ValueError, match="zero-length"):
        local_face_mass(ones, ones, rule.weights, 0.0)
