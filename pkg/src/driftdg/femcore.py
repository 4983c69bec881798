"""Reference-element machinery: quadrature rules, polynomial bases, local matrices.

Everything here lives on the reference triangle T = {(0,0), (1,0), (0,1)} or
the reference segment [0,1].  Evaluation tables are built once per
(degree, rule) pair and cached; assembly loops only read cached arrays.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import eval_jacobi, roots_jacobi

MAX_TRIANGLE_EXACTNESS = 40
MAX_SEGMENT_EXACTNESS = 80


@dataclass(frozen=True)
class QuadratureRule:
    """Positive-weight rule with points in reference coordinates."""

    points: np.ndarray   # (nq, dim) or (nq,) for segments
    weights: np.ndarray  # (nq,)
    exactness_degree: int


def triangle_dim(degree):
    """Dimension of the total-degree polynomial space on a triangle."""
    return (degree + 1) * (degree + 2) // 2


@lru_cache(maxsize=None)
def segment_quadrature(exactness):
    """Gauss-Legendre rule on [0,1] exact for polynomials of degree <= exactness."""
    if exactness < 0:
        raise ValueError("exactness must be nonnegative")
    if exactness > MAX_SEGMENT_EXACTNESS:
        raise ValueError(
            f"segment quadrature exactness {exactness} not available "
            f"(max supported: {MAX_SEGMENT_EXACTNESS})")
    n = exactness // 2 + 1
    t, w = leggauss(n)
    pts = 0.5 * (t + 1.0)
    wts = 0.5 * w
    return QuadratureRule(points=pts, weights=wts, exactness_degree=exactness)


@lru_cache(maxsize=None)
def triangle_quadrature(exactness):
    """Rule on the reference triangle exact for total degree <= exactness.

    Built as a collapsed (Duffy) tensor product: Gauss-Legendre in the
    first coordinate, Gauss-Jacobi with weight (1-t) in the second.  The
    substitution x = a(1-y) carries the Jacobian (1-y) exactly into the
    Jacobi weight, so exactness holds degree-by-degree.
    """
    if exactness < 0:
        raise ValueError("exactness must be nonnegative")
    if exactness > MAX_TRIANGLE_EXACTNESS:
        raise ValueError(
            f"triangle quadrature exactness {exactness} not available "
            f"(max supported: {MAX_TRIANGLE_EXACTNESS})")
    n = exactness // 2 + 1
    ta, wa = leggauss(n)                 # for int_0^1 g(a) da
    a = 0.5 * (ta + 1.0)
    wa = 0.5 * wa
    tb, wb = roots_jacobi(n, 1.0, 0.0)   # for int_{-1}^{1} (1-t) g(t) dt
    y = 0.5 * (tb + 1.0)
    wy = 0.25 * wb                       # (1-y) dy = (1-t)/2 * dt/2
    X = np.outer(a, 1.0 - y).ravel()
    Y = np.tile(y, n)
    W = np.outer(wa, wy).ravel()
    pts = np.column_stack([X, Y])
    return QuadratureRule(points=pts, weights=W, exactness_degree=exactness)


def _tri_index_pairs(degree):
    """(i, j) pairs ordered by total degree; lower-degree bases are prefixes."""
    return [(i, n - i) for n in range(degree + 1) for i in range(n + 1)]


def _tri_eval(degree, pts, want_grad):
    pts = np.asarray(pts, dtype=float)
    x = pts[:, 0]
    y = pts[:, 1]
    s = 1.0 - y
    s_safe = np.maximum(s, 1e-14)
    t = (2.0 * x - s_safe) / s_safe
    z = 2.0 * y - 1.0
    pairs = _tri_index_pairs(degree)
    m = len(pairs)
    vals = np.empty((len(x), m))
    gx = np.empty_like(vals) if want_grad else None
    gy = np.empty_like(vals) if want_grad else None
    for col, (i, j) in enumerate(pairs):
        Pi = eval_jacobi(i, 0.0, 0.0, t)
        si = s_safe ** i
        Li = si * Pi
        Bj = eval_jacobi(j, 2 * i + 1.0, 0.0, z)
        c = np.sqrt(2.0 * (2 * i + 1) * (i + j + 1))
        vals[:, col] = c * Li * Bj
        if want_grad:
            if i > 0:
                si1 = s_safe ** (i - 1)
                dPi = eval_jacobi(i - 1, 1.0, 1.0, t)
                dLdx = (i + 1) * si1 * dPi
                dLds = si1 * (i * Pi - 0.5 * (t + 1.0) * (i + 1) * dPi)
            else:
                dLdx = np.zeros_like(x)
                dLds = np.zeros_like(x)
            if j > 0:
                dBdy = (j + 2 * i + 2) * eval_jacobi(j - 1, 2 * i + 2.0, 1.0, z)
            else:
                dBdy = np.zeros_like(x)
            gx[:, col] = c * dLdx * Bj
            gy[:, col] = c * (-dLds * Bj + Li * dBdy)
    if want_grad:
        return vals, gx, gy
    return vals


class TriangleBasis:
    """Orthonormal (Dubiner-type) basis for P^degree on the reference triangle.

    Orthonormal w.r.t. the L2 inner product on the reference triangle, so the
    reference mass matrix is the identity.  Functions are ordered by total
    degree: the degree-(d-1) basis is the leading block of the degree-d basis.
    """

    def __init__(self, degree):
        if degree < 0:
            raise ValueError("degree must be nonnegative")
        self.degree = degree
        self.dim = triangle_dim(degree)

    def eval(self, pts):
        """Basis values at points (n, 2); returns (n, dim)."""
        return _tri_eval(self.degree, pts, want_grad=False)

    def eval_with_grad(self, pts):
        """Values and reference gradients; returns (vals, grads) with grads (n, dim, 2)."""
        vals, gx, gy = _tri_eval(self.degree, pts, want_grad=True)
        return vals, np.stack([gx, gy], axis=-1)


class SegmentBasis:
    """Orthonormal shifted-Legendre basis for P^degree on [0,1]."""

    def __init__(self, degree):
        if degree < 0:
            raise ValueError("degree must be nonnegative")
        self.degree = degree
        self.dim = degree + 1

    def eval(self, s):
        s = np.asarray(s, dtype=float)
        z = 2.0 * s - 1.0
        cols = [np.sqrt(2 * j + 1.0) * eval_jacobi(j, 0.0, 0.0, z)
                for j in range(self.dim)]
        return np.stack(cols, axis=-1)


@lru_cache(maxsize=None)
def triangle_tables(degree, exactness):
    """Cached (rule, values, gradients) for a triangle basis at a volume rule."""
    rule = triangle_quadrature(exactness)
    basis = TriangleBasis(degree)
    vals, grads = basis.eval_with_grad(rule.points)
    vals.setflags(write=False)
    grads.setflags(write=False)
    return rule, vals, grads


# Reference triangle edges: endpoints in local order (edge ell runs from
# vertex ell to vertex (ell+1) % 3).
_REF_VERTS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
_EDGE_ENDS = ((0, 1), (1, 2), (2, 0))


def reference_edge_points(local_edge, sigma):
    """Reference coordinates of edge `local_edge` at local parameters sigma."""
    a = _REF_VERTS[_EDGE_ENDS[local_edge][0]]
    b = _REF_VERTS[_EDGE_ENDS[local_edge][1]]
    sigma = np.asarray(sigma, dtype=float)
    return a[None, :] + sigma[:, None] * (b - a)[None, :]


@lru_cache(maxsize=None)
def edge_tables(degree, face_exactness):
    """Triangle-basis values on each reference edge, both orientations.

    Returns (rule, tables) where tables[ell][flip] has shape (nq, dim).
    `flip` selects whether the global face parameter runs along or against
    the element's local edge direction.
    """
    rule = segment_quadrature(face_exactness)
    basis = TriangleBasis(degree)
    tables = []
    for ell in range(3):
        per_flip = []
        for flip in (False, True):
            sigma = 1.0 - rule.points if flip else rule.points
            pts = reference_edge_points(ell, sigma)
            V = basis.eval(pts)
            V.setflags(write=False)
            per_flip.append(V)
        tables.append(tuple(per_flip))
    return rule, tuple(tables)


@lru_cache(maxsize=None)
def segment_tables(degree, face_exactness):
    """Cached segment-basis values at a face rule (global face parameter)."""
    rule = segment_quadrature(face_exactness)
    V = SegmentBasis(degree).eval(rule.points)
    V.setflags(write=False)
    return rule, V


def local_mass_matrix(basis, geom, exactness=None):
    """Mass matrix int_K phi_i phi_j for a reference basis on a physical element.

    `geom` is an ElementGeometry from the mesh module (needs det_jacobian).
    """
    if geom.det_jacobian <= 0.0:
        raise ValueError(f"degenerate element {geom.element_id}: |det J| = {geom.det_jacobian}")
    if exactness is None:
        exactness = 2 * basis.degree
    rule = triangle_quadrature(exactness)
    V = basis.eval(rule.points)
    return geom.det_jacobian * (V.T * rule.weights) @ V


def local_face_mass(trial_vals, test_vals, weights, face_length):
    """Face mass int_e trial_i test_j from value tables at a shared face rule.

    trial_vals, test_vals: (nq, n_trial), (nq, n_test) sampled at the same
    parameter points; weights integrate over [0,1]; physical scaling by
    face_length.  Returns (n_trial, n_test).
    """
    if face_length <= 0.0:
        raise ValueError(f"zero-length face (length = {face_length})")
    return face_length * (trial_vals.T * weights) @ test_vals
