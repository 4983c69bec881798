"""Element, face, and flux-coupled polynomial projections.

Coefficient conventions: fields are expanded in the orthonormal reference
bases of femcore, so element L2 projections reduce to weighted quadrature
sums and the element mass matrix is det(J) times the identity.
"""

from dataclasses import dataclass

import numpy as np

from .femcore import (
    SegmentBasis,
    TriangleBasis,
    edge_tables,
    segment_quadrature,
    segment_tables,
    triangle_dim,
    triangle_tables,
)


@dataclass
class CoefficientField:
    """Piecewise polynomial field: per-element coefficients in the
    orthonormal triangle basis.

    coeffs has shape (n_elements, components, dim) with components 1 or 2.
    """

    degree: int
    components: int
    coeffs: np.ndarray

    @classmethod
    def zeros(cls, mesh, degree, components=1):
        return cls(degree, components,
                   np.zeros((mesh.n_elements, components, triangle_dim(degree))))

    def copy(self):
        return CoefficientField(self.degree, self.components, self.coeffs.copy())

    def eval_reference(self, ref_pts, elements=None):
        """Evaluate on reference points shared by all (or selected) elements.

        Returns (ne, npts) for scalar fields, (ne, npts, 2) for vector fields.
        """
        V = TriangleBasis(self.degree).eval(ref_pts)
        C = self.coeffs if elements is None else self.coeffs[elements]
        out = np.einsum("ecd,qd->ecq", C, V)
        return out[:, 0, :] if self.components == 1 else np.moveaxis(out, 1, 2)

    def element_l2_norm_sq(self, mesh):
        """Squared L2 norm over the whole mesh (orthonormal basis shortcut)."""
        return float(np.einsum("e,ecd,ecd->", mesh.det_jacobians, self.coeffs, self.coeffs))

    def cell_means(self):
        """Per-element mean values, shape (n_elements, components)."""
        from .femcore import triangle_quadrature
        rule = triangle_quadrature(self.degree)
        V = TriangleBasis(self.degree).eval(rule.points)
        m = rule.weights @ V
        return 2.0 * np.einsum("ecd,d->ec", self.coeffs, m)


@dataclass
class TraceField:
    """Single-valued polynomial field on mesh faces.

    coeffs has shape (n_faces, degree+1) in the orthonormal segment basis of
    the global face parametrization.
    """

    degree: int
    coeffs: np.ndarray

    @classmethod
    def zeros(cls, mesh, degree):
        return cls(degree, np.zeros((mesh.n_faces, degree + 1)))

    def copy(self):
        return TraceField(self.degree, self.coeffs.copy())

    def eval(self, face_ids, s):
        """Values at global parameters s on the given faces: (nfaces, ns)."""
        V = SegmentBasis(self.degree).eval(s)
        return self.coeffs[face_ids] @ V.T


def l2_project_element(f, degree, mesh, exactness=None, components=None):
    """Element-by-element L2 projection of f(x, y) into P^degree.

    f maps (n, 2) point arrays to (n,) values (scalar) or (n, 2) (vector);
    `components` may force the interpretation when f's output is ambiguous.
    """
    if exactness is None:
        exactness = 2 * degree + 4
    rule, V, _ = triangle_tables(degree, exactness)
    phys = (mesh.elem_origin[:, None, :]
            + np.einsum("eij,qj->eqi", mesh.jacobians, rule.points))
    flat = phys.reshape(-1, 2)
    vals = np.asarray(f(flat), dtype=float)
    if components is None:
        components = 1 if vals.ndim == 1 else vals.shape[-1]
    vals = vals.reshape(mesh.n_elements, len(rule.weights), components)
    coeffs = np.einsum("q,eqc,qd->ecd", rule.weights, vals, V)
    return CoefficientField(degree, components, coeffs)


def l2_project_face(g, degree, mesh, exactness=None, face_ids=None):
    """Face-by-face L2 projection of g(x, y) into P^degree on the skeleton."""
    if exactness is None:
        exactness = 2 * degree + 4
    rule, V = segment_tables(degree, exactness)
    if face_ids is None:
        face_ids = np.arange(mesh.n_faces)
    pts = mesh.face_points(face_ids, rule.points)       # (nf, nq, 2)
    vals = np.asarray(g(pts.reshape(-1, 2)), dtype=float).reshape(len(face_ids), -1)
    coeffs = np.zeros((mesh.n_faces, degree + 1))
    coeffs[face_ids] = np.einsum("q,fq,qd->fd", rule.weights, vals, V)
    return TraceField(degree, coeffs)


def restrict_to_face(field, mesh, element, local_face):
    """Evaluator of a volumetric field along one face of an element.

    The returned callable takes global face parameters s in [0,1] and returns
    field values there; for vector fields the result has a trailing axis 2.
    """
    if not 0 <= local_face < 3:
        raise ValueError(f"local_face must be 0, 1, or 2 (got {local_face})")
    fid = mesh.elem_faces[element, local_face]
    if mesh.face_elements[fid, 0] != element and mesh.face_elements[fid, 1] != element:
        raise ValueError(f"element {element} not adjacent to face {fid}")
    flip = mesh.elem_flip[element, local_face]
    basis = TriangleBasis(field.degree)
    from .femcore import reference_edge_points

    def evaluator(s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        sigma = 1.0 - s if flip else s
        V = basis.eval(reference_edge_points(local_face, sigma))
        out = np.einsum("cd,qd->qc", field.coeffs[element], V)
        return out[:, 0] if field.components == 1 else out

    return evaluator


def _hdg_face_blocks(degree, mesh, exactness):
    """Face-moment matrices of the degree-`degree` triangle basis against the
    degree-`degree` segment basis, for every (element, local face)."""
    rule, tri_tabs = edge_tables(degree, exactness)
    _, seg = segment_tables(degree, exactness)
    nq = len(rule.weights)
    ne = mesh.n_elements
    m = triangle_dim(degree)
    # moment[e, ell, a, j] = int_0^1 psi_a(s) phi_j(edge_ell(s)) ds
    moment = np.empty((ne, 3, degree + 1, m))
    for ell in range(3):
        for flip in (False, True):
            sel = mesh.elem_flip[:, ell] == flip
            if not np.any(sel):
                continue
            M = (seg.T * rule.weights) @ tri_tabs[ell][flip]
            moment[sel, ell] = M
    return rule, seg, moment


def _volume_values(f, mesh, rule, components):
    """Sample data on the volume rule: callable or CoefficientField input."""
    if isinstance(f, CoefficientField):
        V = TriangleBasis(f.degree).eval(rule.points)
        return np.einsum("ecd,qd->eqc", f.coeffs, V)
    phys = (mesh.elem_origin[:, None, :]
            + np.einsum("eij,qj->eqi", mesh.jacobians, rule.points))
    vals = np.asarray(f(phys.reshape(-1, 2)), dtype=float)
    return vals.reshape(mesh.n_elements, len(rule.weights), components)


def _face_values(f, mesh, ell, s, components):
    """Sample data on local face `ell` of every element, from the element's
    own side when f is a (possibly discontinuous) CoefficientField."""
    ne = mesh.n_elements
    if isinstance(f, CoefficientField):
        from .femcore import reference_edge_points
        basis = TriangleBasis(f.degree)
        out = np.empty((ne, len(s), f.components))
        for flip in (False, True):
            sel = mesh.elem_flip[:, ell] == flip
            if not np.any(sel):
                continue
            sigma = 1.0 - s if flip else s
            V = basis.eval(reference_edge_points(ell, sigma))
            out[sel] = np.einsum("ecd,qd->eqc", f.coeffs[sel], V)
        return out
    pts = mesh.face_points(mesh.elem_faces[:, ell], s)
    vals = np.asarray(f(pts.reshape(-1, 2)), dtype=float)
    return vals.reshape(ne, len(s), components)


def hdg_project(p, phi, degree, tau, mesh, exactness=None):
    """Coupled flux/scalar projection with face flux-moment matching.

    Returns (Pi_V p, Pi_W phi), both CoefficientFields of the given degree.
    Within each element the pair satisfies
      * volume moments of Pi_V p against [P^{degree-1}]^2 match p,
      * volume moments of Pi_W phi against P^{degree-1} match phi,
      * face moments of Pi_V p . n + tau Pi_W phi against P^degree match
        p . n + tau phi on each of the three faces.
    p and phi may be callables of physical points or CoefficientFields;
    fields are projected element by element (face data taken from each
    element's own side, so no continuity is assumed).  tau may be a scalar
    or an (n_elements, 3) array; it must be nonnegative with a positive
    maximum on each element.
    """
    if exactness is None:
        exactness = max(2 * degree + 8, 14)
    tau_arr = np.broadcast_to(np.asarray(tau, dtype=float),
                              (mesh.n_elements, 3)).copy()
    if np.any(tau_arr < 0.0) or np.any(tau_arr.max(axis=1) <= 0.0):
        raise ValueError("tau must be nonnegative with a positive maximum per element")

    m = triangle_dim(degree)
    m_low = triangle_dim(degree - 1) if degree > 0 else 0
    n_top = m - m_low          # = degree + 1
    nf_mode = degree + 1

    # Volume moments: leading coefficients come from plain L2 projection
    # (hierarchical orthonormal basis).
    vrule, V, _ = triangle_tables(degree, exactness)
    pvals = _volume_values(p, mesh, vrule, 2)
    fvals = _volume_values(phi, mesh, vrule, 1)
    a = np.einsum("q,eqc,qd->ecd", vrule.weights, pvals, V)   # (ne, 2, m)
    b = np.einsum("q,eqc,qd->ecd", vrule.weights, fvals, V)   # (ne, 1, m)

    rule, seg, moment = _hdg_face_blocks(degree, mesh, exactness)
    normals = mesh.normals                      # (ne, 3, 2)

    # Data moments <p.n + tau phi, psi_a>_e / length for every element face.
    s = rule.points
    ne = mesh.n_elements
    rhs = np.empty((ne, 3, nf_mode))
    for ell in range(3):
        pv = _face_values(p, mesh, ell, s, 2)
        fv = _face_values(phi, mesh, ell, s, 1)[..., 0]
        pn = np.einsum("eqc,ec->eq", pv, normals[:, ell, :])
        data = pn + tau_arr[:, ell][:, None] * fv
        rhs[:, ell, :] = np.einsum("q,eq,qa->ea", rule.weights, data, seg)

    # Subtract the known (low-order) part of the unknowns from the face moments.
    # System per element: unknowns [a_top_x, a_top_y, b_top] (3 * n_top).
    M_n = np.einsum("efaj,efc->efcaj", moment, normals)  # (ne,3,2,nf_mode,m)
    known = (np.einsum("efcaj,ecj->efa", M_n[..., :m_low], a[..., :m_low])
             + np.einsum("efaj,ej->efa",
                         moment[..., :m_low] * tau_arr[..., None, None],
                         b[:, 0, :m_low]))
    R = (rhs - known).reshape(ne, 3 * nf_mode)

    A = np.empty((ne, 3 * nf_mode, 3 * n_top))
    top = slice(m_low, m)
    A[:, :, 0 * n_top:1 * n_top] = M_n[:, :, 0, :, top].reshape(ne, 3 * nf_mode, n_top)
    A[:, :, 1 * n_top:2 * n_top] = M_n[:, :, 1, :, top].reshape(ne, 3 * nf_mode, n_top)
    A[:, :, 2 * n_top:3 * n_top] = (moment[:, :, :, top]
                                    * tau_arr[..., None, None]).reshape(ne, 3 * nf_mode, n_top)
    try:
        sol = np.linalg.solve(A, R[..., None])[..., 0]
    except np.linalg.LinAlgError as err:
        raise ValueError("singular local projection system "
                         "(tau hypothesis violated?)") from err
    a[:, 0, top] = sol[:, 0 * n_top:1 * n_top]
    a[:, 1, top] = sol[:, 1 * n_top:2 * n_top]
    b[:, 0, top] = sol[:, 2 * n_top:3 * n_top]
    return (CoefficientField(degree, 2, a), CoefficientField(degree, 1, b))
