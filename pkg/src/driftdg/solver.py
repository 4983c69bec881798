"""Global trace systems: assembly, boundary conditions, sparse solves.

Interior unknowns are condensed element by element; the sparse system
couples only face-trace modes.  Dirichlet faces are eliminated by
constraint: their trace coefficients are set to the face projection of the
boundary datum and folded into the right-hand side.  Neumann faces keep
active trace unknowns and receive the flux datum as a load.

The two solve contexts cache everything reusable: the potential matrix is
density-independent, so it is factorized once per (mesh, degree) and only
loads change across Gummel iterations and time steps; the transport matrix
depends on the drift field and is refactorized per call, but its
drift-independent blocks are cached.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .femcore import edge_tables, segment_quadrature, segment_tables, triangle_dim
from .mesh import DIRICHLET, NEUMANN
from .operators import (
    PoissonOperator,
    TransportOperator,
    condense_batch,
    phat_face_values,
    recover_interior_batch,
)
from .projections import CoefficientField, TraceField, l2_project_face

_SOLVE_RTOL = 1e-10


def _zero(pts, t=0.0):
    return np.zeros(len(pts))


@dataclass
class BoundaryData:
    """Boundary data, all callables of (points (n,2), time t).

    flux_u is the Neumann datum for the transport numerical flux q_hat . n;
    flux_phi is the datum for the scaled potential flux eps * p_hat . n
    (both default to zero).
    """

    g_u: callable = _zero
    g_phi: callable = _zero
    flux_u: callable = _zero
    flux_phi: callable = _zero


@dataclass
class TraceSystem:
    """Condensed sparse system over active face-trace unknowns."""

    matrix: sp.csc_matrix
    rhs: np.ndarray
    n_dofs: int
    modes_per_face: int
    active: np.ndarray
    dirichlet: np.ndarray
    dirichlet_values: np.ndarray
    elem_dofs: np.ndarray
    inv_A_II: np.ndarray
    A_IL: np.ndarray
    b_I: np.ndarray


def _elem_trace_dofs(mesh, nm):
    base = mesh.elem_faces[:, :, None] * nm + np.arange(nm)[None, None, :]
    return base.reshape(mesh.n_elements, 3 * nm)


def _face_moment_rhs(mesh, fn, t, degree, face_ids):
    """<fn, psi_a>_e moments (including face length) on the given faces."""
    if len(face_ids) == 0:
        return np.zeros((0, degree + 1))
    rule, seg = segment_tables(degree, 2 * degree + 6)
    pts = mesh.face_points(face_ids, rule.points)
    vals = np.asarray(fn(pts.reshape(-1, 2), t), dtype=float).reshape(len(face_ids), -1)
    a = mesh.vertices[mesh.faces[face_ids, 0]]
    b = mesh.vertices[mesh.faces[face_ids, 1]]
    lengths = np.linalg.norm(b - a, axis=1)
    return lengths[:, None] * np.einsum("q,fq,qa->fa", rule.weights, vals, seg)


class _ContextBase:
    def __init__(self, mesh, nm):
        self.mesh = mesh
        self.nm = nm
        self.n_dofs = mesh.n_faces * nm
        self.elem_dofs = _elem_trace_dofs(mesh, nm)
        dir_faces = np.nonzero(mesh.face_tags == DIRICHLET)[0]
        self.dirichlet_faces = dir_faces
        self.neumann_faces = np.nonzero(mesh.face_tags == NEUMANN)[0]
        dir_dofs = (dir_faces[:, None] * nm + np.arange(nm)[None, :]).ravel()
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[dir_dofs] = False
        self.active = np.nonzero(mask)[0]
        self.dirichlet = dir_dofs
        missing = np.nonzero(mesh.face_tags[mesh.boundary_faces()] == 0)[0]
        if len(missing):
            raise ValueError(f"boundary face without tag: {mesh.boundary_faces()[missing[0]]}")

    def _global_matrix(self, schur):
        nL = schur.shape[1]
        rows = np.repeat(self.elem_dofs[:, :, None], nL, axis=2).ravel()
        cols = np.repeat(self.elem_dofs[:, None, :], nL, axis=1).ravel()
        K = sp.coo_matrix((schur.ravel(), (rows, cols)),
                          shape=(self.n_dofs, self.n_dofs)).tocsr()
        return K[self.active][:, self.active].tocsc(), K[self.active][:, self.dirichlet].tocsr()

    def _global_rhs(self, reduced):
        rhs = np.zeros(self.n_dofs)
        np.add.at(rhs, self.elem_dofs.ravel(), reduced.ravel())
        return rhs

    def _neumann_rhs(self, rhs, fn, t, degree):
        # Trace rows hold -<flux, mu>; the flux datum lands with a minus sign.
        faces = self.neumann_faces
        if len(faces) == 0:
            return
        moments = _face_moment_rhs(self.mesh, fn, t, degree, faces)
        dofs = (faces[:, None] * self.nm + np.arange(self.nm)[None, :]).ravel()
        rhs[dofs] -= moments.ravel()

    def _dirichlet_values(self, g, t, degree):
        vals = np.zeros((len(self.dirichlet_faces), degree + 1))
        if len(self.dirichlet_faces):
            tf = l2_project_face(lambda p: g(p, t), degree, self.mesh,
                                 exactness=2 * degree + 6,
                                 face_ids=self.dirichlet_faces)
            vals = tf.coeffs[self.dirichlet_faces]
        return vals.ravel()


class PoissonSolveContext(_ContextBase):
    """Density-independent potential operator: assemble and factorize once."""

    def __init__(self, mesh, k, eps, tau, bc):
        self.op = PoissonOperator(mesh, k, tau, eps)
        super().__init__(mesh, self.op.nfm)
        self.k = k
        self.bc = bc
        zero_I = np.zeros((mesh.n_elements, self.op.nI))
        zero_L = np.zeros((mesh.n_elements, self.op.nL))
        A_II, A_IL, A_LI, A_LL = self.op.assemble()
        schur, _, inv_II = condense_batch(A_II, A_IL, A_LI, A_LL, zero_I, zero_L)
        self.inv_A_II = inv_II
        self.A_IL = A_IL
        self.reduce_map = A_LI @ inv_II           # (ne, nL, nI)
        self.schur = schur
        K_aa, K_ad = self._global_matrix(schur)
        self.K_aa = K_aa
        self.K_ad = K_ad
        self.lu = spla.splu(K_aa) if K_aa.shape[0] else None

    def assemble_system(self, u_field, f2, t):
        if u_field is not None and u_field.degree != self.k + 1:
            raise ValueError("density field must have degree k+1")
        f2_vals = None
        if f2 is not None:
            f2_vals = np.asarray(f2(self.op.phys_v.reshape(-1, 2), t),
                                 dtype=float).reshape(self.mesh.n_elements, -1)
        b_I = self.op.volume_load(f2_vals=f2_vals, u_field=u_field)
        reduced = -np.einsum("eli,ei->el", self.reduce_map, b_I)
        rhs = self._global_rhs(reduced)
        self._neumann_rhs(rhs, self.bc.flux_phi, t, self.k + 1)
        dvals = self._dirichlet_values(self.bc.g_phi, t, self.k + 1)
        rhs_a = rhs[self.active] - (self.K_ad @ dvals if len(dvals) else 0.0)
        return TraceSystem(self.K_aa, rhs_a, self.n_dofs, self.nm,
                           self.active, self.dirichlet, dvals,
                           self.elem_dofs, self.inv_A_II, self.A_IL, b_I)

    def solve(self, u_field, f2, t):
        system = self.assemble_system(u_field, f2, t)
        trace = solve_trace(system, lu=self.lu)
        return self.recover(system, trace)

    def recover(self, system, trace):
        mesh = self.mesh
        interior = recover_interior_batch(system.inv_A_II, system.A_IL,
                                          system.b_I, trace[system.elem_dofs])
        md = self.op.md
        p = CoefficientField(self.k + 1, 2,
                             interior[:, :2 * md].reshape(mesh.n_elements, 2, md))
        phi = CoefficientField(self.k + 1, 1,
                               interior[:, 2 * md:].reshape(mesh.n_elements, 1, md))
        phi_hat = TraceField(self.k + 1, trace.reshape(mesh.n_faces, self.nm))
        return p, phi, phi_hat


class TransportSolveContext(_ContextBase):
    """Drift-dependent transport operator; static blocks cached across calls."""

    def __init__(self, mesh, k, bc):
        self.op = TransportOperator(mesh, k)
        super().__init__(mesh, self.op.nfm)
        self.k = k
        self.bc = bc

    def assemble_system(self, alpha, p_field, phat, source, history, t):
        if p_field is not None and p_field.degree != self.k + 1:
            raise ValueError("drift field must have degree k+1")
        op = self.op
        A_II, A_IL, A_LI, A_LL = op.assemble(alpha, p_field=p_field, phat=phat)
        source_vals = None
        if source is not None:
            source_vals = np.asarray(source(op.phys_v.reshape(-1, 2), t),
                                     dtype=float).reshape(self.mesh.n_elements, -1)
        b_I = op.volume_load(source_vals=source_vals, history=history)
        b_L = np.zeros((self.mesh.n_elements, op.nL))
        schur, reduced, inv_II = condense_batch(A_II, A_IL, A_LI, A_LL, b_I, b_L)
        K_aa, K_ad = self._global_matrix(schur)
        rhs = self._global_rhs(reduced)
        self._neumann_rhs(rhs, self.bc.flux_u, t, self.k)
        dvals = self._dirichlet_values(self.bc.g_u, t, self.k)
        rhs_a = rhs[self.active] - (K_ad @ dvals if len(dvals) else 0.0)
        return TraceSystem(K_aa, rhs_a, self.n_dofs, self.nm,
                           self.active, self.dirichlet, dvals,
                           self.elem_dofs, inv_II, A_IL, b_I)

    def solve(self, alpha, p_field, phat, source, history, t):
        system = self.assemble_system(alpha, p_field, phat, source, history, t)
        trace = solve_trace(system)
        return self.recover(system, trace)

    def recover(self, system, trace):
        mesh = self.mesh
        interior = recover_interior_batch(system.inv_A_II, system.A_IL,
                                          system.b_I, trace[system.elem_dofs])
        mk, mk1 = self.op.mk, self.op.mk1
        q = CoefficientField(self.k, 2,
                             interior[:, :2 * mk].reshape(mesh.n_elements, 2, mk))
        u = CoefficientField(self.k + 1, 1,
                             interior[:, 2 * mk:].reshape(mesh.n_elements, 1, mk1))
        u_hat = TraceField(self.k, trace.reshape(mesh.n_faces, self.nm))
        return q, u, u_hat


def solve_trace(system, lu=None):
    """Direct sparse solve of the condensed system; returns the full trace
    vector with constrained values inserted."""
    x = np.zeros(system.n_dofs)
    if len(system.dirichlet):
        x[system.dirichlet] = system.dirichlet_values
    if system.matrix.shape[0] == 0:
        return x
    try:
        factor = lu if lu is not None else spla.splu(system.matrix)
        xa = factor.solve(system.rhs)
    except RuntimeError as err:
        diag = np.abs(system.matrix.diagonal())
        bad = int(np.argmin(diag)) if len(diag) else -1
        raise RuntimeError(
            f"trace solve failed: {err} (weakest diagonal at active dof {bad}, "
            f"|diag| = {diag[bad] if bad >= 0 else 'n/a'})") from None
    if not np.all(np.isfinite(xa)):
        raise RuntimeError("trace solve produced non-finite values")
    rnorm = np.linalg.norm(system.matrix @ xa - system.rhs)
    bnorm = np.linalg.norm(system.rhs)
    if rnorm > _SOLVE_RTOL * max(bnorm, 1e-30) and rnorm > 1e-12:
        raise RuntimeError(f"trace solve residual too large: {rnorm:.3e} "
                           f"(rhs norm {bnorm:.3e})")
    x[system.active] = xa
    return x


# ---------------------------------------------------------------------------
# Functional surface.

def assemble_poisson(mesh, k, eps, tau, u_field, f2, bc, t=0.0):
    """One-shot potential assembly; returns the TraceSystem (blocks inside)."""
    return PoissonSolveContext(mesh, k, eps, tau, bc).assemble_system(u_field, f2, t)


def assemble_transport(mesh, k, p_field, p_hat, alpha, load, bc, t=0.0, history=None):
    """One-shot transport assembly.  p_hat has shape (ne, 3, nq) at the
    transport face rule (see operators.phat_face_values) or is None."""
    return TransportSolveContext(mesh, k, bc).assemble_system(
        alpha, p_field, p_hat, load, history, t)


def solve_poisson(mesh, k, eps, tau, u_field, f2, bc, t=0.0, context=None):
    """Assemble, solve, and recover (p, phi, phi_hat)."""
    ctx = context if context is not None else PoissonSolveContext(mesh, k, eps, tau, bc)
    return ctx.solve(u_field, f2, t)


def solve_transport_step(mesh, k, p_field, p_hat, alpha, load, bc, t=0.0,
                         history=None, context=None):
    """Assemble, solve, and recover (q, u, u_hat)."""
    ctx = context if context is not None else TransportSolveContext(mesh, k, bc)
    return ctx.solve(alpha, p_field, p_hat, load, history, t)


# ---------------------------------------------------------------------------
# Post-hoc diagnostics (independent quadrature).

def transport_transmission_residual(mesh, k, q_field, u_field, u_hat, exactness=None):
    """Max over interior faces/modes of the summed numerical-flux moments.

    Recomputes sum_K <q.n + h_K^{-1}(proj u - u_hat), psi_a>_e by quadrature
    at a rule different from the assembly rule.
    """
    if exactness is None:
        exactness = 3 * k + 8
    return _transmission_residual(mesh, q_field, u_field, u_hat,
                                  trace_degree=k, exactness=exactness,
                                  penalty="ls")


def poisson_transmission_residual(mesh, k, p_field, phi_field, phi_hat, tau=1.0,
                                  exactness=None):
    """Max interior-face moment of the summed potential flux p_hat . n."""
    if exactness is None:
        exactness = 2 * (k + 1) + 6
    return _transmission_residual(mesh, p_field, phi_field, phi_hat,
                                  trace_degree=k + 1, exactness=exactness,
                                  penalty="tau", tau=tau)


def _transmission_residual(mesh, flux, scalar, trace, trace_degree, exactness,
                           penalty, tau=1.0):
    from .operators import _edge_value_tables

    rule, tri_flux = edge_tables(flux.degree, exactness)
    _, tri_scal = edge_tables(scalar.degree, exactness)
    _, seg = segment_tables(trace_degree, exactness)
    tabs_f = _edge_value_tables(mesh, tri_flux)
    tabs_s = _edge_value_tables(mesh, tri_scal)
    fn = np.einsum("ecd,efqd,efc->efq", flux.coeffs, tabs_f, mesh.normals)
    sv = np.einsum("ed,efqd->efq", scalar.coeffs[:, 0], tabs_s)
    tv = np.einsum("fa,qa->fq", trace.coeffs, seg)[mesh.elem_faces]
    if penalty == "ls":
        # Project the scalar trace onto the trace space before penalizing.
        from .operators import penalty_lengths
        mom = np.einsum("q,efq,qa->efa", rule.weights, sv, seg)
        sv_proj = np.einsum("efa,qa->efq", mom, seg)
        flux_vals = fn + (1.0 / penalty_lengths(mesh))[:, None, None] * (sv_proj - tv)
    else:
        tau_arr = np.broadcast_to(np.asarray(tau, dtype=float), (mesh.n_elements, 3))
        flux_vals = fn + tau_arr[:, :, None] * (sv - tv)
    lengths = mesh.face_lengths_per_element
    moments = np.einsum("q,efq,qa->efa", rule.weights, flux_vals, seg) \
        * lengths[:, :, None]
    total = np.zeros((mesh.n_faces, trace_degree + 1))
    np.add.at(total, mesh.elem_faces.ravel(),
              moments.reshape(-1, trace_degree + 1))
    interior = mesh.interior_faces()
    if len(interior) == 0:
        return 0.0
    return float(np.abs(total[interior]).max())


def build_phat(mesh, k, p_field, phi_field, phi_hat, tau=1.0):
    """Transport-side samples of the potential numerical flux (ne, 3, nq)."""
    return phat_face_values(mesh, k, p_field, phi_field, phi_hat, tau)


def poisson_interior_residual(mesh, k, eps, tau, p_field, phi_field, phi_hat,
                              u_field, f2, t=0.0):
    """Max interior-equation residual of a potential solve, recomputed with a
    finer quadrature than the assembly used."""
    op = PoissonOperator(mesh, k, tau, eps, exactness=2 * (k + 1) + 6)
    A_II, A_IL, _, _ = op.assemble()
    x_I = np.concatenate([p_field.coeffs.reshape(mesh.n_elements, -1),
                          phi_field.coeffs[:, 0, :]], axis=1)
    lam = phi_hat.coeffs[mesh.elem_faces].reshape(mesh.n_elements, -1)
    f2_vals = None
    if f2 is not None:
        f2_vals = np.asarray(f2(op.phys_v.reshape(-1, 2), t),
                             dtype=float).reshape(mesh.n_elements, -1)
    b_I = op.volume_load(f2_vals=f2_vals, u_field=u_field)
    r = np.einsum("eij,ej->ei", A_II, x_I) + np.einsum("eil,el->ei", A_IL, lam) - b_I
    return float(np.abs(r).max())


def transport_interior_residual(mesh, k, q_field, u_field, u_hat, alpha,
                                p_field=None, phat=None, source=None,
                                history=None, t=0.0):
    """Max interior-equation residual of a transport solve (finer quadrature).

    phat must be sampled at the finer rule (exactness 3k+7); pass the output
    of operators.phat_face_values(..., face_exactness=3*k+7).
    """
    op = TransportOperator(mesh, k, exactness=3 * k + 7)
    A_II, A_IL, _, _ = op.assemble(alpha, p_field=p_field, phat=phat)
    x_I = np.concatenate([q_field.coeffs.reshape(mesh.n_elements, -1),
                          u_field.coeffs[:, 0, :]], axis=1)
    lam = u_hat.coeffs[mesh.elem_faces].reshape(mesh.n_elements, -1)
    source_vals = None
    if source is not None:
        source_vals = np.asarray(source(op.phys_v.reshape(-1, 2), t),
                                 dtype=float).reshape(mesh.n_elements, -1)
    b_I = op.volume_load(source_vals=source_vals, history=history)
    r = np.einsum("eij,ej->ei", A_II, x_I) + np.einsum("eil,el->ei", A_IL, lam) - b_I
    return float(np.abs(r).max())
