import math

import numpy as np
import pytest
import scipy.sparse as sp

from driftdg.manufactured import (
    example1_boundary,
    example1_solution,
    example1_sources,
    l2_error,
)
from driftdg.mesh import INTERIOR, Mesh, build_structured_unit_square
from driftdg.projections import CoefficientField, l2_project_element, l2_project_face
from driftdg.solver import (
    BoundaryData,
    PoissonSolveContext,
    TraceSystem,
    TransportSolveContext,
    build_phat,
    poisson_interior_residual,
    poisson_transmission_residual,
    solve_poisson,
    solve_trace,
    solve_transport_step,
    transport_transmission_residual,
)


def eval_scalar(field, mesh, ref_pts):
    vals = field.eval_reference(ref_pts)
    phys = mesh.elem_origin[:, None, :] + np.einsum(
        "eij,qj->eqi", mesh.jacobians, ref_pts)
    return vals, phys


@pytest.mark.parametrize("k", [0, 1, 2])
@pytest.mark.parametrize("n", [1, 2, 4])
def test_poisson_patch(k, n, rng):
    mesh = build_structured_unit_square(n)
    bc = BoundaryData(g_phi=lambda p, t: p[:, 0] + p[:, 1])
    p, phi, phi_hat = solve_poisson(mesh, k, eps=0.3, tau=1.0,
                                    u_field=CoefficientField.zeros(mesh, k + 1),
                                    f2=None, bc=bc)
    pts = rng.dirichlet([1.0] * 3, size=6)[:, :2]
    vals, phys = eval_scalar(phi, mesh, pts)
    assert np.abs(vals - (phys[..., 0] + phys[..., 1])).max() < 1e-9
    pv = p.eval_reference(pts)
    assert np.abs(pv + 1.0).max() < 1e-9


@pytest.mark.parametrize("k", [0, 1, 2])
@pytest.mark.parametrize("n", [1, 2, 4])
def test_transport_patch(k, n, rng):
    mesh = build_structured_unit_square(n)
    bc = BoundaryData(g_u=lambda p, t: p[:, 0])
    q, u, u_hat = solve_transport_step(mesh, k, p_field=None, p_hat=None,
                                       alpha=0.0, load=None, bc=bc)
    pts = rng.dirichlet([1.0] * 3, size=6)[:, :2]
    vals, phys = eval_scalar(u, mesh, pts)
    assert np.abs(vals - phys[..., 0]).max() < 1e-9
    qv = q.eval_reference(pts)
    assert np.abs(qv[..., 0] + 1.0).max() < 1e-9
    assert np.abs(qv[..., 1]).max() < 1e-9


def test_zero_data_zero_solution(mesh_n2):
    bc = BoundaryData()
    p, phi, phi_hat = solve_poisson(mesh_n2, 0, 1.0, 1.0,
                                    CoefficientField.zeros(mesh_n2, 1), None, bc)
    assert np.abs(phi.coeffs).max() < 1e-14
    assert np.abs(p.coeffs).max() < 1e-14
    q, u, u_hat = solve_transport_step(mesh_n2, 0, None, None, 1.0, None, bc)
    assert np.abs(u.coeffs).max() < 1e-14


def test_transport_mass_harmonic_reproduction(mesh_n4, rng):
    # alpha u - lap u = load with u harmonic quadratic: u = x^2 - y^2
    k = 1
    exact = lambda p: p[:, 0] ** 2 - p[:, 1] ** 2
    bc = BoundaryData(g_u=lambda p, t: exact(p))
    q, u, u_hat = solve_transport_step(
        mesh_n4, k, None, None, alpha=1.0,
        load=lambda p, t: exact(p), bc=bc)
    pts = rng.dirichlet([1.0] * 3, size=5)[:, :2]
    vals, phys = eval_scalar(u, mesh_n4, pts)
    assert np.abs(vals - exact(phys.reshape(-1, 2)).reshape(vals.shape)).max() < 1e-9


def test_solve_trace_minimal():
    system = TraceSystem(
        matrix=sp.csc_matrix(np.array([[2.0]])),
        rhs=np.array([4.0]),
        n_dofs=1, modes_per_face=1,
        active=np.array([0]), dirichlet=np.array([], dtype=int),
        dirichlet_values=np.array([]),
        elem_dofs=np.zeros((1, 1), dtype=int),
        inv_A_II=np.zeros((1, 1, 1)), A_IL=np.zeros((1, 1, 1)),
        b_I=np.zeros((1, 1)))
    x = solve_trace(system)
    assert x[0] == pytest.approx(2.0)


def test_dirichlet_fidelity(mesh_n4):
    g = lambda p, t: np.sin(3.0 * p[:, 0]) - p[:, 1]
    bc = BoundaryData(g_u=g)
    ctx = TransportSolveContext(mesh_n4, 1, bc)
    system = ctx.assemble_system(1.0, None, None, None, None, 0.0)
    trace = solve_trace(system)
    proj = l2_project_face(lambda p: g(p, 0.0), 1, mesh_n4,
                           exactness=2 * 1 + 6, face_ids=ctx.dirichlet_faces)
    for f in ctx.dirichlet_faces:
        got = trace[f * 2:(f + 1) * 2]
        assert np.abs(got - proj.coeffs[f]).max() == 0.0


def test_untagged_boundary_rejected():
    m = Mesh([(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)], [(0, 1, 2)],
             boundary_tag=INTERIOR)
    with pytest.raises(ValueError, match="without tag"):
        TransportSolveContext(m, 0, BoundaryData())


def test_manufactured_poisson_rate():
    # potential solve with the exact density: phi converges at k + 2
    sol = example1_solution()
    eps = 0.1
    _, f2 = example1_sources(eps)
    bc = example1_boundary()
    t = 0.5
    for k in (0, 1):
        errs = []
        for n in (4, 8, 16):
            mesh = build_structured_unit_square(n)
            uex = l2_project_element(lambda p: sol.u(p, t), k + 1, mesh)
            p, phi, phi_hat = solve_poisson(mesh, k, eps, 1.0, uex, f2, bc, t=t)
            errs.append(l2_error(phi, sol.phi, t, mesh))
        rate = math.log2(errs[-2] / errs[-1])
        assert abs(rate - (k + 2)) < 0.15, (k, errs)


def test_transmission_residuals_after_solves(mesh_n4):
    sol = example1_solution()
    eps = 0.1
    f1, f2 = example1_sources(eps)
    bc = example1_boundary()
    t = 0.5
    k = 1
    uex = l2_project_element(lambda p: sol.u(p, t), k + 1, mesh_n4)
    p, phi, phi_hat = solve_poisson(mesh_n4, k, eps, 1.0, uex, f2, bc, t=t)
    assert poisson_transmission_residual(mesh_n4, k, p, phi, phi_hat) < 1e-9
    assert poisson_interior_residual(mesh_n4, k, eps, 1.0, p, phi, phi_hat,
                                     uex, f2, t=t) < 1e-9
    phat = build_phat(mesh_n4, k, p, phi, phi_hat, 1.0)
    q, u, u_hat = solve_transport_step(mesh_n4, k, p, phat, alpha=1.0,
                                       load=f1, bc=bc, t=t)
    assert transport_transmission_residual(mesh_n4, k, q, u, u_hat) < 1e-9


def test_determinism(mesh_n4):
    bc = BoundaryData(g_u=lambda p, t: np.sin(p[:, 0] + 2.0 * p[:, 1]))
    ctx = TransportSolveContext(mesh_n4, 1, bc)
    sys1 = ctx.assemble_system(2.0, None, None, lambda p, t: p[:, 0], None, 0.0)
    x1 = solve_trace(sys1)
    sys2 = ctx.assemble_system(2.0, None, None, lambda p, t: p[:, 0], None, 0.0)
    x2 = solve_trace(sys2)
    assert np.array_equal(x1, x2)


def test_solver_failure_diagnostics():
    system = TraceSystem(
        matrix=sp.csc_matrix(np.array([[1.0, 1.0], [1.0, 1.0]])),
        rhs=np.array([1.0, 2.0]),
        n_dofs=2, modes_per_face=1,
        active=np.array([0, 1]), dirichlet=np.array([], dtype=int),
        dirichlet_values=np.array([]),
        elem_dofs=np.zeros((1, 2), dtype=int),
        inv_A_II=np.zeros((1, 1, 1)), A_IL=np.zeros((1, 1, 2)),
        b_I=np.zeros((1, 1)))
    with pytest.raises(RuntimeError, match="trace solve"):
        solve_trace(system)
