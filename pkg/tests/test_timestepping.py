import math

import numpy as np
import pytest

from driftdg.manufactured import (
    example1_boundary,
    example1_solution,
    example1_sources,
    example2_problem,
    l2_error,
)
from driftdg.mesh import build_structured_unit_square
from driftdg.projections import CoefficientField, l2_project_element
from driftdg.solver import BoundaryData, solve_transport_step
from driftdg.timestepping import (
    BDFState,
    CoupledStepper,
    CouplingConfig,
    GummelDivergence,
    TimeGrid,
    initialize,
    run,
)


def test_time_grid_validation():
    with pytest.raises(ValueError, match="divide"):
        TimeGrid(1.0, 0.3, 3)
    g = TimeGrid.from_steps(1.0, 8)
    assert g.dt == pytest.approx(0.125)
    assert len(g.times()) == 9


def test_time_grid_rules():
    g, req = TimeGrid.from_rule(1.0, "h", math.sqrt(2.0) / 8)
    assert req == pytest.approx(math.sqrt(2.0) / 8)
    assert g.n_steps == 6          # ceil(1 / 0.17678)
    assert g.dt <= req
    g2, req2 = TimeGrid.from_rule(1.0, "h^1.5", 0.5)
    assert req2 == pytest.approx(0.5 ** 1.5)
    assert g2.n_steps == math.ceil(1.0 / 0.5 ** 1.5)
    g3, _ = TimeGrid.from_rule(2.0, "0.25", 1.0)
    assert g3.n_steps == 8


def test_initialize_zero_and_polynomial(mesh_n2, rng):
    st = initialize(lambda p: np.zeros(len(p)), mesh_n2, 1)
    assert np.abs(st.u.coeffs).max() == 0.0
    assert st.scheme == "BDF1"

    poly = lambda p: 1.0 + p[:, 0] - 2.0 * p[:, 1] + p[:, 0] * p[:, 1]
    st = initialize(poly, mesh_n2, 1)
    pts = rng.dirichlet([1.0] * 3, size=5)[:, :2]
    vals = st.u.eval_reference(pts)
    phys = mesh_n2.elem_origin[:, None, :] + np.einsum(
        "eij,qj->eqi", mesh_n2.jacobians, pts)
    assert np.abs(vals - poly(phys.reshape(-1, 2)).reshape(vals.shape)).max() < 1e-12


def test_initialize_example2_piecewise():
    prob = example2_problem()
    mesh = prob.make_mesh(4)   # even n: elements lie strictly inside regions
    st = initialize(prob.u0, mesh, 0)
    means = st.u.cell_means()[:, 0]
    centers = mesh.elem_origin + mesh.jacobians @ np.array([1.0 / 3.0, 1.0 / 3.0])
    inside = (centers[:, 0] < 0.5) & (centers[:, 1] > 0.5)
    assert np.abs(means[inside] - 0.1).max() < 1e-13
    assert np.abs(means[~inside] - 0.9).max() < 1e-13


def test_bdf2_exact_for_linear_in_time(mesh_n2):
    # u(x, y, t) = t * x is reproduced exactly: spatial patch + exact BDF2
    k = 0
    exact = lambda p, t: t * p[:, 0]
    bc = BoundaryData(g_u=exact)
    dt = 0.25
    t2 = 2 * dt
    u0 = l2_project_element(lambda p: exact(p, 0.0), k + 1, mesh_n2)
    u1 = l2_project_element(lambda p: exact(p, dt), k + 1, mesh_n2)
    hist = CoefficientField(k + 1, 1, (2.0 * u1.coeffs - 0.5 * u0.coeffs) / dt)
    # f1 = u_t - lap u = x
    q, u, u_hat = solve_transport_step(
        mesh_n2, k, None, None, alpha=1.5 / dt,
        load=lambda p, t: p[:, 0], bc=bc, t=t2, history=hist)
    target = l2_project_element(lambda p: exact(p, t2), k + 1, mesh_n2)
    assert np.abs(u.coeffs - target.coeffs).max() < 1e-11


def test_zero_data_stays_zero(mesh_n2):
    bc = BoundaryData()
    zero = lambda p, t: np.zeros(len(p))
    stepper = CoupledStepper(mesh_n2, 0, 1.0, 1.0, zero, zero, bc)
    state = initialize(lambda p: np.zeros(len(p)), mesh_n2, 0)
    for _ in range(3):
        state, fields, incs = stepper.step(state, 0.1)
    assert np.abs(state.u.coeffs).max() < 1e-14
    assert len(incs) == 1


def test_single_bdf1_step_error_bound():
    # magnitude sanity: one step error within 10x the projection error at t=dt
    sol = example1_solution()
    eps = 0.1
    f1, f2 = example1_sources(eps)
    bc = example1_boundary()
    mesh = build_structured_unit_square(8)
    dt = 1e-3
    stepper = CoupledStepper(mesh, 0, eps, 1.0, f1, f2, bc)
    state = initialize(lambda p: sol.u(p, 0.0), mesh, 0)
    state, fields, _ = stepper.step(state, dt)
    err = l2_error(state.u, sol.u, dt, mesh)
    uproj = l2_project_element(lambda p: sol.u(p, dt), 1, mesh)
    yardstick = l2_error(uproj, sol.u, dt, mesh)
    assert err <= 10.0 * yardstick, (err, yardstick)


def test_gummel_iteration_log():
    # observed iteration counts for the benchmark at n=8, k=0, dt = h rule
    sol = example1_solution()
    eps = 0.1
    f1, f2 = example1_sources(eps)
    bc = example1_boundary()
    mesh = build_structured_unit_square(8)
    grid, _ = TimeGrid.from_rule(1.0, "h", mesh.h_max)
    stepper = CoupledStepper(mesh, 0, eps, 1.0, f1, f2, bc)
    state = initialize(lambda p: sol.u(p, 0.0), mesh, 0)
    traj = run(state, grid, stepper)
    assert max(traj.iteration_counts) <= 13
    # increments contract monotonically while above the rounding floor
    for incs in traj.increment_log:
        for a, b in zip(incs, incs[1:]):
            if a > 1e-11:
                assert b < a


def test_gummel_divergence_raises(mesh_n2):
    sol = example1_solution()
    f1, f2 = example1_sources(0.1)
    bc = example1_boundary()
    coupling = CouplingConfig(rtol=1e-16, atol=1e-300, max_iter=1)
    stepper = CoupledStepper(mesh_n2, 0, 0.1, 1.0, f1, f2, bc, coupling)
    state = initialize(lambda p: sol.u(p, 0.0), mesh_n2, 0)
    with pytest.raises(GummelDivergence) as exc:
        stepper.step(state, 0.5)
    assert exc.value.increment > 0.0
    assert exc.value.iterations == 1


def test_run_single_step_and_snapshots(mesh_n2):
    sol = example1_solution()
    f1, f2 = example1_sources(0.1)
    bc = example1_boundary()
    stepper = CoupledStepper(mesh_n2, 0, 0.1, 1.0, f1, f2, bc)
    state = initialize(lambda p: sol.u(p, 0.0), mesh_n2, 0)
    grid = TimeGrid.from_steps(0.2, 2)
    traj = run(state, grid, stepper, snapshot_times=(0.1, 0.2))
    assert len(traj.snapshots) == 2
    assert traj.snapshots[0][0] == pytest.approx(0.1)
    assert len(traj.step_times) == 2
    with pytest.raises(ValueError, match="snapshot"):
        run(state, grid, stepper, snapshot_times=(0.15,))


def test_first_step_bdf1_then_bdf2(mesh_n2):
    sol = example1_solution()
    f1, f2 = example1_sources(0.1)
    bc = example1_boundary()
    stepper = CoupledStepper(mesh_n2, 0, 0.1, 1.0, f1, f2, bc)
    state = initialize(lambda p: sol.u(p, 0.0), mesh_n2, 0)
    assert state.scheme == "BDF1"
    state, _, _ = stepper.step(state, 0.25)
    assert state.scheme == "BDF2"
