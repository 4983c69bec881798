"""Implicit time integration of the coupled system.

BDF2 with a single BDF1 startup step; the nonlinear drift product is
resolved per step by a decoupled fixed-point (Gummel) iteration that
alternates the potential solve (density frozen) and the implicit transport
solve (drift frozen).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .projections import CoefficientField, l2_project_element
from .solver import (
    BoundaryData,
    PoissonSolveContext,
    TransportSolveContext,
    build_phat,
)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, T]; the step must divide T exactly."""

    t_final: float
    dt: float
    n_steps: int

    def __post_init__(self):
        if self.dt <= 0.0 or self.n_steps < 1:
            raise ValueError("need dt > 0 and at least one step")
        if abs(self.n_steps * self.dt - self.t_final) > 1e-12 * max(1.0, self.t_final):
            raise ValueError(
                f"dt = {self.dt} does not divide T = {self.t_final} "
                f"({self.n_steps} steps)")

    @classmethod
    def from_steps(cls, t_final, n_steps):
        return cls(t_final, t_final / n_steps, n_steps)

    @classmethod
    def from_rule(cls, t_final, rule, h):
        """Resolve a dt rule ("h", "h^1.5", or a number) to an exact divisor
        of t_final, adjusting downward.  Returns (grid, requested_dt)."""
        if isinstance(rule, str):
            r = rule.strip().lower()
            if r == "h":
                dt_req = h
            elif r in ("h^1.5", "h^3/2", "h**1.5"):
                dt_req = h ** 1.5
            else:
                dt_req = float(r)
        else:
            dt_req = float(rule)
        if dt_req <= 0.0:
            raise ValueError("requested dt must be positive")
        n = max(1, math.ceil(t_final / dt_req - 1e-12))
        return cls.from_steps(t_final, n), dt_req

    def times(self):
        return self.dt * np.arange(self.n_steps + 1)


@dataclass
class BDFState:
    """Density at the two most recent levels; u_old is None before step 1."""

    u: CoefficientField
    u_old: CoefficientField | None
    time: float

    @property
    def scheme(self):
        return "BDF1" if self.u_old is None else "BDF2"


@dataclass
class CouplingConfig:
    """Fixed-point controls for the per-step nonlinear resolution."""

    rtol: float = 1e-10
    atol: float = 1e-12
    max_iter: int = 50

    def __post_init__(self):
        if self.rtol <= 0.0 or self.atol <= 0.0 or self.max_iter < 1:
            raise ValueError("tolerances must be positive and max_iter >= 1")


class GummelDivergence(RuntimeError):
    def __init__(self, increment, iterations):
        super().__init__(
            f"fixed-point coupling did not converge in {iterations} iterations "
            f"(last increment {increment:.3e})")
        self.increment = increment
        self.iterations = iterations


def initialize(u0, mesh, k):
    """Initial state: element L2 projection of u0 into the degree-(k+1) space."""
    u = l2_project_element(lambda p: u0(p), k + 1, mesh,
                           exactness=2 * (k + 1) + 6, components=1)
    return BDFState(u=u, u_old=None, time=0.0)


def _field_norm(mesh, coeffs):
    return math.sqrt(float(np.einsum("e,ecd,ecd->", mesh.det_jacobians,
                                     coeffs, coeffs)))


class CoupledStepper:
    """Owns the two solve contexts; advances the coupled system in time."""

    def __init__(self, mesh, k, eps, tau, f1, f2, bc, coupling=None):
        self.mesh = mesh
        self.k = k
        self.tau = tau
        self.f1 = f1
        self.f2 = f2
        self.bc = bc if bc is not None else BoundaryData()
        self.coupling = coupling if coupling is not None else CouplingConfig()
        self.poisson = PoissonSolveContext(mesh, k, eps, tau, self.bc)
        self.transport = TransportSolveContext(mesh, k, self.bc)

    def step(self, state, dt):
        """One BDF step (BDF1 on the first level, BDF2 afterwards).

        Returns (new_state, fields, increments) with fields =
        (q, u, u_hat, p, phi, phi_hat) at the new time level.
        """
        mesh = self.mesh
        t_new = state.time + dt
        if state.u_old is None:
            alpha = 1.0 / dt
            hist = CoefficientField(state.u.degree, 1, state.u.coeffs / dt)
            guess = state.u.copy()
        else:
            alpha = 1.5 / dt
            hist = CoefficientField(state.u.degree, 1,
                                    (2.0 * state.u.coeffs - 0.5 * state.u_old.coeffs) / dt)
            guess = CoefficientField(state.u.degree, 1,
                                     2.0 * state.u.coeffs - state.u_old.coeffs)

        cfg = self.coupling
        increments = []
        u_star = guess
        fields = None
        for _ in range(cfg.max_iter):
            p, phi, phi_hat = self.poisson.solve(u_star, self.f2, t_new)
            phat = build_phat(mesh, self.k, p, phi, phi_hat, self.tau)
            q, u_new, u_hat = self.transport.solve(alpha, p, phat, self.f1,
                                                   hist, t_new)
            inc = _field_norm(mesh, u_new.coeffs - u_star.coeffs)
            increments.append(inc)
            u_star = u_new
            fields = (q, u_new, u_hat, p, phi, phi_hat)
            if inc <= cfg.rtol * _field_norm(mesh, u_new.coeffs) + cfg.atol:
                break
        else:
            raise GummelDivergence(increments[-1], cfg.max_iter)
        new_state = BDFState(u=u_star, u_old=state.u, time=t_new)
        return new_state, fields, increments


def bdf_step(state, dt, mesh, k, eps, tau, f1, f2, bc, coupling=None, stepper=None):
    """Single coupled step; see CoupledStepper.step."""
    if stepper is None:
        stepper = CoupledStepper(mesh, k, eps, tau, f1, f2, bc, coupling)
    return stepper.step(state, dt)


@dataclass
class Trajectory:
    """Result of a time loop: final fields plus monitoring data."""

    grid: TimeGrid
    state: BDFState
    fields: tuple
    snapshots: list = field(default_factory=list)
    step_times: list = field(default_factory=list)
    iteration_counts: list = field(default_factory=list)
    increment_log: list = field(default_factory=list)
    u_min: list = field(default_factory=list)
    u_max: list = field(default_factory=list)


def run(initial, grid, stepper, snapshot_times=()):
    """March from t=0 to T; snapshots are taken exactly at grid points."""
    snap_steps = {}
    for ts in snapshot_times:
        ratio = ts / grid.dt
        step = round(ratio)
        if abs(ratio - step) > 1e-9 or not (0 < step <= grid.n_steps):
            raise ValueError(f"snapshot time {ts} does not land on the time grid")
        snap_steps[step] = ts

    state = initial
    fields = None
    traj = Trajectory(grid=grid, state=state, fields=None)
    for n in range(1, grid.n_steps + 1):
        state, fields, incs = stepper.step(state, grid.dt)
        means = fields[1].cell_means()[:, 0]
        traj.step_times.append(state.time)
        traj.iteration_counts.append(len(incs))
        traj.increment_log.append(incs)
        traj.u_min.append(float(means.min()))
        traj.u_max.append(float(means.max()))
        if n in snap_steps:
            traj.snapshots.append((snap_steps[n], fields))
    traj.state = state
    traj.fields = fields
    return traj
