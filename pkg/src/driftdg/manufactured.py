"""Manufactured solutions, device problem data, error norms, and EOC tables."""

import math
from dataclasses import dataclass, field

import numpy as np

from .femcore import TriangleBasis, triangle_quadrature
from .mesh import DIRICHLET, NEUMANN, build_structured_unit_square, tag_boundary
from .solver import BoundaryData


@dataclass
class ExactSolution:
    """Closed-form fields of a space-time solution pair (density, potential).

    All callables take (pts (n,2), t) and return (n,) or (n,2) arrays.
    """

    u: callable
    phi: callable
    q: callable            # -grad u
    p: callable            # -grad phi
    u_t: callable
    lap_u: callable
    lap_phi: callable
    div_u_grad_phi: callable


def example1_solution():
    """Smooth benchmark pair: u = cos(t) sin(x) cos(y), phi = sin(t) cos(x) sin(y)."""

    def u(pts, t):
        return np.cos(t) * np.sin(pts[:, 0]) * np.cos(pts[:, 1])

    def phi(pts, t):
        return np.sin(t) * np.cos(pts[:, 0]) * np.sin(pts[:, 1])

    def q(pts, t):
        x, y = pts[:, 0], pts[:, 1]
        return np.stack([-np.cos(t) * np.cos(x) * np.cos(y),
                         np.cos(t) * np.sin(x) * np.sin(y)], axis=-1)

    def p(pts, t):
        x, y = pts[:, 0], pts[:, 1]
        return np.stack([np.sin(t) * np.sin(x) * np.sin(y),
                         -np.sin(t) * np.cos(x) * np.cos(y)], axis=-1)

    def u_t(pts, t):
        return -np.sin(t) * np.sin(pts[:, 0]) * np.cos(pts[:, 1])

    def lap_u(pts, t):
        return -2.0 * np.cos(t) * np.sin(pts[:, 0]) * np.cos(pts[:, 1])

    def lap_phi(pts, t):
        return -2.0 * np.sin(t) * np.cos(pts[:, 0]) * np.sin(pts[:, 1])

    def div_u_grad_phi(pts, t):
        # grad u . grad phi + u lap phi, both products collapse to the same term
        x, y = pts[:, 0], pts[:, 1]
        return (-4.0 * np.sin(t) * np.cos(t)
                * np.sin(x) * np.cos(x) * np.sin(y) * np.cos(y))

    return ExactSolution(u, phi, q, p, u_t, lap_u, lap_phi, div_u_grad_phi)


def example1_sources(eps):
    """Right-hand sides so the benchmark pair solves the coupled system.

    f1 = u_t - lap u + div(u grad phi);  f2 = -eps lap phi + u.
    """
    sol = example1_solution()

    def f1(pts, t):
        return sol.u_t(pts, t) - sol.lap_u(pts, t) + sol.div_u_grad_phi(pts, t)

    def f2(pts, t):
        return -eps * sol.lap_phi(pts, t) + sol.u(pts, t)

    return f1, f2


def example1_boundary():
    """Dirichlet data matching the exact traces on the whole boundary."""
    sol = example1_solution()
    return BoundaryData(g_u=sol.u, g_phi=sol.phi)


def verify_solution_consistency(sol, n_samples=100, step=1e-4, seed=0):
    """Max residual of the derived fields against central finite differences."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0.05, 0.95, size=(n_samples, 2))
    ts = rng.uniform(0.05, 0.95, size=n_samples)
    worst = 0.0
    ex = np.array([step, 0.0])
    ey = np.array([0.0, step])
    for i in range(n_samples):
        P = pts[i:i + 1]
        t = ts[i]
        gu = np.array([(sol.u(P + ex, t) - sol.u(P - ex, t))[0],
                       (sol.u(P + ey, t) - sol.u(P - ey, t))[0]]) / (2 * step)
        gp = np.array([(sol.phi(P + ex, t) - sol.phi(P - ex, t))[0],
                       (sol.phi(P + ey, t) - sol.phi(P - ey, t))[0]]) / (2 * step)
        worst = max(worst, np.abs(sol.q(P, t)[0] + gu).max())
        worst = max(worst, np.abs(sol.p(P, t)[0] + gp).max())
        ut = (sol.u(P, t + step) - sol.u(P, t - step))[0] / (2 * step)
        worst = max(worst, abs(sol.u_t(P, t)[0] - ut))
        lu = (sol.u(P + ex, t)[0] + sol.u(P - ex, t)[0] + sol.u(P + ey, t)[0]
              + sol.u(P - ey, t)[0] - 4 * sol.u(P, t)[0]) / step**2
        worst = max(worst, abs(sol.lap_u(P, t)[0] - lu))
        lp = (sol.phi(P + ex, t)[0] + sol.phi(P - ex, t)[0] + sol.phi(P + ey, t)[0]
              + sol.phi(P - ey, t)[0] - 4 * sol.phi(P, t)[0]) / step**2
        worst = max(worst, abs(sol.lap_phi(P, t)[0] - lp))
        # div(u grad phi) = grad u . grad phi + u lap phi
        dv = gu @ (-sol.p(P, t)[0]) + sol.u(P, t)[0] * lp
        worst = max(worst, abs(sol.div_u_grad_phi(P, t)[0] - dv))
    return worst


def l2_error(field, exact, t, mesh, exactness=None):
    """L2(Omega) distance between a discrete field and a pointwise function."""
    if exactness is None:
        exactness = 2 * (field.degree + 1) + 4
    rule = triangle_quadrature(exactness)
    V = TriangleBasis(field.degree).eval(rule.points)
    phys = (mesh.elem_origin[:, None, :]
            + np.einsum("eij,qj->eqi", mesh.jacobians, rule.points))
    vals = np.asarray(exact(phys.reshape(-1, 2), t), dtype=float)
    if field.components == 1:
        num = np.einsum("ed,qd->eq", field.coeffs[:, 0], V)
        diff2 = (num - vals.reshape(mesh.n_elements, -1)) ** 2
    else:
        num = np.einsum("ecd,qd->eqc", field.coeffs, V)
        ex = vals.reshape(mesh.n_elements, -1, 2)
        diff2 = ((num - ex) ** 2).sum(axis=-1)
    return math.sqrt(float(np.einsum("e,q,eq->", mesh.det_jacobians,
                                     rule.weights, diff2)))


@dataclass
class ErrorReport:
    """Final-time error norms of one refinement level."""

    level: int
    h: float
    errors: dict = field(default_factory=dict)   # norm name -> value

    NORMS = ("u", "phi", "q", "p")


def eoc_table(reports):
    """Rates log2(e_coarse / e_fine) between consecutive levels.

    Requires at least two levels with h halving; returns a dict with lists
    "level", "h", and per-norm "err_*" / "rate_*" (rates are None on the
    first level and "exact" when both errors vanish).
    """
    if len(reports) < 2:
        raise ValueError("need at least two refinement levels")
    table = {"level": [r.level for r in reports], "h": [r.h for r in reports]}
    for i in range(1, len(reports)):
        ratio = reports[i - 1].h / reports[i].h
        if abs(ratio - 2.0) > 1e-6:
            raise ValueError(f"levels do not halve h: ratio {ratio}")
    norms = list(reports[0].errors.keys())
    for n in norms:
        errs = [r.errors[n] for r in reports]
        rates = [None]
        for i in range(1, len(errs)):
            if errs[i - 1] < 1e-13 and errs[i] < 1e-13:
                rates.append("exact")
            else:
                rates.append(math.log2(errs[i - 1] / errs[i]))
        table[f"err_{n}"] = errs
        table[f"rate_{n}"] = rates
    return table


@dataclass
class DeviceProblem:
    """Complete problem bundle for the simulation driver."""

    eps: float
    tau: float
    f1: callable
    f2: callable
    bc: BoundaryData
    u0: callable
    boundary_predicate: callable

    def make_mesh(self, n):
        return tag_boundary(build_structured_unit_square(n), self.boundary_predicate)


def example2_problem():
    """Device-style run: eps = 1e-2, doping-like piecewise source, mixed BCs.

    Source f2 = -0.8 on (0, 0.5) x (0.5, 1) and +0.8 elsewhere; contacts
    g_u = 0.9, g_phi = 1.1 on {y = 0} and g_u = 0.1, g_phi = -1.1 on
    {y = 1, 0 <= x <= 0.25}; homogeneous Neumann on the rest; u0 = (1+f2)/2.
    """

    def f2_profile(pts):
        x, y = pts[:, 0], pts[:, 1]
        inside = (x > 0.0) & (x < 0.5) & (y > 0.5) & (y < 1.0)
        return np.where(inside, -0.8, 0.8)

    def f1(pts, t):
        return np.zeros(len(pts))

    def f2(pts, t):
        return f2_profile(pts)

    def u0(pts):
        return 0.5 * (1.0 + f2_profile(pts))

    def g_u(pts, t):
        return np.where(pts[:, 1] < 0.5, 0.9, 0.1)

    def g_phi(pts, t):
        return np.where(pts[:, 1] < 0.5, 1.1, -1.1)

    def predicate(mid, verts):
        if mid[1] < 1e-12:
            return DIRICHLET
        if mid[1] > 1.0 - 1e-12 and mid[0] <= 0.25 + 1e-12:
            return DIRICHLET
        return NEUMANN

    bc = BoundaryData(g_u=g_u, g_phi=g_phi)
    return DeviceProblem(eps=1e-2, tau=1.0, f1=f1, f2=f2, bc=bc, u0=u0,
                         boundary_predicate=predicate)
