"""Hybridized DG solver for the coupled drift-diffusion system in 2D."""

from .mesh import (
    Mesh,
    ElementGeometry,
    build_structured_unit_square,
    refine_uniform,
    compute_geometry,
    tag_boundary,
    read_mesh_text,
    INTERIOR,
    DIRICHLET,
    NEUMANN,
)
from .femcore import (
    QuadratureRule,
    TriangleBasis,
    SegmentBasis,
    triangle_quadrature,
    segment_quadrature,
    local_mass_matrix,
    local_face_mass,
)
from .projections import (
    CoefficientField,
    TraceField,
    l2_project_element,
    l2_project_face,
    restrict_to_face,
    hdg_project,
)
from .operators import (
    LocalSystem,
    CondensedBlock,
    local_transport_blocks,
    local_poisson_blocks,
    evaluate_p_hat_normal,
    condense,
    recover_interior,
)
from .solver import (
    BoundaryData,
    TraceSystem,
    assemble_poisson,
    assemble_transport,
    solve_trace,
    solve_poisson,
    solve_transport_step,
)
from .timestepping import (
    TimeGrid,
    BDFState,
    CouplingConfig,
    initialize,
    bdf_step,
    run,
)
from .manufactured import (
    ExactSolution,
    ErrorReport,
    example1_solution,
    example1_sources,
    example2_problem,
    l2_error,
    eoc_table,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
