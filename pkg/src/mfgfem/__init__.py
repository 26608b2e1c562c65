"""Monotone stabilized P1 finite elements for coupled value/density systems.

The package discretizes a forward Kolmogorov transport equation coupled to a
backward Hamilton-Jacobi-Bellman equation whose Hamiltonian is convex but may
be nondifferentiable; the drift of the transport equation is then a
measurable selection from the subdifferential of the Hamiltonian at the
discrete value-function gradient.  Affine elements in space with mass
lumping, implicit Euler in time, and an edge-tangent artificial diffusion
keep the density nonnegative for nonnegative data.
"""

from .analysis import (
    ErrorReport,
    WeightedNormContext,
    discrete_norm_vk,
    eoc,
    error_norms,
    infsup_check,
    linf_l2_max,
    tech_inequality_check,
)
from .assembly import (
    FeSpace,
    SparseOperator,
    StabilizationTensor,
    assemble_consistent_mass,
    assemble_convection,
    assemble_diffusion,
    assemble_load,
    assemble_stiffness,
    build_fespace,
    build_stabilization,
    default_weights,
    dual_norm,
    element_gradients,
    lumped_inner,
    lumped_norm,
    lumped_riesz,
    point_values,
)
from .hamiltonian import (
    Hamiltonian,
    TransportField,
    discrete_control,
    eikonal,
    select_field,
)
from .linsolve import (
    LinearSolveError,
    LinearSolveReport,
    factorize,
    solve_general,
    solve_spd,
)
from .mesh import (
    Mesh,
    MeshAudit,
    MeshError,
    MeshIOError,
    audit,
    generate_uniform_unit_square,
    load_mesh,
    refine_uniform,
    save_mesh,
)
from .problem import (
    LocalCoupling,
    ManufacturedCase,
    ProblemSpec,
    TanhTerminalCost,
    local_coupling,
    manufactured,
    project_initial,
    slab_loads,
    trivial_problem,
)
from .solver import (
    MfgSolution,
    NonConvergenceError,
    ResidualAudit,
    SolverOptions,
    monotonicity_defect,
    residual_audit,
    solve,
    subgradient_worst_slack,
)
from .timestepping import (
    PicardError,
    SpaceTimeField,
    TimeGrid,
    hjb_backward,
    ibp_defect,
    kfp_forward,
    reconstruct_derivative,
)

__version__ = "0.1.0"
