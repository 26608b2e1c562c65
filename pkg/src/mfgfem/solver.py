"""Outer fixed-point solver for the coupled value/density system.

One outer iteration maps a drift field b to a new one: march the density
forward under b, project the terminal cost of the resulting density, march
the value function backward against the coupling loads, then re-select the
drift from the subdifferential at the new value function.  The iteration
starts from b = 0 (or a caller-supplied admissible field) and stops when the
relative changes of u (in L2 of the gradient norm) and of m (in space-time
L2) both drop below ``tol_fp``.  Optional under-relaxation blends the (u, m)
pair only; drifts are always re-selected exactly so that the returned triple
carries a pointwise subgradient certificate.

There is no a-priori convergence guarantee for this outer loop (existence of
the discrete fixed point is known, constructive convergence is not), so
non-convergence raises with the residual history attached.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .assembly import (
    FeSpace,
    assemble_consistent_mass,
    assemble_convection,
    assemble_stiffness,
    build_fespace,
    build_stabilization,
    default_weights,
    element_gradients,
)
from .hamiltonian import TransportField, select_field
from .mesh import Mesh, audit
from .problem import ProblemSpec, project_initial, slab_loads
from .timestepping import (
    SpaceTimeField,
    TimeGrid,
    build_slab_operators,
    hjb_backward,
    kfp_forward,
)


@dataclass
class SolverOptions:
    tol_fp: float = 1e-9
    max_outer: int = 200
    relaxation: float = 1.0
    tol_picard: float = 1e-11
    max_picard: int = 100
    lin_tol: float = 1e-12
    c_w: float = 1.0
    quadrature_degree: int = 6
    b0: Optional[TransportField] = None
    allow_failing_mesh: bool = False


@dataclass
class MfgSolution:
    u: SpaceTimeField
    m: SpaceTimeField
    b: TransportField
    outer_iterations: int
    residual_history: list
    converged: bool
    picard_ratio_max: float
    fes: FeSpace = field(repr=False)
    grid: TimeGrid = field(repr=False)
    stab: object = field(repr=False)


class NonConvergenceError(RuntimeError):
    """Outer iteration cap reached; carries the residual history."""

    def __init__(self, history):
        super().__init__(
            f"fixed-point iteration did not converge in {len(history)} "
            f"iterations (last residual {history[-1]:.3e})"
        )
        self.residual_history = history


def _rel_change(num: float, den: float) -> float:
    if den > 0.0:
        return num / den
    return 0.0 if num == 0.0 else np.inf


def _quad_form(op, slabs):
    return float(sum(np.dot(s, op @ s) for s in slabs))


def solve(problem: ProblemSpec, mesh: Mesh, grid: TimeGrid,
          weights=None, opts: SolverOptions | None = None) -> MfgSolution:
    """Solve the coupled system on the given mesh and time grid."""
    opts = opts or SolverOptions()
    ham = problem.hamiltonian

    check = audit(mesh)
    if not check.xz_pass and not opts.allow_failing_mesh:
        raise ValueError(
            f"mesh fails the edge cotangent audit (worst sum "
            f"{check.worst_edge_cot_sum:.3e}); pass allow_failing_mesh to override"
        )
    if not grid.stable_for(problem.nu, ham.lipschitz):
        raise ValueError(
            f"time step {grid.tau:g} violates tau < nu/L^2 = "
            f"{problem.nu / ham.lipschitz ** 2:g}"
        )

    fes = build_fespace(mesh, opts.quadrature_degree)
    if weights is None:
        weights = default_weights(mesh, ham.lipschitz, opts.c_w)
    stab = build_stabilization(mesh, weights, problem.nu)
    ops = build_slab_operators(fes, stab, grid)

    mass = assemble_consistent_mass(fes).matrix
    stiff = assemble_stiffness(fes).matrix
    source_loads = (
        slab_loads(fes, grid, problem.source) if problem.source is not None else None
    )
    coupling = problem.coupling.bind(fes, grid)
    m0_nodal = project_initial(fes, problem.m0)

    theta = opts.relaxation
    if not 0.0 < theta <= 1.0:
        raise ValueError("relaxation must lie in (0, 1]")

    def blend(new: SpaceTimeField, old: SpaceTimeField) -> SpaceTimeField:
        if theta == 1.0:
            return new
        return SpaceTimeField(
            slabs=theta * new.slabs + (1 - theta) * old.slabs,
            continuity=new.continuity,
            endpoint=theta * new.endpoint + (1 - theta) * old.endpoint,
        )

    zeros = np.zeros((grid.num_slabs, fes.ndof))
    u_prev = SpaceTimeField(zeros.copy(), "backward", np.zeros(fes.ndof))
    m_prev = SpaceTimeField(zeros.copy(), "forward", np.zeros(fes.ndof))
    b = opts.b0
    if b is None:
        b = TransportField(
            np.zeros((grid.num_slabs, mesh.num_triangles, 2)), ham.lipschitz
        )
    elif b.max_magnitude() > ham.lipschitz + 1e-12:
        raise ValueError("initial drift exceeds the Hamiltonian Lipschitz bound")

    history: list[float] = []
    ratio_max = 0.0
    converged = False
    u_field = u_prev
    m_field = m_prev

    for it in range(1, opts.max_outer + 1):
        m_field = kfp_forward(
            fes, stab, grid, b, source_loads, m0_nodal,
            lin_tol=opts.lin_tol, ops=ops,
        )
        m_field = blend(m_field, m_prev)
        terminal = problem.terminal.project(fes, m_field.terminal())
        f_loads = coupling.loads(m_field.slabs)
        u_field, sweep = hjb_backward(
            fes, stab, grid, ham, f_loads, terminal,
            tol_picard=opts.tol_picard, max_picard=opts.max_picard,
            lin_tol=opts.lin_tol, ops=ops,
        )
        u_field = blend(u_field, u_prev)
        ratio_max = max(ratio_max, sweep.max_ratio)

        du = _quad_form(stiff, u_field.slabs - u_prev.slabs)
        dm = _quad_form(mass, m_field.slabs - m_prev.slabs)
        norm_u = _quad_form(stiff, u_field.slabs)
        norm_m = _quad_form(mass, m_field.slabs)
        residual = max(
            _rel_change(np.sqrt(du), np.sqrt(norm_u)),
            _rel_change(np.sqrt(dm), np.sqrt(norm_m)),
        )
        history.append(float(residual))

        b = select_field(ham, u_field, fes, grid)
        if residual <= opts.tol_fp:
            converged = True
            # refresh the density under the final drift so the returned
            # triple satisfies the forward equation to solver accuracy
            m_field = kfp_forward(
                fes, stab, grid, b, source_loads, m0_nodal,
                lin_tol=opts.lin_tol, ops=ops,
            )
            break
        u_prev, m_prev = u_field, m_field

    if not converged:
        raise NonConvergenceError(history)

    return MfgSolution(
        u=u_field,
        m=m_field,
        b=b,
        outer_iterations=it,
        residual_history=history,
        converged=converged,
        picard_ratio_max=ratio_max,
        fes=fes,
        grid=grid,
        stab=stab,
    )


# ----------------------------------------------------------------------
# a-posteriori checks


@dataclass(frozen=True)
class ResidualAudit:
    kfp_residual_max: float
    hjb_residual_max: float
    min_density: float
    subgradient_worst_slack: float


def _probe_directions(ndirs: int = 8) -> np.ndarray:
    ang = 2.0 * np.pi * np.arange(ndirs) / ndirs
    return np.column_stack([np.cos(ang), np.sin(ang)])


def subgradient_worst_slack(fes, grid, ham, u_field, b_field,
                            ndirs: int = 8) -> float:
    """Worst slack of H(g + d) >= H(g) + b . d over slabs, cells, directions.

    Nonnegative (up to round-off) exactly when every selected drift is a
    subgradient of H at the discrete gradient.
    """
    worst = np.inf
    dirs = _probe_directions(ndirs)
    for n in range(grid.num_slabs):
        g = element_gradients(fes, u_field.slabs[n])
        hg = ham.value(grid.midpoints[n], fes.centroids, g)
        bn = b_field.values[n]
        for d in dirs:
            hq = ham.value(grid.midpoints[n], fes.centroids, g + d)
            slack = hq - hg - bn @ d
            worst = min(worst, float(slack.min()))
    return worst


def monotonicity_defect(fes, grid, ham, u_field, b_field, u_other) -> float:
    """Max over cells/slabs of H(g) - H(g') + b . (g' - g), g' from u_other.

    Nonpositive (up to round-off) whenever b is selected from the
    subdifferential at grad u; this is the elementwise sign fact behind the
    uniqueness argument for monotone couplings.
    """
    worst = -np.inf
    for n in range(grid.num_slabs):
        g = element_gradients(fes, u_field.slabs[n])
        gp = element_gradients(fes, u_other.slabs[n])
        t = grid.midpoints[n]
        lam = (
            ham.value(t, fes.centroids, g)
            - ham.value(t, fes.centroids, gp)
            + np.einsum("tx,tx->t", b_field.values[n], gp - g)
        )
        worst = max(worst, float(lam.max()))
    return worst


def residual_audit(sol: MfgSolution, problem: ProblemSpec,
                   fes: FeSpace, grid: TimeGrid) -> ResidualAudit:
    """Plug the returned fields back into every slab equation.

    Residuals are max norms of the discrete equation defects, normalized by
    max(1, largest load magnitude); a converged solve keeps both below ten
    times the fixed-point tolerance.
    """
    stab = sol.stab
    ops = build_slab_operators(fes, stab, grid)
    mu, tau = ops.mass, grid.tau
    ka = ops.stiffness.matrix

    source_loads = (
        slab_loads(fes, grid, problem.source)
        if problem.source is not None
        else np.zeros((grid.num_slabs, fes.ndof))
    )
    coupling = problem.coupling.bind(fes, grid)
    f_loads = coupling.loads(sol.m.slabs)
    terminal = problem.terminal.project(fes, sol.m.terminal())
    m0_nodal = project_initial(fes, problem.m0)

    from .timestepping import _hamiltonian_load

    ham = problem.hamiltonian
    scale = max(1.0, float(np.abs(f_loads).max()), float(np.abs(source_loads).max()))

    kfp_max = 0.0
    prev = m0_nodal
    for n in range(grid.num_slabs):
        conv = assemble_convection(fes, sol.b.values[n]).matrix
        r = mu * (sol.m.slabs[n] - prev) / tau + ka @ sol.m.slabs[n] \
            + conv @ sol.m.slabs[n] - source_loads[n]
        kfp_max = max(kfp_max, float(np.abs(r).max()))
        prev = sol.m.slabs[n]

    hjb_max = float(np.abs(sol.u.endpoint - terminal).max())
    nxt = terminal
    for n in range(grid.num_slabs - 1, -1, -1):
        un = sol.u.slabs[n]
        r = mu * (un - nxt) / tau + ka @ un \
            + _hamiltonian_load(fes, ham, grid.midpoints[n], un) - f_loads[n]
        hjb_max = max(hjb_max, float(np.abs(r).max()))
        nxt = un

    return ResidualAudit(
        kfp_residual_max=kfp_max / scale,
        hjb_residual_max=hjb_max / scale,
        min_density=float(min(sol.m.slabs.min(), sol.m.endpoint.min())),
        subgradient_worst_slack=subgradient_worst_slack(
            fes, grid, problem.hamiltonian, sol.u, sol.b
        ),
    )
