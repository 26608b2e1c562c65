"""Discrete norms, error norms against closed-form solutions, and rate tables.

Error norms integrate the piecewise-constant-in-time discrete fields against
the smooth exact solution with three Gauss points per slab in time and a
degree-6 rule in space; the dominant first-order error is then captured
without quadrature pollution.

The weighted norms reproduce, at the Python level, the exact discrete
quantities behind the parabolic inf-sup identity

    |w|_Y^2 = [sup_v B(w, v) / |v|_X]^2 + |w(0)|_lump^2 / (1 + s),

with s = tau L^2 / nu, time weights a_n = (1 + s)^(-n), the A-weighted dual
norm of the reconstructed time derivative, and jump terms.  The supremum is
evaluated by constructing its maximizer a (z + w), where z is the slabwise
A-Riesz lift of the time derivative, so both sides of the identity are
computed through genuinely different code paths; the same context yields the
companion bound

    int (L^2/nu) a |w|^2 dt <= gamma^2 |w|_Y^2 + |w(0)|_lump^2 / 2,

with gamma = sqrt((1 + s)/2), the contraction constant of the backward
sweep's fixed-point map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linsolve
from .assembly import (
    FeSpace,
    assemble_consistent_mass,
    assemble_diffusion,
    assemble_stiffness,
    element_gradients,
    point_values,
)
from .quadrature import gauss_legendre
from .timestepping import SpaceTimeField, TimeGrid, reconstruct_derivative


def _safe_rel(num: float, den: float) -> float:
    if den > 0.0:
        return num / den
    return 0.0 if num <= 1e-300 else np.inf


@dataclass(frozen=True)
class ErrorReport:
    """Relative errors of one solve plus the level metadata."""

    rel_u_L2H1: float
    rel_b_L2L2: float
    rel_m_L2L2: float
    rel_m_L2H1: float
    rel_u0_L2: float
    rel_mT_L2: float
    n: int
    h: float
    tau: float
    num_slabs: int

    COLUMNS = (
        "rel_u_L2H1",
        "rel_b_L2L2",
        "rel_m_L2L2",
        "rel_m_L2H1",
        "rel_u0_L2",
        "rel_mT_L2",
    )

    def values(self) -> tuple[float, ...]:
        return tuple(getattr(self, c) for c in self.COLUMNS)


def error_norms(sol, case, fes: FeSpace, grid: TimeGrid,
                time_points: int = 3) -> ErrorReport:
    """Relative space-time errors of (u, m, b) and the endpoint errors."""
    area = fes.mesh.tri_area
    wq = fes.quad_w
    xq, yq = fes.quad_xy[..., 0], fes.quad_xy[..., 1]

    def cellint(vals):
        return float(((vals @ wq) * area).sum())

    num = dict.fromkeys(("uH1", "b", "mL2", "mH1"), 0.0)
    den = dict.fromkeys(("uH1", "b", "mL2", "mH1"), 0.0)

    for n in range(grid.num_slabs):
        gu = element_gradients(fes, sol.u.slabs[n])
        gm = element_gradients(fes, sol.m.slabs[n])
        vm = point_values(fes, sol.m.slabs[n])
        bn = sol.b.values[n]
        tq, tw = gauss_legendre(time_points, grid.times[n], grid.times[n + 1])
        for t, w in zip(tq, tw):
            uex, uey = case.u_x(t, xq, yq), case.u_y(t, xq, yq)
            num["uH1"] += w * cellint(
                (gu[:, :1] - uex) ** 2 + (gu[:, 1:] - uey) ** 2
            )
            den["uH1"] += w * cellint(uex**2 + uey**2)

            bs = case.b_star(t, xq, yq)
            num["b"] += w * cellint(
                (bn[:, :1] - bs[..., 0]) ** 2 + (bn[:, 1:] - bs[..., 1]) ** 2
            )
            den["b"] += w * cellint(bs[..., 0] ** 2 + bs[..., 1] ** 2)

            me = case.m(t, xq, yq)
            num["mL2"] += w * cellint((vm - me) ** 2)
            den["mL2"] += w * cellint(me**2)

            mex, mey = case.m_x(t, xq, yq), case.m_y(t, xq, yq)
            num["mH1"] += w * cellint(
                (gm[:, :1] - mex) ** 2 + (gm[:, 1:] - mey) ** 2
            )
            den["mH1"] += w * cellint(mex**2 + mey**2)

    u0h = point_values(fes, sol.u.initial())
    u0e = case.u(0.0, xq, yq)
    mTh = point_values(fes, sol.m.terminal())
    mTe = case.m(grid.horizon, xq, yq)

    n_side = int(round(np.sqrt(fes.mesh.num_triangles / 2.0)))
    return ErrorReport(
        rel_u_L2H1=_safe_rel(np.sqrt(num["uH1"]), np.sqrt(den["uH1"])),
        rel_b_L2L2=_safe_rel(np.sqrt(num["b"]), np.sqrt(den["b"])),
        rel_m_L2L2=_safe_rel(np.sqrt(num["mL2"]), np.sqrt(den["mL2"])),
        rel_m_L2H1=_safe_rel(np.sqrt(num["mH1"]), np.sqrt(den["mH1"])),
        rel_u0_L2=_safe_rel(
            np.sqrt(cellint((u0h - u0e) ** 2)), np.sqrt(cellint(u0e**2))
        ),
        rel_mT_L2=_safe_rel(
            np.sqrt(cellint((mTh - mTe) ** 2)), np.sqrt(cellint(mTe**2))
        ),
        n=n_side,
        h=fes.mesh.h,
        tau=grid.tau,
        num_slabs=grid.num_slabs,
    )


def eoc(reports: list[ErrorReport]) -> dict[str, list[float]]:
    """Observed orders log2(e_k / e_{k+1}) per error column (nan if undefined)."""
    if len(reports) < 2:
        raise ValueError("need at least two levels")
    rates: dict[str, list[float]] = {}
    for col in ErrorReport.COLUMNS:
        vals = [getattr(r, col) for r in reports]
        rates[col] = [
            np.log2(a / b) if a > 0 and b > 0 else np.nan
            for a, b in zip(vals[:-1], vals[1:])
        ]
    return rates


# ----------------------------------------------------------------------
# discrete norms


def discrete_norm_vk(fld: SpaceTimeField, fes: FeSpace, grid: TimeGrid) -> float:
    """Graph norm of a discrete field: time-derivative dual part, gradient
    part, and the lumped norm of the carried endpoint value."""
    stiff = assemble_stiffness(fes)
    solver = linsolve.factorize(stiff)
    mu = fes.lumped_mass
    deriv = reconstruct_derivative(fld, grid)
    total = 0.0
    for n in range(grid.num_slabs):
        rhs = mu * deriv[n]
        z, _ = solver.solve(rhs)
        dual_sq = max(float(np.dot(z, rhs)), 0.0)
        grad_sq = float(np.dot(fld.slabs[n], stiff @ fld.slabs[n]))
        total += grid.tau * (dual_sq + grad_sq)
    total += float(np.dot(mu, fld.endpoint**2))
    return float(np.sqrt(total))


def linf_l2_max(fld: SpaceTimeField, fes: FeSpace) -> float:
    """max over t in [0, T] of the (true) L2 norm of the field."""
    mass = assemble_consistent_mass(fes).matrix
    best = float(np.dot(fld.endpoint, mass @ fld.endpoint))
    for s in fld.slabs:
        best = max(best, float(np.dot(s, mass @ s)))
    return float(np.sqrt(best))


class WeightedNormContext:
    """Exponentially weighted norms driving the well-posedness identities.

    Attributes:
        s:      tau * lipschitz^2 / nu.
        gamma:  sqrt((1 + s) / 2); below one iff tau < nu / lipschitz^2.
        a:      (Nk + 1,) weights a_n = (1 + s)^(-n), n = 0..Nk.
    """

    def __init__(self, fes: FeSpace, stab, grid: TimeGrid, lipschitz: float):
        self.fes = fes
        self.grid = grid
        self.lipschitz = float(lipschitz)
        self.nu = float(stab.nu)
        self.s = grid.tau * self.lipschitz**2 / self.nu
        self.gamma = float(np.sqrt((1.0 + self.s) / 2.0))
        self.a = (1.0 + self.s) ** -np.arange(grid.num_slabs + 1, dtype=float)
        self.stiff_a = assemble_diffusion(fes, stab)
        self._solver = linsolve.factorize(self.stiff_a)
        self.mass = assemble_consistent_mass(fes).matrix
        self.mu = fes.lumped_mass

    # -- building blocks -------------------------------------------------
    def riesz_lift(self, w: np.ndarray) -> np.ndarray:
        """z with (A grad z, grad v) = (w, v)_lump for all discrete v."""
        z, _ = self._solver.solve(self.mu * w)
        return z

    def dual_a_sq(self, w: np.ndarray) -> float:
        z = self.riesz_lift(w)
        return max(float(np.dot(z, self.mu * w)), 0.0)

    def grad_a_sq(self, v: np.ndarray) -> float:
        return float(np.dot(v, self.stiff_a @ v))

    def lumped_sq(self, v: np.ndarray) -> float:
        return float(np.dot(self.mu, v * v))

    # -- norms and forms ---------------------------------------------------
    def ynorm_sq(self, fld: SpaceTimeField) -> float:
        """Weighted graph norm of a forward field (squared)."""
        if fld.continuity != "forward":
            raise ValueError("the weighted graph norm applies to forward fields")
        grid = self.grid
        deriv = reconstruct_derivative(fld, grid)
        coef = self.lipschitz**2 / self.nu / (1.0 + self.s)
        total = 0.0
        for n in range(grid.num_slabs):
            total += grid.tau * self.a[n + 1] * (
                self.dual_a_sq(deriv[n])
                + self.grad_a_sq(fld.slabs[n])
                + coef * self.lumped_sq(fld.slabs[n])
            )
        total += self.a[-1] * self.lumped_sq(fld.terminal()) / (1.0 + self.s)
        jumps = fld.jumps()
        for n in range(grid.num_slabs):
            total += self.a[n] * self.lumped_sq(jumps[n]) / (1.0 + self.s)
        return total

    def xnorm_sq(self, slabs: np.ndarray) -> float:
        """Weighted gradient norm of a plain (no endpoint) field (squared)."""
        return float(
            sum(
                self.grid.tau / self.a[n + 1] * self.grad_a_sq(slabs[n])
                for n in range(self.grid.num_slabs)
            )
        )

    def bform(self, fld: SpaceTimeField, v_slabs: np.ndarray) -> float:
        """B(w, v) = sum over slabs of the step term plus the stiffness term."""
        prev = fld.initial()
        total = 0.0
        for n in range(self.grid.num_slabs):
            wn = fld.slabs[n]
            total += float(np.dot((wn - prev) * self.mu, v_slabs[n]))
            total += self.grid.tau * float(np.dot(v_slabs[n], self.stiff_a @ wn))
            prev = wn
        return total

    # -- identity checks ---------------------------------------------------
    def infsup_check(self, fld: SpaceTimeField):
        """Both sides of the parabolic inf-sup identity and their gap.

        The left side evaluates the weighted graph norm from its definition;
        the right side evaluates the supremum at its theoretical maximizer
        a (z + w) and adds the weighted initial term.
        """
        grid = self.grid
        deriv = reconstruct_derivative(fld, grid)
        v_opt = np.empty_like(fld.slabs)
        for n in range(grid.num_slabs):
            z = self.riesz_lift(deriv[n])
            v_opt[n] = self.a[n + 1] * (z + fld.slabs[n])
        xnorm = np.sqrt(self.xnorm_sq(v_opt))
        sup = self.bform(fld, v_opt) / xnorm if xnorm > 0 else 0.0
        rhs = sup**2 + self.lumped_sq(fld.initial()) / (1.0 + self.s)
        lhs = self.ynorm_sq(fld)
        gap = abs(lhs - rhs) / max(lhs, 1e-300)
        return lhs, rhs, gap

    def tech_slack(self, fld: SpaceTimeField) -> float:
        """Slack of the weighted L2 bound (nonnegative up to round-off)."""
        grid = self.grid
        lhs = sum(
            grid.tau
            * self.lipschitz**2
            / self.nu
            * self.a[n + 1]
            * float(np.dot(fld.slabs[n], self.mass @ fld.slabs[n]))
            for n in range(grid.num_slabs)
        )
        rhs = self.gamma**2 * self.ynorm_sq(fld) + 0.5 * self.lumped_sq(fld.initial())
        return float(rhs - lhs)


def infsup_check(fld: SpaceTimeField, fes: FeSpace, stab, grid: TimeGrid,
                 lipschitz: float):
    """(lhs, rhs, gap) of the inf-sup identity for a forward field."""
    return WeightedNormContext(fes, stab, grid, lipschitz).infsup_check(fld)


def tech_inequality_check(fld: SpaceTimeField, fes: FeSpace, stab,
                          grid: TimeGrid, lipschitz: float) -> float:
    """Slack of the weighted L2 bound for a forward field."""
    return WeightedNormContext(fes, stab, grid, lipschitz).tech_slack(fld)
