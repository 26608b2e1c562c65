"""Problem data: couplings, terminal costs, sources, and the benchmark case.

The benchmark problem lives on the unit square with horizon T = 1, unit
viscosity and the eikonal Hamiltonian H(p) = |p|.  Its data are reverse
engineered from the smooth pair

    u(t, x, y) = (2 arctan t + 1) x y (e^1.2 - e^(1.2 x)) (e^0.7 - e^(0.7 y)),
    m(t, x, y) = (tanh(t)/4 + 1) sinh(x) sinh(1 - x) y ln(2 - y),

both vanishing on the boundary, with m > 0 inside.  The couplings are local:
F[m] = m + F0 and S[m] = tanh(m) + S0, where F0, S0 and the source G are the
closed forms that make (u, m) solve the system with drift grad u / |grad u|.
All derivatives are hand-derived and hard-coded; finite-difference residual
checks (see ``hjb_residual`` / ``kfp_residual``) guard the derivation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .assembly import (
    FeSpace,
    assemble_consistent_mass,
    assemble_flux_load,
    assemble_load,
    lumped_riesz,
    point_values,
)
from .hamiltonian import Hamiltonian, eikonal
from .quadrature import gauss_legendre
from .timestepping import TimeGrid

_E12 = np.exp(1.2)
_E07 = np.exp(0.7)


# ----------------------------------------------------------------------
# couplings


class LocalCoupling:
    """Local coupling F[m](t, x) = m(t, x) + F0(t, x).

    Strictly monotone: the pairing of F[m1] - F[m2] with m1 - m2 is the
    squared space-time L2 norm of the difference.
    """

    def __init__(self, f0: Optional[Callable] = None):
        self.f0 = f0

    def bind(self, fes: FeSpace, grid: TimeGrid) -> "BoundLocalCoupling":
        return BoundLocalCoupling(self, fes, grid)


class BoundLocalCoupling:
    """Coupling loads on a fixed space/grid; data part precomputed."""

    def __init__(self, coupling: LocalCoupling, fes: FeSpace, grid: TimeGrid):
        self.fes = fes
        self.grid = grid
        self.mass = assemble_consistent_mass(fes).matrix
        if coupling.f0 is None:
            self.data_loads = np.zeros((grid.num_slabs, fes.ndof))
        else:
            self.data_loads = slab_loads(fes, grid, coupling.f0)

    def loads(self, m_slabs: np.ndarray) -> np.ndarray:
        """Slab-average loads of F[m] against the interior basis."""
        return self.data_loads + m_slabs @ self.mass.T


class TanhTerminalCost:
    """Terminal cost S[m] = tanh(m) + S0, monotone since tanh is increasing."""

    def __init__(self, s0: Optional[Callable] = None):
        self.s0 = s0

    def project(self, fes: FeSpace, m_nodal: np.ndarray) -> np.ndarray:
        """Lumped Riesz projection of S applied to the P1 density.

        tanh composes with the pointwise values of the nodal interpolant
        during quadrature.
        """
        vals = np.tanh(point_values(fes, m_nodal))
        if self.s0 is not None:
            vals = vals + self.s0(fes.quad_xy[..., 0], fes.quad_xy[..., 1])
        return lumped_riesz(fes, vals)


def local_coupling(f0_fn, s0_fn) -> tuple[LocalCoupling, TanhTerminalCost]:
    """The benchmark coupling pair F[m] = m + F0, S[m] = tanh(m) + S0."""
    return LocalCoupling(f0_fn), TanhTerminalCost(s0_fn)


def slab_loads(fes: FeSpace, grid: TimeGrid, f, npoints: int = 3) -> np.ndarray:
    """Slab averages (1/tau) int_In (f(t), hat_i) dt by Gauss quadrature.

    ``f(t, x, y)`` is evaluated at ``npoints`` Gauss times per slab and
    degree-6 points in space; the integrand is smooth so the quadrature error
    sits far below the scheme's first-order accuracy.
    """
    out = np.zeros((grid.num_slabs, fes.ndof))
    xq, yq = fes.quad_xy[..., 0], fes.quad_xy[..., 1]
    for n in range(grid.num_slabs):
        tq, wq = gauss_legendre(npoints, grid.times[n], grid.times[n + 1])
        for t, w in zip(tq, wq):
            out[n] += w * assemble_load(fes, f(t, xq, yq))
        out[n] /= grid.tau
    return out


def project_initial(fes: FeSpace, m0) -> np.ndarray:
    """Initial density as the lumped Riesz projection of m0 (zero if None)."""
    if m0 is None:
        return np.zeros(fes.ndof)
    return lumped_riesz(fes, m0)


# ----------------------------------------------------------------------
# problem container


@dataclass(frozen=True)
class ProblemSpec:
    """Everything a coupled solve needs: operators are data, not geometry."""

    nu: float
    horizon: float
    hamiltonian: Hamiltonian
    coupling: LocalCoupling
    terminal: TanhTerminalCost
    source: Optional[Callable]  # g(t, x, y), slab-averaged into loads
    m0: Optional[Callable]  # m0(x, y)

    def __post_init__(self):
        if self.nu <= 0 or self.horizon <= 0:
            raise ValueError("need positive viscosity and horizon")


def trivial_problem() -> ProblemSpec:
    """All-zero data; the coupled solution is identically zero."""
    return ProblemSpec(
        nu=1.0,
        horizon=1.0,
        hamiltonian=eikonal(),
        coupling=LocalCoupling(None),
        terminal=TanhTerminalCost(None),
        source=None,
        m0=None,
    )


# ----------------------------------------------------------------------
# the manufactured benchmark


class ManufacturedCase:
    """Closed forms of the benchmark pair and all data derived from it."""

    nu = 1.0
    horizon = 1.0

    # -- value function u = A(t) X(x) Y(y) ------------------------------
    @staticmethod
    def _A(t):
        return 2.0 * np.arctan(t) + 1.0

    @staticmethod
    def _A_t(t):
        return 2.0 / (1.0 + t * t)

    @staticmethod
    def _X(x):
        return x * (_E12 - np.exp(1.2 * x))

    @staticmethod
    def _X_x(x):
        return _E12 - np.exp(1.2 * x) * (1.0 + 1.2 * x)

    @staticmethod
    def _X_xx(x):
        return -1.2 * np.exp(1.2 * x) * (2.0 + 1.2 * x)

    @staticmethod
    def _Y(y):
        return y * (_E07 - np.exp(0.7 * y))

    @staticmethod
    def _Y_y(y):
        return _E07 - np.exp(0.7 * y) * (1.0 + 0.7 * y)

    @staticmethod
    def _Y_yy(y):
        return -0.7 * np.exp(0.7 * y) * (2.0 + 0.7 * y)

    def u(self, t, x, y):
        return self._A(t) * self._X(x) * self._Y(y)

    def u_t(self, t, x, y):
        return self._A_t(t) * self._X(x) * self._Y(y)

    def u_x(self, t, x, y):
        return self._A(t) * self._X_x(x) * self._Y(y)

    def u_y(self, t, x, y):
        return self._A(t) * self._X(x) * self._Y_y(y)

    def u_xx(self, t, x, y):
        return self._A(t) * self._X_xx(x) * self._Y(y)

    def u_yy(self, t, x, y):
        return self._A(t) * self._X(x) * self._Y_yy(y)

    def u_xy(self, t, x, y):
        return self._A(t) * self._X_x(x) * self._Y_y(y)

    def lap_u(self, t, x, y):
        return self.u_xx(t, x, y) + self.u_yy(t, x, y)

    def grad_u(self, t, x, y):
        return np.stack([self.u_x(t, x, y), self.u_y(t, x, y)], axis=-1)

    # -- density m = B(t) P(x) Q(y) --------------------------------------
    @staticmethod
    def _B(t):
        return 0.25 * np.tanh(t) + 1.0

    @staticmethod
    def _B_t(t):
        return 0.25 / np.cosh(t) ** 2

    @staticmethod
    def _P(x):
        return np.sinh(x) * np.sinh(1.0 - x)

    @staticmethod
    def _P_x(x):
        return np.sinh(1.0 - 2.0 * x)

    @staticmethod
    def _P_xx(x):
        return -2.0 * np.cosh(1.0 - 2.0 * x)

    @staticmethod
    def _Q(y):
        return y * np.log(2.0 - y)

    @staticmethod
    def _Q_y(y):
        return np.log(2.0 - y) - y / (2.0 - y)

    @staticmethod
    def _Q_yy(y):
        return -1.0 / (2.0 - y) - 2.0 / (2.0 - y) ** 2

    def m(self, t, x, y):
        return self._B(t) * self._P(x) * self._Q(y)

    def m_t(self, t, x, y):
        return self._B_t(t) * self._P(x) * self._Q(y)

    def m_x(self, t, x, y):
        return self._B(t) * self._P_x(x) * self._Q(y)

    def m_y(self, t, x, y):
        return self._B(t) * self._P(x) * self._Q_y(y)

    def lap_m(self, t, x, y):
        return self._B(t) * (
            self._P_xx(x) * self._Q(y) + self._P(x) * self._Q_yy(y)
        )

    def m0(self, x, y):
        return self.m(0.0, x, y)

    # -- derived transport and data ---------------------------------------
    def b_star(self, t, x, y):
        """Unique selected drift grad u / |grad u| (zero gradient never
        occurs on the sampled sets used in practice; guarded anyway)."""
        g = self.grad_u(t, x, y)
        mag = np.sqrt((g**2).sum(axis=-1))
        return g / np.maximum(mag, 1e-300)[..., None]

    def div_b_star(self, t, x, y):
        ux, uy = self.u_x(t, x, y), self.u_y(t, x, y)
        uxx, uyy = self.u_xx(t, x, y), self.u_yy(t, x, y)
        uxy = self.u_xy(t, x, y)
        g2 = ux * ux + uy * uy
        g = np.sqrt(g2)
        quad = ux * ux * uxx + 2.0 * ux * uy * uxy + uy * uy * uyy
        return (uxx + uyy) / g - quad / (g2 * g)

    def f0(self, t, x, y):
        """Data part of F so that u solves its equation with F[m] = m + F0."""
        g = np.sqrt(self.u_x(t, x, y) ** 2 + self.u_y(t, x, y) ** 2)
        return -self.u_t(t, x, y) - self.nu * self.lap_u(t, x, y) + g - self.m(t, x, y)

    def s0(self, x, y):
        """Data part of S so that u(T) = tanh(m(T)) + S0."""
        return self.u(self.horizon, x, y) - np.tanh(self.m(self.horizon, x, y))

    def g_source(self, t, x, y):
        """Source making m solve its transport equation under b_star."""
        div_mb = (
            self.m_x(t, x, y) * self.b_star(t, x, y)[..., 0]
            + self.m_y(t, x, y) * self.b_star(t, x, y)[..., 1]
            + self.m(t, x, y) * self.div_b_star(t, x, y)
        )
        return self.m_t(t, x, y) - self.nu * self.lap_m(t, x, y) - div_mb

    # -- finite-difference residual oracles -------------------------------
    # Sixth-order central differences of the closed forms of u and m alone;
    # they validate the hand-coded derivatives and the derived data F0, G.
    # Both solution factors extend analytically past the closed square, so
    # the stencils may poke slightly outside the domain.

    _FD1 = (-1 / 60, 3 / 20, -3 / 4, 0.0, 3 / 4, -3 / 20, 1 / 60)
    _FD2 = (1 / 90, -3 / 20, 3 / 2, -49 / 18, 3 / 2, -3 / 20, 1 / 90)

    @classmethod
    def _fd1(cls, f, s, h):
        return sum(c * f(s + k * h) for k, c in zip(range(-3, 4), cls._FD1)) / h

    @classmethod
    def _fd2(cls, f, s, h):
        return sum(c * f(s + k * h) for k, c in zip(range(-3, 4), cls._FD2)) / (h * h)

    def hjb_residual(self, t, x, y, h: float = 1e-2):
        """-du/dt - nu lap u + |grad u| - (m + F0), derivatives by FD."""
        ut = self._fd1(lambda s: self.u(s, x, y), t, h)
        ux = self._fd1(lambda s: self.u(t, s, y), x, h)
        uy = self._fd1(lambda s: self.u(t, x, s), y, h)
        uxx = self._fd2(lambda s: self.u(t, s, y), x, h)
        uyy = self._fd2(lambda s: self.u(t, x, s), y, h)
        grad = np.sqrt(ux * ux + uy * uy)
        return -ut - self.nu * (uxx + uyy) + grad - (self.m(t, x, y) + self.f0(t, x, y))

    def kfp_residual(self, t, x, y, h: float = 1e-2):
        """dm/dt - nu lap m - div(m b_star) - G, derivatives by FD.

        The divergence expands as grad m . b + m div b with b and div b
        built from FD derivatives of u only; division by |grad u| makes the
        quotients ill conditioned near the single interior critical point of
        u, so callers should keep |grad u| above ~0.1 on sampled points (the
        pointwise identity is vacuous on that measure-zero set anyway).
        """
        mt = self._fd1(lambda s: self.m(s, x, y), t, h)
        mx = self._fd1(lambda s: self.m(t, s, y), x, h)
        my = self._fd1(lambda s: self.m(t, x, s), y, h)
        mxx = self._fd2(lambda s: self.m(t, s, y), x, h)
        myy = self._fd2(lambda s: self.m(t, x, s), y, h)

        ux = self._fd1(lambda s: self.u(t, s, y), x, h)
        uy = self._fd1(lambda s: self.u(t, x, s), y, h)
        uxx = self._fd2(lambda s: self.u(t, s, y), x, h)
        uyy = self._fd2(lambda s: self.u(t, x, s), y, h)
        uxy = self._fd1(lambda s: self._fd1(lambda r: self.u(t, r, s), x, h), y, h)
        g2 = ux * ux + uy * uy
        g = np.sqrt(g2)
        divb = (uxx + uyy) / g - (ux * ux * uxx + 2 * ux * uy * uxy + uy * uy * uyy) / (g2 * g)
        div_mb = (mx * ux + my * uy) / g + self.m(t, x, y) * divb
        return mt - self.nu * (mxx + myy) - div_mb - self.g_source(t, x, y)


def manufactured() -> tuple[ProblemSpec, ManufacturedCase]:
    """The benchmark problem and its closed-form solution."""
    case = ManufacturedCase()
    coupling, terminal = local_coupling(case.f0, case.s0)
    spec = ProblemSpec(
        nu=case.nu,
        horizon=case.horizon,
        hamiltonian=eikonal(),
        coupling=coupling,
        terminal=terminal,
        source=case.g_source,
        m0=case.m0,
    )
    return spec, case
