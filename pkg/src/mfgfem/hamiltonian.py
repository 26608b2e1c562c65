"""Convex Hamiltonians and measurable subgradient selections.

A Hamiltonian here is ``H(t, x, p) = sup over controls of (b . p - f)``,
convex and Lipschitz in p with constant equal to the largest drift magnitude.
Where H is not differentiable the scheme only needs *some* selection from the
convex subdifferential in p; selections are evaluated per element and per
time slab on the gradient of the discrete value function, which is constant
there, so the selected drift is an exact subgradient wherever H itself does
not depend on (t, x).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

#: gradients smaller than this are treated as zero by the eikonal selector
EPS_GRAD = 1e-14


@dataclass(frozen=True)
class Hamiltonian:
    """Vectorized Hamiltonian with a subgradient selector.

    ``value(t, x, p)`` and ``select(t, x, p)`` take a scalar time, points
    x of shape (n, 2) and gradients p of shape (n, 2); they return (n,) values
    and (n, 2) drifts.  Every selected drift z satisfies the subgradient
    inequality H(t, x, q) >= H(t, x, p) + z . (q - p) and |z| <= lipschitz.
    """

    value: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    select: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    lipschitz: float


@dataclass(frozen=True)
class TransportField:
    """Per-slab, per-element constant drift vectors, shape (Nk, nt, 2)."""

    values: np.ndarray
    lipschitz: float

    @property
    def num_slabs(self) -> int:
        return self.values.shape[0]

    def max_magnitude(self) -> float:
        return float(np.sqrt((self.values ** 2).sum(axis=-1)).max(initial=0.0))


def eikonal() -> Hamiltonian:
    """H(p) = |p| with the radial selector p / |p| (zero at p = 0).

    The zero vector is a valid subgradient at p = 0 (the subdifferential
    there is the whole closed unit ball) and is the symmetric choice.
    """

    def value(t, x, p):
        p = np.atleast_2d(p)
        return np.hypot(p[:, 0], p[:, 1])

    def select(t, x, p):
        p = np.atleast_2d(p)
        mag = np.hypot(p[:, 0], p[:, 1])
        safe = np.maximum(mag, EPS_GRAD)
        out = p / safe[:, None]
        out[mag <= EPS_GRAD] = 0.0
        return out

    return Hamiltonian(value=value, select=select, lipschitz=1.0)


def _control_term(term, t, x):
    if callable(term):
        return np.asarray(term(t, x), dtype=float)
    return np.asarray(term, dtype=float)


def discrete_control(controls, lipschitz: float | None = None,
                     sample_points: int = 21) -> Hamiltonian:
    """Hamiltonian of a finite control set: H = max over (b, f) of b.p - f.

    ``controls`` is a nonempty list of pairs ``(b, f)``; each drift b is a
    2-vector or a callable ``b(t, x) -> (n, 2)`` and each running cost f is a
    scalar or callable ``f(t, x) -> (n,)``.  The selector returns the drift of
    the maximizing control, ties broken by the lowest control index.  When no
    Lipschitz bound is supplied it is estimated as the largest sampled drift
    magnitude over a space-time grid on the unit square and t in [0, 1].
    """
    if not controls:
        raise ValueError("need at least one control")

    def drifts(t, x):
        x = np.atleast_2d(x)
        out = np.empty((len(controls), len(x), 2))
        for a, (b, _) in enumerate(controls):
            out[a] = np.broadcast_to(_control_term(b, t, x), (len(x), 2))
        return out

    def costs(t, x):
        x = np.atleast_2d(x)
        out = np.empty((len(controls), len(x)))
        for a, (_, f) in enumerate(controls):
            out[a] = np.broadcast_to(_control_term(f, t, x), (len(x),))
        return out

    if lipschitz is None:
        side = np.linspace(0.0, 1.0, sample_points)
        xx, yy = np.meshgrid(side, side)
        grid = np.column_stack([xx.ravel(), yy.ravel()])
        lipschitz = 0.0
        for t in np.linspace(0.0, 1.0, 5):
            b = drifts(t, grid)
            lipschitz = max(lipschitz, float(np.sqrt((b ** 2).sum(-1)).max()))

    def value(t, x, p):
        p = np.atleast_2d(p)
        gains = np.einsum("anx,nx->an", drifts(t, x), p) - costs(t, x)
        return gains.max(axis=0)

    def select(t, x, p):
        p = np.atleast_2d(p)
        b = drifts(t, x)
        gains = np.einsum("anx,nx->an", b, p) - costs(t, x)
        best = gains.argmax(axis=0)  # argmax returns the first (lowest) index
        return b[best, np.arange(len(p))]

    return Hamiltonian(value=value, select=select, lipschitz=float(lipschitz))


def select_field(ham: Hamiltonian, u_field, fes, grid) -> TransportField:
    """Per-slab, per-element selection from the subdifferential at grad(u).

    For slab n the selection is evaluated at the slab midpoint and element
    centroids on the (elementwise constant) gradient of the slab value of u.
    """
    from .assembly import element_gradients

    values = np.empty((grid.num_slabs, fes.mesh.num_triangles, 2))
    for n in range(grid.num_slabs):
        g = element_gradients(fes, u_field.slabs[n])
        values[n] = ham.select(grid.midpoints[n], fes.centroids, g)
    return TransportField(values=values, lipschitz=ham.lipschitz)
