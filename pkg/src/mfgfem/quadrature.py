"""Quadrature rules: symmetric triangle rules and Gauss-Legendre in time.

Triangle rules are given in barycentric coordinates with weights normalized
to sum to one, so integrals are ``area * sum_q w_q f(x_q)``.  The degree-6
rule is the 12-point rule of Dunavant (1985); all its weights are positive.
"""

from __future__ import annotations

import numpy as np

_RULES: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _symmetric_orbit(points, weights, alpha, w, kind):
    if kind == 3:  # (alpha, beta, beta) and permutations
        beta = 0.5 * (1.0 - alpha)
        points += [
            (alpha, beta, beta),
            (beta, alpha, beta),
            (beta, beta, alpha),
        ]
        weights += [w] * 3
    elif kind == 6:  # (a, b, c) with all coordinates distinct
        a, b = alpha
        c = 1.0 - a - b
        points += [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]
        weights += [w] * 6
    else:
        raise ValueError(kind)


def triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric points (nq, 3) and weights (nq,) exact to ``degree``."""
    if degree in _RULES:
        return _RULES[degree]
    pts: list[tuple[float, float, float]] = []
    wts: list[float] = []
    if degree <= 1:
        pts, wts = [(1 / 3, 1 / 3, 1 / 3)], [1.0]
    elif degree == 2:
        _symmetric_orbit(pts, wts, 2 / 3, 1 / 3, 3)
    elif degree <= 6:
        _symmetric_orbit(pts, wts, 0.501426509658179, 0.116786275726379, 3)
        _symmetric_orbit(pts, wts, 0.873821971016996, 0.050844906370207, 3)
        _symmetric_orbit(
            pts, wts, (0.053145049844816, 0.310352451033785), 0.082851075618374, 6
        )
    else:
        raise ValueError(f"no triangle rule of degree {degree}")
    rule = (np.array(pts, dtype=float), np.array(wts, dtype=float))
    _RULES[degree] = rule
    return rule


def gauss_legendre(npoints: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on the interval (a, b)."""
    x, w = np.polynomial.legendre.leggauss(npoints)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w
