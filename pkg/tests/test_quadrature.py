import math

import numpy as np
import pytest

from mfgfem.quadrature import gauss_legendre, triangle_rule


def reference_integral(a, b):
    # integral of x^a y^b over the unit reference triangle
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


@pytest.mark.parametrize("degree", [1, 2, 6])
def test_triangle_rule_exactness(degree):
    bary, w = triangle_rule(degree)
    assert w.sum() == pytest.approx(1.0, abs=1e-14)
    assert (w > 0).all()
    assert np.allclose(bary.sum(axis=1), 1.0, atol=1e-14)
    x, y = bary[:, 1], bary[:, 2]  # reference triangle (0,0)-(1,0)-(0,1)
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            got = 0.5 * float(np.dot(w, x**a * y**b))
            assert got == pytest.approx(reference_integral(a, b), rel=1e-13), (a, b)


def test_triangle_rule_unknown_degree():
    with pytest.raises(ValueError):
        triangle_rule(9)


@pytest.mark.parametrize("npts", [1, 2, 3, 5])
def test_gauss_legendre_polynomial_exactness(npts):
    a, b = 0.3, 1.7
    x, w = gauss_legendre(npts, a, b)
    for p in range(2 * npts):
        exact = (b ** (p + 1) - a ** (p + 1)) / (p + 1)
        assert float(np.dot(w, x**p)) == pytest.approx(exact, rel=1e-13)
