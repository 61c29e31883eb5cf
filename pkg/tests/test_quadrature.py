import numpy as np
import pytest
from hypothesis import given, strategies as st
from math import factorial

from hdgbiot.quadrature import UnsupportedDegreeError, edge_rule, triangle_rule


def test_triangle_area():
    r = triangle_rule(0)
    assert abs(r.weights.sum() - 0.5) <= 1e-15


def test_edge_cubic():
    r = edge_rule(3)
    assert abs(r.weights @ r.points ** 3 - 0.25) <= 1e-14


def test_triangle_x2y4():
    r = triangle_rule(6)
    x, y = r.points.T
    # exact value 2! 4! / 8! = 1/840 over the reference triangle (area 1/2)
    assert abs(r.weights @ (x ** 2 * y ** 4) - 1.0 / 840.0) <= 1e-15


@given(st.integers(0, 10), st.integers(0, 10))
def test_triangle_monomials_exact(a, b):
    deg = a + b
    r = triangle_rule(deg)
    x, y = r.points.T
    exact = factorial(a) * factorial(b) / factorial(a + b + 2)
    assert abs(r.weights @ (x ** a * y ** b) - exact) <= 1e-14


@given(st.integers(0, 20))
def test_edge_monomials_exact(k):
    r = edge_rule(k)
    assert abs(r.weights @ r.points ** k - 1.0 / (k + 1)) <= 1e-14


def test_points_inside():
    r = triangle_rule(12)
    x, y = r.points.T
    assert np.all(x > 0) and np.all(y > 0) and np.all(x + y < 1)


def test_unsupported_degree():
    with pytest.raises(UnsupportedDegreeError):
        triangle_rule(-1)
    with pytest.raises(UnsupportedDegreeError):
        edge_rule(10 ** 6)
