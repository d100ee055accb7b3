import numpy as np
import pytest

from dgheat.quadrature import interval_rule, triangle_rule


@pytest.mark.parametrize("degree", range(0, 11))
def test_triangle_rule_exact_for_monomials(degree):
    pts, w = triangle_rule(degree)
    assert np.all(w > 0)
    from math import factorial
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            exact = factorial(a) * factorial(b) / factorial(a + b + 2)
            got = np.sum(w * pts[:, 0] ** a * pts[:, 1] ** b)
            assert got == pytest.approx(exact, rel=1e-13, abs=1e-15)


def test_interval_rule_on_unit_interval():
    x, w = interval_rule(5)
    assert np.all((x > 0) & (x < 1))
    for p in range(10):
        assert np.sum(w * x ** p) == pytest.approx(1.0 / (p + 1), rel=1e-14)


def test_rules_are_read_only():
    pts, w = triangle_rule(4)
    with pytest.raises(ValueError):
        w[0] = 1.0
