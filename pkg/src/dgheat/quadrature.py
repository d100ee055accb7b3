"""Quadrature rules on the reference triangle and the unit interval.

Reference triangle has vertices (0, 0), (1, 0), (0, 1); weights sum to 1/2.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(points, weights)`` exact for polynomials up to ``degree``.

    Degree <= 2 uses the symmetric 3-point edge-midpoint rule, degree <= 4 the
    symmetric 6-point rule.  Higher degrees fall back to a collapsed
    Gauss-Jacobi (Stroud conical product) rule.
    """
    if degree <= 2:
        pts = np.array([[0.5, 0.0], [0.5, 0.5], [0.0, 0.5]])
        wts = np.full(3, 1.0 / 6.0)
    elif degree <= 4:
        a, b = 0.445948490915965, 0.091576213509771
        wa, wb = 0.223381589678011, 0.109951743655322
        pts = np.array([
            [a, a], [1 - 2 * a, a], [a, 1 - 2 * a],
            [b, b], [1 - 2 * b, b], [b, 1 - 2 * b],
        ])
        wts = 0.5 * np.array([wa, wa, wa, wb, wb, wb])
    else:
        n = degree // 2 + 1
        # x-direction absorbs the (1 - y) Jacobian factor
        gx, wx = roots_legendre(n)
        gy, wy = roots_jacobi(n, 1.0, 0.0)
        gx = 0.5 * (gx + 1.0)
        wx = 0.5 * wx
        gy = 0.5 * (gy + 1.0)
        wy = 0.25 * wy
        X, Y = np.meshgrid(gx, gy, indexing="ij")
        WX, WY = np.meshgrid(wx, wy, indexing="ij")
        y = Y.ravel()
        x = X.ravel() * (1.0 - y)
        pts = np.column_stack([x, y])
        wts = (WX * WY).ravel()
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts


@lru_cache(maxsize=None)
def interval_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule with ``n`` points on [0, 1]."""
    x, w = roots_legendre(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w
