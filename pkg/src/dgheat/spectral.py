"""Dirichlet eigenfunction series on an axis-aligned rectangle.

Eigenpairs of -Laplace on ``[x0, x1] x [y0, y1]``::

    e_mn = 2 / sqrt(Lx Ly) * sin(m pi (x - x0) / Lx) * sin(n pi (y - y0) / Ly)
    lambda_mn = pi^2 (m^2 / Lx^2 + n^2 / Ly^2)

The exact solution with data ``v0`` is ``sum c_mn exp(-lambda t) e_mn`` and
the dG(r) time-discrete solution replaces the exponential by the product of
one-step transfer functions.  Series are truncated by an analytic tail bound.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dg import TimePartition, transfer_bound, transfer_function
from .measure import MeasureData
from .mesh import Rect
from .quadrature import interval_rule

T_MIN = 1e-4
DEFAULT_TOL = 1e-12
MAX_MODES = 600
_CHUNK = 64


class TruncationError(ValueError):
    pass


def _tail(envelope: Callable[[np.ndarray], np.ndarray], K: int, lam_scale: float,
          power: float | None, log_const: float | None) -> float:
    """``sum_{j > K} (2j - 1) envelope(pi^2 j^2 / Lmax^2)``.

    Modes with ``max(m, n) = j`` number ``2j - 1`` and have eigenvalue at least
    ``lam_scale * j^2``.  The explicit sum runs to ``J``; beyond ``J`` a
    power-law envelope ``exp(log_const) * lam^-power`` is summed in closed form.
    """
    J = max(4 * K, K + 4096)
    j = np.arange(K + 1, J + 1, dtype=float)
    total = float(np.sum((2 * j - 1) * envelope(lam_scale * j * j)))
    if power is not None:
        if power <= 1.0:
            return math.inf
        # sum_{j>J} 2j C (c j^2)^-p <= 2 C c^-p J^(2-2p) / (2p - 2)
        log_rem = log_const - power * math.log(lam_scale) + (2 - 2 * power) * math.log(J) + math.log(2 / (2 * power - 2))
        total += math.exp(min(log_rem, 700.0))
    return total


@dataclass(frozen=True)
class SeriesSolution:
    """Truncated series ``sum a_mn e_mn`` with ``a = c_hat * decay``.

    ``coefficients`` holds ``a`` as a (K, K) array indexed ``[m-1, n-1]``;
    ``tail_bound`` bounds the sup-norm of the discarded modes.
    """

    domain: Rect
    coefficients: np.ndarray
    tail_bound: float = 0.0

    @property
    def K(self) -> int:
        return self.coefficients.shape[0]

    def _lengths(self):
        x0, x1, y0, y1 = self.domain
        return x0, y0, x1 - x0, y1 - y0

    def eigenvalues(self) -> np.ndarray:
        _, _, lx, ly = self._lengths()
        k = np.arange(1, self.K + 1)
        return np.pi ** 2 * ((k[:, None] / lx) ** 2 + (k[None, :] / ly) ** 2)

    def _order(self) -> np.ndarray:
        lam = self.eigenvalues().ravel()
        idx = np.arange(lam.size)
        return np.lexsort((idx, lam))

    def _sum(self, fx: np.ndarray, fy: np.ndarray) -> np.ndarray:
        """Compensated sum over modes, chunked in increasing-eigenvalue order."""
        K = self.K
        order = self._order()
        a = self.coefficients.ravel()
        s = np.zeros(fx.shape[:-1] if fx.ndim > 1 else ())
        comp = np.zeros_like(s)
        for start in range(0, order.size, _CHUNK):
            sel = order[start:start + _CHUNK]
            m, n = sel // K, sel % K
            part = (fx[..., m] * fy[..., n]) @ a[sel]
            y = part - comp
            t = s + y
            comp = (t - s) - y
            s = t
        return s

    def _trig(self, pts: np.ndarray, deriv: bool = False):
        x0, y0, lx, ly = self._lengths()
        k = np.arange(1, self.K + 1)
        ax = np.pi * k / lx
        ay = np.pi * k / ly
        X = (pts[:, 0:1] - x0) * ax
        Y = (pts[:, 1:2] - y0) * ay
        nrm = 2.0 / math.sqrt(lx * ly)
        sx, sy = nrm * np.sin(X), np.sin(Y)
        if not deriv:
            return sx, sy
        return sx, sy, nrm * ax * np.cos(X), ay * np.cos(Y)

    def value(self, points) -> np.ndarray | float:
        pts = np.asarray(points, dtype=float)
        p2 = pts.reshape(-1, 2)
        sx, sy = self._trig(p2)
        out = self._sum(sx, sy)
        return float(out[0]) if pts.ndim == 1 else out

    def gradient(self, points) -> np.ndarray:
        p2 = np.asarray(points, dtype=float).reshape(-1, 2)
        sx, sy, cx, cy = self._trig(p2, deriv=True)
        return np.column_stack([self._sum(cx, sy), self._sum(sx, cy)])

    def l2_norm(self) -> float:
        a = self.coefficients.ravel()[self._order()]
        return math.sqrt(math.fsum(a * a))

    def laplacian_l2_norm(self) -> float:
        order = self._order()
        a = (self.coefficients * self.eigenvalues()).ravel()[order]
        return math.sqrt(math.fsum(a * a))

    def __sub__(self, other: "SeriesSolution") -> "SeriesSolution":
        K = max(self.K, other.K)
        a = np.zeros((K, K))
        a[: self.K, : self.K] += self.coefficients
        a[: other.K, : other.K] -= other.coefficients
        return SeriesSolution(self.domain, a, self.tail_bound + other.tail_bound)


def data_coefficients(v0: MeasureData, K: int) -> np.ndarray:
    """``c_mn = <v0, e_mn>`` for ``1 <= m, n <= K`` as a (K, K) array."""
    x0, x1, y0, y1 = v0.domain
    lx, ly = x1 - x0, y1 - y0
    nrm = 2.0 / math.sqrt(lx * ly)
    k = np.arange(1, K + 1)
    c = np.zeros((K, K))
    for x, y, w in v0.atoms:
        c += w * nrm * np.outer(np.sin(k * np.pi * (x - x0) / lx), np.sin(k * np.pi * (y - y0) / ly))
    if v0.density is not None:
        bx0, bx1, by0, by1 = v0.density.support
        nq = max(96, 2 * K + 32)
        t, wt = interval_rule(nq)
        xs, wx = bx0 + (bx1 - bx0) * t, (bx1 - bx0) * wt
        ys, wy = by0 + (by1 - by0) * t, (by1 - by0) * wt
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        F = v0.density(np.column_stack([X.ravel(), Y.ravel()])).reshape(nq, nq)
        Sx = np.sin(np.outer(xs - x0, k) * np.pi / lx)
        Sy = np.sin(np.outer(ys - y0, k) * np.pi / ly)
        c += nrm * Sx.T @ (F * np.outer(wx, wy)) @ Sy
    return c


def _lam_scale(domain: Rect) -> tuple[float, float]:
    x0, x1, y0, y1 = domain
    lx, ly = x1 - x0, y1 - y0
    return np.pi ** 2 / max(lx, ly) ** 2, 4.0 / (lx * ly)


def _choose_cutoff(v0: MeasureData, envelope, power, log_const, tol: float, squared: bool = False) -> tuple[int, float]:
    lam_scale, e2 = _lam_scale(v0.domain)
    tv = v0.total_variation
    if tv == 0.0:
        return 1, 0.0

    def bound(K):
        if squared:
            return math.sqrt(e2 * tv * tv * _tail(lambda l: envelope(l) ** 2, K, lam_scale,
                                                   None if power is None else 2 * power,
                                                   None if log_const is None else 2 * log_const))
        return e2 * tv * _tail(envelope, K, lam_scale, power, log_const)

    K = 4
    while bound(K) >= tol:
        if K >= MAX_MODES:
            raise TruncationError(f"mode cutoff {MAX_MODES} cannot meet tolerance {tol:g} "
                                  f"(tail bound {bound(K):.3e}); use larger t or more time steps")
        K = min(MAX_MODES, int(K * 1.25) + 1)
    return K, bound(K)


def _check_time(t: float, t_min: float) -> None:
    if t < t_min:
        raise TruncationError(f"t={t:g} below the series truncation limit t_min={t_min:g}")


def exact_solution(v0: MeasureData, t: float, tol: float = DEFAULT_TOL, t_min: float = T_MIN,
                   norm_only: bool = False) -> SeriesSolution:
    _check_time(t, t_min)
    K, tail = _choose_cutoff(v0, lambda l: np.exp(-l * t), None, None, tol, squared=norm_only)
    c = data_coefficients(v0, K)
    s = SeriesSolution(v0.domain, c, tail)
    return SeriesSolution(v0.domain, c * np.exp(-s.eigenvalues() * t), tail)


def semidiscrete_solution(v0: MeasureData, partition: TimePartition, r: int, tol: float = DEFAULT_TOL,
                          t_min: float = T_MIN) -> SeriesSolution:
    """Exact-in-space dG(r) solution at ``T = partition.T``."""
    _check_time(partition.T, t_min)
    steps = partition.steps

    def envelope(lam):
        out = np.ones_like(lam)
        for k in steps:
            out *= transfer_bound(r, lam * k)
        return out

    # each factor <= (r+1) / (lam k): power-law envelope with exponent M
    log_const = float(np.sum(np.log((r + 1.0) / steps)))
    K, tail = _choose_cutoff(v0, envelope, float(len(steps)), log_const, tol)
    c = data_coefficients(v0, K)
    s = SeriesSolution(v0.domain, c, tail)
    lam = s.eigenvalues()
    rr = transfer_function(r)
    decay = np.ones_like(lam)
    for k in steps:
        decay *= rr(lam * k)
    return SeriesSolution(v0.domain, c * decay, tail)


def exact_value(v0: MeasureData, t: float, p, tol: float = DEFAULT_TOL, t_min: float = T_MIN):
    return exact_solution(v0, t, tol, t_min).value(p)


def exact_l2_norm(v0: MeasureData, t: float, tol: float = DEFAULT_TOL, t_min: float = T_MIN) -> float:
    return exact_solution(v0, t, tol, t_min, norm_only=True).l2_norm()


def semidiscrete_value(v0: MeasureData, partition: TimePartition, r: int, point, tol: float = DEFAULT_TOL,
                       t_min: float = T_MIN):
    return semidiscrete_solution(v0, partition, r, tol, t_min).value(point)


def restart_check(v0: MeasureData, tau: float, T: float, p, tol: float = DEFAULT_TOL,
                  t_min: float = T_MIN) -> tuple[float, float]:
    """Direct value at ``T`` and the value after re-expanding ``v(tau)`` numerically and evolving ``T - tau``."""
    if not 0.0 < tau < T:
        raise ValueError("need 0 < tau < T")
    _check_time(tau, t_min)
    _check_time(T - tau, t_min)
    direct = exact_value(v0, T, p, tol, t_min)
    mid = exact_solution(v0, tau, tol, t_min)
    # the heat semigroup is an L1 contraction, so TV(v0) still bounds the restarted data
    K2, _ = _choose_cutoff(v0, lambda l: np.exp(-l * (T - tau)), None, None, tol)
    x0, x1, y0, y1 = v0.domain
    lx, ly = x1 - x0, y1 - y0
    nq = max(128, 2 * max(K2, mid.K) + 32)
    t, wt = interval_rule(nq)
    xs, ys = x0 + lx * t, y0 + ly * t
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    vals = mid.value(np.column_stack([X.ravel(), Y.ravel()])).reshape(nq, nq)
    k = np.arange(1, K2 + 1)
    Sx = np.sin(np.outer(xs - x0, k) * np.pi / lx)
    Sy = np.sin(np.outer(ys - y0, k) * np.pi / ly)
    W = np.outer(lx * wt, ly * wt)
    b = 2.0 / math.sqrt(lx * ly) * Sx.T @ (vals * W) @ Sy
    s = SeriesSolution(v0.domain, b)
    restarted = SeriesSolution(v0.domain, b * np.exp(-s.eigenvalues() * (T - tau))).value(p)
    return direct, restarted


def write_reference_csv(path, v0: MeasureData, times, points, tol: float = DEFAULT_TOL) -> None:
    """Dump exact reference values for regression pinning."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "y", "value"])
        for t in times:
            vals = exact_solution(v0, t, tol).value(pts)
            for (x, y), v in zip(pts, vals):
                w.writerow([repr(float(t)), repr(float(x)), repr(float(y)), repr(float(v))])
