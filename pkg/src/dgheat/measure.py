"""Initial data given as a finite sum of Dirac atoms plus an optional density."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .fem import FeSpace, LOAD_QUADRATURE_DEGREE
from .mesh import Rect, Subdomain, UNIT_SQUARE
from .quadrature import interval_rule


class MeasureError(ValueError):
    pass


@dataclass(frozen=True)
class Density:
    """Smooth density with a declared support box.

    ``func`` maps an (n, 2) array of points to (n,) values and must vanish
    outside ``support``.
    """

    func: Callable[[np.ndarray], np.ndarray]
    support: Rect
    name: str = "density"

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(self.func(np.atleast_2d(pts)), dtype=float)

    def integrate(self, g: Callable[[np.ndarray], np.ndarray] | None = None, n: int = 96) -> float:
        """Tensor Gauss-Legendre integral of ``density * g`` (or ``|density|``) over the support."""
        pts, w = _box_rule(self.support, n)
        vals = self(pts)
        vals = np.abs(vals) if g is None else vals * g(pts)
        return float(np.dot(w, vals))


def _box_rule(box: Rect, n: int) -> tuple[np.ndarray, np.ndarray]:
    x0, x1, y0, y1 = box
    t, w = interval_rule(n)
    xs, wx = x0 + (x1 - x0) * t, (x1 - x0) * w
    ys, wy = y0 + (y1 - y0) * t, (y1 - y0) * w
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()]), np.outer(wx, wy).ravel()


def eigenmode_density(m: int = 1, n: int = 1, amplitude: float = 1.0, domain: Rect = UNIT_SQUARE) -> Density:
    """``amplitude`` times the L2-normalised Dirichlet eigenfunction (m, n) of ``domain``."""
    x0, x1, y0, y1 = domain
    lx, ly = x1 - x0, y1 - y0
    c = amplitude * 2.0 / np.sqrt(lx * ly)

    def f(p):
        return c * np.sin(m * np.pi * (p[:, 0] - x0) / lx) * np.sin(n * np.pi * (p[:, 1] - y0) / ly)

    return Density(f, domain, name=f"eigenmode({m},{n})")


def bump_density(box: Rect, amplitude: float = 1.0) -> Density:
    """Smooth cos^2 bump supported on ``box``, C^1 across its edges."""
    x0, x1, y0, y1 = box

    def f(p):
        sx = np.clip((p[:, 0] - x0) / (x1 - x0), 0.0, 1.0)
        sy = np.clip((p[:, 1] - y0) / (y1 - y0), 0.0, 1.0)
        return amplitude * np.sin(np.pi * sx) ** 2 * np.sin(np.pi * sy) ** 2

    return Density(f, box, name="bump")


DENSITY_PRESETS = {
    "eigenmode": eigenmode_density,
    "bump": bump_density,
}


@dataclass(frozen=True)
class MeasureData:
    """``sum_j w_j delta_{x_j}`` plus an optional density."""

    atoms: tuple[tuple[float, float, float], ...] = ()
    density: Density | None = None
    domain: Rect = UNIT_SQUARE
    _tv_cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        atoms = tuple((float(x), float(y), float(w)) for x, y, w in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        x0, x1, y0, y1 = self.domain
        tol = 1e-12 * max(x1 - x0, y1 - y0)
        for x, y, _ in atoms:
            if not (x0 + tol < x < x1 - tol and y0 + tol < y < y1 - tol):
                raise MeasureError(f"atom at ({x}, {y}) is not strictly inside {self.domain}")

    @classmethod
    def dirac(cls, x: float, y: float, weight: float = 1.0, domain: Rect = UNIT_SQUARE) -> "MeasureData":
        return cls(((x, y, weight),), domain=domain)

    @property
    def has_atoms(self) -> bool:
        return len(self.atoms) > 0

    @property
    def atom_points(self) -> np.ndarray:
        return np.array([(x, y) for x, y, _ in self.atoms]).reshape(-1, 2)

    @property
    def atom_weights(self) -> np.ndarray:
        return np.array([w for _, _, w in self.atoms])

    @property
    def total_variation(self) -> float:
        if "tv" not in self._tv_cache:
            tv = float(np.sum(np.abs(self.atom_weights)))
            if self.density is not None:
                tv += self.density.integrate()
            self._tv_cache["tv"] = tv
        return self._tv_cache["tv"]

    def scaled(self, alpha: float) -> "MeasureData":
        dens = None
        if self.density is not None:
            d = self.density
            dens = Density(lambda p, d=d: alpha * d(p), d.support, d.name)
        return MeasureData(tuple((x, y, alpha * w) for x, y, w in self.atoms), dens, self.domain)

    def __add__(self, other: "MeasureData") -> "MeasureData":
        if self.domain != other.domain:
            raise MeasureError("cannot add measures on different domains")
        dens = self.density
        if other.density is not None:
            if dens is None:
                dens = other.density
            else:
                a, b = dens, other.density
                box = (min(a.support[0], b.support[0]), max(a.support[1], b.support[1]),
                       min(a.support[2], b.support[2]), max(a.support[3], b.support[3]))
                dens = Density(lambda p, a=a, b=b: a(p) + b(p), box, f"{a.name}+{b.name}")
        return MeasureData(self.atoms + other.atoms, dens, self.domain)


def pair_with_fe(measure: MeasureData, space: FeSpace, degree: int = LOAD_QUADRATURE_DEGREE) -> np.ndarray:
    """Load vector ``b_i = <v0, psi_i>`` over the interior dofs."""
    if tuple(space.mesh.rect) != tuple(measure.domain):
        raise MeasureError(f"measure domain {measure.domain} differs from mesh rectangle {space.mesh.rect}")
    if degree < 2 * space.degree + 1:
        raise ValueError("density quadrature degree must be at least 2s+1")
    b = np.zeros(space.n_interior)
    if measure.has_atoms:
        dofs, vals = space.basis_at(measure.atom_points)
        idx = space.interior_dof_index[dofs]
        contrib = vals * measure.atom_weights[:, None]
        # fixed accumulation order: atoms in declaration order
        for j in range(len(dofs)):
            keep = idx[j] >= 0
            np.add.at(b, idx[j][keep], contrib[j][keep])
    if measure.density is not None:
        b = b + space.load_vector(measure.density, degree)
    return b


def support_in(measure: MeasureData, sub: Subdomain) -> bool:
    for x, y, _ in measure.atoms:
        if not sub.contains(x, y):
            return False
    if measure.density is not None:
        x0, x1, y0, y1 = measure.density.support
        bx0, bx1, by0, by1 = sub.box
        if not (bx0 <= x0 and x1 <= bx1 and by0 <= y0 and y1 <= by1):
            return False
    return True
