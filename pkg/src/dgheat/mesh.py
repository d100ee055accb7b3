"""Structured triangulations of axis-aligned rectangles.

Meshes are immutable: every array is flagged read-only after construction.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

Rect = tuple[float, float, float, float]  # (x0, x1, y0, y1)

UNIT_SQUARE: Rect = (0.0, 1.0, 0.0, 1.0)

_LOCATE_BATCH = 20000


class MeshError(ValueError):
    pass


class PointOutsideError(MeshError):
    pass


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Subdomain:
    """Axis-aligned box strictly inside the meshed rectangle."""

    box: Rect
    domain: Rect = UNIT_SQUARE

    def __post_init__(self):
        x0, x1, y0, y1 = self.box
        if not (x0 < x1 and y0 < y1):
            raise MeshError(f"degenerate subdomain box {self.box}")
        if self.margin_d <= 0.0:
            raise MeshError(f"subdomain {self.box} is not strictly inside {self.domain}")

    @property
    def margin_d(self) -> float:
        """Distance from the box to the boundary of the domain."""
        x0, x1, y0, y1 = self.box
        X0, X1, Y0, Y1 = self.domain
        return min(x0 - X0, X1 - x1, y0 - Y0, Y1 - y1)

    def contains(self, x: float, y: float, tol: float = 0.0) -> bool:
        x0, x1, y0, y1 = self.box
        return x0 - tol <= x <= x1 + tol and y0 - tol <= y <= y1 + tol

    def grid(self, n: int) -> np.ndarray:
        """Tensor grid of ``n x n`` points covering the closed box, shape (n*n, 2)."""
        x0, x1, y0, y1 = self.box
        X, Y = np.meshgrid(np.linspace(x0, x1, n), np.linspace(y0, y1, n), indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])


class Mesh:
    """Conforming triangulation with counterclockwise cells.

    Parameters
    ----------
    vertices : (nv, 2) array
    cells : (nc, 3) int array of vertex indices, counterclockwise
    rect : the meshed rectangle, used for boundary flags and point location
    """

    def __init__(self, vertices, cells, rect: Rect):
        self.vertices = _freeze(np.asarray(vertices, dtype=float).copy())
        self.cells = _freeze(np.asarray(cells, dtype=np.int64).copy())
        self.rect = tuple(float(v) for v in rect)
        x0, x1, y0, y1 = self.rect
        scale = max(x1 - x0, y1 - y0)
        tol = 1e-12 * scale
        vx, vy = self.vertices[:, 0], self.vertices[:, 1]
        self.boundary_vertex_flags = _freeze(
            (np.abs(vx - x0) <= tol) | (np.abs(vx - x1) <= tol)
            | (np.abs(vy - y0) <= tol) | (np.abs(vy - y1) <= tol)
        )
        if np.any(self.signed_areas <= 0.0):
            raise MeshError("cells must have positive signed area (counterclockwise)")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.cells]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return _freeze(0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]))

    @cached_property
    def cell_diameters(self) -> np.ndarray:
        p = self.vertices[self.cells]
        d = [np.linalg.norm(p[:, i] - p[:, j], axis=1) for i, j in ((0, 1), (1, 2), (2, 0))]
        return _freeze(np.max(d, axis=0))

    @property
    def h_max(self) -> float:
        return float(self.cell_diameters.max())

    @property
    def h_min(self) -> float:
        return float(self.cell_diameters.min())

    @property
    def quasi_uniformity(self) -> float:
        """Smallest C with h_max <= C |tau|^(1/2) for every cell."""
        return float(self.h_max / np.sqrt(self.signed_areas.min()))

    @cached_property
    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique edges as sorted vertex pairs, and the per-cell edge index.

        Local edge ``e`` of a cell joins local vertices ``(e, (e + 1) % 3)``.
        """
        c = self.cells
        local = np.stack([c[:, [0, 1]], c[:, [1, 2]], c[:, [2, 0]]], axis=1)
        flat = np.sort(local.reshape(-1, 2), axis=1)
        uniq, inv = np.unique(flat, axis=0, return_inverse=True)
        return _freeze(uniq), _freeze(inv.reshape(-1, 3))

    @cached_property
    def edge_cell_counts(self) -> np.ndarray:
        _, cell_edges = self.edges
        return _freeze(np.bincount(cell_edges.ravel(), minlength=len(self.edges[0])))

    # -- point location -------------------------------------------------

    @cached_property
    def _buckets(self):
        x0, x1, y0, y1 = self.rect
        nb = max(1, int(np.sqrt(self.n_cells / 2)))
        p = self.vertices[self.cells]
        lo = p.min(axis=1)
        hi = p.max(axis=1)
        sx = (x1 - x0) / nb
        sy = (y1 - y0) / nb
        eps = 1e-10
        ix0 = np.clip(np.floor((lo[:, 0] - x0) / sx - eps).astype(int), 0, nb - 1)
        ix1 = np.clip(np.floor((hi[:, 0] - x0) / sx + eps).astype(int), 0, nb - 1)
        iy0 = np.clip(np.floor((lo[:, 1] - y0) / sy - eps).astype(int), 0, nb - 1)
        iy1 = np.clip(np.floor((hi[:, 1] - y0) / sy + eps).astype(int), 0, nb - 1)
        lists: list[list[int]] = [[] for _ in range(nb * nb)]
        for c in range(self.n_cells):
            for i in range(ix0[c], ix1[c] + 1):
                for j in range(iy0[c], iy1[c] + 1):
                    lists[i * nb + j].append(c)
        width = max(len(b) for b in lists)
        table = np.full((nb * nb, width), -1, dtype=np.int64)
        for b, cs in enumerate(lists):
            table[b, : len(cs)] = cs  # ascending cell order
        return nb, sx, sy, table

    def barycentric(self, cells: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Barycentric coordinates of ``points[i]`` with respect to ``cells[i]``."""
        p = self.vertices[self.cells[cells]]
        a, b, c = p[:, 0], p[:, 1], p[:, 2]
        det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
        dx = points[:, 0] - a[:, 0]
        dy = points[:, 1] - a[:, 1]
        l1 = (dx * (c[:, 1] - a[:, 1]) - dy * (c[:, 0] - a[:, 0])) / det
        l2 = ((b[:, 0] - a[:, 0]) * dy - (b[:, 1] - a[:, 1]) * dx) / det
        return np.column_stack([1.0 - l1 - l2, l1, l2])

    def locate_points(self, points, tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
        """Locate many points at once.

        Returns ``(cells, bary)``.  A point on a shared edge or vertex goes to
        the lowest-index cell containing it.  Barycentric coordinates are
        clipped to [0, 1] and renormalised to absorb the boundary tolerance.

        Raises
        ------
        PointOutsideError
            If any point lies outside the meshed rectangle.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if len(pts) > _LOCATE_BATCH:
            parts = [self.locate_points(pts[i:i + _LOCATE_BATCH], tol) for i in range(0, len(pts), _LOCATE_BATCH)]
            return np.concatenate([c for c, _ in parts]), np.vstack([b for _, b in parts])
        x0, x1, y0, y1 = self.rect
        scale = max(x1 - x0, y1 - y0)
        ttol = tol * scale
        out = (pts[:, 0] < x0 - ttol) | (pts[:, 0] > x1 + ttol) | (pts[:, 1] < y0 - ttol) | (pts[:, 1] > y1 + ttol)
        if np.any(out):
            bad = pts[np.argmax(out)]
            raise PointOutsideError(f"point ({bad[0]}, {bad[1]}) lies outside {self.rect}")
        nb, sx, sy, table = self._buckets
        ix = np.clip(np.floor((pts[:, 0] - x0) / sx).astype(int), 0, nb - 1)
        iy = np.clip(np.floor((pts[:, 1] - y0) / sy).astype(int), 0, nb - 1)
        cand = table[ix * nb + iy]  # (npts, width)
        npts, width = cand.shape
        safe = np.where(cand < 0, 0, cand)
        rep = np.repeat(pts, width, axis=0)
        bary = self.barycentric(safe.ravel(), rep).reshape(npts, width, 3)
        inside = (bary.min(axis=2) >= -1e-10) & (cand >= 0)
        if not np.all(inside.any(axis=1)):
            bad = pts[np.argmin(inside.any(axis=1))]
            raise PointOutsideError(f"point ({bad[0]}, {bad[1]}) not found in any cell")
        # candidates are sorted ascending, so the first hit is the lowest cell index
        first = np.argmax(inside, axis=1)
        rows = np.arange(npts)
        cells = cand[rows, first]
        lam = np.clip(bary[rows, first], 0.0, 1.0)
        lam /= lam.sum(axis=1, keepdims=True)
        return cells, lam

    def locate_point(self, p, tol: float = 1e-12) -> tuple[int, np.ndarray]:
        cells, lam = self.locate_points(np.asarray(p, dtype=float).reshape(1, 2), tol)
        return int(cells[0]), lam[0]

    # -- export -----------------------------------------------------------

    def to_text(self) -> str:
        lines = [f"vertices {self.n_vertices}"]
        lines += [f"{float(x)!r} {float(y)!r}" for x, y in self.vertices]
        lines.append(f"cells {self.n_cells}")
        lines += [f"{a} {b} {c}" for a, b, c in self.cells]
        lines.append(f"boundary {self.n_vertices}")
        lines += [str(int(f)) for f in self.boundary_vertex_flags]
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str, rect: Rect) -> "Mesh":
        lines = text.splitlines()
        nv = int(lines[0].split()[1])
        verts = [tuple(map(float, ln.split())) for ln in lines[1 : 1 + nv]]
        nc = int(lines[1 + nv].split()[1])
        cells = [tuple(map(int, ln.split())) for ln in lines[2 + nv : 2 + nv + nc]]
        return cls(np.array(verts), np.array(cells), rect)


def build_uniform_rect_mesh(nx: int, ny: int, rect: Rect = UNIT_SQUARE) -> Mesh:
    """Split an ``nx x ny`` grid of rectangles along the lower-left to upper-right diagonal."""
    if nx < 1 or ny < 1:
        raise MeshError("nx and ny must be at least 1")
    x0, x1, y0, y1 = rect
    if not (x1 > x0 and y1 > y0):
        raise MeshError(f"degenerate rectangle {rect}")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    i, j = i.ravel(), j.ravel()
    v00 = j * (nx + 1) + i
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    cells = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return Mesh(verts, cells, rect)


def refine_uniform(mesh: Mesh) -> Mesh:
    """Red refinement: every cell is split into four similar cells via edge midpoints."""
    edges, cell_edges = mesh.edges
    mids = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    nv = mesh.n_vertices
    verts = np.vstack([mesh.vertices, mids])
    a, b, c = mesh.cells.T
    mab, mbc, mca = (cell_edges + nv).T
    cells = np.stack([
        np.column_stack([a, mab, mca]),
        np.column_stack([mab, b, mbc]),
        np.column_stack([mca, mbc, c]),
        np.column_stack([mab, mbc, mca]),
    ], axis=1).reshape(-1, 3)
    return Mesh(verts, cells, mesh.rect)
