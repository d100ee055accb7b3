"""Lagrange P1/P2 spaces with homogeneous Dirichlet conditions.

Boundary dofs are removed from the unknowns: every operator and coefficient
vector here lives on the interior dofs only.  Mass ``M`` and stiffness ``A``
are therefore symmetric positive definite.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh, Subdomain
from .quadrature import triangle_rule

LOAD_QUADRATURE_DEGREE = 8
EIGEN_DIMENSION_GUARD = 2000


class SolverError(RuntimeError):
    pass


# -- reference element ------------------------------------------------------

_DLAM = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])  # d(lambda_i)/d(xi, eta)
_EDGES = ((0, 1), (1, 2), (2, 0))


def shape_values(degree: int, lam: np.ndarray) -> np.ndarray:
    """Basis values at barycentric points ``lam`` (n, 3) -> (n, nbasis)."""
    if degree == 1:
        return lam.copy()
    if degree == 2:
        vert = lam * (2.0 * lam - 1.0)
        edge = np.column_stack([4.0 * lam[:, i] * lam[:, j] for i, j in _EDGES])
        return np.hstack([vert, edge])
    raise ValueError(f"unsupported degree {degree}")


def shape_gradients(degree: int, lam: np.ndarray) -> np.ndarray:
    """Reference gradients at barycentric points -> (n, nbasis, 2)."""
    n = len(lam)
    if degree == 1:
        return np.broadcast_to(_DLAM, (n, 3, 2)).copy()
    if degree == 2:
        g = np.empty((n, 6, 2))
        for i in range(3):
            g[:, i] = (4.0 * lam[:, i] - 1.0)[:, None] * _DLAM[i]
        for e, (i, j) in enumerate(_EDGES):
            g[:, 3 + e] = 4.0 * (lam[:, j, None] * _DLAM[i] + lam[:, i, None] * _DLAM[j])
        return g
    raise ValueError(f"unsupported degree {degree}")


def _bary_from_ref(pts: np.ndarray) -> np.ndarray:
    return np.column_stack([1.0 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]])


# -- solver -----------------------------------------------------------------

class FactorizedSolver:
    """Sparse LU with a residual check and iterative refinement.

    The matrices solved here are SPD or complex-shifted SPD; LU keeps one code
    path for both.
    """

    def __init__(self, matrix: sp.spmatrix, rtol: float = 1e-12, name: str = "system"):
        self.matrix = sp.csc_matrix(matrix)
        self.rtol = rtol
        self.name = name
        self._lu = spla.splu(self.matrix)

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b)
        x = self._lu.solve(b)
        bnorm = np.linalg.norm(b)
        if bnorm == 0.0:
            return x
        for _ in range(3):
            res = b - self.matrix @ x
            rel = np.linalg.norm(res) / bnorm
            if rel <= self.rtol:
                return x
            x = x + self._lu.solve(res)
        rel = np.linalg.norm(b - self.matrix @ x) / bnorm
        if rel > self.rtol:
            raise SolverError(f"{self.name}: relative residual {rel:.3e} exceeds {self.rtol:.1e}")
        return x


# -- space ------------------------------------------------------------------

class FeSpace:
    """Continuous Lagrange space of degree 1 or 2 on ``mesh``.

    Dofs are the mesh vertices followed (for P2) by the edge midpoints in the
    order of ``mesh.edges``.
    """

    def __init__(self, mesh: Mesh, degree: int):
        if degree not in (1, 2):
            raise ValueError("degree must be 1 or 2")
        self.mesh = mesh
        self.degree = degree
        if degree == 1:
            coords = mesh.vertices
            cell_dofs = mesh.cells
            boundary = mesh.boundary_vertex_flags
        else:
            edges, cell_edges = mesh.edges
            nv = mesh.n_vertices
            coords = np.vstack([mesh.vertices, 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])])
            cell_dofs = np.hstack([mesh.cells, cell_edges + nv])
            flags = mesh.boundary_vertex_flags
            boundary = np.concatenate([flags, flags[edges[:, 0]] & flags[edges[:, 1]] & (mesh.edge_cell_counts == 1)])
        self.dof_coords = coords
        self.cell_dofs = np.asarray(cell_dofs, dtype=np.int64)
        self.boundary_dofs = np.asarray(boundary, dtype=bool)
        self.interior_dofs = np.flatnonzero(~self.boundary_dofs)
        index = np.full(len(coords), -1, dtype=np.int64)
        index[self.interior_dofs] = np.arange(len(self.interior_dofs))
        self.interior_dof_index = index
        for a in (self.dof_coords, self.cell_dofs, self.boundary_dofs, self.interior_dofs, self.interior_dof_index):
            a.setflags(write=False)

    @property
    def n_dofs(self) -> int:
        return len(self.dof_coords)

    @property
    def n_interior(self) -> int:
        return len(self.interior_dofs)

    @property
    def h(self) -> float:
        return self.mesh.h_max

    @property
    def interior_coords(self) -> np.ndarray:
        return self.dof_coords[self.interior_dofs]

    def __repr__(self) -> str:
        return f"FeSpace(P{self.degree}, cells={self.mesh.n_cells}, n_interior={self.n_interior})"

    # geometry per cell
    @cached_property
    def _geometry(self):
        p = self.mesh.vertices[self.mesh.cells]
        J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns are edge vectors
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        Jinv = np.linalg.inv(J)
        return p[:, 0], J, det, Jinv

    def quadrature_points(self, degree: int = LOAD_QUADRATURE_DEGREE):
        """Physical quadrature points (nc, nq, 2) and weights (nc, nq)."""
        ref, w = triangle_rule(degree)
        origin, J, det, _ = self._geometry
        x = origin[:, None, :] + np.einsum("cij,qj->cqi", J, ref)
        return x, det[:, None] * w[None, :]

    def _scatter(self, local: np.ndarray) -> np.ndarray:
        """Sum per-cell local vectors (nc, nb) into an interior-dof vector."""
        full = np.bincount(self.cell_dofs.ravel(), weights=local.ravel(), minlength=self.n_dofs)
        return full[self.interior_dofs]

    # -- operators --------------------------------------------------------

    def _assemble_full(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        ref, w = triangle_rule(2 * self.degree)
        lam = _bary_from_ref(ref)
        phi = shape_values(self.degree, lam)           # (nq, nb)
        gref = shape_gradients(self.degree, lam)       # (nq, nb, 2)
        _, _, det, Jinv = self._geometry
        mass_ref = np.einsum("q,qi,qj->ij", w, phi, phi)
        mloc = det[:, None, None] * mass_ref[None]
        # physical gradient: J^{-T} grad_ref
        gx = np.einsum("cki,qbk->cqbi", Jinv, gref)
        kloc = det[:, None, None] * np.einsum("q,cqai,cqbi->cab", w, gx, gx)
        nb = self.cell_dofs.shape[1]
        rows = np.repeat(self.cell_dofs, nb, axis=1).ravel()
        cols = np.tile(self.cell_dofs, (1, nb)).ravel()
        shape = (self.n_dofs, self.n_dofs)
        M = sp.coo_matrix((mloc.ravel(), (rows, cols)), shape=shape).tocsr()
        A = sp.coo_matrix((kloc.ravel(), (rows, cols)), shape=shape).tocsr()
        return M, A

    @cached_property
    def full_operators(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """Mass and stiffness over all dofs, boundary included."""
        return self._assemble_full()

    @cached_property
    def operators(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        Mf, Af = self.full_operators
        idx = self.interior_dofs
        M = Mf[idx][:, idx].tocsr()
        A = Af[idx][:, idx].tocsr()
        # exact symmetrisation removes roundoff asymmetry from the coo sum
        M = ((M + M.T) * 0.5).tocsr()
        A = ((A + A.T) * 0.5).tocsr()
        for mat in (M, A):
            mat.sort_indices()
        return M, A

    @property
    def mass(self) -> sp.csr_matrix:
        return self.operators[0]

    @property
    def stiffness(self) -> sp.csr_matrix:
        return self.operators[1]

    @cached_property
    def mass_solver(self) -> FactorizedSolver:
        return FactorizedSolver(self.mass, name="mass")

    @cached_property
    def stiffness_solver(self) -> FactorizedSolver:
        return FactorizedSolver(self.stiffness, rtol=1e-11, name="stiffness")

    # -- load vectors -----------------------------------------------------

    def load_vector(self, f: Callable[[np.ndarray], np.ndarray], degree: int = LOAD_QUADRATURE_DEGREE) -> np.ndarray:
        """Interior load vector ``b_i = (f, psi_i)``; ``f`` maps (n, 2) points to (n,) values."""
        ref, _ = triangle_rule(degree)
        x, wq = self.quadrature_points(degree)
        nc, nq, _ = x.shape
        fx = np.asarray(f(x.reshape(-1, 2)), dtype=float).reshape(nc, nq)
        phi = shape_values(self.degree, _bary_from_ref(ref))
        local = np.einsum("cq,qb->cb", fx * wq, phi)
        return self._scatter(local)

    def gradient_load_vector(self, grad: Callable[[np.ndarray], np.ndarray], degree: int = LOAD_QUADRATURE_DEGREE) -> np.ndarray:
        """Interior vector ``g_i = (grad v, grad psi_i)``; ``grad`` maps (n, 2) -> (n, 2)."""
        ref, _ = triangle_rule(degree)
        x, wq = self.quadrature_points(degree)
        nc, nq, _ = x.shape
        gv = np.asarray(grad(x.reshape(-1, 2)), dtype=float).reshape(nc, nq, 2)
        gref = shape_gradients(self.degree, _bary_from_ref(ref))
        _, _, _, Jinv = self._geometry
        gx = np.einsum("cki,qbk->cqbi", Jinv, gref)
        local = np.einsum("cq,cqi,cqbi->cb", wq, gv, gx)
        return self._scatter(local)

    # -- evaluation -------------------------------------------------------

    def basis_at(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Cell dofs (n, nb) and basis values (n, nb) at the given points."""
        cells, lam = self.mesh.locate_points(points)
        return self.cell_dofs[cells], shape_values(self.degree, lam)

    def evaluation_matrix(self, points) -> sp.csr_matrix:
        """Sparse ``E`` with ``E @ coeffs`` = FE values at ``points``; boundary dofs drop out."""
        dofs, vals = self.basis_at(points)
        idx = self.interior_dof_index[dofs]
        keep = idx >= 0
        rows = np.broadcast_to(np.arange(len(dofs))[:, None], dofs.shape)
        return sp.csr_matrix((vals[keep], (rows[keep], idx[keep])), shape=(len(dofs), self.n_interior))

    def gradient_at(self, points, coefficients: np.ndarray) -> np.ndarray:
        """Gradient (n, 2) of the FE function with interior coefficients at the points."""
        cells, lam = self.mesh.locate_points(points)
        dofs = self.cell_dofs[cells]
        idx = self.interior_dof_index[dofs]
        vals = np.where(idx >= 0, np.asarray(coefficients)[np.maximum(idx, 0)], 0.0)
        gref = shape_gradients(self.degree, lam)
        _, _, _, Jinv = self._geometry
        gx = np.einsum("nki,nbk->nbi", Jinv[cells], gref)
        return np.einsum("nb,nbi->ni", vals, gx)

    def interpolate(self, f: Callable[[np.ndarray], np.ndarray]) -> "FeFunction":
        """Nodal interpolant with boundary dofs set to zero."""
        return FeFunction(self, np.asarray(f(self.interior_coords), dtype=float))


@dataclass(frozen=True)
class FeFunction:
    space: FeSpace
    coefficients: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        if c.shape != (self.space.n_interior,):
            raise ValueError(f"expected {self.space.n_interior} coefficients, got {c.shape}")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    def __call__(self, points) -> np.ndarray:
        return self.space.evaluation_matrix(points) @ self.coefficients

    def to_text(self) -> str:
        return "".join(f"{i} {float(c)!r}\n" for i, c in enumerate(self.coefficients))

    def write(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, space: FeSpace, text: str) -> "FeFunction":
        coeffs = np.zeros(space.n_interior)
        seen = np.zeros(space.n_interior, dtype=bool)
        for line in text.splitlines():
            if not line.strip():
                continue
            i, c = line.split()
            coeffs[int(i)] = float(c)
            seen[int(i)] = True
        if not seen.all():
            raise ValueError("coefficient file does not cover every interior dof")
        return cls(space, coeffs)


Coefficients = Union[FeFunction, np.ndarray]


def _coeffs(u: Coefficients) -> np.ndarray:
    return u.coefficients if isinstance(u, FeFunction) else np.asarray(u)


# -- operations -------------------------------------------------------------

def assemble_operators(space: FeSpace) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Interior mass and stiffness matrices ``(M, A)``."""
    return space.operators


def l2_project(space: FeSpace, source) -> FeFunction:
    """L2 projection of a callable (points -> values) or of a precomputed load vector."""
    b = space.load_vector(source) if callable(source) else np.asarray(source, dtype=float)
    return FeFunction(space, space.mass_solver.solve(b))


def ritz_project(space: FeSpace, gradient_sampler: Callable[[np.ndarray], np.ndarray]) -> FeFunction:
    """Ritz projection from pointwise gradient samples of the target."""
    g = space.gradient_load_vector(gradient_sampler)
    return FeFunction(space, space.stiffness_solver.solve(g))


def discrete_laplacian_apply(space: FeSpace, u: Coefficients) -> FeFunction:
    """``w = -Delta_h u``, i.e. the solution of ``M w = A u``."""
    return FeFunction(space, space.mass_solver.solve(space.stiffness @ _coeffs(u)))


def evaluate(space: FeSpace, u: Coefficients, p) -> float | np.ndarray:
    pts = np.asarray(p, dtype=float)
    vals = space.evaluation_matrix(pts.reshape(-1, 2)) @ _coeffs(u)
    return float(vals[0]) if pts.ndim == 1 else vals


def linf_sample_points(space: FeSpace, sub: Subdomain, n: int = 200) -> np.ndarray:
    """Grid points of ``sub`` together with every dof location inside it."""
    grid = sub.grid(n)
    dc = space.dof_coords
    x0, x1, y0, y1 = sub.box
    inside = (dc[:, 0] >= x0) & (dc[:, 0] <= x1) & (dc[:, 1] >= y0) & (dc[:, 1] <= y1)
    return np.vstack([grid, dc[inside]])


def norm(space: FeSpace, u: Coefficients, kind: str = "L2", sub: Subdomain | None = None, n: int = 200) -> float:
    """``kind`` is one of ``"L2"``, ``"H1_semi"``, ``"Linf"`` (the latter needs ``sub``).

    The Linf value is a sampled maximum, hence a lower bound of the true one.
    """
    c = _coeffs(u)
    if kind == "L2":
        return float(np.sqrt(max(c @ (space.mass @ c), 0.0)))
    if kind == "H1_semi":
        return float(np.sqrt(max(c @ (space.stiffness @ c), 0.0)))
    if kind == "Linf":
        if sub is None:
            raise ValueError("Linf norm needs a subdomain")
        pts = linf_sample_points(space, sub, n)
        return float(np.max(np.abs(space.evaluation_matrix(pts) @ c)))
    raise ValueError(f"unknown norm kind {kind!r}")


def generalized_eigendecomposition(space: FeSpace, max_dimension: int = EIGEN_DIMENSION_GUARD):
    """Dense solve of ``A x = lambda M x``.

    Returns ascending eigenvalues and M-orthonormal eigenvectors (columns).
    """
    n = space.n_interior
    if n > max_dimension:
        raise ValueError(f"dense eigendecomposition refused: {n} unknowns exceed the guard {max_dimension}")
    M, A = space.operators
    lam, X = scipy.linalg.eigh(A.toarray(), M.toarray())
    return lam, X
