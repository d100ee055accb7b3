import numpy as np
import pytest

from dgheat.fem import (FactorizedSolver, FeFunction, FeSpace, SolverError, assemble_operators,
                        discrete_laplacian_apply, evaluate, generalized_eigendecomposition, l2_project,
                        linf_sample_points, norm, ritz_project)
from dgheat.mesh import Mesh, Subdomain, build_uniform_rect_mesh
from dgheat.study import fit_rate

PI = np.pi


def sine(p):
    return np.sin(PI * p[:, 0]) * np.sin(PI * p[:, 1])


def sine_grad(p):
    return PI * np.column_stack([np.cos(PI * p[:, 0]) * np.sin(PI * p[:, 1]),
                                 np.sin(PI * p[:, 0]) * np.cos(PI * p[:, 1])])


def l2_error(space, u, f, degree=10):
    x, w = space.quadrature_points(degree)
    pts = x.reshape(-1, 2)
    diff = f(pts) - space.evaluation_matrix(pts) @ u.coefficients
    return float(np.sqrt(np.sum(w.ravel() * diff ** 2)))


def space(n, s, rect=(0.0, 1.0, 0.0, 1.0)):
    return FeSpace(build_uniform_rect_mesh(n, n, rect), s)


def test_p1_element_mass_and_stiffness():
    tri = Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]), (0, 1, 0, 1))
    M, A = FeSpace(tri, 1).full_operators
    area = 0.5
    assert M.toarray() == pytest.approx(area / 12 * np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]), abs=1e-15)
    assert A.toarray() == pytest.approx(np.array([[1, -0.5, -0.5], [-0.5, 0.5, 0], [-0.5, 0, 0.5]]), abs=1e-15)


@pytest.mark.parametrize("s", [1, 2])
def test_full_mass_sums_to_area(s):
    M, A = FeSpace(build_uniform_rect_mesh(5, 3, (0, 2, 0, 1.5)), s).full_operators
    assert M.sum() == pytest.approx(3.0, rel=1e-13)
    # constants are in the kernel of the unrestricted stiffness
    assert np.abs(A @ np.ones(A.shape[0])).max() < 1e-12


@pytest.mark.parametrize("s", [1, 2])
def test_operator_structure(s):
    sp_ = space(6, s)
    M, A = assemble_operators(sp_)
    for K in (M, A):
        assert abs(K - K.T).max() <= 1e-13 * abs(K).max()
    rng = np.random.default_rng(0)
    for _ in range(5):
        x = rng.standard_normal(sp_.n_interior)
        assert x @ (M @ x) > 0 and x @ (A @ x) > 0
    assert sp_.cell_dofs.shape[1] == (3 if s == 1 else 6)


def test_dof_counts():
    assert space(4, 1).n_interior == 9
    sp2 = space(4, 2)
    assert sp2.n_dofs == 81 and sp2.n_interior == 49


@pytest.mark.parametrize("s", [1, 2])
def test_lagrange_property(s):
    sp_ = space(3, s)
    for i in range(sp_.n_interior):
        e = np.zeros(sp_.n_interior)
        e[i] = 1.0
        vals = evaluate(sp_, e, sp_.interior_coords)
        expected = np.zeros(sp_.n_interior)
        expected[i] = 1.0
        assert vals == pytest.approx(expected, abs=1e-12)


def test_p2_edge_basis_at_midpoint_and_endpoints():
    sp_ = space(3, 2)
    nv = sp_.mesh.n_vertices
    edges, _ = sp_.mesh.edges
    j = next(j for j in sp_.interior_dofs if j >= nv)
    u = np.zeros(sp_.n_interior)
    u[sp_.interior_dof_index[j]] = 1.0
    a, b = edges[j - nv]
    pts = np.array([sp_.dof_coords[j], sp_.mesh.vertices[a], sp_.mesh.vertices[b]])
    assert evaluate(sp_, u, pts) == pytest.approx([1.0, 0.0, 0.0], abs=1e-12)


def test_evaluate_outside_raises():
    from dgheat.mesh import PointOutsideError
    with pytest.raises(PointOutsideError):
        evaluate(space(2, 1), np.zeros(1), (2.0, 0.5))


@pytest.mark.parametrize("s", [1, 2])
def test_l2_project_idempotent_and_zero(s):
    sp_ = space(5, s)
    rng = np.random.default_rng(3)
    u = FeFunction(sp_, rng.standard_normal(sp_.n_interior))
    again = l2_project(sp_, u)
    assert again.coefficients == pytest.approx(u.coefficients, abs=1e-12)
    assert np.all(l2_project(sp_, lambda p: np.zeros(len(p))).coefficients == 0.0)
    b = sp_.load_vector(sine)
    v = l2_project(sp_, b)
    assert np.linalg.norm(sp_.mass @ v.coefficients - b) <= 1e-12 * np.linalg.norm(b)


def test_l2_projection_rate_p1():
    ns = [16, 32, 64]
    errs = [l2_error(space(n, 1), l2_project(space(n, 1), sine), sine) for n in ns]
    assert fit_rate(zip([1 / n for n in ns], errs)) == pytest.approx(2.0, abs=0.1)


@pytest.mark.parametrize("s,rate,tol", [(1, 2.0, 0.1), (2, 3.0, 0.15)])
def test_ritz_projection_rates(s, rate, tol):
    ns = [4, 8, 16, 32]
    errs = []
    for n in ns:
        sp_ = space(n, s)
        errs.append(l2_error(sp_, ritz_project(sp_, sine_grad), sine))
    assert fit_rate(zip([1 / n for n in ns], errs)) == pytest.approx(rate, abs=tol)


@pytest.mark.parametrize("s", [1, 2])
def test_ritz_of_fe_function_is_identity(s):
    sp_ = space(4, s)
    rng = np.random.default_rng(5)
    u = rng.standard_normal(sp_.n_interior)
    R = ritz_project(sp_, lambda p: sp_.gradient_at(p, u))
    assert R.coefficients == pytest.approx(u, abs=1e-12)


def test_ritz_galerkin_orthogonality():
    sp_ = space(8, 2)
    R = ritz_project(sp_, sine_grad)
    g = sp_.gradient_load_vector(sine_grad)
    res = sp_.stiffness @ R.coefficients - g
    assert np.abs(res).max() <= 1e-11 * np.abs(g).max()


def test_gradient_at_matches_finite_difference():
    sp_ = space(4, 2)
    u = np.random.default_rng(2).standard_normal(sp_.n_interior)
    p = np.array([[0.31, 0.47]])
    e = 1e-6
    fd = [(evaluate(sp_, u, p + [e, 0]) - evaluate(sp_, u, p - [e, 0])) / (2 * e),
          (evaluate(sp_, u, p + [0, e]) - evaluate(sp_, u, p - [0, e])) / (2 * e)]
    assert sp_.gradient_at(p, u)[0] == pytest.approx(np.ravel(fd), rel=1e-6)


@pytest.mark.parametrize("s", [1, 2])
def test_discrete_laplacian_identities(s):
    sp_ = space(5, s)
    lam, X = generalized_eigendecomposition(sp_)
    for i in (0, 3, len(lam) - 1):
        w = discrete_laplacian_apply(sp_, X[:, i])
        assert w.coefficients == pytest.approx(lam[i] * X[:, i], abs=1e-10 * lam[i] * np.abs(X[:, i]).max())
    rng = np.random.default_rng(7)
    u, phi = rng.standard_normal((2, sp_.n_interior))
    w = discrete_laplacian_apply(sp_, u).coefficients
    lhs = w @ (sp_.mass @ phi)
    rhs = u @ (sp_.stiffness @ phi)
    assert lhs == pytest.approx(rhs, rel=1e-12)
    # powers against the eigen-oracle
    c = X.T @ (sp_.mass @ u)
    v = u
    for j in (1, 2, 3):
        v = discrete_laplacian_apply(sp_, v).coefficients
        ref = X @ (lam ** j * c)
        assert np.linalg.norm(v - ref) <= 1e-8 * np.linalg.norm(ref)


def test_discrete_laplacian_of_interpolant_rate():
    ns = [8, 16, 32, 64]
    errs = []
    for n in ns:
        sp_ = space(n, 1)
        w = discrete_laplacian_apply(sp_, sp_.interpolate(sine))
        target = l2_project(sp_, lambda p: 2 * PI ** 2 * sine(p))
        errs.append(norm(sp_, w.coefficients - target.coefficients))
    assert fit_rate(zip([1 / n for n in ns], errs)) == pytest.approx(2.0, abs=0.2)


def test_projection_self_adjoint():
    sp_ = space(6, 2)
    rng = np.random.default_rng(11)
    f, g = rng.standard_normal((2, sp_.n_interior))
    Pf = sp_.mass_solver.solve(f)
    Pg = sp_.mass_solver.solve(g)
    assert Pf @ g == pytest.approx(f @ Pg, rel=1e-12)


def test_norms():
    sp_ = space(8, 1)
    z = np.zeros(sp_.n_interior)
    sub = Subdomain((0.25, 0.75, 0.25, 0.75))
    assert norm(sp_, z) == 0 and norm(sp_, z, "H1_semi") == 0 and norm(sp_, z, "Linf", sub) == 0
    one = sp_.interpolate(lambda p: np.ones(len(p)))
    assert norm(sp_, one) < 1.0
    assert norm(sp_, one, "Linf", sub) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        norm(sp_, z, "Linf")
    with pytest.raises(ValueError):
        norm(sp_, z, "H2")
    pts = linf_sample_points(sp_, sub, 5)
    assert len(pts) == 25 + 25  # grid plus the 5x5 vertices inside the box


def test_eigenmode_interpolant_norm_p2():
    sp_ = space(64, 2)
    u = sp_.interpolate(lambda p: 2 * sine(p))
    assert norm(sp_, u) == pytest.approx(1.0, abs=1e-3)


def test_generalized_eigendecomposition():
    sp_ = space(6, 1)
    lam, X = generalized_eigendecomposition(sp_)
    M, A = sp_.operators
    assert lam[0] > 0 and np.all(np.diff(lam) >= 0)
    assert X.T @ (M @ X) == pytest.approx(np.eye(len(lam)), abs=1e-10)
    R = A @ X - (M @ X) * lam
    assert np.all(np.linalg.norm(R, axis=0) <= 1e-10 * np.linalg.norm(A @ X, axis=0))
    with pytest.raises(ValueError):
        generalized_eigendecomposition(sp_, max_dimension=10)


def test_smallest_eigenvalue_converges_from_above():
    vals = [generalized_eigendecomposition(space(n, 1))[0][0] for n in (4, 8, 16)]
    assert all(v > 2 * PI ** 2 for v in vals)
    assert vals[0] > vals[1] > vals[2]
    assert vals[2] == pytest.approx(2 * PI ** 2, rel=0.03)


def test_fe_function_text_roundtrip(tmp_path):
    sp_ = space(3, 2)
    u = FeFunction(sp_, np.random.default_rng(0).standard_normal(sp_.n_interior))
    u.write(tmp_path / "u.txt")
    back = FeFunction.from_text(sp_, (tmp_path / "u.txt").read_text())
    assert np.array_equal(back.coefficients, u.coefficients)
    with pytest.raises(ValueError):
        FeFunction.from_text(sp_, "0 1.0\n")


def test_fe_function_length_checked():
    with pytest.raises(ValueError):
        FeFunction(space(3, 1), np.zeros(5))


def test_factorized_solver_reports_failure():
    import scipy.sparse as sp
    s = FactorizedSolver(sp.identity(3, format="csc"))

    class Broken:
        def solve(self, b):
            return np.zeros_like(b)

    s._lu = Broken()
    with pytest.raises(SolverError, match="relative residual"):
        s.solve(np.ones(3))
