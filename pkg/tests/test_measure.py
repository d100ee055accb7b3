import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dgheat.fem import FeSpace
from dgheat.measure import (Density, MeasureData, MeasureError, bump_density, eigenmode_density,
                            pair_with_fe, support_in)
from dgheat.mesh import Subdomain, build_uniform_rect_mesh

OMEGA0 = Subdomain((0.25, 0.75, 0.25, 0.75))


def space(n=4, s=1, rect=(0.0, 1.0, 0.0, 1.0)):
    return FeSpace(build_uniform_rect_mesh(n, n, rect), s)


@pytest.mark.parametrize("s", [1, 2])
def test_dirac_at_dof_is_unit_vector(s):
    sp_ = space(4, s)
    j = 7
    x, y = sp_.interior_coords[j]
    b = pair_with_fe(MeasureData.dirac(x, y), sp_)
    e = np.zeros(sp_.n_interior)
    e[j] = 1.0
    assert b == pytest.approx(e, abs=1e-14)


def test_dirac_at_centroid_p1():
    sp_ = space(4, 1)
    m = sp_.mesh
    c = int(np.flatnonzero(~m.boundary_vertex_flags[m.cells].any(axis=1))[0])
    x, y = m.vertices[m.cells[c]].mean(axis=0)
    b = pair_with_fe(MeasureData.dirac(x, y), sp_)
    idx = sp_.interior_dof_index[m.cells[c]]
    assert b[idx] == pytest.approx([1 / 3] * 3, abs=1e-14)
    assert b.sum() == pytest.approx(1.0, abs=1e-14)


def test_total_variation():
    mu = MeasureData(((0.3, 0.3, 2.0), (0.6, 0.7, -3.0)))
    assert mu.total_variation == 5.0
    assert MeasureData().total_variation == 0.0
    d = MeasureData(density=eigenmode_density())
    assert d.total_variation == pytest.approx(8 / np.pi ** 2, rel=1e-12)


@pytest.mark.parametrize("p", [(0.0, 0.5), (1.0, 0.3), (0.5, -0.1), (0.2, 1.0)])
def test_atoms_on_or_outside_boundary_rejected(p):
    with pytest.raises(MeasureError):
        MeasureData.dirac(*p)


def test_domain_mismatch_rejected():
    with pytest.raises(MeasureError):
        pair_with_fe(MeasureData.dirac(0.5, 0.5), space(4, 1, (0, 2, 0, 2)))


def test_density_quadrature_degree_guard():
    with pytest.raises(ValueError):
        pair_with_fe(MeasureData(density=bump_density((0.3, 0.7, 0.3, 0.7))), space(4, 2), degree=4)


def test_density_pairing_matches_load_vector():
    sp_ = space(8, 2)
    d = eigenmode_density(1, 2)
    assert pair_with_fe(MeasureData(density=d), sp_) == pytest.approx(sp_.load_vector(d), abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(0.05, 0.95))
def test_pairing_is_linear(alpha, x1, y1, x2, y2):
    sp_ = space(5, 2)
    mu = MeasureData(((x1, y1, 1.5),), eigenmode_density())
    nu = MeasureData(((x2, y2, -0.7),))
    lhs = pair_with_fe(mu.scaled(alpha) + nu, sp_)
    rhs = alpha * pair_with_fe(mu, sp_) + pair_with_fe(nu, sp_)
    assert lhs == pytest.approx(rhs, abs=1e-14 * max(1.0, abs(alpha)) * 4)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.floats(-5, 5)), min_size=1, max_size=5))
def test_pairing_bounded_by_total_variation(atoms):
    mu = MeasureData(tuple(atoms))
    for s, psi_max in ((1, 1.0), (2, 1.0)):
        b = pair_with_fe(mu, space(4, s))
        # P2 vertex functions peak at 1, edge functions at 1
        assert np.all(np.abs(b) <= mu.total_variation * psi_max + 1e-12)


def test_support_in():
    assert support_in(MeasureData.dirac(0.5, 0.5), OMEGA0)
    assert not support_in(MeasureData.dirac(0.1, 0.1), OMEGA0)
    assert support_in(MeasureData(), OMEGA0)
    assert support_in(MeasureData(density=bump_density((0.3, 0.6, 0.3, 0.6))), OMEGA0)
    assert not support_in(MeasureData(density=eigenmode_density()), OMEGA0)


def test_bump_density_support_and_integral():
    d = bump_density((0.2, 0.6, 0.3, 0.5), amplitude=2.0)
    assert d(np.array([[0.1, 0.4], [0.4, 0.4]])) == pytest.approx([0.0, 2.0])
    assert d.integrate() == pytest.approx(2.0 * 0.4 * 0.2 / 4, rel=1e-12)


def test_measure_arithmetic_domains():
    a = MeasureData.dirac(0.5, 0.5)
    b = MeasureData.dirac(1.0, 1.0, domain=(0, 2, 0, 2))
    with pytest.raises(MeasureError):
        a + b
    c = MeasureData(density=eigenmode_density()) + MeasureData(density=bump_density((0.2, 0.4, 0.2, 0.4)))
    assert c.density.support == (0.0, 1.0, 0.0, 1.0)
    assert isinstance(c.density, Density)
