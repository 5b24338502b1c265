"""Grid construction, boundary-aware stencils and off-grid sampling."""

import numpy as np
import pytest

from hessbound.errors import StencilOutOfDomain
from hessbound.expr import ScalarField, norm_squared, to_complex
from hessbound.geometry import Ball, Polydisc
from hessbound.grid import Grid, GridField, sample_quotient


@pytest.mark.parametrize("m", [5, 9])
def test_interior_nodes_inside(m):
    g = Grid(Ball(n=2), m)
    assert np.all(Ball(n=2).sigma(g.points) > 0)
    assert g.h == pytest.approx(2 / (m - 1))


@pytest.mark.parametrize("field, expected", [
    ("x1^2 + y1^2 + x2^2 + y2^2", np.eye(2)),
    ("x1^2 - y1^2", np.zeros((2, 2))),
    ("x1*x2 + y1*y2", np.array([[0, 0.5], [0.5, 0]])),
])
def test_quadratics_exact(grid9, field, expected):
    u = GridField.from_field(grid9, field)
    h = u.complex_hessian()
    np.testing.assert_allclose(h, np.broadcast_to(expected, h.shape), atol=1e-11)


def test_quartic_second_order():
    f = "(x1^2 + y1^2 + x2^2 + y2^2)^2"
    node = np.array([0.25, 0.0, 0.25, 0.0])
    z = to_complex(node)
    ref = 2 * (np.vdot(z, z).real * np.eye(2) + np.outer(np.conj(z), z))
    errs = []
    for m in (9, 17):
        g = Grid(Ball(n=2), m)
        errs.append(np.max(np.abs(GridField.from_field(g, f).hessian_at(node) - ref)))
    assert 3.0 < errs[0] / errs[1] < 5.0


def test_boundary_band_uses_dirichlet_data(grid9):
    # a field that is wrong inside but right on ∂M still differentiates |z|²
    # correctly near the centre only if the boundary data are exact
    u = GridField(grid9, norm_squared(2).value(grid9.points), "1")
    np.testing.assert_allclose(u.complex_hessian(), np.broadcast_to(np.eye(2), (grid9.size, 2, 2)),
                               atol=1e-11)


def test_gradient_exact_on_quadratics(grid9):
    f = ScalarField("x1^2 + 2*y2 - x2*y1", 2)
    u = GridField.from_field(grid9, f)
    np.testing.assert_allclose(u.real_gradient(), f.real_gradient(grid9.points), atol=1e-11)


def test_node_index(grid9):
    idx = grid9.node_index(np.zeros(4))
    np.testing.assert_allclose(grid9.points[idx], 0)
    with pytest.raises(StencilOutOfDomain):
        grid9.node_index(np.array([0.1, 0, 0, 0]))
    with pytest.raises(StencilOutOfDomain):
        grid9.node_index(np.array([1.0, 0, 0, 1.0]))


def test_sample_reproduces_quadratics(grid9):
    f = ScalarField("1 + x1 - 2*y2 + x1*x2 + 0.5*y1^2", 2)
    u = GridField.from_field(grid9, f)
    x = np.random.default_rng(0).uniform(-0.4, 0.4, size=(6, 4))
    val, grad, hess = u.sample(x, derivatives=True)
    np.testing.assert_allclose(val, f.value(x), atol=1e-9)
    np.testing.assert_allclose(grad, f.real_gradient(x), atol=1e-8)
    np.testing.assert_allclose(hess, f.real_hessian(x), atol=1e-7)


def test_sample_quotient_vanishes_on_boundary(grid9):
    dom = Ball(n=2)
    e = GridField(grid9, dom.sigma(grid9.points) * (1 + grid9.points[:, 0]), "0")
    pts = dom.boundary_points(5)
    np.testing.assert_allclose(sample_quotient(e, pts, dom.sigma), 0, atol=1e-14)


def test_save_and_load(tmp_path, grid9):
    u = GridField.from_field(grid9, "x1 + y2")
    header = u.save(tmp_path / "u")
    hdr, arr = GridField.load_array(tmp_path / "u")
    assert hdr == header
    np.testing.assert_array_equal(arr[grid9.mask], u.values)
    assert np.all(np.isnan(arr[~grid9.mask]))


def test_polydisc_grid():
    dom = Polydisc(n=2, radii=(1.0, 1.0))
    g = Grid(dom, 9)
    u = GridField.from_field(g, norm_squared(2))
    np.testing.assert_allclose(u.complex_hessian(), np.broadcast_to(np.eye(2), (g.size, 2, 2)),
                               atol=1e-11)
