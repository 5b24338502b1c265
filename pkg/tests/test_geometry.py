"""Metrics, torsion, the Z/W tensors, boundary charts and frames."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hessbound.errors import NotOnBoundary, SingularMetric, TooCloseToCenter, VanishingGradient
from hessbound.expr import ScalarField
from hessbound.geometry import (
    Ball,
    ConformalMetric,
    FlatMetric,
    Polydisc,
    boundary_chart,
    domain_from_config,
    inward_normal,
    level_frames,
    origin_identities_check,
    sigma_hessian,
    torsion_at,
    w_tensor,
    z_tensor,
)


def z_by_hand(g, t, du):
    """The six-term Z formula written out with explicit loops.

    ``g[i, j] = g_{ij̄}``, ``t[k, i, j] = T^k_{ij}``, ``du[p] = v_p`` for a
    real v (so v_p̄ = conj(v_p)).
    """
    n = g.shape[0]
    gup = np.linalg.inv(g).T  # gup[p, q] = g^{pq̄}
    dub = np.conj(du)
    z = np.zeros((n, n), complex)
    for i in range(n):
        for j in range(n):
            s = 0j
            for p in range(n):
                for q in range(n):
                    for l in range(n):
                        s += gup[p, q] * np.conj(t[l, q, l]) * g[i, j] * du[p]
                        s += gup[p, q] * t[l, p, l] * g[i, j] * dub[q]
            for k in range(n):
                for l in range(n):
                    for q in range(n):
                        s -= gup[k, l] * g[i, q] * np.conj(t[q, l, j]) * du[k]
                        s -= gup[k, l] * g[q, j] * t[q, k, i] * dub[l]
            for l in range(n):
                s -= np.conj(t[l, j, l]) * du[i]
                s -= t[l, i, l] * dub[j]
            z[i, j] = s / (2 * (n - 1))
    return z


CONFORMAL = [
    ("0.3*x1 + 0.2*y2", 2),
    ("x1", 2),
    ("0.1*x1^2 - 0.2*y1*x2 + 0.05*y2", 2),
    ("0.2*x1 - 0.1*y2 + 0.15*x3*y1", 3),
]


# ---------------------------------------------------------------------------
# torsion, Z and W
# ---------------------------------------------------------------------------

def test_flat_torsion_vanishes():
    x = np.random.default_rng(0).normal(size=(5, 6))
    assert np.all(torsion_at(FlatMetric(3), x) == 0)


def test_conformal_torsion_example():
    metric = ConformalMetric("x1", 2)
    for x in np.random.default_rng(1).normal(size=(4, 4)):
        t = torsion_at(metric, x)
        assert t[1, 0, 1] == pytest.approx(0.5, abs=1e-12)
        assert t[1, 1, 0] == pytest.approx(-0.5, abs=1e-12)


@pytest.mark.parametrize("rho, n", CONFORMAL)
def test_torsion_antisymmetric(rho, n):
    x = np.random.default_rng(2).normal(size=(6, 2 * n)) * 0.5
    t = torsion_at(ConformalMetric(rho, n), x)
    np.testing.assert_allclose(t, -np.swapaxes(t, -1, -2), atol=1e-14)


@pytest.mark.parametrize("rho, n", CONFORMAL)
def test_metric_derivative_matches_finite_differences(rho, n):
    metric = ConformalMetric(rho, n)
    rng = np.random.default_rng(3)
    x = rng.normal(size=(50, 2 * n)) * 0.5
    h = 1e-6
    dg = metric.dg(x)
    for k in range(n):
        ex = np.zeros(2 * n)
        ey = np.zeros(2 * n)
        ex[2 * k] = h
        ey[2 * k + 1] = h
        dx = (metric.g(x + ex) - metric.g(x - ex)) / (2 * h)
        dy = (metric.g(x + ey) - metric.g(x - ey)) / (2 * h)
        np.testing.assert_allclose(dg[:, k], 0.5 * (dx - 1j * dy), atol=1e-6)


def test_singular_metric_rejected():
    class Bad(FlatMetric):
        def g(self, x):
            return -super().g(x)

    with pytest.raises(SingularMetric):
        torsion_at(Bad(2), np.zeros(4))


@pytest.mark.parametrize("rho, n", CONFORMAL)
def test_z_matches_hand_formula(rho, n):
    metric = ConformalMetric(rho, n)
    rng = np.random.default_rng(4)
    for x in rng.normal(size=(3, 2 * n)) * 0.5:
        du = rng.normal(size=n) + 1j * rng.normal(size=n)
        z = z_tensor(metric, du, x)
        ref = z_by_hand(metric.g(x), torsion_at(metric, x), du)
        np.testing.assert_allclose(z, ref, atol=1e-12)
        np.testing.assert_allclose(z, z.conj().T, atol=1e-12)


def test_z_at_chart_origin_by_hand():
    metric = ConformalMetric("0.3*x1 + 0.2*y2", 2)
    chart = boundary_chart(Ball(n=2), metric, np.array([0.6, 0.0, 0.0, 0.8]))
    cm = chart.chart_metric
    o = np.zeros(4)
    du = np.array([1.0, 0.0], complex)
    ref = z_by_hand(cm.g(o), torsion_at(cm, o), du)
    np.testing.assert_allclose(z_tensor(cm, du, o), ref, atol=1e-12)


@pytest.mark.parametrize("metric", [FlatMetric(2), FlatMetric(3)])
def test_flat_z_vanishes(metric):
    du = np.arange(metric.n) + 1j
    assert np.all(z_tensor(metric, du, np.zeros(2 * metric.n)) == 0)


def test_zero_gradient_gives_zero_z():
    metric = ConformalMetric("0.3*x1 + 0.2*y2", 2)
    assert np.all(z_tensor(metric, np.zeros(2), np.ones(4) * 0.1) == 0)


def test_w_examples():
    flat2 = FlatMetric(2)
    o2 = np.zeros(4)
    np.testing.assert_allclose(w_tensor(flat2, np.diag([1.0, 0.0]).astype(complex), o2),
                               np.diag([0.0, 1.0]))
    np.testing.assert_allclose(w_tensor(FlatMetric(3), np.eye(3, dtype=complex), np.zeros(6)),
                               np.eye(3))
    assert np.all(w_tensor(flat2, np.zeros((2, 2), complex), o2) == 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_w_trace_equals_z_trace_in_two_dimensions(seed):
    rng = np.random.default_rng(seed)
    metric = ConformalMetric("0.3*x1 + 0.2*y2", 2)
    x = rng.normal(size=4) * 0.5
    h = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    z = h + h.conj().T
    ginv = np.linalg.inv(metric.g(x))
    w = w_tensor(metric, z, x)
    assert np.trace(ginv @ w).real == pytest.approx(np.trace(ginv @ z).real, abs=1e-12)


def test_conformal_z_is_zero_in_two_dimensions():
    metric = ConformalMetric("0.3*x1 + 0.2*y2", 2)
    rng = np.random.default_rng(5)
    for x in rng.normal(size=(5, 4)):
        du = rng.normal(size=2) + 1j * rng.normal(size=2)
        np.testing.assert_allclose(z_tensor(metric, du, x), 0, atol=1e-14)


# ---------------------------------------------------------------------------
# domains and charts
# ---------------------------------------------------------------------------

def test_domain_config_round_trip():
    for dom in (Ball(n=2, radius=1.5, center=(0.1j, 0.2)), Polydisc(n=2, radii=(1.0, 2.0))):
        back = domain_from_config(dom.to_config())
        pts = np.random.default_rng(6).normal(size=(10, 4))
        np.testing.assert_allclose(back.sigma(pts), dom.sigma(pts))


def test_ball_boundary_points_lie_on_the_sphere():
    pts = Ball(n=2, radius=2.0).boundary_points(32)
    np.testing.assert_allclose(np.linalg.norm(pts, axis=1), 2.0, atol=1e-14)


def test_chart_sends_inward_normal_to_xn():
    p0 = np.array([0.0, 0.0, 1.0, 0.0])
    chart = boundary_chart(Ball(n=2), FlatMetric(2), p0)
    np.testing.assert_allclose(chart.to_ambient([0, 0, 0.25, 0]), [0, 0, 0.75, 0], atol=1e-14)
    np.testing.assert_allclose(chart.chart_metric.g(np.zeros(4)), np.eye(2), atol=1e-14)


@pytest.mark.parametrize("metric", [FlatMetric(2), ConformalMetric("0.3*x1 + 0.2*y2", 2)])
@pytest.mark.parametrize("p0", [[1.0, 0, 0, 0], [0.6, 0, 0, 0.8], [0.5, 0.5, -0.5, 0.5]])
def test_chart_invariants(metric, p0):
    p0 = np.array(p0)
    chart = boundary_chart(Ball(n=2), metric, p0)
    np.testing.assert_allclose(chart.chart_metric.g(np.zeros(4)), np.eye(2), atol=1e-12)
    xi = np.random.default_rng(7).normal(size=(5, 4))
    np.testing.assert_allclose(chart.from_ambient(chart.to_ambient(xi)), xi, atol=1e-12)
    # the x_n direction is the inward normal (up to the metric scale)
    step = chart.to_ambient([0, 0, 1e-3, 0]) - p0
    np.testing.assert_allclose(step / np.linalg.norm(step), -p0, atol=1e-12)
    assert chart.sigma.real_gradient(np.zeros(4))[-2] == pytest.approx(1.0, abs=1e-12)


def test_adapted_chart_is_identity():
    dom = Ball(n=2, radius=1.0, center=(0.0, 1.0))
    chart = boundary_chart(dom, FlatMetric(2), np.zeros(4))
    assert chart.is_identity


def test_chart_requires_boundary_point():
    with pytest.raises(NotOnBoundary):
        boundary_chart(Ball(n=2), FlatMetric(2), np.array([0.5, 0, 0, 0]))


def test_inward_normal_of_polydisc():
    dom = Polydisc(n=2, radii=(1.0, 2.0))
    nu = inward_normal(dom, np.array([0.3, 0.0, 0.0, 2.0]))
    np.testing.assert_allclose(nu, [0, -1j], atol=1e-14)


@pytest.mark.parametrize("radius", [1.0, 2.0])
def test_sigma_hessian_of_the_ball(radius):
    p0 = np.array([0.0, 0.0, radius, 0.0])
    chart = boundary_chart(Ball(n=2, radius=radius), FlatMetric(2), p0)
    s, grad, hess = sigma_hessian(chart, np.zeros(4))
    assert s == pytest.approx(0.0, abs=1e-14)
    assert hess[0, 0].real == pytest.approx(-1 / (2 * radius), abs=1e-12)
    assert hess[1, 1].real == pytest.approx(-1 / (4 * radius), abs=1e-12)
    # finite-difference cross-check of the tangential entry
    h = 1e-4
    f = chart.sigma.value
    e1 = np.array([h, 0, 0, 0])
    e2 = np.array([0, h, 0, 0])
    o = np.zeros(4)
    fd = (f(o + e1) + f(o - e1) + f(o + e2) + f(o - e2) - 4 * f(o)) / (4 * h * h)
    assert fd == pytest.approx(hess[0, 0].real, abs=1e-6)


def test_linear_sigma_has_zero_hessian():
    s = ScalarField("x2", 2)
    np.testing.assert_allclose(s.complex_hessian(np.zeros(4)), 0, atol=0)


def test_sigma_hessian_guard_near_center():
    chart = boundary_chart(Ball(n=2), FlatMetric(2), np.array([0.0, 0.0, 1.0, 0.0]))
    with pytest.raises(TooCloseToCenter):
        sigma_hessian(chart, np.array([0.0, 0.0, 1.0, 0.0]))


# ---------------------------------------------------------------------------
# frames
# ---------------------------------------------------------------------------

def test_frames_at_origin_are_coordinate_frames():
    chart = boundary_chart(Ball(n=3), FlatMetric(3), np.array([0, 0, 0, 0, 1.0, 0]))
    frames = level_frames(chart.sigma, np.zeros(6))
    np.testing.assert_allclose(np.abs(frames), np.eye(3)[:2], atol=1e-12)


@pytest.mark.parametrize("metric", [None, ConformalMetric("0.2*x1 - 0.1*y2 + 0.1*x3", 3)])
def test_frames_orthonormal_and_tangent(metric):
    d = Ball(n=3).sigma_field()
    rng = np.random.default_rng(8)
    x = rng.normal(size=(10, 6)) * 0.3 + 0.2
    frames = level_frames(d, x, metric)
    g = np.broadcast_to(np.eye(3), (10, 3, 3)) if metric is None else metric.g(x)
    gram = np.einsum("bai,bij,bcj->bac", frames, g, np.conj(frames))
    np.testing.assert_allclose(gram, np.broadcast_to(np.eye(2), gram.shape), atol=1e-12)
    tangency = np.einsum("bai,bi->ba", frames, d.dz(x))
    np.testing.assert_allclose(tangency, 0, atol=1e-12)


def test_frames_vanishing_gradient():
    with pytest.raises(VanishingGradient):
        level_frames(ScalarField("x1^2 + x2^2", 2), np.zeros((1, 4)))


# ---------------------------------------------------------------------------
# origin identities
# ---------------------------------------------------------------------------

def test_origin_identities_flat_are_exact():
    chart = boundary_chart(Ball(n=3), FlatMetric(3), np.array([0, 0, 0, 0, 1.0, 0]))
    res = origin_identities_check(chart, ScalarField("x1 + 3*y2*x3", 3))
    assert res.max == 0.0


@pytest.mark.parametrize("rho, n", CONFORMAL)
def test_origin_identities_conformal_linear(rho, n):
    p0 = np.zeros(2 * n)
    p0[-2] = 0.6
    p0[0] = 0.8
    chart = boundary_chart(Ball(n=n), ConformalMetric(rho, n), p0)
    assert origin_identities_check(chart, ScalarField("x1", n)).max <= 1e-8


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_origin_identities_random_polynomial(seed):
    rng = np.random.default_rng(seed)
    n = 3
    names = [f"{c}{k}" for k in range(1, n + 1) for c in "xy"]
    terms = [f"{rng.normal():.6f}*{a}" for a in names]
    terms += [f"{rng.normal():.6f}*{a}*{b}" for a, b in zip(names, names[1:])]
    v = ScalarField(" + ".join(terms).replace("+ -", "- "), n)
    x = rng.normal(size=2 * n)
    p0 = x / np.linalg.norm(x)
    chart = boundary_chart(Ball(n=n), ConformalMetric("0.2*x1 - 0.1*y2 + 0.15*x3*y1", n), p0)
    assert origin_identities_check(chart, v).max <= 1e-8
