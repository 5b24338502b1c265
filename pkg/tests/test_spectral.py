"""Cone membership, operator values and structural checks."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hessbound.errors import ConeViolation, NotOnBoundary, SampleOutsideCone
from hessbound.spectral import (
    SpectralOperator,
    check_structural,
    degeneracy_gap,
    elementary_symmetric,
    eval_with_gradient,
    in_cone,
    in_cone_infinity,
    lambda_mu_functional,
    marcus_check,
    sample_cone,
    supporting_plane,
)

ALL_OPS = [
    SpectralOperator("log-sigma-k", 3, 3),
    SpectralOperator("log-sigma-k", 3, 2),
    SpectralOperator("sigma-k-root", 3, 2),
    SpectralOperator("sigma-k-root", 4, 3),
    SpectralOperator("sigma-quotient", 3, 3, 1),
    SpectralOperator("log-P-n-minus-1", 3),
    SpectralOperator("log-P-n-minus-1", 4),
]


def brute_sigma(lam, k):
    return sum(math.prod(c) for c in itertools.combinations(lam, k))


# ---------------------------------------------------------------------------
# membership
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("op, lam, expected", [
    (SpectralOperator("log-sigma-k", 3, 3), (1, 2, 3), True),
    (SpectralOperator("log-P-n-minus-1", 3), (-1, 1, 1), False),
    (SpectralOperator("log-sigma-k", 2, 2), (3, -1), False),
    (SpectralOperator("sigma-k-root", 2, 1), (3, -1), True),
    (SpectralOperator("log-P-n-minus-1", 3), (-0.5, 1, 1), True),
])
def test_in_cone_examples(op, lam, expected):
    assert bool(in_cone(op, np.array(lam, float))) == expected


def test_in_cone_rejects_negative_margin():
    with pytest.raises(ValueError):
        in_cone(SpectralOperator("log-sigma-k", 2), np.ones(2), margin=-1.0)


@pytest.mark.parametrize("op, lam_p, expected", [
    (SpectralOperator("log-sigma-k", 3, 3), (1, 1), True),
    (SpectralOperator("log-sigma-k", 3, 3), (-1, 1), False),
    (SpectralOperator("log-P-n-minus-1", 3), (-1, 2), True),
    (SpectralOperator("log-P-n-minus-1", 3), (-1, 1), False),
    (SpectralOperator("sigma-k-root", 3, 2), (-1, 2), True),
    (SpectralOperator("sigma-k-root", 3, 2), (-2, 1), False),
])
def test_in_cone_infinity_examples(op, lam_p, expected):
    assert bool(in_cone_infinity(op, np.array(lam_p, float))) == expected


def test_type_two_cone_is_flagged():
    res, flag = in_cone_infinity(SpectralOperator("sigma-k-root", 3, 1), np.array([-5.0, -7.0]),
                                 return_flag=True)
    assert res and flag == "type-2"


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-4, 4), min_size=3, max_size=3),
       st.floats(0.05, 20.0))
def test_cone_scaling(lam, t):
    lam = np.array(lam)
    for op in ALL_OPS[:3] + ALL_OPS[5:6]:
        if op.n != 3:
            continue
        if bool(op.contains(lam, 0.0)):
            assert bool(op.contains(t * lam, 0.0))


# ---------------------------------------------------------------------------
# values and gradients
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_elementary_symmetric_matches_brute_force(n):
    rng = np.random.default_rng(n)
    lam = rng.normal(size=n)
    sig = elementary_symmetric(lam)
    for k in range(n + 1):
        assert sig[k] == pytest.approx(brute_sigma(lam, k) if k else 1.0, abs=1e-12)


def test_operator_values_closed_form():
    lam = np.array([1.0, 2.0, 3.0])
    assert SpectralOperator("log-sigma-k", 3, 3).value(lam) == pytest.approx(math.log(6))
    assert SpectralOperator("log-sigma-k", 3, 2).value(lam) == pytest.approx(math.log(11))
    assert SpectralOperator("sigma-k-root", 3, 2).value(lam) == pytest.approx(math.sqrt(11))
    assert SpectralOperator("sigma-quotient", 3, 3, 1).value(lam) == pytest.approx(1.0)
    # μ = (5, 4, 3) for λ = (1, 2, 3)
    assert SpectralOperator("log-P-n-minus-1", 3).value(lam) == pytest.approx(math.log(60))


def test_log_pn1_on_the_diagonal_ray():
    op = SpectralOperator("log-P-n-minus-1", 3)
    for t in (0.5, 1.0, 7.0):
        assert op.value(np.full(3, t)) == pytest.approx(3 * math.log(2 * t))


@pytest.mark.parametrize("op", ALL_OPS, ids=lambda o: f"{o.kind}-{o.n}-{o.k}")
def test_gradient_matches_finite_differences(op):
    rng = np.random.default_rng(7)
    lam = sample_cone(op, 5, rng)
    _, grad = eval_with_gradient(op, lam)
    h = 1e-6
    for i in range(op.n):
        e = np.zeros(op.n)
        e[i] = h
        fd = (op.value(lam + e) - op.value(lam - e)) / (2 * h)
        np.testing.assert_allclose(grad[:, i], fd, rtol=1e-5, atol=1e-7)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.permutations(range(4)))
def test_permutation_symmetry(seed, perm):
    perm = np.array(perm)
    for op in (SpectralOperator("log-sigma-k", 4, 3), SpectralOperator("log-P-n-minus-1", 4),
               SpectralOperator("sigma-quotient", 4, 4, 2)):
        lam = sample_cone(op, 1, np.random.default_rng(seed))[0]
        v, g = eval_with_gradient(op, lam)
        vp, gp = eval_with_gradient(op, lam[perm])
        assert abs(vp - v) <= 1e-12 * max(1, abs(v))
        np.testing.assert_allclose(gp, g[perm], rtol=1e-12, atol=1e-12)


def test_eval_outside_cone_raises():
    with pytest.raises(ConeViolation):
        eval_with_gradient(SpectralOperator("log-sigma-k", 2), np.array([3.0, -1.0]))


@pytest.mark.parametrize("kind, n, k, l", [
    ("log-sigma-k", 1, None, None),
    ("log-sigma-k", 3, 4, None),
    ("sigma-quotient", 3, 2, 2),
    ("no-such-kind", 3, None, None),
])
def test_operator_construction_guards(kind, n, k, l):
    with pytest.raises(ValueError):
        SpectralOperator(kind, n, k, l)


def test_config_round_trip():
    for op in ALL_OPS:
        assert SpectralOperator.from_config(op.to_config()) == op


# ---------------------------------------------------------------------------
# supporting planes
# ---------------------------------------------------------------------------

def test_plane_of_the_orthant():
    plane = supporting_plane(SpectralOperator("log-sigma-k", 3, 3), np.array([0.0, 1.0]))
    np.testing.assert_allclose(plane.mu, [1.0, 0.0], atol=1e-12)


def test_plane_of_the_half_space():
    plane = supporting_plane(SpectralOperator("log-P-n-minus-1", 3), np.array([-1.0, 1.0]))
    np.testing.assert_allclose(plane.mu, [0.5, 0.5], atol=1e-12)


def test_plane_of_sigma_two_projection_by_bisection():
    op = SpectralOperator("sigma-k-root", 3, 2)
    lo, hi = 0.0, 5.0  # λ′ = (1, −t) is inside for t < 1
    for _ in range(36):
        mid = 0.5 * (lo + hi)
        if in_cone_infinity(op, np.array([1.0, -mid])):
            lo = mid
        else:
            hi = mid
    lam_p = np.array([1.0, -lo])
    plane = supporting_plane(op, lam_p, validate=1000, rng=np.random.default_rng(3))
    assert plane.mu.sum() == pytest.approx(1.0)
    assert plane.residual <= 1e-8
    assert np.all(plane.mu >= 0)


def test_plane_rejects_interior_point():
    with pytest.raises(NotOnBoundary):
        supporting_plane(SpectralOperator("log-sigma-k", 3, 3), np.array([1.0, 1.0]))


def test_type_two_has_no_plane():
    with pytest.raises(NotOnBoundary):
        supporting_plane(SpectralOperator("sigma-k-root", 3, 1), np.array([0.0, 1.0]))


# ---------------------------------------------------------------------------
# frame functionals
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("mu, theta, expected", [
    ((1.0, 0.0), np.diag([5.0, 7.0, 9.0]), 5.0),
    ((0.5, 0.5), np.diag([1.0, -1.0, 3.0]), 0.0),
    ((0.3, 0.7), np.zeros((3, 3)), 0.0),
])
def test_lambda_mu_examples(mu, theta, expected):
    frames = np.eye(3, dtype=complex)[:2]
    assert lambda_mu_functional(np.array(mu), frames, theta) == pytest.approx(expected)


def test_marcus_examples():
    theta = np.diag([1.0, 2.0]).astype(complex)
    lhs, rhs, holds = marcus_check(np.array([1.0, 0.0]), theta, np.eye(2, dtype=complex))
    assert (lhs, rhs, holds) == (pytest.approx(1.0), pytest.approx(1.0), True)
    frames = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
    lhs, rhs, holds = marcus_check(np.array([1.0, 0.0]), theta, frames)
    assert rhs == pytest.approx(1.5) and lhs == pytest.approx(1.0) and holds


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 4), st.integers(0, 2**31 - 1))
def test_marcus_random(n, seed):
    rng = np.random.default_rng(seed)
    h = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    theta = h + h.conj().T
    q, _ = np.linalg.qr(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
    mu = np.sort(rng.uniform(0, 1, n))[::-1]
    assert marcus_check(mu, theta, q.T)[2]


# ---------------------------------------------------------------------------
# structural conditions and degeneracy
# ---------------------------------------------------------------------------

def test_structural_log_det_passes():
    rep = check_structural(SpectralOperator("log-sigma-k", 2, 2), [[1.0, 1.0], [2.0, 1.0]])
    assert rep.all_pass


def test_structural_quotient_is_bounded():
    rep = check_structural(SpectralOperator("sigma-quotient", 2, 2, 1), [[1.0, 1.0], [2.0, 1.0]])
    assert rep.verdicts["unbounded"] is False
    assert rep.verdicts["elliptic"] and rep.verdicts["concave"]
    assert rep.witnesses["unbounded"] is not None


def test_structural_log_pn1_on_the_ray():
    rep = check_structural(SpectralOperator("log-P-n-minus-1", 3),
                           [[t, t, t] for t in (0.5, 1.0, 2.0, 4.0)])
    assert rep.all_pass


def test_structural_rejects_outside_samples():
    with pytest.raises(SampleOutsideCone):
        check_structural(SpectralOperator("log-sigma-k", 2, 2), [[3.0, -1.0]])


@pytest.mark.parametrize("op, psi, expected", [
    (SpectralOperator("log-sigma-k", 2, 2), 0.0, np.inf),
    (SpectralOperator("sigma-k-root", 2, 2), 1.0, 1.0),
    (SpectralOperator("sigma-k-root", 2, 2), 0.0, 0.0),
])
def test_degeneracy_gap_examples(op, psi, expected):
    gap = degeneracy_gap(op, np.full(10, psi))
    assert gap.value == expected
    assert gap.nondegenerate == (expected > 0)
