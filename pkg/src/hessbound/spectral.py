"""Symmetric spectral operators f(λ) on cones Γ ⊂ ℝⁿ.

Four families are supported:

``log-sigma-k``
    log σ_k on the Gårding cone Γ_k (``k = n`` is log det).
``sigma-k-root``
    σ_k^{1/k} on Γ_k (``k = 1`` is the trace).
``sigma-quotient``
    (σ_k / σ_l)^{1/(k-l)} on Γ_k, with 0 ≤ l < k.
``log-P-n-minus-1``
    Σ_i log μ_i with μ_i = Σ_{j≠i} λ_j, on the cone where every μ_i > 0.

All functions broadcast over leading axes: an eigenvalue array of shape
``(..., n)`` gives values of shape ``(...)``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import (
    ConeViolation,
    DegenerateNormal,
    FrameNotOrthonormal,
    NotOnBoundary,
    ProbeExhausted,
    SampleOutsideCone,
)

KINDS = ("log-sigma-k", "sigma-k-root", "sigma-quotient", "log-P-n-minus-1")
DEFAULT_MARGIN = 1e-10
PROBE_RADII = 2.0 ** np.arange(0, 41)  # 1 .. ~1.1e12 by doubling
T_GRID = np.logspace(0, 8, 33)


# ---------------------------------------------------------------------------
# elementary symmetric polynomials
# ---------------------------------------------------------------------------

def elementary_symmetric(lam):
    """Return σ_0..σ_n of the last axis of ``lam``, shape ``(..., n+1)``."""
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    e = np.zeros(lam.shape[:-1] + (n + 1,))
    e[..., 0] = 1.0
    for i in range(n):
        x = lam[..., i:i + 1]
        e[..., 1:i + 2] = e[..., 1:i + 2] + x * e[..., 0:i + 1]
    return e


def elementary_symmetric_deleted(lam):
    """Return σ_j(λ|i) for every deleted index i.

    Output has shape ``(..., n, n)`` where entry ``[..., i, j]`` is σ_j of λ
    with its i-th component removed (j = 0..n-1).
    """
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    out = np.empty(lam.shape[:-1] + (n, n))
    for i in range(n):
        rest = np.delete(lam, i, axis=-1)
        out[..., i, :] = elementary_symmetric(rest)
    return out


# ---------------------------------------------------------------------------
# operator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectralOperator:
    """A symmetric function f with its admissible cone.

    Parameters
    ----------
    kind : str
        One of :data:`KINDS`.
    n : int
        Dimension, at least 2.
    k, l : int, optional
        Family parameters. ``k`` defaults to ``n`` for the σ families and
        ``l`` defaults to 0 for quotients.
    """

    kind: str
    n: int
    k: int | None = None
    l: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        if self.n < 2:
            raise ValueError("dimension must be at least 2")
        if self.kind == "log-P-n-minus-1":
            object.__setattr__(self, "k", None)
            object.__setattr__(self, "l", None)
            return
        k = self.n if self.k is None else int(self.k)
        if not 1 <= k <= self.n:
            raise ValueError(f"k={k} out of range for n={self.n}")
        object.__setattr__(self, "k", k)
        if self.kind == "sigma-quotient":
            l = 0 if self.l is None else int(self.l)
            if not 0 <= l < k:
                raise ValueError("quotient needs 0 <= l < k")
            object.__setattr__(self, "l", l)
        else:
            object.__setattr__(self, "l", None)

    # -- configuration -----------------------------------------------------
    @classmethod
    def from_config(cls, cfg):
        kind = cfg["kind"]
        aliases = {"log-det": ("log-sigma-k", None), "log-sigma-n": ("log-sigma-k", None)}
        if kind in aliases:
            kind = aliases[kind][0]
        return cls(kind=kind, n=int(cfg["n"]), k=cfg.get("k"), l=cfg.get("l"))

    def to_config(self):
        cfg = {"kind": self.kind, "n": self.n}
        if self.k is not None:
            cfg["k"] = self.k
        if self.l is not None:
            cfg["l"] = self.l
        return cfg

    # -- classification ----------------------------------------------------
    @property
    def is_log_type(self):
        return self.kind in ("log-sigma-k", "log-P-n-minus-1")

    @property
    def cone_type(self):
        """1 if the projected cone Γ_∞ is proper, 2 if it is all of ℝ^{n-1}."""
        if self.kind == "log-P-n-minus-1":
            return 1
        return 2 if self.k == 1 else 1

    @property
    def boundary_sup(self):
        """sup of f over ∂Γ (−∞ for log types, 0 otherwise)."""
        return -np.inf if self.is_log_type else 0.0

    @property
    def cone(self):
        return ConeDescriptor(self)

    # -- cone --------------------------------------------------------------
    def cone_slack(self, lam):
        """Smallest defining quantity; λ ∈ Γ iff the slack is positive."""
        lam = np.asarray(lam, dtype=float)
        if self.kind == "log-P-n-minus-1":
            mu = lam.sum(axis=-1, keepdims=True) - lam
            return mu.min(axis=-1)
        e = elementary_symmetric(lam)
        return e[..., 1:self.k + 1].min(axis=-1)

    def contains(self, lam, margin=0.0):
        return self.cone_slack(lam) > margin

    # -- evaluation --------------------------------------------------------
    def value(self, lam):
        """f(λ) without a cone check (NaN or −∞ outside Γ)."""
        return self.value_and_gradient(lam)[0]

    def value_and_gradient(self, lam):
        """Return ``(f, ∇f)`` broadcasting over leading axes (no cone check)."""
        lam = np.asarray(lam, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.kind == "log-P-n-minus-1":
                mu = lam.sum(axis=-1, keepdims=True) - lam
                val = np.log(mu).sum(axis=-1)
                inv = 1.0 / mu
                grad = inv.sum(axis=-1, keepdims=True) - inv
                return val, grad
            k = self.k
            e = elementary_symmetric(lam)
            ed = elementary_symmetric_deleted(lam)
            sk = e[..., k]
            dsk = ed[..., :, k - 1]
            if self.kind == "log-sigma-k":
                return np.log(sk), dsk / sk[..., None]
            if self.kind == "sigma-k-root":
                val = np.power(sk, 1.0 / k)
                grad = (val / (k * sk))[..., None] * dsk
                return val, grad
            l = self.l
            sl = e[..., l]
            dsl = ed[..., :, l - 1] if l > 0 else np.zeros_like(dsk)
            q = sk / sl
            dq = (dsk * sl[..., None] - sk[..., None] * dsl) / (sl * sl)[..., None]
            p = 1.0 / (k - l)
            val = np.power(q, p)
            grad = (p * val / q)[..., None] * dq
            return val, grad

    def matrix_value(self, a, metric=None):
        """f(λ_ω(A)) for Hermitian ``A`` (eigenvalues relative to ``metric``)."""
        return self.value(form_eigenvalues(a, metric))


@dataclass(frozen=True)
class ConeDescriptor:
    """Membership predicate for the cone of ``op`` with a strictness margin."""

    op: SpectralOperator
    margin: float = DEFAULT_MARGIN

    @property
    def cone_type(self):
        return self.op.cone_type

    def contains(self, lam, margin=None):
        return self.op.contains(lam, self.margin if margin is None else margin)


def form_eigenvalues(a, metric=None):
    """Ascending eigenvalues of a Hermitian form relative to a metric."""
    a = np.asarray(a, dtype=complex)
    if metric is None:
        return np.linalg.eigvalsh(a)
    chol = np.linalg.cholesky(np.asarray(metric, dtype=complex))
    linv = np.linalg.inv(chol)
    b = linv @ a @ np.conj(np.swapaxes(linv, -1, -2))
    return np.linalg.eigvalsh(0.5 * (b + np.conj(np.swapaxes(b, -1, -2))))


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def eval_with_gradient(op, lam, margin=DEFAULT_MARGIN):
    """Value and analytic gradient at a cone point.

    Raises
    ------
    ConeViolation
        If any λ in the batch is outside Γ with the given margin.
    """
    lam = np.asarray(lam, dtype=float)
    inside = op.contains(lam, margin)
    if not np.all(inside):
        raise ConeViolation(f"point outside the cone of {op.kind}: "
                            f"{lam[~inside][0] if lam.ndim > 1 else lam}")
    return op.value_and_gradient(lam)


def in_cone(op, lam, margin=0.0):
    """True iff every defining inequality holds with slack above ``margin``."""
    if margin < 0:
        raise ValueError("margin must be nonnegative")
    return op.contains(lam, margin)


def _projected_slack(op, lam_p, radius):
    full = np.concatenate(
        [lam_p, np.broadcast_to(radius, lam_p.shape[:-1] + (1,))], axis=-1)
    return op.cone_slack(full)


def in_cone_infinity(op, lam_p, margin=0.0, return_flag=False):
    """Membership of λ′ ∈ ℝ^{n-1} in the projected cone Γ_∞.

    The test appends a probe R to λ′, doubling R from 1 to about 10¹², and
    reports membership as soon as (λ′, R) ∈ Γ. Membership is monotone in R,
    so the probe is exact up to the largest radius. Type-2 cones are
    reported as members without probing; ``return_flag`` exposes that case.
    For log P_{n-1} the projection is the half-space Σλ′ > 0, tested
    directly because the probe loses precision in (Σλ′ + R) − R.
    """
    lam_p = np.asarray(lam_p, dtype=float)
    if lam_p.shape[-1] != op.n - 1:
        raise ValueError("λ′ must have length n-1")
    if op.cone_type == 2:
        res = np.ones(lam_p.shape[:-1], dtype=bool)
        res = bool(res) if res.ndim == 0 else res
        return (res, "type-2") if return_flag else res
    if op.kind == "log-P-n-minus-1":
        res = lam_p.sum(axis=-1) > margin
        res = bool(res) if res.ndim == 0 else res
        return (res, "half-space") if return_flag else res
    member = np.zeros(lam_p.shape[:-1], dtype=bool)
    prev = None
    slack = None
    for radius in PROBE_RADII:
        prev = slack
        slack = _projected_slack(op, lam_p, radius)
        member |= slack > margin
        if np.all(member):
            break
    # slack still rising at the largest radius means the probe has not settled
    undecided = ~member & (slack > prev) if prev is not None else ~member
    if np.any(undecided):
        warnings.warn("projected-cone probe undecided at the largest radius; "
                      "treated as non-member", ProbeExhausted, stacklevel=2)
    res = bool(member) if member.ndim == 0 else member
    return (res, "probed") if return_flag else res


def sample_cone_infinity(op, count, rng, scale=3.0):
    """Random interior samples of Γ_∞ (rejection from shifted Gaussians)."""
    m = op.n - 1
    out = []
    while sum(len(o) for o in out) < count:
        x = rng.normal(size=(4 * count, m)) * scale
        x += rng.uniform(0, scale, size=(4 * count, 1))
        keep = in_cone_infinity(op, x, margin=1e-6)
        out.append(x[keep])
    return np.concatenate(out)[:count]


def sample_cone(op, count, rng, scale=3.0):
    """Random interior samples of Γ (rejection from shifted Gaussians)."""
    out = []
    while sum(len(o) for o in out) < count:
        x = rng.normal(size=(4 * count, op.n)) * scale
        x += rng.uniform(0, scale, size=(4 * count, 1))
        keep = op.contains(x, 1e-6)
        out.append(x[keep])
    return np.concatenate(out)[:count]


@dataclass(frozen=True)
class SupportingPlane:
    """Unit-sum nonnegative normal μ to ∂Γ_∞ at a boundary point."""

    mu: np.ndarray
    point: np.ndarray
    method: str

    @property
    def residual(self):
        return float(abs(self.mu @ self.point))


def _boundary_check(op, lam_p, tol):
    one = np.ones_like(lam_p)
    scale = max(1.0, float(np.max(np.abs(lam_p))))
    h = tol * scale
    inner = in_cone_infinity(op, lam_p + h * one)
    outer = in_cone_infinity(op, lam_p - h * one)
    return bool(inner) and not bool(outer)


def supporting_plane(op, lam_p, tol=1e-6, validate=0, rng=None):
    """Supporting plane of Γ_∞ at a boundary point λ̃′.

    The normal is the normalized gradient of the defining polynomial of Γ_∞
    (σ_{k-1} for Γ_k) or the uniform vector for the half-space Γ_∞ of log
    P_{n-1}. A linear program over sampled rays is the fallback when the
    gradient vanishes.

    Parameters
    ----------
    validate : int
        Number of random Γ_∞ samples on which μ·λ′ > 0 is asserted.
    """
    lam_p = np.asarray(lam_p, dtype=float)
    m = op.n - 1
    if op.cone_type == 2:
        raise NotOnBoundary("type-2 cone: Γ_∞ has no boundary")
    if not _boundary_check(op, lam_p, tol):
        raise NotOnBoundary(f"{lam_p} is not on the boundary of Γ_∞")
    mu = None
    method = "gradient"
    if op.kind == "log-P-n-minus-1" or op.k == 2:
        mu = np.full(m, 1.0 / m)
    else:
        grad = elementary_symmetric_deleted(lam_p)[:, op.k - 2]
        if np.all(grad >= -1e-12) and grad.sum() > 1e-10:
            mu = np.clip(grad, 0.0, None) / np.clip(grad, 0.0, None).sum()
        if mu is None or abs(mu @ lam_p) > 1e-8:
            mu = None
    if mu is None:
        mu = _lp_plane(op, lam_p, rng or np.random.default_rng(0))
        method = "lp"
    plane = SupportingPlane(mu=mu, point=lam_p.copy(), method=method)
    if plane.residual > 1e-8 * max(1.0, np.abs(lam_p).max()):
        raise DegenerateNormal(f"plane residual {plane.residual:.3e}")
    if validate:
        samples = sample_cone_infinity(op, validate, rng or np.random.default_rng(1))
        if np.any(samples @ mu <= 0):
            raise DegenerateNormal("plane fails on sampled Γ_∞ points")
    return plane


def _lp_plane(op, lam_p, rng, count=2000):
    m = op.n - 1
    rays = sample_cone_infinity(op, count, rng)
    rays /= np.linalg.norm(rays, axis=1, keepdims=True)
    # variables (μ_1..μ_m, t); maximize t
    c = np.zeros(m + 1)
    c[-1] = -1.0
    a_ub = np.hstack([-rays, np.ones((count, 1))])
    b_ub = np.zeros(count)
    a_eq = np.vstack([np.r_[np.ones(m), 0.0], np.r_[lam_p, 0.0]])
    b_eq = np.array([1.0, 0.0])
    bounds = [(0, None)] * m + [(None, 1.0)]
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
                  bounds=bounds, method="highs")
    if not res.success or res.x[-1] <= 0:
        raise DegenerateNormal("no supporting plane from the ray LP")
    return res.x[:m]


def _check_orthonormal(frames, metric, tol=1e-8):
    frames = np.asarray(frames, dtype=complex)
    g = np.eye(frames.shape[-1]) if metric is None else np.asarray(metric)
    gram = frames @ g @ np.conj(frames).T
    err = np.max(np.abs(gram - np.eye(frames.shape[0])))
    if err > tol:
        raise FrameNotOrthonormal(f"Gram deviation {err:.3e}")
    return frames


def lambda_mu_functional(mu, frames, theta, metric=None):
    """Σ_α μ_α T_α^i conj(T_α^j) Θ_{ij̄} for orthonormal frames T_α (rows)."""
    mu = np.asarray(getattr(mu, "mu", mu), dtype=float)
    frames = _check_orthonormal(frames, metric)
    theta = np.asarray(theta, dtype=complex)
    vals = np.einsum("ai,ij,aj->a", frames, theta, np.conj(frames))
    return float(np.real(mu @ vals[:len(mu)]))


def marcus_check(mu, theta, frames, metric=None):
    """Compare Σ μ_i λ_i(Θ) (ascending λ) with Σ μ_i Θ(T_i, T̄_i)."""
    mu = np.asarray(mu, dtype=float)
    frames = _check_orthonormal(frames, metric)
    lam = form_eigenvalues(theta, metric)
    lhs = float(mu @ lam[:len(mu)])
    diag = np.real(np.einsum("ai,ij,aj->a", frames, np.asarray(theta, complex),
                             np.conj(frames)))
    rhs = float(mu @ diag[:len(mu)])
    return lhs, rhs, lhs <= rhs + 1e-10


def diagonal_margin(op, lam, tol=1e-12):
    """Largest s with λ − s·1 ∈ Γ (a numeric distance-to-∂Γ proxy)."""
    lam = np.asarray(lam, dtype=float)
    if not op.contains(lam):
        return 0.0
    lo, hi = 0.0, 1.0
    while op.contains(lam - hi):
        lo, hi = hi, 2 * hi
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if op.contains(lam - mid):
            lo = mid
        else:
            hi = mid
    return lo


# ---------------------------------------------------------------------------
# structural conditions
# ---------------------------------------------------------------------------

@dataclass
class ConditionReport:
    """Per-condition verdicts with witnesses; all verdicts are sampled."""

    operator: dict
    verdicts: dict = field(default_factory=dict)
    witnesses: dict = field(default_factory=dict)
    label: str = "sampled"

    @property
    def all_pass(self):
        return all(self.verdicts.values())

    def to_json(self):
        return json.dumps({"operator": self.operator, "label": self.label,
                           "verdicts": self.verdicts,
                           "witnesses": self.witnesses}, sort_keys=True)


def _diverges(values):
    """Decade-increment test: growth has not died out by the last decade."""
    inc = np.diff(values)
    if not np.all(np.isfinite(inc)) or np.any(inc <= 0):
        return False
    return bool(inc[-1] >= 0.5 * inc[0])


def check_structural(op, samples, margin=DEFAULT_MARGIN):
    """Sampled certificates of the structural conditions on (f, Γ).

    Verdict keys: ``elliptic`` (f_i > 0), ``concave`` (midpoint concavity),
    ``growth_pairs`` (Σ f_i(λ) μ_i > 0 on sample pairs), ``growth_ray``
    (f(tλ) increasing on a geometric t-grid), ``growth`` (both),
    ``unbounded`` (f(λ′, λ_n + t) diverges) and ``unbounded_tangential``
    (f(λ + t(1,…,1,0)) diverges).
    """
    lam = np.atleast_2d(np.asarray(samples, dtype=float))
    if lam.shape[1] != op.n:
        raise ValueError("samples must have length n")
    inside = op.contains(lam, margin)
    if not np.all(inside):
        raise SampleOutsideCone(f"sample {lam[~inside][0]} is outside Γ")
    rep = ConditionReport(operator=op.to_config())
    val, grad = op.value_and_gradient(lam)

    bad = np.where(~np.all(grad > 0, axis=1))[0]
    rep.verdicts["elliptic"] = bad.size == 0
    rep.witnesses["elliptic"] = lam[bad[0]].tolist() if bad.size else None

    i, j = np.triu_indices(len(lam), 1)
    mid = 0.5 * (lam[i] + lam[j])
    fm = op.value(mid)
    gap = fm - 0.5 * (val[i] + val[j])
    tol = 1e-12 * np.maximum(1.0, np.abs(fm))
    bad = np.where(gap < -tol)[0]
    rep.verdicts["concave"] = bad.size == 0
    rep.witnesses["concave"] = ([lam[i[bad[0]]].tolist(), lam[j[bad[0]]].tolist()]
                                if bad.size else None)

    pairs = grad @ lam.T  # [a, b] = Σ_i f_i(λ_a) λ_b,i
    bad = np.argwhere(pairs <= 0)
    rep.verdicts["growth_pairs"] = bad.size == 0
    rep.witnesses["growth_pairs"] = ([lam[bad[0][0]].tolist(), lam[bad[0][1]].tolist()]
                                     if bad.size else None)

    ray = op.value(T_GRID[None, :, None] * lam[:, None, :])
    bad = np.where(~np.all(np.diff(ray, axis=1) > 0, axis=1))[0]
    rep.verdicts["growth_ray"] = bad.size == 0
    rep.witnesses["growth_ray"] = lam[bad[0]].tolist() if bad.size else None
    rep.verdicts["growth"] = rep.verdicts["growth_pairs"] and rep.verdicts["growth_ray"]

    decades = 10.0 ** np.arange(0, 9)
    for key, direction in (("unbounded", np.eye(op.n)[-1]),
                           ("unbounded_tangential", np.r_[np.ones(op.n - 1), 0.0])):
        path = lam[:, None, :] + decades[None, :, None] * direction
        vals = op.value(path)
        ok = np.array([_diverges(v) for v in vals])
        rep.verdicts[key] = bool(np.all(ok))
        bad = np.where(~ok)[0]
        rep.witnesses[key] = lam[bad[0]].tolist() if bad.size else None
    return rep


# ---------------------------------------------------------------------------
# degeneracy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DegeneracyGap:
    """δ = inf ψ − sup_{∂Γ} f; positive exactly for nondegenerate data."""

    value: float

    @property
    def nondegenerate(self):
        return self.value > 0


def degeneracy_gap(op, psi):
    """Gap between inf ψ and the boundary supremum of f.

    ``psi`` may be an array of nodal values or any object with a ``values``
    attribute holding them.
    """
    values = np.asarray(getattr(psi, "values", psi), dtype=float)
    if op.is_log_type:
        return DegeneracyGap(np.inf)
    return DegeneracyGap(float(np.min(values)) - op.boundary_sup)
