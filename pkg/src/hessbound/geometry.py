"""Domains, Hermitian metrics, torsion and the Z/W tensors, boundary charts.

Points are real arrays ``(..., 2n)`` in interleaved order ``(x1, y1, …)``;
complex coordinates are ``z_k = x_k + i y_k``. Hermitian forms are stored as
complex arrays ``G[..., i, j] = g_{ij̄}``. Metric derivatives are
``dG[..., k, i, j] = ∂g_{ij̄}/∂z_k``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import sympy as sp
from scipy.stats import norm as _normal

from .errors import (
    NotOnBoundary,
    SingularMetric,
    TooCloseToCenter,
    VanishingGradient,
)
from .expr import ScalarField, real_matrix, real_symbols, to_complex, to_real


# ---------------------------------------------------------------------------
# domains
# ---------------------------------------------------------------------------

class Domain:
    """Base class; subclasses provide a closed-form boundary distance."""

    n: int

    def bounding_box(self):
        raise NotImplementedError

    def sigma(self, x):
        """Distance-like defining function: positive inside, zero on ∂M."""
        raise NotImplementedError

    def contains(self, x, tol=0.0):
        return self.sigma(x) > tol

    def crossing(self, p, v, tmax):
        """Smallest t in (0, tmax] with p + t·v on ∂M (inf if none)."""
        raise NotImplementedError

    def on_boundary(self, p, tol=1e-10):
        return abs(float(self.sigma(np.asarray(p, float)))) <= tol

    def boundary_points(self, count):
        raise NotImplementedError

    def to_config(self):
        raise NotImplementedError


def _sphere_spread(count, dim):
    """Deterministic low-discrepancy points on S^{dim-1}."""
    # additive recurrence with the generalized golden ratio, mapped through
    # the Gaussian quantile and normalised
    phi = 2.0
    for _ in range(50):
        phi = (1 + phi) ** (1.0 / (dim + 1))
    alpha = (1.0 / phi) ** np.arange(1, dim + 1)
    k = np.arange(1, count + 1)[:, None]
    u = (0.5 + alpha * k) % 1.0
    g = _normal.ppf(np.clip(u, 1e-12, 1 - 1e-12))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


@dataclass(frozen=True)
class Ball(Domain):
    """Euclidean ball of radius ``radius`` centred at ``center`` in ℂⁿ."""

    n: int
    radius: float = 1.0
    center: tuple = ()

    def __post_init__(self):
        c = tuple(complex(v) for v in self.center) if self.center else (0j,) * self.n
        if len(c) != self.n:
            raise ValueError("center has wrong length")
        object.__setattr__(self, "center", c)

    @property
    def center_real(self):
        return to_real(np.array(self.center))

    def bounding_box(self):
        c = self.center_real
        return c - self.radius, c + self.radius

    def sigma(self, x):
        x = np.asarray(x, dtype=float)
        return self.radius - np.linalg.norm(x - self.center_real, axis=-1)

    def sigma_field(self):
        syms = real_symbols(self.n)
        c = self.center_real
        r2 = sum((s - sp.Float(cv)) ** 2 for s, cv in zip(syms, c))
        return ScalarField(sp.Float(self.radius) - sp.sqrt(r2), self.n)

    def crossing(self, p, v, tmax):
        p = np.asarray(p, float) - self.center_real
        v = np.asarray(v, float)
        a = np.sum(v * v, axis=-1)
        b = 2 * np.sum(p * v, axis=-1)
        c = np.sum(p * p, axis=-1) - self.radius ** 2
        disc = np.sqrt(np.maximum(b * b - 4 * a * c, 0.0))
        # c < 0 for interior p: the positive root is the exit point
        t = (-b + disc) / (2 * a)
        return np.where(t <= tmax, t, np.inf)

    def outward_normal(self, x):
        d = np.asarray(x, float) - self.center_real
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def boundary_points(self, count):
        return self.center_real + self.radius * _sphere_spread(count, 2 * self.n)

    def to_config(self):
        return {"shape": "ball", "n": self.n, "radius": self.radius,
                "center": [[c.real, c.imag] for c in self.center]}


@dataclass(frozen=True)
class Polydisc(Domain):
    """Product of discs |z_k − c_k| < r_k.

    The boundary distance is the soft minimum of the face distances with
    sharpness ``sharpness``; it is exact up to O(log n / sharpness) away
    from the edges.
    """

    n: int
    radii: tuple = ()
    center: tuple = ()
    sharpness: float = 1e3

    def __post_init__(self):
        r = tuple(float(v) for v in self.radii) if self.radii else (1.0,) * self.n
        c = tuple(complex(v) for v in self.center) if self.center else (0j,) * self.n
        if len(r) != self.n or len(c) != self.n:
            raise ValueError("radii/center have wrong length")
        object.__setattr__(self, "radii", r)
        object.__setattr__(self, "center", c)

    def bounding_box(self):
        c = to_real(np.array(self.center))
        r = np.repeat(np.array(self.radii), 2)
        return c - r, c + r

    def face_distances(self, x):
        z = to_complex(x) - np.array(self.center)
        return np.array(self.radii) - np.abs(z)

    def sigma(self, x):
        d = self.face_distances(x)
        k = self.sharpness
        m = d.min(axis=-1)
        return m - np.log(np.sum(np.exp(-k * (d - m[..., None])), axis=-1)) / k

    def sigma_field(self, face):
        syms = real_symbols(self.n)
        c = self.center[face]
        r2 = (syms[2 * face] - c.real) ** 2 + (syms[2 * face + 1] - c.imag) ** 2
        return ScalarField(sp.Float(self.radii[face]) - sp.sqrt(r2), self.n)

    def crossing(self, p, v, tmax):
        zc = to_complex(p) - np.array(self.center)
        w = to_complex(v)
        a = np.abs(w) ** 2
        b = 2 * np.real(zc * np.conj(w))
        c = np.abs(zc) ** 2 - np.array(self.radii) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (-b + np.sqrt(np.maximum(b * b - 4 * a * c, 0.0))) / (2 * a)
        t = np.where(a > 0, t, np.inf)
        t = t.min(axis=-1)
        return np.where(t <= tmax, t, np.inf)

    def on_boundary(self, p, tol=1e-10):
        return abs(float(self.face_distances(np.asarray(p, float)).min())) <= tol

    def boundary_points(self, count):
        # points on the distinguished faces |z_k| = r_k, other coordinates at
        # half radius, spread by the sphere sequence
        pts = []
        s = _sphere_spread(count, 2 * self.n)
        for j in range(count):
            face = j % self.n
            z = 0.5 * np.array(self.radii) * to_complex(s[j])
            z[face] = self.radii[face] * np.exp(1j * np.angle(to_complex(s[j])[face]))
            pts.append(to_real(z + np.array(self.center)))
        return np.array(pts)

    def to_config(self):
        return {"shape": "polydisc", "n": self.n, "radii": list(self.radii),
                "center": [[c.real, c.imag] for c in self.center]}


def domain_from_config(cfg):
    n = int(cfg["n"])
    center = [complex(*c) for c in cfg.get("center", [])] or None
    if cfg["shape"] == "ball":
        return Ball(n=n, radius=float(cfg.get("radius", 1.0)), center=tuple(center or ()))
    if cfg["shape"] == "polydisc":
        return Polydisc(n=n, radii=tuple(cfg.get("radii", ())), center=tuple(center or ()))
    raise ValueError(f"unknown domain shape {cfg['shape']!r}")


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

class MetricField:
    """Hermitian metric with analytic first derivatives."""

    n: int

    def g(self, x):
        raise NotImplementedError

    def dg(self, x):
        raise NotImplementedError

    @property
    def is_flat(self):
        return False


@dataclass(frozen=True)
class FlatMetric(MetricField):
    n: int

    def g(self, x):
        shape = np.asarray(x).shape[:-1]
        return np.broadcast_to(np.eye(self.n, dtype=complex), shape + (self.n, self.n)).copy()

    def dg(self, x):
        shape = np.asarray(x).shape[:-1]
        return np.zeros(shape + (self.n,) * 3, dtype=complex)

    @property
    def is_flat(self):
        return True

    def to_config(self):
        return {"type": "flat"}


class ConformalMetric(MetricField):
    """g = e^{ρ} I with ρ a closed-form real field."""

    def __init__(self, rho, n):
        self.n = int(n)
        self.rho = rho if isinstance(rho, ScalarField) else ScalarField(rho, self.n)

    def g(self, x):
        e = np.exp(self.rho.value(x))
        return e[..., None, None] * np.eye(self.n)

    def dg(self, x):
        e = np.exp(self.rho.value(x))
        rk = self.rho.dz(x)  # ∂ρ/∂z_k
        eye = np.eye(self.n)
        return (e[..., None] * rk)[..., :, None, None] * eye

    def to_config(self):
        return {"type": "conformal", "rho": self.rho.to_string()}


def metric_from_config(cfg, n):
    if cfg is None or cfg.get("type", "flat") == "flat":
        return FlatMetric(n)
    if cfg["type"] == "conformal":
        return ConformalMetric(cfg["rho"], n)
    raise ValueError(f"unknown metric type {cfg['type']!r}")


class ChartMetric(MetricField):
    """Pull-back of a metric under z = p₀ + Mζ (M complex, invertible)."""

    def __init__(self, base, chart):
        self.base = base
        self.chart = chart
        self.n = base.n

    def g(self, xi):
        m = self.chart.m
        x = self.chart.to_ambient(xi)
        return m.T @ self.base.g(x) @ np.conj(m)

    def dg(self, xi):
        m = self.chart.m
        x = self.chart.to_ambient(xi)
        d = self.base.dg(x)
        inner = m.T @ d @ np.conj(m)  # (..., k, a, b)
        return np.einsum("kc,...kab->...cab", m, inner)

    @property
    def is_flat(self):
        return self.base.is_flat


def _inverse_metric(g):
    """g^{kl̄} stored as ``[..., k, l]`` (i.e. the transpose of inv(G))."""
    try:
        np.linalg.cholesky(g)
    except np.linalg.LinAlgError as exc:
        raise SingularMetric("metric not positive definite") from exc
    return np.swapaxes(np.linalg.inv(g), -1, -2)


def torsion_at(metric, x):
    """T^k_{ij} = g^{kl̄}(∂_i g_{jl̄} − ∂_j g_{il̄}), stored as ``[..., k, i, j]``."""
    g = metric.g(x)
    gup = _inverse_metric(g)
    dg = metric.dg(x)
    anti = dg - np.swapaxes(dg, -3, -2)  # [i, j, l] = ∂_i g_{jl̄} − ∂_j g_{il̄}
    return np.einsum("...kl,...ijl->...kij", gup, anti)


def z_coefficients(metric, x):
    """Coefficient arrays with Z[v] = Σ_p (Zu[p] v_p + Zub[p] v_p̄).

    Returns ``(Zu, Zub)`` of shape ``(..., n, n, n)`` indexed ``[p, i, j]``.
    The six terms are divided by 2(n−1).
    """
    g = metric.g(x)
    gup = _inverse_metric(g)
    t = torsion_at(metric, x)
    n = g.shape[-1]
    tau = np.einsum("...lql->...q", t)  # τ_q = Σ_l T^l_{ql}
    eye = np.eye(n)
    zu = np.einsum("...ij,...pq,...q->...pij", g, gup, np.conj(tau))
    zub = np.einsum("...ij,...pq,...p->...qij", g, gup, tau)
    zu = zu - np.einsum("...kl,...iq,...qlj->...kij", gup, g, np.conj(t))
    zub = zub - np.einsum("...kl,...qj,...qki->...lij", gup, g, t)
    zu = zu - np.einsum("pi,...j->...pij", eye, np.conj(tau))
    zub = zub - np.einsum("pj,...i->...pij", eye, tau)
    scale = 1.0 / (2 * (n - 1))
    return zu * scale, zub * scale


def z_tensor(metric, du, x):
    """Z[v] for a complex gradient ``du`` (∂v/∂z_p) at points ``x``."""
    zu, zub = z_coefficients(metric, x)
    du = np.asarray(du, dtype=complex)
    return (np.einsum("...pij,...p->...ij", zu, du)
            + np.einsum("...pij,...p->...ij", zub, np.conj(du)))


def w_tensor(metric, z, x):
    """W = (tr_ω Z) g − (n−1) Z."""
    g = metric.g(x)
    n = g.shape[-1]
    tr = np.real(np.einsum("...ij,...ji->...", np.linalg.inv(g), z))
    return tr[..., None, None] * g - (n - 1) * np.asarray(z)


def w_coefficients(metric, x):
    """Coefficient arrays with W[v] = Σ_p (Wu[p] v_p + Wub[p] v_p̄)."""
    g = metric.g(x)
    n = g.shape[-1]
    ginv = np.linalg.inv(g)
    zu, zub = z_coefficients(metric, x)
    out = []
    for c in (zu, zub):
        tr = np.einsum("...ab,...pba->...p", ginv, c)
        out.append(tr[..., :, None, None] * g[..., None, :, :] - (n - 1) * c)
    return tuple(out)


# ---------------------------------------------------------------------------
# boundary charts
# ---------------------------------------------------------------------------

def _gram_schmidt(seeds, normal, inner, count, tol=1e-6):
    """Orthonormalise seed vectors against a unit normal and each other."""
    basis = []
    for s in seeds:
        v = s - inner(s, normal) * normal
        for b in basis:
            v = v - inner(v, b) * b
        nv = np.sqrt(max(inner(v, v).real, 0.0))
        if nv > tol:
            basis.append(v / nv)
        if len(basis) == count:
            break
    return basis


@dataclass
class BoundaryChart:
    """Holomorphic affine chart z = p₀ + Mζ at a boundary point.

    ``m = q / scale`` with ``q`` unitary whose last column is the inward unit
    normal; ``scale`` normalises the metric so that g̃(0) = I. The chart
    coordinate x_n (real part of ζ_n) points along the inward normal.
    """

    p0: np.ndarray
    q: np.ndarray
    scale: float
    domain: Domain
    metric: MetricField

    @property
    def n(self):
        return self.domain.n

    @cached_property
    def m(self):
        return self.q / self.scale

    @cached_property
    def mreal(self):
        return real_matrix(self.m)

    @cached_property
    def mreal_inv(self):
        return np.linalg.inv(self.mreal)

    def to_ambient(self, xi):
        return self.p0 + np.asarray(xi, float) @ self.mreal.T

    def from_ambient(self, x):
        return (np.asarray(x, float) - self.p0) @ self.mreal_inv.T

    @cached_property
    def chart_metric(self):
        return ChartMetric(self.metric, self)

    def pullback(self, field):
        """A closed-form ambient field expressed in chart coordinates."""
        return field.pullback(self.p0, self.mreal)

    def pull_form(self, form):
        """Transform a Hermitian form given in ambient coordinates."""
        return self.m.T @ np.asarray(form) @ np.conj(self.m)

    @cached_property
    def sigma(self):
        """Chart boundary distance: scale × ambient σ, so σ_{x_n}(0) = 1."""
        base = self.domain.sigma_field() if isinstance(self.domain, Ball) else \
            self.domain.sigma_field(int(np.argmin(np.abs(
                self.domain.face_distances(self.p0)))))
        return self.pullback(base) * self.scale

    @property
    def is_identity(self):
        return (np.allclose(self.m, np.eye(self.n), atol=1e-12)
                and np.allclose(self.p0, 0.0, atol=1e-12))

    def to_json(self):
        return json.dumps({"p0": self.p0.tolist(),
                           "m": [[[v.real, v.imag] for v in row] for row in self.m],
                           "scale": self.scale})


def inward_normal(domain, p0):
    """Unit inward normal at a boundary point, as a complex n-vector."""
    p0 = np.asarray(p0, float)
    if isinstance(domain, Ball):
        nr = -domain.outward_normal(p0)
    else:
        face = int(np.argmin(np.abs(domain.face_distances(p0))))
        r = np.zeros(2 * domain.n)
        zc = to_complex(p0)[face] - domain.center[face]
        r[2 * face] = -zc.real
        r[2 * face + 1] = -zc.imag
        nr = r / np.linalg.norm(r)
    return to_complex(nr)


def boundary_chart(domain, metric, p0, tol=1e-10):
    """Adapted chart at ``p0``: g̃(0) = I and ∂/∂x_n the inward normal."""
    p0 = np.asarray(p0, dtype=float)
    if not domain.on_boundary(p0, tol):
        raise NotOnBoundary(f"point {p0} is not on the boundary")
    n = domain.n
    nu = inward_normal(domain, p0)
    g0 = metric.g(p0)
    if not np.allclose(g0, g0[0, 0].real * np.eye(n), atol=1e-12):
        raise ValueError("boundary charts support flat and conformal metrics only")
    scale = float(np.sqrt(g0[0, 0].real))
    inner = lambda a, b: np.vdot(b, a)  # noqa: E731  (Euclidean ⟨a, b⟩ = Σ a conj(b))
    basis = _gram_schmidt(list(np.eye(n, dtype=complex)), nu, inner, n - 1)
    q = np.column_stack(basis + [nu])
    return BoundaryChart(p0=p0, q=q, scale=scale, domain=domain, metric=metric)


def sigma_hessian(chart, xi):
    """σ, its real gradient and σ_{ij̄} in chart coordinates at ``xi``."""
    xi = np.asarray(xi, dtype=float)
    x = chart.to_ambient(xi)
    dom = chart.domain
    if isinstance(dom, Ball):
        rad = np.linalg.norm(x - dom.center_real, axis=-1)
        if np.any(rad < 1e-8 * dom.radius):
            raise TooCloseToCenter("σ is not smooth at the center")
    s = chart.sigma
    return s.value(xi), s.real_gradient(xi), s.complex_hessian(xi)


def level_frames(d_field, x, metric=None):
    """Orthonormal frames of the holomorphic tangent space of {d = d(x)}.

    Frames are rows ``T[..., α, :]`` with Σ_i T_α^i ∂_i d = 0 and
    ⟨T_α, T_β⟩_g = δ_αβ, built by Gram–Schmidt seeded with e_1, e_2, …
    """
    x = np.asarray(x, dtype=float)
    dz = d_field.dz(x) if hasattr(d_field, "dz") else np.asarray(d_field(x))
    shape = dz.shape[:-1]
    n = dz.shape[-1]
    g = (np.broadcast_to(np.eye(n, dtype=complex), shape + (n, n))
         if metric is None else metric.g(x))
    dzf = dz.reshape(-1, n)
    gf = g.reshape(-1, n, n)
    normal = np.conj(np.linalg.solve(gf, dzf[..., None])[..., 0])
    nn = np.sqrt(np.real(np.einsum("bi,bij,bj->b", normal, gf, np.conj(normal))))
    if np.any(nn < 1e-14):
        raise VanishingGradient("∂d vanishes")
    normal = normal / nn[:, None]
    out = np.empty((len(dzf), n - 1, n), dtype=complex)
    for b in range(len(dzf)):
        gb = gf[b]
        inner = lambda u, v, gb=gb: u @ gb @ np.conj(v)  # noqa: E731
        basis = _gram_schmidt(list(np.eye(n, dtype=complex)), normal[b], inner, n - 1)
        out[b] = np.array(basis)
    return out.reshape(shape + (n - 1, n))


# ---------------------------------------------------------------------------
# origin identities
# ---------------------------------------------------------------------------

@dataclass
class IdentityResiduals:
    trace_identity: float
    normal_component: float
    coefficient_sums: float

    @property
    def max(self):
        return max(self.trace_identity, self.normal_component, self.coefficient_sums)

    def to_dict(self):
        return {"trace_identity": self.trace_identity,
                "normal_component": self.normal_component,
                "coefficient_sums": self.coefficient_sums}


def origin_identities_check(chart, v):
    """Residuals of the W/Z identities at the chart origin.

    ``v`` is a closed-form field in chart coordinates. The three residuals
    are: Σ_α W[v]_{αᾱ} − (n−1) Z[v]_{nn̄}; 2(n−1) Z[v]_{nn̄} −
    Σ_{α,β}(conj(T^β_{αβ}) v_α + T^β_{αβ} v_ᾱ); and the sums
    Σ_α W^n_{αᾱ}, Σ_α W^{n̄}_{αᾱ} of the W coefficient arrays.
    """
    metric = chart.chart_metric
    n = chart.n
    o = np.zeros(2 * n)
    dv = v.dz(o)
    z = z_tensor(metric, dv, o)
    w = w_tensor(metric, z, o)
    t = torsion_at(metric, o)
    tang = range(n - 1)
    r1 = abs(sum(w[a, a] for a in tang) - (n - 1) * z[n - 1, n - 1])
    rhs = sum(np.conj(t[b, a, b]) * dv[a] + t[b, a, b] * np.conj(dv[a])
              for a in tang for b in tang)
    r2 = abs(2 * (n - 1) * z[n - 1, n - 1] - rhs)
    wu, wub = w_coefficients(metric, o)
    r3 = max(abs(sum(wu[n - 1, a, a] for a in tang)), abs(sum(wub[n - 1, a, a] for a in tang)))
    return IdentityResiduals(float(r1), float(r2), float(r3))
