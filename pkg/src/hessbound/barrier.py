"""Boundary barriers and the double-normal bound at a boundary point.

Everything here lives in an adapted boundary chart (see
:func:`hessbound.geometry.boundary_chart`): the origin is the boundary point,
g̃(0) = I and x_n is the inward normal coordinate. Two modes are supported.

``general``
    Λ_μ weights the tangential frames by a supporting plane μ of Γ_∞ at the
    crossing point λ(A_{t₀}); t₀ is located by bisection.
``pn1``
    The (n−1)-plurisubharmonic form g̃ = χ + ∂∂̄u + W[u] with Λ the plain
    tangential trace; t₀ has a closed form.

The barrier is w = u̲ + (η/t₀)σ + l(z)σ + A d² with d = σ + τ|z|² and the
corrected barrier h = w + ε(|z|² − x_n/C₂). Fields are evaluated from exact
derivatives of σ, u̲ and χ on sampled points of Ω_δ = M ∩ B_δ.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .eigen import growth_threshold, hermitian_eigen
from .errors import (
    BarrierNotVerified,
    BoundaryMismatch,
    InvalidIngredients,
    NoCrossing,
    NonpositiveDenominator,
    NotVanishingAtOrigin,
    PreconditionViolation,
    VanishingDenominator,
    ZeroCrossingParameter,
)
from .expr import ScalarField, to_complex
from .geometry import BoundaryChart, level_frames, w_coefficients
from .grid import GridField, sample_quotient
from .spectral import in_cone_infinity, supporting_plane

MODES = ("general", "pn1")


# ---------------------------------------------------------------------------
# data types
# ---------------------------------------------------------------------------

@dataclass
class BarrierParams:
    """Barrier constants; ``eps`` and ``C2`` are filled in after verification."""

    tau: float
    delta: float
    A: float
    eps: float = np.nan
    C2: float = np.nan
    l: np.ndarray = None

    def __post_init__(self):
        for name in ("tau", "delta", "A"):
            if not getattr(self, name) > 0:
                raise InvalidIngredients(f"{name} must be positive")
        if self.l is None:
            self.l = np.zeros(0, dtype=complex)
        self.l = np.asarray(self.l, dtype=complex)

    def to_dict(self):
        return {"tau": self.tau, "delta": self.delta, "A": self.A,
                "eps": float(self.eps), "C2": float(self.C2),
                "l": [[float(v.real), float(v.imag)] for v in self.l]}


@dataclass
class CrossingResult:
    t0: float
    mode: str
    witness: np.ndarray
    bracket: tuple = ()

    def to_dict(self):
        return {"t0": self.t0, "mode": self.mode, "witness": np.asarray(self.witness).tolist()}


@dataclass
class DoubleNormalBound:
    """R_c or R_s with the ingredients needed to reproduce it."""

    kind: str
    value: float
    ingredients: dict

    def reproduce(self):
        fn = assemble_Rc if self.kind == "R_c" else assemble_Rs
        return fn(**self.ingredients).value

    def to_dict(self):
        return {"kind": self.kind, "value": self.value,
                "ingredients": {k: float(v) for k, v in self.ingredients.items()}}


# ---------------------------------------------------------------------------
# η and t₀
# ---------------------------------------------------------------------------

def difference_field(u, reference):
    """The grid field u − reference, with boundary data φ − reference."""
    ref = reference if isinstance(reference, ScalarField) else ScalarField(reference, u.grid.n)
    return GridField(u.grid, u.values - ref.value(u.grid.points), u.boundary - ref)


def _sampling_neighbours(dim):
    return 12 * (1 + dim + dim * (dim + 1) // 2)


def eta_at(u, subsolution, chart, step=None, tol=1e-8):
    """η = (u − u̲)_{x_n}(0) in chart coordinates.

    Uses the second-order one-sided stencil (4e(s) − e(2s))/(2s) with
    e(0) = 0 along the inward normal. e = u − u̲ vanishes on ∂M and is
    reconstructed as σ·q with q fitted by least squares; ``step`` defaults to
    the grid spacing in chart units.
    """
    p0 = chart.p0
    mismatch = abs(float(u.boundary.value(p0[None])[0] - subsolution.value(p0[None])[0]))
    if mismatch > tol:
        raise BoundaryMismatch(f"u − u̲ = {mismatch:.3e} at the boundary point")
    e = difference_field(u, subsolution)
    s = (u.grid.h * chart.scale) if step is None else step
    xi = np.zeros((2, 2 * chart.n))
    xi[0, -2] = s
    xi[1, -2] = 2 * s
    vals = sample_quotient(e, chart.to_ambient(xi), chart.domain.sigma,
                           neighbours=_sampling_neighbours(u.grid.dim))
    eta = (4 * vals[0] - vals[1]) / (2 * s)
    if eta < -tol:
        raise PreconditionViolation(f"η = {eta:.3e} is negative", witness=eta)
    return float(eta)


def crossing_t0_general(op, sub_block, sigma_block, eta, t_max=1e3, tol=1e-10):
    """Last t (descending from 1) with λ(t·sub + η·σ) ∈ Γ_∞.

    The admissible set of t is an interval because Γ_∞ is convex, so a
    bisection on [−t_max, 1] finds its left end. The result is polished
    with secant steps on μ·λ(A_t) where μ is the supporting plane there.
    """
    sub = np.asarray(sub_block, complex)
    sig = np.asarray(sigma_block, complex)

    def lam(t):
        return hermitian_eigen(t * sub + eta * sig)

    def member(t):
        return bool(in_cone_infinity(op, lam(t)))

    if not member(1.0):
        raise PreconditionViolation("tangential block at t = 1 is outside Γ_∞",
                                    witness=lam(1.0))
    if member(-t_max):
        raise NoCrossing(f"membership persists down to t = −{t_max}")
    lo, hi = -t_max, 1.0  # lo outside, hi inside
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if member(mid):
            hi = mid
        else:
            lo = mid
    t0 = 0.5 * (lo + hi)
    try:
        mu = supporting_plane(op, lam(t0), tol=1e-6).mu
        phi = lambda t: float(mu @ lam(t))  # noqa: E731
        a, b = lo, hi
        fa, fb = phi(a), phi(b)
        t = t0
        for _ in range(8):
            if fb == fa:
                break
            t = b - fb * (b - a) / (fb - fa)
            a, fa, b, fb = b, fb, t, phi(t)
            if abs(fb) < 1e-15:
                break
        if abs(t - t0) <= 10 * tol:
            t0 = t
    except Exception:  # polishing is best-effort; the bracket stands
        pass
    if not -t_max < t0 < 1:
        raise PreconditionViolation(f"t₀ = {t0} outside (−T₀, 1)", witness=t0)
    return CrossingResult(t0=float(t0), mode="general", witness=lam(t0), bracket=(lo, hi))


def crossing_t0_pn1(sub_trace, sigma_trace, eta):
    """t₀ = −η Σσ_{αᾱ}(0) / Σ g̲̃_{αᾱ}(0)."""
    if not sub_trace > 0:
        raise NonpositiveDenominator("tangential trace of the subsolution form is not positive")
    t0 = -eta * sigma_trace / sub_trace
    if not t0 < 1:
        raise PreconditionViolation(f"t₀ = {t0} is not below 1", witness=t0)
    return CrossingResult(t0=float(t0), mode="pn1",
                          witness=np.array([sub_trace * t0 + eta * sigma_trace]))


def choose_linear_term(mode, k, m, mu, sigma_trace, tau, floor=1e-12):
    """Coefficients l that cancel the linear part of Λ at the origin.

    ``sigma_trace`` is Σ μ_β σ_{ββ̄}(0) in general mode and Σ σ_{ββ̄}(0) in pn1
    mode. Returns the complex vector l (length n).
    """
    k = np.asarray(k, complex)
    n = len(k)
    if mode == "general":
        mu = np.asarray(mu, float)
        num = k
        den = np.r_[sigma_trace - tau * mu[:n - 1], sigma_trace]
    elif mode == "pn1":
        num = k + (np.zeros(n) if m is None else np.asarray(m, complex))
        den = np.r_[np.full(n - 1, sigma_trace - tau), sigma_trace]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if np.any(np.abs(den) < floor):
        raise VanishingDenominator("a linear-term denominator vanishes")
    return -num / den


def taylor_extract(g, n, step=1e-3, radius=1e-2, tol=1e-10):
    """First-order Wirtinger coefficients k of a real field with g(0) = 0.

    g(z) = Σ (k_i z_i + k̄_i z̄_i) + O(|z|²). Central differences at ``step``
    and ``step/2`` are combined by Richardson extrapolation. The residual is
    max |g − linearization| / |z|² over ±radius·e_a and the diagonal points.
    """
    dim = 2 * n
    origin = np.zeros((1, dim))
    g0 = float(np.asarray(g(origin)).ravel()[0])
    if abs(g0) > tol:
        raise NotVanishingAtOrigin(f"g(0) = {g0:.3e}")
    eye = np.eye(dim)

    def central(h):
        pts = np.concatenate([h * eye, -h * eye])
        vals = np.asarray(g(pts), float)
        return (vals[:dim] - vals[dim:]) / (2 * h)

    grad = (4 * central(step / 2) - central(step)) / 3
    k = 0.5 * (grad[0::2] - 1j * grad[1::2])
    dirs = [eye[a] for a in range(dim)]
    dirs += [(eye[a] + s * eye[b]) / np.sqrt(2) for a in range(dim)
             for b in range(a + 1, dim) for s in (1, -1)]
    dirs = np.array(dirs)
    pts = radius * np.concatenate([dirs, -dirs])
    lin = pts @ grad
    res = np.max(np.abs(np.asarray(g(pts), float) - lin)) / radius ** 2
    return k, float(res)


# ---------------------------------------------------------------------------
# chart analysis at a boundary point
# ---------------------------------------------------------------------------

def _rotate_chart(chart, vecs):
    """Rotate the tangential chart directions by the unitary ``vecs``."""
    n = chart.n
    q = chart.q.copy()
    q[:, :n - 1] = chart.q[:, :n - 1] @ vecs
    return BoundaryChart(p0=chart.p0, q=q, scale=chart.scale, domain=chart.domain,
                         metric=chart.metric)


class ChartFields:
    """Exact σ, u̲, χ and metric data at chart points.

    Arrays are complex Wirtinger quantities: ``*_z`` is ∂/∂ζ, ``*_h`` the
    complex Hessian. The W coefficient arrays appear in pn1 mode.
    """

    def __init__(self, instance, chart, pn1):
        self.instance = instance
        self.chart = chart
        self.pn1 = pn1
        self.n = chart.n
        self.sigma = chart.sigma
        self.sub = chart.pullback(instance.subsolution)
        self.metric = chart.chart_metric

    def at(self, xi):
        xi = np.atleast_2d(np.asarray(xi, float))
        x = self.chart.to_ambient(xi)
        out = {"xi": xi, "zeta": to_complex(xi)}
        out["s"] = self.sigma.value(xi)
        out["s_z"] = self.sigma.dz(xi)
        out["s_h"] = self.sigma.complex_hessian(xi)
        out["u_z"] = self.sub.dz(xi)
        out["u_h"] = self.sub.complex_hessian(xi)
        out["chi"] = self.chart.pull_form(self.instance.chi.at(x, self.instance.metric))
        out["g"] = self.metric.g(xi)
        if self.pn1:
            out["wu"], out["wub"] = w_coefficients(self.metric, xi)
        return out

    def drift(self, data, grad):
        """W[v] at the points for the Wirtinger gradient ``grad`` = ∂v."""
        if not self.pn1:
            return 0.0
        return (np.einsum("kpij,kp->kij", data["wu"], grad)
                + np.einsum("kpij,kp->kij", data["wub"], np.conj(grad)))

    def sub_form(self, data):
        return data["chi"] + data["u_h"] + self.drift(data, data["u_z"])


def form_eigenvalues_rel(a, g):
    linv = np.linalg.inv(np.linalg.cholesky(g))
    b = linv @ a @ np.conj(np.swapaxes(linv, -1, -2))
    return np.linalg.eigvalsh(0.5 * (b + np.conj(np.swapaxes(b, -1, -2))))


def _frames(data, tau, metric):
    d_z = data["s_z"] + tau * np.conj(data["zeta"])
    return level_frames(lambda _x: d_z, data["xi"], metric)


def _lambda(mu, frames, form):
    vals = np.real(np.einsum("kai,kij,kaj->ka", frames, form, np.conj(frames)))
    return vals @ mu


@dataclass
class PointSetup:
    """η, t₀, μ and the origin blocks at one boundary point."""

    chart: BoundaryChart
    fields: ChartFields
    mode: str
    eta: float
    crossing: CrossingResult
    mu: np.ndarray
    sub_origin: np.ndarray
    sigma_origin: np.ndarray

    @property
    def t0(self):
        return self.crossing.t0

    @property
    def n(self):
        return self.chart.n

    @property
    def sigma_trace(self):
        s = np.real(np.diag(self.sigma_origin))[:self.n - 1]
        return float(self.mu @ s) if self.mode == "general" else float(np.sum(s))

    @property
    def applicable(self):
        return self.eta > 0 and self.t0 > 0


def setup_point(instance, chart, eta, mode=None):
    """Crossing, supporting plane and (if needed) a rotated chart at a point."""
    mode = mode or ("pn1" if instance.pn1 else "general")
    n = chart.n
    fields = ChartFields(instance, chart, instance.pn1)
    d0 = fields.at(np.zeros(2 * n))
    sub0 = fields.sub_form(d0)[0]
    sig0 = d0["s_h"][0]
    if mode == "pn1":
        cr = crossing_t0_pn1(float(np.real(np.trace(sub0[:n - 1, :n - 1]))),
                             float(np.real(np.trace(sig0[:n - 1, :n - 1]))), eta)
        mu = np.ones(n - 1)
        return PointSetup(chart, fields, mode, eta, cr, mu, sub0, sig0)
    op = instance.operator
    if eta <= 0:
        cr = CrossingResult(0.0, "general", hermitian_eigen(sub0[:n - 1, :n - 1] * 0))
        return PointSetup(chart, fields, mode, eta, cr, np.full(n - 1, 1.0 / (n - 1)),
                          sub0, sig0)
    cr = crossing_t0_general(op, sub0[:n - 1, :n - 1], sig0[:n - 1, :n - 1], eta)
    if n > 2:
        # diagonalise A_{t₀} so that the frames at the origin are its eigenvectors
        a_t0 = cr.t0 * sub0[:n - 1, :n - 1] + eta * sig0[:n - 1, :n - 1]
        _, vecs = np.linalg.eigh(a_t0)
        chart = _rotate_chart(chart, vecs)
        fields = ChartFields(instance, chart, instance.pn1)
        d0 = fields.at(np.zeros(2 * n))
        sub0 = fields.sub_form(d0)[0]
        sig0 = d0["s_h"][0]
    if op.cone_type == 2:
        mu = np.full(n - 1, 1.0 / (n - 1))
    else:
        mu = supporting_plane(op, cr.witness, tol=1e-6).mu
        mu = np.sort(mu)[::-1] if n > 2 else mu
    return PointSetup(chart, fields, mode, eta, cr, mu, sub0, sig0)


# ---------------------------------------------------------------------------
# barrier fields
# ---------------------------------------------------------------------------

@dataclass
class BarrierFields:
    """w and h as closed-form assemblies over chart points."""

    setup: PointSetup
    params: BarrierParams

    @property
    def ratio(self):
        return self.setup.eta / self.setup.t0

    def _l_parts(self, data):
        l = self.params.l
        lz = 2 * np.real(data["zeta"] @ l)
        return l, lz

    def value(self, data):
        """w at the points (uses the pulled subsolution)."""
        p = self.params
        s = data["s"]
        d = s + p.tau * np.sum(np.abs(data["zeta"]) ** 2, axis=1)
        _, lz = self._l_parts(data)
        sub = self.setup.fields.sub.value(data["xi"])
        return sub + self.ratio * s + lz * s + p.A * d ** 2

    def corrected_value(self, data):
        p = self.params
        corr = np.sum(np.abs(data["zeta"]) ** 2, axis=1) - data["xi"][:, -2] / p.C2
        return self.value(data) + p.eps * corr

    def gradient(self, data):
        p = self.params
        s, s_z = data["s"], data["s_z"]
        d = s + p.tau * np.sum(np.abs(data["zeta"]) ** 2, axis=1)
        d_z = s_z + p.tau * np.conj(data["zeta"])
        l, lz = self._l_parts(data)
        return (data["u_z"] + self.ratio * s_z + l[None, :] * s[:, None]
                + lz[:, None] * s_z + 2 * p.A * d[:, None] * d_z)

    def hessian(self, data):
        p = self.params
        n = self.setup.n
        s, s_z, s_h = data["s"], data["s_z"], data["s_h"]
        d = s + p.tau * np.sum(np.abs(data["zeta"]) ** 2, axis=1)
        d_z = s_z + p.tau * np.conj(data["zeta"])
        d_h = s_h + p.tau * np.eye(n)
        l, lz = self._l_parts(data)
        cross = l[None, :, None] * np.conj(s_z)[:, None, :] + s_z[:, :, None] * np.conj(l)[None, None, :]
        return (data["u_h"] + self.ratio * s_h + lz[:, None, None] * s_h + cross
                + 2 * p.A * (d[:, None, None] * d_h
                             + d_z[:, :, None] * np.conj(d_z)[:, None, :]))

    def form(self, data):
        fields = self.setup.fields
        return data["chi"] + self.hessian(data) + fields.drift(data, self.gradient(data))

    def corrector_form(self, data):
        """∂∂̄(|z|² − x_n/C₂) plus its drift: the direction added by ε."""
        n = self.setup.n
        grad = np.conj(data["zeta"]).copy()
        grad[:, -1] -= 0.5 / self.params.C2
        base = np.broadcast_to(np.eye(n, dtype=complex), data["g"].shape).copy()
        return base + self.setup.fields.drift(data, grad)

    def lambda_values(self, data):
        frames = _frames(data, self.params.tau, self.setup.fields.metric)
        return _lambda(self.setup.mu, frames, self.form(data))


def taylor_inputs(setup, tau):
    """Closures g(ξ) for the Taylor coefficients k (and m in pn1 mode)."""
    fields = setup.fields
    ratio = setup.eta / setup.t0

    def k_field(xi):
        data = fields.at(xi)
        frames = _frames(data, tau, fields.metric)
        return _lambda(setup.mu, frames, fields.sub_form(data) + ratio * data["s_h"])

    def m_field(xi):
        data = fields.at(xi)
        frames = _frames(data, tau, fields.metric)
        return _lambda(setup.mu, frames, ratio * fields.drift(data, data["s_z"]))

    return k_field, (m_field if setup.mode == "pn1" else None)


def linear_term(setup, tau):
    kf, mf = taylor_inputs(setup, tau)
    k, _ = taylor_extract(kf, setup.n, tol=1e-9)
    m = taylor_extract(mf, setup.n, tol=1e-9)[0] if mf is not None else None
    return choose_linear_term(setup.mode, k, m, setup.mu, setup.sigma_trace, tau)


def build_barrier(params, setup):
    """Attach the l coefficients (if missing) and return the barrier fields."""
    if setup.t0 == 0:
        raise ZeroCrossingParameter("t₀ = 0: the η/t₀ term is undefined")
    if params.l.size == 0:
        params = replace(params, l=linear_term(setup, params.tau))
    return BarrierFields(setup, params)


# ---------------------------------------------------------------------------
# sampling Ω_δ
# ---------------------------------------------------------------------------

@dataclass
class OmegaSamples:
    interior: np.ndarray      # chart points in M ∩ B_δ
    sphere: np.ndarray        # chart points on M ∩ ∂B_δ
    boundary: np.ndarray      # chart points on ∂M ∩ B̄_δ


def sample_omega(setup, delta, count=600, seed=0):
    """Deterministic samples of Ω_δ and of both parts of its boundary."""
    chart = setup.chart
    dom = chart.domain
    dim = 2 * chart.n
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(count, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs[:, -2] = np.abs(dirs[:, -2])  # inward half
    radii = delta * np.geomspace(1e-3, 0.999, count)
    rng.shuffle(radii)
    pts = dirs * radii[:, None]
    lattice = np.stack(np.meshgrid(*[np.linspace(-delta, delta, 7)] * dim,
                                   indexing="ij"), axis=-1).reshape(-1, dim)
    pts = np.concatenate([pts, lattice])
    pts = pts[(np.linalg.norm(pts, axis=1) < delta) & (pts[:, -2] > -delta)]
    inside = dom.sigma(chart.to_ambient(pts)) > 1e-12
    interior = pts[inside]
    sph = dirs * delta
    sph = sph[dom.sigma(chart.to_ambient(sph)) >= 0]
    # boundary points: walk from an inward point along −x_n until ∂M
    tang = rng.normal(size=(count, dim))
    tang[:, -2] = 0
    tang /= np.linalg.norm(tang, axis=1, keepdims=True)
    tang *= delta * rng.uniform(0.02, 1.0, size=(count, 1))
    bnd = []
    for t in tang:
        start = t.copy()
        start[-2] = delta
        a_start = chart.to_ambient(start)
        if dom.sigma(a_start[None])[0] <= 0:
            continue
        step = chart.to_ambient(start - np.eye(dim)[-2] * 2 * delta) - a_start
        tc = dom.crossing(a_start, step, 1.0)
        if np.isfinite(tc):
            xb = chart.from_ambient(a_start + tc * step)
            if np.linalg.norm(xb) <= delta:
                bnd.append(xb)
    return OmegaSamples(interior, sph, np.array(bnd).reshape(-1, dim))


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------

@dataclass
class BarrierVerification:
    max_lambda: float
    boundary_identity_error: float
    boundary_slack: float
    sphere_slack: float
    params: BarrierParams
    applicable: bool = True
    lambda_tol: float = 1e-8

    @property
    def passed(self):
        if not self.applicable:
            return True
        return (self.max_lambda <= self.lambda_tol and self.boundary_slack <= 1e-12
                and self.sphere_slack <= 1e-8 and self.boundary_identity_error <= 1e-9)

    def to_dict(self):
        return {"max_lambda": self.max_lambda,
                "boundary_identity_error": self.boundary_identity_error,
                "boundary_slack": self.boundary_slack, "sphere_slack": self.sphere_slack,
                "params": self.params.to_dict(), "applicable": self.applicable,
                "passed": self.passed}


def u_on_chart(u, setup, xi):
    """Values of the solved grid field at chart points.

    e = u − u̲ is reconstructed as σ·q (see :func:`sample_quotient`), which
    is exact on ∂M where the comparison margins are smallest.
    """
    e = difference_field(u, setup.fields.instance.subsolution)
    x = setup.chart.to_ambient(xi)
    vals = sample_quotient(e, x, setup.chart.domain.sigma,
                           neighbours=_sampling_neighbours(u.grid.dim))
    return vals + setup.fields.instance.subsolution.value(x)


def verify_barrier(barrier, samples, u_sphere):
    """Max Λ over Ω_δ samples and the comparison u ≤ w on ∂Ω_δ.

    ``u_sphere`` holds u at ``samples.sphere``; on ∂M ∩ B̄_δ the comparison is
    closed form (u = φ = u̲ there), so u − w = −Aτ²|z|⁴ is checked directly.
    """
    setup = barrier.setup
    p = barrier.params
    data = setup.fields.at(samples.interior)
    max_lam = float(np.max(barrier.lambda_values(data)))
    bdata = setup.fields.at(samples.boundary)
    inst = setup.fields.instance
    phi = inst.phi.value(setup.chart.to_ambient(samples.boundary))
    diff_b = phi - barrier.value(bdata)
    ident = -p.A * p.tau ** 2 * np.sum(np.abs(bdata["zeta"]) ** 2, axis=1) ** 2
    id_err = float(np.max(np.abs(diff_b - ident))) if len(diff_b) else 0.0
    b_slack = float(np.max(diff_b)) if len(diff_b) else -np.inf
    sdata = setup.fields.at(samples.sphere)
    s_slack = float(np.max(u_sphere - barrier.value(sdata)))
    return BarrierVerification(max_lam, id_err, b_slack, s_slack, p)


def search_parameters(setup, u, start=None, steps=20, max_evals=120, seed=0):
    """δ, then τ, then A by halving/doubling from (0.1ρ, 0.01, 100).

    Returns (BarrierFields, BarrierVerification, OmegaSamples) for the first
    passing triple, or the last attempt if none passes.
    """
    rho = getattr(setup.chart.domain, "radius", None)
    if rho is None:
        rho = float(min(setup.chart.domain.radii))
    delta0, tau0, a0 = start or (0.1 * rho, 0.01, 100.0)
    evals = 0
    last = None
    for i in range(steps):
        delta = delta0 * 0.5 ** i
        samples = sample_omega(setup, delta, seed=seed)
        u_sph = u_on_chart(u, setup, samples.sphere)
        for j in range(steps):
            tau = tau0 * 0.5 ** j
            l = linear_term(setup, tau)
            for m in range(steps):
                A = a0 * 2.0 ** m
                bar = BarrierFields(setup, BarrierParams(tau, delta, A, l=l))
                ver = verify_barrier(bar, samples, u_sph)
                evals += 1
                last = (bar, ver, samples)
                if ver.passed:
                    return last
                if evals >= max_evals:
                    return last
                # A only helps the Λ bound and the sphere slack; stop doubling
                # once both are already satisfied and something else fails
                if ver.max_lambda <= ver.lambda_tol and ver.sphere_slack <= 1e-8:
                    break
    return last


# ---------------------------------------------------------------------------
# corrector and certificate
# ---------------------------------------------------------------------------

def _level_member(op, lam, level):
    with np.errstate(invalid="ignore", divide="ignore"):
        return op.contains(lam, 0.0) & (op.value(lam) >= level)


def crossing_shift(op, form, direction, g, level, s_max=1e6, iters=60):
    """Smallest s ≥ 0 per point with λ(form + s·direction) ∈ Γ̄^{level}."""
    k = form.shape[0]
    lo = np.zeros(k)
    hi = np.ones(k)
    for _ in range(80):
        inside = _level_member(op, form_eigenvalues_rel(form + hi[:, None, None] * direction, g),
                               level)
        if np.all(inside) or np.all(hi >= s_max):
            break
        hi = np.where(inside, hi, 2 * hi)
    start_in = _level_member(op, form_eigenvalues_rel(form, g), level)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        ins = _level_member(op, form_eigenvalues_rel(form + mid[:, None, None] * direction, g),
                            level)
        hi = np.where(ins, mid, hi)
        lo = np.where(ins, lo, mid)
    return np.where(start_in, 0.0, hi)


def boundary_flattening(samples, safety=1.25):
    """C₂ = safety × max x_n/|z|² over both parts of ∂Ω_δ."""
    pts = np.concatenate([samples.sphere, samples.boundary])
    r2 = np.sum(pts ** 2, axis=1)
    keep = r2 > 1e-14
    ratio = pts[keep, -2] / r2[keep]
    return safety * float(max(np.max(ratio), 1e-12))


@dataclass
class Certificate:
    t0: float
    measured: float
    bound: float
    eps: float
    C2: float
    level_violation_min: float
    comparison_slack: float
    passed: bool
    applicable: bool = True

    def to_dict(self):
        return dict(self.__dict__)


def choose_corrector(barrier, samples, psi_inf):
    """ε = half the least shift pushing λ[w] into Γ̄^{inf ψ}; C₂ from samples."""
    setup = barrier.setup
    op = setup.fields.instance.operator
    c2 = boundary_flattening(samples)
    bar = BarrierFields(setup, replace(barrier.params, C2=c2, eps=0.0))
    data = setup.fields.at(samples.interior)
    shift = crossing_shift(op, bar.form(data), bar.corrector_form(data), data["g"], psi_inf)
    eps = 0.5 * float(np.min(shift))
    return BarrierFields(setup, replace(bar.params, eps=eps))


def trivial_certificate(setup):
    """η = 0 or t₀ ≤ 0: the bound is 1 and (1−t₀)⁻¹ ≤ 1 holds directly."""
    t0 = setup.t0
    return Certificate(t0, 1 / (1 - t0), 1.0, np.nan, np.nan, np.nan, np.nan,
                       bool(1 / (1 - t0) <= 1.0 + 1e-6), applicable=False)


def t0_certificate(barrier, verification, samples, u_interior, psi_inf, tol=1e-8):
    """Check λ[h] ∉ Γ̄^{inf ψ}, u ≤ h on Ω_δ and (1−t₀)⁻¹ ≤ 1 + ηC₂/ε."""
    setup = barrier.setup
    if not setup.applicable:
        return trivial_certificate(setup)
    if not verification.passed:
        raise BarrierNotVerified("verify_barrier did not pass")
    p = barrier.params
    op = setup.fields.instance.operator
    data = setup.fields.at(samples.interior)
    form_h = barrier.form(data) + p.eps * barrier.corrector_form(data)
    lam_h = form_eigenvalues_rel(form_h, data["g"])
    member = _level_member(op, lam_h, psi_inf)
    with np.errstate(invalid="ignore", divide="ignore"):
        vals = np.where(op.contains(lam_h, 0.0), op.value(lam_h) - psi_inf, -np.inf)
    slack = float(np.max(u_interior - barrier.corrected_value(data)))
    bound = 1.0 + setup.eta * p.C2 / p.eps
    measured = 1.0 / (1.0 - setup.t0)
    ok = (not np.any(member)) and slack <= tol and measured <= bound + 1e-6
    return Certificate(setup.t0, measured, bound, p.eps, p.C2, float(np.max(vals)),
                       slack, bool(ok))


# ---------------------------------------------------------------------------
# double-normal bounds
# ---------------------------------------------------------------------------

def assemble_Rc(mixed_sum, eps0, t0, R0, R1, Rp, n, sub_abs_sum):
    """R_c from the growth threshold with ε = (1−t₀)ε₀/4.

    R_c/2 = 4(2n−3)/((1−t₀)ε₀) Σ|g_{αn̄}|² + (n−1) Σ|λ̲′_α| + R₀ + R₁ + R′
            + (n−1)(1−t₀)ε₀/4 + (n−2)(1−t₀)ε₀/(4(2n−3)).
    """
    if not t0 < 1 or not eps0 > 0 or n < 2:
        raise InvalidIngredients("need t₀ < 1, ε₀ > 0 and n ≥ 2")
    if min(mixed_sum, R0, R1, Rp, sub_abs_sum) < 0:
        raise InvalidIngredients("ingredients must be nonnegative")
    e = (1 - t0) * eps0
    half = (4 * (2 * n - 3) / e * mixed_sum + (n - 1) * sub_abs_sum + R0 + R1 + Rp
            + (n - 1) * e / 4 + (n - 2) * e / (4 * (2 * n - 3)))
    ingredients = dict(mixed_sum=mixed_sum, eps0=eps0, t0=t0, R0=R0, R1=R1, Rp=Rp,
                       n=n, sub_abs_sum=sub_abs_sum)
    return DoubleNormalBound("R_c", 2 * half, ingredients)


def assemble_Rs(mixed_sum, eps0, t0, R0, n, trace_abs_sum, sub_abs_sum):
    """R_s = 2(n−1)(2n−3)/(ε₀(1−t₀)) Σ|g̃_{αn̄}|² + (n−1)Σ|g̃_{αᾱ}|
    + (1−t₀)Σ|g̲̃_{αᾱ}| + R₀."""
    if not t0 < 1 or not eps0 > 0 or n < 2:
        raise InvalidIngredients("need t₀ < 1, ε₀ > 0 and n ≥ 2")
    if min(mixed_sum, R0, trace_abs_sum, sub_abs_sum) < 0:
        raise InvalidIngredients("ingredients must be nonnegative")
    value = (2 * (n - 1) * (2 * n - 3) / (eps0 * (1 - t0)) * mixed_sum
             + (n - 1) * trace_abs_sum + (1 - t0) * sub_abs_sum + R0)
    ingredients = dict(mixed_sum=mixed_sum, eps0=eps0, t0=t0, R0=R0, n=n,
                       trace_abs_sum=trace_abs_sum, sub_abs_sum=sub_abs_sum)
    return DoubleNormalBound("R_s", value, ingredients)


def _first_power(pred, limit=60):
    r = 1.0
    for _ in range(limit):
        if pred(r):
            return r
        r *= 2
    raise InvalidIngredients("power-of-two search exhausted")


def _bisect_sup(pred, hi=1.0, iters=60):
    """sup{ε ≥ 0 : pred(ε)} for a predicate true near 0 and monotone."""
    if not pred(1e-300):
        raise InvalidIngredients("membership fails at ε = 0")
    grow = 0
    while pred(hi) and grow < 60:
        hi *= 2
        grow += 1
    if grow == 60:
        return hi
    lo = 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if pred(mid):
            lo = mid
        else:
            hi = mid
    return lo


@dataclass
class DoubleNormalCheck:
    bound: DoubleNormalBound
    measured: float
    passed: bool
    floors_hold: bool = True
    monotone_hold: bool = True
    threshold_hold: bool = True
    notes: dict = field(default_factory=dict)

    def to_dict(self):
        return {"bound": self.bound.to_dict(), "measured": self.measured,
                "passed": self.passed, "floors_hold": self.floors_hold,
                "monotone_hold": self.monotone_hold, "threshold_hold": self.threshold_hold,
                "notes": self.notes}


def double_normal_general(setup, g_origin):
    """ε₀, R₀, R₁, R′ searches, R_c and the g_{nn̄} ≤ R_c check.

    ``g_origin`` is the solution's form χ + ∂∂̄u at the chart origin.
    """
    op = setup.fields.instance.operator
    n = setup.n
    t0 = setup.t0
    sub = setup.sub_origin
    lam_sub_t = hermitian_eigen(sub[:n - 1, :n - 1])
    lam_sub = hermitian_eigen(sub)
    sup_eps = _bisect_sup(lambda e: bool(in_cone_infinity(op, lam_sub_t - e)),
                          hi=max(1.0, float(np.max(np.abs(lam_sub_t)))))
    eps0 = 0.5 * sup_eps
    R0 = _first_power(lambda r: bool(op.contains(np.r_[lam_sub_t - eps0, r], 0.0)))
    a_t0 = t0 * sub[:n - 1, :n - 1] + setup.eta * setup.sigma_origin[:n - 1, :n - 1]
    e4 = (1 - t0) * eps0 / 4

    def a2(r):
        m = np.zeros((n, n), complex)
        m[:n - 1, :n - 1] = a_t0 + e4 * np.eye(n - 1)
        m[-1, -1] = r / 2
        return m

    Rp = _first_power(lambda r: bool(op.contains(hermitian_eigen(a2(r)), 0.0)))
    f_sub = float(op.value(lam_sub))
    target = (1 - t0) * (lam_sub_t - eps0 / 2)
    R1 = _first_power(lambda r: bool(op.contains(np.r_[target, r], 0.0))
                      and float(op.value(np.r_[target, r])) > f_sub)
    mixed = float(np.sum(np.abs(g_origin[:n - 1, -1]) ** 2))
    bound = assemble_Rc(mixed, eps0, t0, R0, R1, Rp, n, float(np.sum(np.abs(lam_sub_t))))
    rc = bound.value
    # A(R) = A′(R) + A″(R) with the tangential block from the boundary identity
    tang = sub[:n - 1, :n - 1] + setup.eta * setup.sigma_origin[:n - 1, :n - 1]
    a_full = np.zeros((n, n), complex)
    a_full[:n - 1, :n - 1] = tang
    a_full[:n - 1, -1] = g_origin[:n - 1, -1]
    a_full[-1, :n - 1] = np.conj(g_origin[:n - 1, -1])
    a_full[-1, -1] = rc
    a1 = a_full - a2(rc)
    lam1 = hermitian_eigen(a1)
    floors = np.sort((1 - t0) * (lam_sub_t - eps0 / 2))
    floors_ok = bool(np.all(np.sort(lam1[:-1]) >= floors - 1e-9)
                     and lam1[-1] >= rc / 2 - (n - 1) * e4 - 1e-9)
    lam_full = hermitian_eigen(a_full)
    mono = bool(op.contains(lam_full, 0.0) and op.contains(lam1, 0.0)
                and op.value(lam_full) >= op.value(lam1) - 1e-12)
    measured = float(np.real(g_origin[-1, -1]))
    return DoubleNormalCheck(bound, measured, measured <= rc, floors_ok, mono,
                             notes={"eps0_sup": sup_eps, "sub_norm": "sum |λ̲′_α|"})


def double_normal_pn1(setup, g_origin, psi0):
    """R₀, ε₀ searches, R_s and the tr_ω g̃ ≤ R_s check (pn1 mode)."""
    n = setup.n
    t0 = setup.t0
    sub = setup.sub_origin
    c = (1 - t0) * float(np.real(np.trace(sub[:n - 1, :n - 1])))

    def ftilde(mu):
        mu = np.asarray(mu, float)
        return float(np.sum(np.log(mu))) if np.all(mu > 0) else -np.inf

    R0 = _first_power(lambda r: ftilde(np.r_[np.full(n - 1, r), c]) > psi0)
    sup_eps = _bisect_sup(lambda e: ftilde(np.r_[np.full(n - 1, R0 - e), c - e]) >= psi0,
                          hi=min(R0, c))
    eps0 = 0.5 * sup_eps
    mixed = float(np.sum(np.abs(g_origin[:n - 1, -1]) ** 2))
    trace_abs = float(np.sum(np.abs(np.real(np.diag(g_origin))[:n - 1])))
    sub_abs = float(np.sum(np.abs(np.real(np.diag(sub))[:n - 1])))
    bound = assemble_Rs(mixed, eps0, t0, R0, n, trace_abs, sub_abs)
    rs = bound.value
    # arrowhead hookup: B = [[g̃_{αβ̄}, g̃_{αn̄}], [·, R_s − c]] must clear the growth threshold
    eps = eps0 * (1 - t0) / (2 * (n - 1))
    d = np.real(np.diag(g_origin))[:n - 1]
    thr = float(growth_threshold(d, g_origin[:n - 1, -1], eps))
    measured = float(np.real(np.trace(g_origin)))
    return DoubleNormalCheck(bound, measured, measured <= rs,
                             threshold_hold=bool(rs - c >= thr),
                             notes={"eps0_sup": sup_eps, "corner_threshold": thr})


# ---------------------------------------------------------------------------
# per-point pipeline
# ---------------------------------------------------------------------------

@dataclass
class CorruptionControl:
    """u + κσ in place of u: the comparisons u ≤ w and u ≤ h should break."""

    kappa: float
    sphere_slack: float
    comparison_slack: float

    @property
    def failed(self):
        return bool(self.sphere_slack > 1e-8 or self.comparison_slack > 1e-8)

    def to_dict(self):
        return {"kappa": self.kappa, "sphere_slack": self.sphere_slack,
                "comparison_slack": self.comparison_slack, "failed": self.failed}


def corrupted_control(barrier, samples, u_sphere, u_interior, kappa=5.0):
    """Rerun both comparisons with u raised by κσ on the samples."""
    setup = barrier.setup
    sigma = setup.chart.domain.sigma
    s_sph = sigma(setup.chart.to_ambient(samples.sphere))
    s_int = sigma(setup.chart.to_ambient(samples.interior))
    sph = float(np.max(u_sphere + kappa * s_sph - barrier.value(setup.fields.at(samples.sphere))))
    data = setup.fields.at(samples.interior)
    cmp_ = float(np.max(u_interior + kappa * s_int - barrier.corrected_value(data)))
    return CorruptionControl(float(kappa), sph, cmp_)


def solution_form(u, instance, chart):
    """g[u] (or g̃[u] in pn1 mode) at the chart origin, in chart coordinates."""
    from .expr import complex_hessian_from_real
    from .solver import boundary_quantities

    p0 = chart.p0[None]
    _, grad, hess = boundary_quantities(u, instance, p0)
    hc = complex_hessian_from_real(hess)
    dz = 0.5 * (grad[..., 0::2] - 1j * grad[..., 1::2])
    form = instance.form(p0, hc, dz)[0]
    return chart.pull_form(form)


@dataclass
class PointReport:
    """All stage results at one boundary point."""

    p0: list
    eta: float
    eta_upper: float
    t0: float
    mode: str
    verification: BarrierVerification = None
    negative_control: BarrierVerification = None
    certificate: Certificate = None
    double_normal: DoubleNormalCheck = None
    t0_crosscheck: float = np.nan
    corrupted: CorruptionControl = None
    applicable: bool = True

    @property
    def controls_fail(self):
        """True when every negative control failed as intended."""
        if not self.applicable:
            return True
        tiny = self.negative_control is not None and not self.negative_control.passed
        bad = self.corrupted is not None and self.corrupted.failed
        return bool(tiny and bad)

    @property
    def passed(self):
        ok = self.eta >= -1e-8 and self.eta <= self.eta_upper + 1e-6
        if self.applicable:
            ok = ok and self.verification.passed and self.certificate.passed
        return bool(ok and self.double_normal.passed)

    def to_dict(self):
        out = {"p0": self.p0, "eta": self.eta, "eta_upper": self.eta_upper, "t0": self.t0,
               "mode": self.mode, "t0_crosscheck": self.t0_crosscheck,
               "applicable": self.applicable, "passed": self.passed,
               "controls_fail": self.controls_fail}
        for key in ("verification", "negative_control", "certificate", "double_normal",
                    "corrupted"):
            val = getattr(self, key)
            out[key] = None if val is None else val.to_dict()
        return out


def certify_point(instance, u, p0, supersolution=None, psi_inf=None, tiny_a=1e-6, seed=0,
                  kappa=5.0):
    """Chart, η, t₀, barrier search, certificate and the double-normal check.

    ``supersolution`` (a GridField) supplies the upper bound on η; ``psi_inf``
    defaults to the minimum of ψ over grid nodes and boundary samples.
    """
    from .geometry import boundary_chart
    from .spectral import SpectralOperator

    chart = boundary_chart(instance.domain, instance.metric, p0)
    eta = eta_at(u, instance.subsolution, chart)
    eta_up = eta_at(supersolution, instance.subsolution, chart) if supersolution is not None \
        else np.inf
    if psi_inf is None:
        psi_inf = float(min(np.min(instance.psi_at(u.grid.points)),
                            np.min(instance.psi_at(instance.domain.boundary_points(256)))))
    setup = setup_point(instance, chart, eta)
    rep = PointReport(p0=np.asarray(p0).tolist(), eta=eta, eta_upper=eta_up, t0=setup.t0,
                      mode=setup.mode, applicable=setup.applicable)
    if setup.mode == "pn1":
        # the closed form against bisection on the projected cone of log P_{n−1}
        n = setup.n
        op = SpectralOperator("log-P-n-minus-1", n)
        sub = setup.sub_origin[:n - 1, :n - 1]
        sig = setup.sigma_origin[:n - 1, :n - 1]
        rep.t0_crosscheck = crossing_t0_general(op, sub, sig, eta).t0 if eta > 0 else 0.0
    g0 = solution_form(u, instance, setup.chart)
    if setup.applicable:
        bar, ver, samples = search_parameters(setup, u, seed=seed)
        rep.verification = ver
        if ver.passed:
            bar = choose_corrector(bar, samples, psi_inf)
            u_int = u_on_chart(u, setup, samples.interior)
            rep.certificate = t0_certificate(bar, ver, samples, u_int, psi_inf)
            # the comparison margins scale like the data, so the corruption does too
            grad = instance.subsolution.real_gradient(np.asarray(p0, float)[None])[0]
            scale = max(1.0, float(np.linalg.norm(grad)))
            rep.corrupted = corrupted_control(bar, samples, u_on_chart(u, setup, samples.sphere),
                                              u_int, kappa * scale)
        else:
            rep.certificate = Certificate(setup.t0, 1 / (1 - setup.t0), np.nan, np.nan, np.nan,
                                          np.nan, np.nan, False)
        tiny = BarrierFields(setup, replace(bar.params, A=tiny_a))
        rep.negative_control = verify_barrier(tiny, samples,
                                              u_on_chart(u, setup, samples.sphere))
    else:
        rep.certificate = trivial_certificate(setup)
    if setup.mode == "pn1":
        psi0 = float(instance.psi_at(np.asarray(p0)[None])[0])
        rep.double_normal = double_normal_pn1(setup, g0, psi0)
    else:
        rep.double_normal = double_normal_general(setup, g0)
    return rep


__all__ = [
    "BarrierParams", "CrossingResult", "DoubleNormalBound", "eta_at",
    "crossing_t0_general", "crossing_t0_pn1", "choose_linear_term", "taylor_extract",
    "setup_point", "PointSetup", "build_barrier", "BarrierFields", "sample_omega",
    "verify_barrier", "search_parameters", "choose_corrector", "t0_certificate",
    "assemble_Rc", "assemble_Rs", "double_normal_general", "double_normal_pn1",
    "difference_field", "u_on_chart", "Certificate", "BarrierVerification",
    "solution_form", "PointReport", "certify_point", "trivial_certificate",
    "CorruptionControl", "corrupted_control",
]
