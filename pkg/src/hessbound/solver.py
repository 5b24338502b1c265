"""Finite-difference Dirichlet solver for f(λ(χ + ∂∂̄u [+ W[u]])) = ψ.

The unknowns are interior node values; boundary data enter through the
crossing points of the stencils (see :mod:`hessbound.grid`). Newton steps
use the exact Jacobian of the discrete operator and are solved with
BiCGStab and a diagonal preconditioner. A backtracking line search keeps
every node admissible.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
import sympy as sp
from scipy.sparse.linalg import LinearOperator, bicgstab, gmres, spsolve

from .errors import (
    BoundaryMismatch,
    ConeViolation,
    DegenerateRightHandSide,
    InadmissibleProfile,
    LinearSolveDiverged,
    LineSearchStalled,
    MaxIterations,
    NotASubsolution,
)
from .expr import ScalarField, as_field, norm_squared, real_symbols
from .geometry import (
    Ball,
    FlatMetric,
    domain_from_config,
    metric_from_config,
    w_coefficients,
)
from .grid import DiscreteCalculus, Grid, GridField, hermitian_to_real_coefficients
from .spectral import SpectralOperator, degeneracy_gap

MARGIN_SCALE = 1e-6


# ---------------------------------------------------------------------------
# χ fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChiField:
    """χ = s(z)·I (``kind='identity'``), s(z)·g (``'metric'``) or 0 (``'zero'``)."""

    kind: str = "zero"
    scale: object = 0.0
    n: int = 2

    @property
    def _scale_field(self):
        return as_field(self.scale, self.n)

    def at(self, x, metric):
        x = np.asarray(x, float)
        shape = x.shape[:-1]
        if self.kind == "zero":
            return np.zeros(shape + (self.n, self.n), dtype=complex)
        s = self._scale_field.value(x)[..., None, None]
        if self.kind == "identity":
            return s * np.eye(self.n)
        if self.kind == "metric":
            return s * metric.g(x)
        raise ValueError(f"unknown χ kind {self.kind!r}")

    def to_config(self):
        scale = self.scale.to_string() if isinstance(self.scale, ScalarField) else self.scale
        return {"kind": self.kind, "scale": scale}

    @classmethod
    def from_config(cls, cfg, n):
        if cfg is None:
            return cls("zero", 0.0, n)
        return cls(cfg.get("kind", "zero"), cfg.get("scale", 0.0), n)


# ---------------------------------------------------------------------------
# problem instance
# ---------------------------------------------------------------------------

@dataclass
class ProblemInstance:
    """Dirichlet problem: domain, metric, operator, χ, ψ, φ, subsolution.

    With ``pn1`` the equation uses g̃ = χ + ∂∂̄u + W[u], where the gradient
    term W comes from the metric torsion; otherwise g = χ + ∂∂̄u.
    ``psi`` is a closed-form field; :meth:`manufactured_psi` builds it from a
    known solution.
    """

    domain: object
    operator: SpectralOperator
    psi: object
    phi: object
    subsolution: object
    metric: object = None
    chi: ChiField = None
    pn1: bool = False
    name: str = "instance"
    psi_shift: float = 0.0
    exact: object = None
    psi_scale: float = 1.0

    def __post_init__(self):
        n = self.domain.n
        if self.metric is None:
            self.metric = FlatMetric(n)
        if self.chi is None:
            self.chi = ChiField("zero", 0.0, n)
        self.phi = as_field(self.phi, n)
        self.subsolution = as_field(self.subsolution, n)
        if self.exact is not None:
            self.exact = as_field(self.exact, n)
        if not callable(self.psi):
            self.psi = as_field(self.psi, n)

    @property
    def n(self):
        return self.domain.n

    # -- pointwise tensors -------------------------------------------------
    def form(self, x, hess, du=None):
        """g = χ + ∂∂̄u (+ W[u]) from a complex Hessian and gradient at x."""
        a = self.chi.at(x, self.metric) + hess
        if self.pn1:
            wu, wub = w_coefficients(self.metric, x)
            a = a + (np.einsum("...pij,...p->...ij", wu, du)
                     + np.einsum("...pij,...p->...ij", wub, np.conj(du)))
        return a

    def field_form(self, field, x):
        """The form at points x for a closed-form field."""
        return self.form(x, field.complex_hessian(x), field.dz(x))

    def psi_at(self, x):
        val = self.psi(x) if not isinstance(self.psi, ScalarField) else self.psi.value(x)
        return self.psi_scale * np.asarray(val, float) + self.psi_shift

    def eigenvalues(self, a, x):
        return metric_eigenvalues(a, self.metric.g(x))

    def check_subsolution(self, x, tol=1e-8):
        """Raise unless the subsolution is admissible and f(λ) ≥ ψ − tol at x."""
        lam = self.eigenvalues(self.field_form(self.subsolution, x), x)
        adm = self.operator.contains(lam, 0.0) & (self.operator.cone_slack(lam) > 0)
        if not np.all(adm):
            bad = int(np.argmin(self.operator.cone_slack(lam)))
            raise NotASubsolution(f"subsolution inadmissible at node {x[bad].tolist()}")
        slack = self.operator.value(lam) - self.psi_at(x)
        if np.any(slack < -tol):
            bad = int(np.argmin(slack))
            raise NotASubsolution(
                f"subsolution fails f(λ) ≥ ψ at node {x[bad].tolist()} (slack {slack[bad]:.3e})")
        return float(slack.min())

    def check_boundary(self, count=256, tol=1e-10):
        pts = self.domain.boundary_points(count)
        err = np.abs(self.subsolution.value(pts) - self.phi.value(pts))
        if np.max(err) > tol:
            raise BoundaryMismatch(f"subsolution differs from φ on ∂M by {err.max():.3e}")
        return float(err.max())

    def with_shift(self, shift, subsolution=None, name=None):
        return ProblemInstance(domain=self.domain, operator=self.operator, psi=self.psi,
                               phi=self.phi, subsolution=subsolution or self.subsolution,
                               metric=self.metric, chi=self.chi, pn1=self.pn1,
                               name=name or self.name, psi_shift=self.psi_shift + shift,
                               exact=None, psi_scale=self.psi_scale)

    # -- configuration -----------------------------------------------------
    @classmethod
    def from_config(cls, cfg):
        domain = domain_from_config(cfg["domain"])
        n = domain.n
        op_cfg = dict(cfg["operator"])
        op_cfg.setdefault("n", n)
        op = SpectralOperator.from_config(op_cfg)
        metric = metric_from_config(cfg.get("metric"), n)
        chi = ChiField.from_config(cfg.get("chi"), n)
        pn1 = bool(cfg.get("pn1", False))
        psi_cfg = cfg["psi"]
        inst = cls(domain=domain, operator=op, psi=0.0, phi=cfg["phi"],
                   subsolution=cfg["subsolution"], metric=metric, chi=chi, pn1=pn1,
                   name=cfg.get("name", "instance"), exact=cfg.get("exact"))
        if isinstance(psi_cfg, dict) and "manufactured" in psi_cfg:
            inst.psi = manufactured_psi(inst, as_field(psi_cfg["manufactured"], n))
            inst.exact = as_field(psi_cfg["manufactured"], n)
        else:
            inst.psi = as_field(psi_cfg, n)
        inst.psi_shift = float(cfg.get("psi_shift", 0.0))
        inst.psi_scale = float(cfg.get("psi_scale", 1.0))
        return inst


def manufactured_psi(instance, solution):
    """ψ = f(λ(g[u*])) evaluated pointwise from a closed-form solution u*."""
    def psi(x):
        x = np.asarray(x, float)
        lam = instance.eigenvalues(instance.field_form(solution, x), x)
        return instance.operator.value(lam)
    return psi


def metric_eigenvalues(a, g):
    """Ascending eigenvalues of Hermitian ``a`` relative to metric ``g``."""
    linv = np.linalg.inv(np.linalg.cholesky(g))
    b = linv @ a @ np.conj(np.swapaxes(linv, -1, -2))
    b = 0.5 * (b + np.conj(np.swapaxes(b, -1, -2)))
    return np.linalg.eigvalsh(b)


# ---------------------------------------------------------------------------
# discrete operator
# ---------------------------------------------------------------------------

@dataclass
class OperatorState:
    """Everything about the discrete operator at one iterate."""

    form: np.ndarray
    lam: np.ndarray
    vec: np.ndarray
    residual: np.ndarray
    slack: np.ndarray
    margin: np.ndarray

    @property
    def admissible(self):
        return bool(np.all(self.slack > self.margin))

    @property
    def min_relative_margin(self):
        return float(np.min(self.slack / np.maximum(np.abs(self.lam.sum(axis=-1)), 1e-300)))


class DiscreteOperator:
    """F(u) = f(λ(g[u])) − ψ at interior nodes of a grid."""

    def __init__(self, instance, grid):
        self.instance = instance
        self.grid = grid
        x = grid.points
        self.calculus = DiscreteCalculus(grid, instance.phi)
        self.g = instance.metric.g(x)
        self.linv = np.linalg.inv(np.linalg.cholesky(self.g))
        self.chi = instance.chi.at(x, instance.metric)
        self.psi = instance.psi_at(x)
        if instance.pn1:
            self.wu, self.wub = w_coefficients(instance.metric, x)

    def form(self, u):
        a = self.chi + self.calculus.complex_hessian(u)
        if self.instance.pn1:
            du = self.calculus.dz(u)
            a = a + (np.einsum("kpij,kp->kij", self.wu, du)
                     + np.einsum("kpij,kp->kij", self.wub, np.conj(du)))
        return a

    def state(self, u):
        a = self.form(u)
        b = self.linv @ a @ np.conj(np.swapaxes(self.linv, 1, 2))
        b = 0.5 * (b + np.conj(np.swapaxes(b, 1, 2)))
        lam, vec = np.linalg.eigh(b)
        op = self.instance.operator
        slack = op.cone_slack(lam)
        margin = MARGIN_SCALE * np.abs(lam.sum(axis=-1))
        with np.errstate(invalid="ignore", divide="ignore"):
            val = op.value(lam)
        res = np.where(slack > 0, val - self.psi, np.nan)
        return OperatorState(a, lam, vec, res, slack, margin)

    def residual(self, u):
        return self.state(u).residual

    def derivative_weights(self, st):
        """P with dF = Σ_ij P_ji dA_ij (P = L^{-*} V diag(f_λ) V* L^{-1})."""
        _, grad = self.instance.operator.value_and_gradient(st.lam)
        q = st.vec @ (grad[:, :, None] * np.conj(np.swapaxes(st.vec, 1, 2)))
        lh = np.conj(np.swapaxes(self.linv, 1, 2))
        return lh @ q @ self.linv

    def linear_operator(self, p):
        """Sparse matrix of δu ↦ Σ_ij P_ji (δ g[u])_ij at every node."""
        mat = self.calculus.hessian_operator(hermitian_to_real_coefficients(p))
        if self.instance.pn1:
            pt = np.swapaxes(p, 1, 2)
            su = np.einsum("kij,kpij->kp", pt, self.wu)
            sb = np.einsum("kij,kpij->kp", pt, self.wub)
            coef = np.empty((self.grid.size, self.grid.dim))
            coef[:, 0::2] = np.real(0.5 * (su + sb))
            coef[:, 1::2] = np.real(0.5j * (sb - su))
            mat = mat + self.calculus.gradient_operator(coef)
        return mat.tocsr()

    def jacobian(self, st):
        return self.linear_operator(self.derivative_weights(st))


def _solve_linear(mat, rhs, rtol, maxiter=5000):
    diag = mat.diagonal()
    diag = np.where(np.abs(diag) > 0, diag, 1.0)
    prec = LinearOperator(mat.shape, matvec=lambda v: v / diag, dtype=float)
    x, info = bicgstab(mat, rhs, rtol=rtol, atol=0.0, M=prec, maxiter=maxiter)
    if info == 0 and np.all(np.isfinite(x)):
        return x
    # breakdown or stagnation: restarted GMRES, then a sparse direct solve
    x, info2 = gmres(mat, rhs, rtol=rtol, atol=0.0, M=prec, restart=100, maxiter=50)
    if info2 == 0 and np.all(np.isfinite(x)):
        return x
    try:
        x = spsolve(mat.tocsc(), rhs)
    except RuntimeError as exc:
        raise LinearSolveDiverged(f"linear solve failed (BiCGStab info={info})") from exc
    scale = max(np.linalg.norm(rhs), 1e-300)
    if not np.all(np.isfinite(x)) or np.linalg.norm(mat @ x - rhs) > 1e3 * rtol * scale:
        raise LinearSolveDiverged(f"linear solve failed (BiCGStab info={info})")
    return x


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class SolveReport:
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    margin_history: list = field(default_factory=list)
    step_history: list = field(default_factory=list)
    final_residual: float = np.inf
    converged: bool = False
    wall_time: float = 0.0
    sup_gradient: float = np.nan
    sup_boundary_laplacian: float = np.nan
    r1: float = np.nan
    r2: float = np.nan
    grid: dict = field(default_factory=dict)

    def to_dict(self):
        out = dict(self.__dict__)
        return {k: (float(v) if isinstance(v, (np.floating,)) else v) for k, v in out.items()}


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------

def solve_supersolution(instance, grid, tol=1e-10):
    """Solve tr_ω(χ + ∂∂̄ǔ) = 0 with ǔ = φ on ∂M.

    The discrete operator is linear; it is nonsymmetric near the boundary,
    so BiCGStab is used with a few steps of iterative refinement until the
    max-norm residual is at most ``tol``.
    """
    op = DiscreteOperator(instance, grid)
    ginv = np.linalg.inv(op.g)
    p = ginv  # Σ_ij P_ji A_ij = tr(G^{-1} A)
    mat = op.calculus.hessian_operator(hermitian_to_real_coefficients(p))

    zero = np.zeros(grid.size)

    def resid(u):
        a = op.chi + op.calculus.complex_hessian(u)
        return np.real(np.einsum("kij,kji->k", ginv, a))

    u = zero.copy()
    r = resid(u)
    for _ in range(8):
        if np.max(np.abs(r)) <= tol:
            break
        u = u + _solve_linear(mat, -r, rtol=1e-14)
        r = resid(u)
    if np.max(np.abs(r)) > tol:
        raise LinearSolveDiverged(f"supersolution residual {np.max(np.abs(r)):.3e}")
    return GridField(grid, u, instance.phi)


def newton_solve(instance, grid, target=1e-10, max_iter=30, initial=None,
                 check=True, linear_rtol=1e-12):
    """Damped Newton for the discrete equation starting from the subsolution.

    Parameters
    ----------
    instance : ProblemInstance
    grid : Grid
    target : float
        Stop when max nodewise |f(λ(g[u])) − ψ| ≤ target.
    initial : ndarray, optional
        Starting interior values (defaults to the subsolution at the nodes).
    check : bool
        Validate the subsolution and boundary data before solving.

    Returns
    -------
    (GridField, SolveReport)
    """
    t_start = time.perf_counter()
    op_f = instance.operator
    x = grid.points
    psi_nodes = instance.psi_at(x)
    gap = degeneracy_gap(op_f, psi_nodes)
    if not gap.nondegenerate:
        raise DegenerateRightHandSide(f"degeneracy gap {gap.value} ≤ 0")
    if check:
        instance.check_boundary()
        instance.check_subsolution(x)
    dop = DiscreteOperator(instance, grid)
    u = instance.subsolution.value(x) if initial is None else np.array(initial, float)
    st = dop.state(u)
    if not st.admissible:
        raise ConeViolation("initial iterate is not admissible on the grid")
    rep = SolveReport(grid=grid.describe())
    rnorm = float(np.max(np.abs(st.residual)))
    rep.residual_history.append(rnorm)
    rep.margin_history.append(st.min_relative_margin)
    for it in range(max_iter):
        if rnorm <= target:
            rep.converged = True
            break
        jac = dop.jacobian(st)
        delta = _solve_linear(jac, -st.residual, rtol=linear_rtol)
        alpha = 1.0
        for _ in range(40):
            trial = dop.state(u + alpha * delta)
            if trial.admissible:
                tnorm = float(np.max(np.abs(trial.residual)))
                if tnorm < rnorm * (1 - 1e-4 * alpha) or tnorm <= target:
                    break
            alpha *= 0.5
        else:
            raise LineSearchStalled(f"no admissible decrease at iteration {it}")
        u = u + alpha * delta
        st = trial
        rnorm = tnorm
        rep.iterations = it + 1
        rep.residual_history.append(rnorm)
        rep.margin_history.append(st.min_relative_margin)
        rep.step_history.append(alpha)
    else:
        if rnorm > target:
            raise MaxIterations(f"residual {rnorm:.3e} after {max_iter} iterations")
    rep.converged = rnorm <= target
    rep.final_residual = rnorm
    rep.wall_time = time.perf_counter() - t_start
    return GridField(grid, u, instance.phi), rep


def pn1_operator_apply(instance, u, node):
    """Value of the discrete operator at one node and its local linear data.

    Returns ``(value, info)`` where ``info`` holds the form g̃, eigenvalues,
    the derivative weights P with dF = Σ P_ji dg̃_ij and the W coefficients.
    """
    dop = DiscreteOperator(instance, u.grid)
    st = dop.state(u.values)
    if not np.all(st.slack[node] > 0):
        raise ConeViolation(f"node {node} is outside the cone")
    p = dop.derivative_weights(st)
    info = {"form": st.form[node], "lam": st.lam[node], "weights": p[node]}
    if instance.pn1:
        info["wu"] = dop.wu[node]
        info["wub"] = dop.wub[node]
    return float(st.residual[node] + dop.psi[node]), info


# ---------------------------------------------------------------------------
# radial oracle
# ---------------------------------------------------------------------------

def radial_oracle(profile, n, radius=1.0, samples=2001, check=True):
    """u = φ(|z|²), det(u_{ij̄}) = φ′^{n−1}(φ′ + sφ″) and ψ = log det.

    ``profile`` is an expression in ``s``. Returns three closed-form fields.
    With ``check=False`` profiles that degenerate somewhere on [0, R²]
    (such as φ = s², whose determinant vanishes at the origin) are accepted;
    the determinant is still exact but ψ is then unbounded below there.
    """
    s = sp.Symbol("s", real=True)
    phi_s = sp.sympify(profile, locals={"s": s}) if isinstance(profile, str) else profile
    d1 = sp.diff(phi_s, s)
    d2 = sp.diff(d1, s)
    det_s = sp.expand(d1 ** (n - 1) * (d1 + s * d2))
    grid = np.linspace(0.0, radius ** 2, samples)
    f1 = sp.lambdify(s, d1, "numpy")(grid) * np.ones_like(grid)
    f2 = sp.lambdify(s, d1 + s * d2, "numpy")(grid) * np.ones_like(grid)
    if check and (np.any(f1 <= 0) or np.any(f2 <= 0)):
        raise InadmissibleProfile("profile needs φ′ > 0 and φ′ + sφ″ > 0")
    r2 = norm_squared(n).expr
    u = ScalarField(phi_s.subs(s, r2), n)
    det = ScalarField(det_s.subs(s, r2), n)
    psi = ScalarField(sp.log(det_s.subs(s, r2)), n)
    return u, det, psi


# ---------------------------------------------------------------------------
# estimate measurement
# ---------------------------------------------------------------------------

def boundary_quantities(u, instance, points, reference=None, width=2.0):
    """Gradient and real Hessian of u at off-grid points.

    u is split as reference + e with the closed-form reference (default the
    subsolution, equal to u on ∂M); e is reconstructed by local weighted
    least squares on about twelve times as many points as quadratic
    coefficients, which keeps the fitted second derivatives stable under
    refinement.
    """
    dim = 2 * instance.n
    k = 12 * (1 + dim + dim * (dim + 1) // 2)
    ref = instance.subsolution if reference is None else as_field(reference, instance.n)
    e = GridField(u.grid, u.values - ref.value(u.grid.points), ScalarField(0, instance.n)
                  if reference is None else instance.phi - ref)
    ev, eg, eh = e.sample(points, neighbours=k, derivatives=True, width=width)
    return (ref.value(points) + ev, ref.real_gradient(points) + eg,
            ref.real_hessian(points) + eh)


def measure_estimates(u, instance, count=64, report=None):
    """Boundary Laplacian, gradient sup and the two quantitative ratios.

    r₁ = sup_∂ Δu / (1 + sup|∇u|²) and r₂ = max over boundary samples and
    unit tangential X of |∇²u(X, ν)| / (1 + sup|∇u|).
    """
    dom = instance.domain
    pts = dom.boundary_points(count)
    _, grad_b, hess_b = boundary_quantities(u, instance, pts)
    # interior gradients only where every stencil leg has full length
    interior = dom.sigma(u.grid.points) > 2.0 * u.grid.h
    grad_int = u.real_gradient()[interior]
    sup_grad = float(np.max(np.linalg.norm(grad_b, axis=1)))
    if grad_int.size:
        sup_grad = max(sup_grad, float(np.max(np.linalg.norm(grad_int, axis=1))))
    lap = np.trace(hess_b, axis1=1, axis2=2)
    sup_lap = float(np.max(lap))
    if isinstance(dom, Ball):
        nu = -dom.outward_normal(pts)
    else:
        from .geometry import inward_normal, to_real
        nu = np.array([to_real(inward_normal(dom, p)) for p in pts])
    hv = np.einsum("kab,kb->ka", hess_b, nu)
    tang = hv - np.sum(hv * nu, axis=1, keepdims=True) * nu
    r2 = float(np.max(np.linalg.norm(tang, axis=1))) / (1 + sup_grad)
    r1 = sup_lap / (1 + sup_grad ** 2)
    rep = report or SolveReport()
    rep.sup_gradient = sup_grad
    rep.sup_boundary_laplacian = sup_lap
    rep.r1 = r1
    rep.r2 = r2
    return rep


# ---------------------------------------------------------------------------
# the manufactured family used throughout
# ---------------------------------------------------------------------------

def manufactured_instance(n=2, perturbation=0.0, radius=1.0, profile="s + s**2/4"):
    """The radial log-det instance with exact solution φ(|z|²).

    ``perturbation`` c gives the strict subsolution u* − c(R² − |z|²).
    """
    u_star, _, psi = radial_oracle(profile, n, radius)
    rr = norm_squared(n)
    sub = u_star - perturbation * (radius ** 2 - rr) if perturbation else u_star
    phi_val = float(u_star.value(np.r_[radius, np.zeros(2 * n - 1)][None])[0])
    return ProblemInstance(domain=Ball(n=n, radius=radius),
                           operator=SpectralOperator("log-sigma-k", n, n),
                           psi=psi, phi=ScalarField(sp.Float(phi_val), n),
                           subsolution=sub, name="manufactured-radial", exact=u_star)


__all__ = [
    "ChiField", "ProblemInstance", "DiscreteOperator", "SolveReport", "Grid",
    "GridField", "solve_supersolution", "newton_solve", "pn1_operator_apply",
    "radial_oracle", "measure_estimates", "manufactured_instance",
    "manufactured_psi", "metric_eigenvalues", "real_symbols",
]
