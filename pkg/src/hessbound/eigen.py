"""Hermitian eigenvalues and arrowhead localization lemmas.

The eigenvalue oracle is a cyclic complex Jacobi method that works on stacks
of matrices at once. Arrowhead matrices have a real diagonal block ``d``, a
complex last column ``a`` and a real corner entry; when the corner grows
quadratically in ``|a|`` the first n-1 eigenvalues stay close to ``d`` and the
top one stays close to the corner.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import NonpositiveEpsilon, NotHermitian, ThresholdNotMet

JACOBI_TOL = 1e-13
JACOBI_MAX_SWEEPS = 100
STRICT_SLACK = 1e-12


# ---------------------------------------------------------------------------
# Jacobi eigensolver
# ---------------------------------------------------------------------------

def _check_hermitian(h):
    scale = max(1.0, float(np.max(np.abs(h)))) if h.size else 1.0
    err = np.max(np.abs(h - np.conj(np.swapaxes(h, -1, -2)))) if h.size else 0.0
    if err > 1e-14 * scale:
        raise NotHermitian(f"conjugate-transpose residual {err:.3e}")


def jacobi_eigh(h, vectors=False, tol=JACOBI_TOL, max_sweeps=JACOBI_MAX_SWEEPS):
    """Eigen-decomposition of a stack of Hermitian matrices by cyclic Jacobi.

    Parameters
    ----------
    h : array_like, shape (..., n, n)
        Hermitian matrices.
    vectors : bool
        Also return the unitary eigenvector matrices (columns).

    Returns
    -------
    lam : ndarray, shape (..., n)
        Ascending eigenvalues.
    v : ndarray, shape (..., n, n)
        Only when ``vectors`` is true; ``h = v diag(lam) v*``.
    """
    h = np.asarray(h, dtype=complex)
    _check_hermitian(h)
    shape = h.shape
    n = shape[-1]
    a = h.reshape((-1, n, n)).copy()
    batch = a.shape[0]
    v = np.broadcast_to(np.eye(n, dtype=complex), (batch, n, n)).copy()
    scale = np.sqrt(np.sum(np.abs(a) ** 2, axis=(1, 2)))
    offmask = ~np.eye(n, dtype=bool)
    rows = np.arange(batch)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.abs(a[:, offmask]) ** 2, axis=1))
        active = off > tol * scale
        if not np.any(active):
            break
        idx = rows[active]
        sub = a[idx]
        vs = v[idx] if vectors else None
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = sub[:, p, q]
                r = np.abs(apq)
                nz = r > 0
                phase = np.where(nz, apq / np.where(nz, r, 1.0), 1.0)
                app = sub[:, p, p].real
                aqq = sub[:, q, q].real
                zeta = np.where(nz, (aqq - app) / (2.0 * np.where(nz, r, 1.0)), 0.0)
                sgn = np.where(zeta >= 0, 1.0, -1.0)
                t = np.where(nz, sgn / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta)), 0.0)
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                ph = np.conj(phase)
                upp, upq = c, s
                uqp, uqq = -s * ph, c * ph
                colp = sub[:, :, p].copy()
                colq = sub[:, :, q].copy()
                sub[:, :, p] = colp * upp[:, None] + colq * uqp[:, None]
                sub[:, :, q] = colp * upq[:, None] + colq * uqq[:, None]
                rowp = sub[:, p, :].copy()
                rowq = sub[:, q, :].copy()
                sub[:, p, :] = np.conj(upp)[:, None] * rowp + np.conj(uqp)[:, None] * rowq
                sub[:, q, :] = np.conj(upq)[:, None] * rowp + np.conj(uqq)[:, None] * rowq
                sub[:, p, q] = 0.0
                sub[:, q, p] = 0.0
                sub[:, p, p] = sub[:, p, p].real
                sub[:, q, q] = sub[:, q, q].real
                if vectors:
                    vp = vs[:, :, p].copy()
                    vq = vs[:, :, q].copy()
                    vs[:, :, p] = vp * upp[:, None] + vq * uqp[:, None]
                    vs[:, :, q] = vp * upq[:, None] + vq * uqq[:, None]
        a[idx] = sub
        if vectors:
            v[idx] = vs
    lam = np.real(np.diagonal(a, axis1=1, axis2=2))
    order = np.argsort(lam, axis=1, kind="stable")
    lam = np.take_along_axis(lam, order, axis=1).reshape(shape[:-1])
    if not vectors:
        return lam
    v = np.take_along_axis(v, order[:, None, :], axis=2).reshape(shape)
    return lam, v


def hermitian_eigen(h, vectors=False):
    """Ascending eigenvalues of one Hermitian matrix (Jacobi oracle)."""
    return jacobi_eigh(h, vectors=vectors)


# ---------------------------------------------------------------------------
# arrowhead matrices and thresholds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ArrowheadMatrix:
    """Hermitian matrix [[diag(d), a], [a*, corner]]."""

    d: np.ndarray
    a: np.ndarray
    corner: float

    def __post_init__(self):
        d = np.atleast_1d(np.asarray(self.d, dtype=float))
        a = np.atleast_1d(np.asarray(self.a, dtype=complex))
        if d.ndim != 1 or d.size < 1:
            raise ValueError("arrowhead needs a nonempty diagonal block (n >= 2)")
        if a.shape != d.shape:
            raise ValueError("d and a must have the same length")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "corner", float(self.corner))

    @property
    def n(self):
        return self.d.size + 1

    def matrix(self):
        return arrowhead_matrix(self.d, self.a, self.corner)

    def to_json(self):
        return json.dumps({"d": self.d.tolist(),
                           "a": [[z.real, z.imag] for z in self.a],
                           "corner": self.corner})

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        return cls(d=obj["d"], a=[complex(re, im) for re, im in obj["a"]],
                   corner=obj["corner"])


def arrowhead_matrix(d, a, corner):
    """Embed arrowhead data (batched over leading axes) as full matrices."""
    d = np.asarray(d, dtype=float)
    a = np.asarray(a, dtype=complex)
    corner = np.asarray(corner, dtype=float)
    m = d.shape[-1]
    out = np.zeros(d.shape[:-1] + (m + 1, m + 1), dtype=complex)
    idx = np.arange(m)
    out[..., idx, idx] = d
    out[..., :m, m] = a
    out[..., m, :m] = np.conj(a)
    out[..., m, m] = corner
    return out


def _check_eps(eps):
    if not np.all(np.asarray(eps) > 0):
        raise NonpositiveEpsilon("ε must be strictly positive")


def growth_threshold(d, a, eps):
    """(2n−3)/ε Σ|a_i|² + (n−1) Σ|d_i| + (n−2) ε/(2n−3), batched."""
    _check_eps(eps)
    d = np.asarray(d, dtype=float)
    a = np.asarray(a, dtype=complex)
    n = d.shape[-1] + 1
    eps = np.asarray(eps, dtype=float)
    return ((2 * n - 3) / eps * np.sum(np.abs(a) ** 2, axis=-1)
            + (n - 1) * np.sum(np.abs(d), axis=-1)
            + (n - 2) * eps / (2 * n - 3))


def refinement_threshold(d, a, eps):
    """(1/ε) Σ|a_i|² + Σ[d_i + (n−2)|d_i|] + (n−2) ε, batched."""
    _check_eps(eps)
    d = np.asarray(d, dtype=float)
    a = np.asarray(a, dtype=complex)
    n = d.shape[-1] + 1
    eps = np.asarray(eps, dtype=float)
    return (np.sum(np.abs(a) ** 2, axis=-1) / eps
            + np.sum(d + (n - 2) * np.abs(d), axis=-1)
            + (n - 2) * eps)


# ---------------------------------------------------------------------------
# localization reports
# ---------------------------------------------------------------------------

@dataclass
class LocalizationReport:
    """Witness matching of eigenvalues to diagonal entries and pass flags."""

    eigenvalues: np.ndarray
    d: np.ndarray
    corner: float
    eps: float
    matching: list = field(default_factory=list)  # (α, λ_α, d_i, gap)
    excess: float = 0.0
    excess_bound: float = 0.0
    threshold: float = 0.0
    threshold_met: bool = True

    @property
    def max_gap(self):
        return max((g for *_, g in self.matching), default=0.0)

    @property
    def gaps_pass(self):
        return self.max_gap < self.eps - STRICT_SLACK

    @property
    def excess_pass(self):
        return -STRICT_SLACK <= self.excess < self.excess_bound - STRICT_SLACK

    @property
    def passed(self):
        return self.gaps_pass and self.excess_pass

    def to_dict(self):
        return {"eigenvalues": self.eigenvalues.tolist(), "d": self.d.tolist(),
                "corner": self.corner, "eps": self.eps,
                "matching": [list(map(float, m)) for m in self.matching],
                "excess": self.excess, "excess_bound": self.excess_bound,
                "threshold": self.threshold, "threshold_met": self.threshold_met,
                "passed": self.passed}


def bottleneck_matching(lam, d):
    """Assignment of λ to d minimising the largest gap |λ_α − d_β|.

    Binary search over candidate gap values, each tested for a perfect
    matching with :func:`scipy.optimize.linear_sum_assignment`; the final
    assignment also minimises the total gap among bottleneck-optimal ones.
    """
    lam = np.asarray(lam, dtype=float)
    d = np.asarray(d, dtype=float)
    cost = np.abs(lam[:, None] - d[None, :])
    cands = np.unique(cost)
    lo, hi = 0, len(cands) - 1
    big = 1e300
    while lo < hi:
        mid = (lo + hi) // 2
        masked = np.where(cost <= cands[mid], cost, big)
        r, c = linear_sum_assignment(masked)
        if np.all(masked[r, c] < big):
            hi = mid
        else:
            lo = mid + 1
    masked = np.where(cost <= cands[lo], cost, big)
    r, c = linear_sum_assignment(masked)
    return c[np.argsort(r)], float(cands[lo])


def check_quantitative_lemma(m, eps, allow_below=False):
    """Check the arrowhead localization under the quadratic growth condition.

    The lowest n-1 eigenvalues are matched to ``d`` by the bottleneck
    assignment; the report asserts every gap < ε and
    0 ≤ λ_n − corner < (n−1)ε.

    Raises
    ------
    ThresholdNotMet
        If the corner is below :func:`growth_threshold`, unless
        ``allow_below`` requests a descriptive report instead.
    """
    _check_eps(eps)
    thr = float(growth_threshold(m.d, m.a, eps))
    met = m.corner >= thr
    if not met and not allow_below:
        raise ThresholdNotMet(f"corner {m.corner} below threshold {thr}")
    lam = hermitian_eigen(m.matrix())
    assign, _ = bottleneck_matching(lam[:-1], m.d)
    matching = [(alpha, float(lam[alpha]), float(m.d[assign[alpha]]),
                 float(abs(lam[alpha] - m.d[assign[alpha]])))
                for alpha in range(m.n - 1)]
    return LocalizationReport(eigenvalues=lam, d=m.d.copy(), corner=m.corner,
                              eps=float(eps), matching=matching,
                              excess=float(lam[-1] - m.corner),
                              excess_bound=(m.n - 1) * float(eps),
                              threshold=thr, threshold_met=bool(met))


def check_refinement_lemma(m, eps, allow_below=False):
    """Check the refined localization with repeated nearest-diagonal matches.

    Each λ_α (α ≤ n−1) is paired with its nearest diagonal entry d_{i_α}
    (repeats allowed); the excess bound is (n−1)ε + |Σ_α (d_α − d_{i_α})|.
    """
    _check_eps(eps)
    thr = float(refinement_threshold(m.d, m.a, eps))
    met = m.corner >= thr
    if not met and not allow_below:
        raise ThresholdNotMet(f"corner {m.corner} below threshold {thr}")
    lam = hermitian_eigen(m.matrix())
    dist = np.abs(lam[:-1, None] - m.d[None, :])
    nearest = np.argmin(dist, axis=1)
    matching = [(alpha, float(lam[alpha]), float(m.d[i]), float(dist[alpha, i]))
                for alpha, i in enumerate(nearest)]
    shift = abs(float(np.sum(m.d - m.d[nearest])))
    return LocalizationReport(eigenvalues=lam, d=m.d.copy(), corner=m.corner,
                              eps=float(eps), matching=matching,
                              excess=float(lam[-1] - m.corner),
                              excess_bound=(m.n - 1) * float(eps) + shift,
                              threshold=thr, threshold_met=bool(met))


# ---------------------------------------------------------------------------
# batched campaign kernels
# ---------------------------------------------------------------------------

def quantitative_batch(d, a, corner, eps, lam=None):
    """Vectorised growth-lemma check for a batch with a common n.

    The bottleneck assignment on the real line is the sorted alignment, so
    the batch path sorts both lists. Returns a dict of per-case arrays.
    """
    if lam is None:
        lam = jacobi_eigh(arrowhead_matrix(d, a, corner))
    gaps = np.abs(np.sort(lam[:, :-1], axis=1) - np.sort(d, axis=1))
    max_gap = gaps.max(axis=1)
    excess = lam[:, -1] - corner
    n = d.shape[1] + 1
    ok = (max_gap < eps - STRICT_SLACK) & (excess >= -STRICT_SLACK) & (
        excess < (n - 1) * eps - STRICT_SLACK)
    return {"lam": lam, "max_gap": max_gap, "excess": excess, "pass": ok}


def refinement_batch(d, a, corner, eps, lam=None):
    """Vectorised refinement-lemma check for a batch with a common n."""
    if lam is None:
        lam = jacobi_eigh(arrowhead_matrix(d, a, corner))
    dist = np.abs(lam[:, :-1, None] - d[:, None, :])
    nearest = np.argmin(dist, axis=2)
    gaps = np.take_along_axis(dist, nearest[..., None], axis=2)[..., 0]
    max_gap = gaps.max(axis=1)
    dn = np.take_along_axis(d, nearest, axis=1)
    shift = np.abs(np.sum(d - dn, axis=1))
    excess = lam[:, -1] - corner
    n = d.shape[1] + 1
    ok = (max_gap < eps - STRICT_SLACK) & (excess >= -STRICT_SLACK) & (
        excess < (n - 1) * eps + shift - STRICT_SLACK)
    return {"lam": lam, "max_gap": max_gap, "excess": excess, "pass": ok}


# ---------------------------------------------------------------------------
# component counting and the 2×2 case
# ---------------------------------------------------------------------------

def _components(d, eps):
    n = len(d) + 1
    r = eps / (2 * n - 3)
    order = np.argsort(d)
    comps = []
    for i in order:
        lo, hi = d[i] - r, d[i] + r
        if comps and lo < comps[-1][1]:
            comps[-1][1] = max(comps[-1][1], hi)
            comps[-1][2] += 1
        else:
            comps.append([lo, hi, 1])
    return comps


def component_card(d, a, eps, corner):
    """Eigenvalue counts in the merged intervals (d_α ± ε/(2n−3)).

    Returns the counts as an integer array, one per connected component in
    increasing order. Under the growth condition each count equals the
    number of diagonal entries generating its component.
    """
    d = np.asarray(d, dtype=float)
    a = np.asarray(a, dtype=complex)
    _check_eps(eps)
    thr = float(growth_threshold(d, a, eps))
    if corner < thr:
        raise ThresholdNotMet(f"corner {corner} below threshold {thr}")
    lam = hermitian_eigen(arrowhead_matrix(d, a, corner))
    comps = _components(d, eps)
    return np.array([int(np.sum((lam > lo) & (lam < hi))) for lo, hi, _ in comps])


def card_sweep(d, a, eps, corners):
    """Component counts for one (d, a, ε) at many corner values.

    Returns an integer array of shape ``(len(corners), m)`` with one column
    per merged component. Corners below the growth threshold raise.
    """
    d = np.asarray(d, dtype=float)
    a = np.asarray(a, dtype=complex)
    corners = np.asarray(corners, dtype=float)
    _check_eps(eps)
    thr = float(growth_threshold(d, a, eps))
    if np.any(corners < thr):
        raise ThresholdNotMet(f"sweep starts below threshold {thr}")
    k = len(corners)
    lam = jacobi_eigh(arrowhead_matrix(np.tile(d, (k, 1)), np.tile(a, (k, 1)), corners))
    comps = _components(d, eps)
    return np.stack([np.sum((lam > lo) & (lam < hi), axis=1) for lo, hi, _ in comps], axis=1)


def component_sizes(d, eps):
    """Number of diagonal entries generating each merged component."""
    return np.array([c[2] for c in _components(np.asarray(d, float), eps)])


def closed_form_2x2(d1, a1, corner):
    """Ascending eigenvalues of [[d1, a1], [conj(a1), corner]]."""
    d1 = np.asarray(d1, dtype=float)
    corner = np.asarray(corner, dtype=float)
    root = np.sqrt((corner - d1) ** 2 + 4 * np.abs(np.asarray(a1)) ** 2)
    lo = 0.5 * (corner + d1 - root)
    hi = 0.5 * (corner + d1 + root)
    if lo.ndim == 0:
        return float(lo), float(hi)
    return lo, hi


# ---------------------------------------------------------------------------
# JSON helpers for matrix test vectors
# ---------------------------------------------------------------------------

def matrix_to_json(h):
    h = np.asarray(h, dtype=complex)
    return json.dumps([[[z.real, z.imag] for z in row] for row in h])


def matrix_from_json(text):
    rows = json.loads(text)
    return np.array([[complex(re, im) for re, im in row] for row in rows])
