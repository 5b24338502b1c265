"""Tensor grids over the bounding box of a domain, with boundary-aware stencils.

Every second derivative is realised as a directional second difference along
an integer lattice direction v (axes e_a and diagonals e_a ± e_b). When the
stencil leg from a node crosses ∂M before reaching the next lattice node, the
leg is shortened to the crossing point and the Dirichlet value there is used
(the Shortley–Weller construction). Mixed derivatives follow from
u_ab = (D_{e_a+e_b} − D_{e_a−e_b}) / 4.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations
from pathlib import Path

import numpy as np
import scipy.sparse as sps
from scipy.spatial import cKDTree

from .errors import StencilOutOfDomain
from .expr import as_field, complex_hessian_from_real


@dataclass
class LineStencil:
    """Three-point nonuniform stencil along one lattice direction.

    Fractions ``tp`` and ``tm`` (in (0, 1]) give the forward and backward leg
    lengths in units of the lattice step. ``ip``/``im`` are interior indices of
    the neighbours or −1 for a boundary crossing at ``bp``/``bm``.
    """

    direction: np.ndarray
    tp: np.ndarray
    tm: np.ndarray
    ip: np.ndarray
    im: np.ndarray
    bp: np.ndarray
    bm: np.ndarray


def _second_weights(tp, tm, h2):
    den = h2 * tp * tm * (tp + tm)
    return 2 * tm / den, -2 * (tp + tm) / den, 2 * tp / den


def _first_weights(tp, tm, h):
    den = h * tp * tm * (tp + tm)
    return tm * tm / den, (tp * tp - tm * tm) / den, -tp * tp / den


class Grid:
    """Uniform grid with ``m`` points per real axis over the domain's box.

    Parameters
    ----------
    domain : Domain
        Convex domain with a closed-form crossing routine.
    m : int
        Points per axis (odd values put a node at the centre).
    """

    def __init__(self, domain, m):
        self.domain = domain
        self.n = domain.n
        self.dim = 2 * self.n
        self.m = int(m)
        lo, hi = domain.bounding_box()
        self.lo = np.asarray(lo, float)
        self.hi = np.asarray(hi, float)
        spacing = (self.hi - self.lo) / (self.m - 1)
        if not np.allclose(spacing, spacing[0]):
            raise ValueError("bounding box must be a cube")
        self.h = float(spacing[0])
        axes = [np.linspace(self.lo[a], self.hi[a], self.m) for a in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([g.ravel() for g in mesh], axis=-1)
        sig = domain.sigma(pts)
        inside = sig > 1e-12 * self.h
        self.full_shape = (self.m,) * self.dim
        self.mask = inside.reshape(self.full_shape)
        self.full_index = np.where(inside, np.cumsum(inside) - 1, -1)
        self.flat_interior = np.nonzero(inside)[0]
        self.points = pts[self.flat_interior]
        self.size = len(self.points)
        self.strides = np.array([self.m ** (self.dim - 1 - a) for a in range(self.dim)])
        self.multi = np.stack(np.unravel_index(self.flat_interior, self.full_shape), axis=-1)

    # -- lattice directions ----------------------------------------------
    @cached_property
    def axis_directions(self):
        return [np.eye(self.dim, dtype=int)[a] for a in range(self.dim)]

    @cached_property
    def pair_list(self):
        return list(combinations(range(self.dim), 2))

    def _neighbour(self, v):
        tgt = self.multi + v
        ok = np.all((tgt >= 0) & (tgt < self.m), axis=1)
        flat = np.where(ok, (np.clip(tgt, 0, self.m - 1) * self.strides).sum(axis=1), 0)
        idx = np.where(ok, self.full_index[flat], -1)
        return idx

    def _leg(self, v):
        idx = self._neighbour(v)
        step = self.h * v.astype(float)
        t = np.ones(self.size)
        bpts = np.full((self.size, self.dim), np.nan)
        cross = idx < 0
        if np.any(cross):
            tc = self.domain.crossing(self.points[cross], step, np.inf)
            tc = np.minimum(tc, 1.0)
            t[cross] = tc
            bpts[cross] = self.points[cross] + tc[:, None] * step
        return idx, t, bpts

    def stencil(self, v):
        v = np.asarray(v, dtype=int)
        key = tuple(v)
        cache = self.__dict__.setdefault("_stencils", {})
        if key not in cache:
            ip, tp, bp = self._leg(v)
            im, tm, bm = self._leg(-v)
            cache[key] = LineStencil(v, tp, tm, ip, im, bp, bm)
        return cache[key]

    @cached_property
    def second_directions(self):
        """Lattice directions used for second derivatives (axes, then diagonals)."""
        dirs = list(self.axis_directions)
        for a, b in self.pair_list:
            e = np.eye(self.dim, dtype=int)
            dirs.append(e[a] + e[b])
            dirs.append(e[a] - e[b])
        return dirs

    # -- sparse operators -------------------------------------------------
    def second_operator(self, v):
        """(S, B) with D_v u ≈ S·u + B·φ(crossings) for direction v.

        Returns the sparse matrix on interior values and a pair of boundary
        weight arrays for the forward and backward crossings.
        """
        st = self.stencil(v)
        h2 = self.h ** 2
        wp, w0, wm = _second_weights(st.tp, st.tm, h2)
        return self._assemble(st, wp, w0, wm)

    def first_operator(self, a):
        st = self.stencil(self.axis_directions[a])
        wp, w0, wm = _first_weights(st.tp, st.tm, self.h)
        return self._assemble(st, wp, w0, wm)

    def _assemble(self, st, wp, w0, wm):
        rows = np.arange(self.size)
        r = [rows]
        c = [rows]
        d = [w0]
        for idx, w in ((st.ip, wp), (st.im, wm)):
            ok = idx >= 0
            r.append(rows[ok])
            c.append(idx[ok])
            d.append(w[ok])
        mat = sps.csr_matrix((np.concatenate(d), (np.concatenate(r), np.concatenate(c))),
                             shape=(self.size, self.size))
        bw_p = np.where(st.ip < 0, wp, 0.0)
        bw_m = np.where(st.im < 0, wm, 0.0)
        return mat, (bw_p, bw_m)

    def boundary_values(self, v, phi):
        """Dirichlet values at the forward/backward crossings of direction v."""
        st = self.stencil(v)
        out = []
        for idx, pts in ((st.ip, st.bp), (st.im, st.bm)):
            vals = np.zeros(self.size)
            cross = idx < 0
            if np.any(cross):
                vals[cross] = phi.value(pts[cross])
            out.append(vals)
        return out

    @cached_property
    def crossing_points(self):
        """All distinct boundary crossing points used by the stencils."""
        pts = []
        for v in self.second_directions:
            st = self.stencil(v)
            for idx, bp in ((st.ip, st.bp), (st.im, st.bm)):
                pts.append(bp[idx < 0])
        pts = np.concatenate(pts)
        return np.unique(np.round(pts, 14), axis=0)

    def node_index(self, x, tol=1e-9):
        """Interior index of the node at point ``x``."""
        k = np.rint((np.asarray(x, float) - self.lo) / self.h).astype(int)
        if np.any(k < 0) or np.any(k >= self.m) or np.max(
                np.abs(self.lo + k * self.h - x)) > tol:
            raise StencilOutOfDomain(f"{x} is not a grid node")
        idx = self.full_index[int((k * self.strides).sum())]
        if idx < 0:
            raise StencilOutOfDomain(f"{x} is not an interior node")
        return int(idx)

    def describe(self):
        return {"m": self.m, "h": self.h, "lo": self.lo.tolist(), "hi": self.hi.tolist(),
                "interior": self.size, "domain": self.domain.to_config()}


class DiscreteCalculus:
    """Sparse derivative operators of a grid together with Dirichlet data.

    Applying :meth:`real_hessian` to interior values gives the discrete real
    Hessian at every interior node, using the exact boundary function at
    crossing points.
    """

    def __init__(self, grid, phi):
        self.grid = grid
        self.phi = as_field(phi, grid.n)
        self.second = []
        for v in grid.second_directions:
            mat, (bwp, bwm) = grid.second_operator(v)
            vp, vm = grid.boundary_values(v, self.phi)
            self.second.append((mat, bwp * vp + bwm * vm))
        self.first = []
        for a in range(grid.dim):
            mat, (bwp, bwm) = grid.first_operator(a)
            vp, vm = grid.boundary_values(grid.axis_directions[a], self.phi)
            self.first.append((mat, bwp * vp + bwm * vm))

    def directional(self, u):
        return [mat @ u + b for mat, b in self.second]

    def real_hessian(self, u):
        g = self.grid
        dv = self.directional(u)
        out = np.empty((g.size, g.dim, g.dim))
        for a in range(g.dim):
            out[:, a, a] = dv[a]
        k = g.dim
        for a, b in g.pair_list:
            val = 0.25 * (dv[k] - dv[k + 1])
            out[:, a, b] = val
            out[:, b, a] = val
            k += 2
        return out

    def complex_hessian(self, u):
        return complex_hessian_from_real(self.real_hessian(u))

    def real_gradient(self, u):
        return np.stack([mat @ u + b for mat, b in self.first], axis=-1)

    def dz(self, u):
        g = self.real_gradient(u)
        return 0.5 * (g[:, 0::2] - 1j * g[:, 1::2])

    def hessian_operator(self, coef):
        """Sparse matrix of δu ↦ Σ_ab C_ab (δu)_ab for per-node real C (N, 2n, 2n)."""
        g = self.grid
        c = 0.5 * (coef + np.swapaxes(coef, 1, 2))
        mats = []
        for a in range(g.dim):
            mats.append(sps.diags(c[:, a, a]) @ self.second[a][0])
        k = g.dim
        for a, b in g.pair_list:
            w = 0.5 * c[:, a, b]
            mats.append(sps.diags(w) @ (self.second[k][0] - self.second[k + 1][0]))
            k += 2
        return sum(mats[1:], mats[0]).tocsr()

    def gradient_operator(self, coef):
        """Sparse matrix of δu ↦ Σ_a b_a (δu)_a for per-node real b (N, 2n)."""
        mats = [sps.diags(coef[:, a]) @ self.first[a][0] for a in range(self.grid.dim)]
        return sum(mats[1:], mats[0]).tocsr()


def hermitian_to_real_coefficients(p):
    """Real C with Σ_ij P_ji u_{ij̄} = Σ_ab C_ab u_ab (u_ab the real Hessian)."""
    n = p.shape[-1]
    c = np.zeros(p.shape[:-2] + (2 * n, 2 * n), dtype=complex)
    pt = np.swapaxes(p, -1, -2) / 4.0  # [i, j] = P_ji / 4
    c[..., 0::2, 0::2] += pt
    c[..., 1::2, 1::2] += pt
    c[..., 0::2, 1::2] += 1j * pt
    c[..., 1::2, 0::2] -= 1j * pt
    c = np.real(c)
    return 0.5 * (c + np.swapaxes(c, -1, -2))


# ---------------------------------------------------------------------------
# grid fields
# ---------------------------------------------------------------------------

def _quadratic_design(d):
    """Design matrix of the full quadratic in displacement ``d`` (K, dim)."""
    k, dim = d.shape[-2:]
    cols = [np.ones(d.shape[:-1])]
    cols += [d[..., a] for a in range(dim)]
    for a in range(dim):
        for b in range(a, dim):
            cols.append(d[..., a] * d[..., b])
    return np.stack(cols, axis=-1)


class GridField:
    """Scalar field on the interior nodes of a grid plus its Dirichlet data.

    Parameters
    ----------
    grid : Grid
    values : ndarray, shape (grid.size,)
        Interior nodal values.
    boundary : ScalarField or str
        Closed-form Dirichlet data, evaluated exactly at boundary crossings.
    """

    def __init__(self, grid, values, boundary):
        self.grid = grid
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != (grid.size,):
            raise ValueError("values must live on the interior nodes")
        self.boundary = as_field(boundary, grid.n)

    @classmethod
    def from_field(cls, grid, field, boundary=None):
        field = as_field(field, grid.n)
        return cls(grid, field.value(grid.points), field if boundary is None else boundary)

    @cached_property
    def calculus(self):
        return DiscreteCalculus(self.grid, self.boundary)

    def complex_hessian(self):
        return self.calculus.complex_hessian(self.values)

    def real_gradient(self):
        return self.calculus.real_gradient(self.values)

    def hessian_at(self, x):
        """Discrete complex Hessian at the interior node located at ``x``."""
        idx = self.grid.node_index(x)
        return self.complex_hessian()[idx]

    def full_array(self):
        out = np.full(self.grid.m ** self.grid.dim, np.nan)
        out[self.grid.flat_interior] = self.values
        return out.reshape(self.grid.full_shape)

    # -- off-grid sampling -----------------------------------------------
    @cached_property
    def _sample_data(self):
        bpts = self.grid.crossing_points
        pts = np.concatenate([self.grid.points, bpts])
        vals = np.concatenate([self.values, self.boundary.value(bpts)])
        return cKDTree(pts), pts, vals

    def sample(self, x, neighbours=None, derivatives=False, width=1.5):
        """Local weighted quadratic least-squares reconstruction at ``x``.

        Data are interior nodes and exact boundary values at the stencil
        crossing points. Returns values, and with ``derivatives`` also the
        fitted real gradient and Hessian.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        tree, pts, vals = self._sample_data
        dim = self.grid.dim
        ncoef = 1 + dim + dim * (dim + 1) // 2
        k = neighbours or int(2.7 * ncoef)
        dist, idx = tree.query(x, k=k)
        h = self.grid.h
        d = (pts[idx] - x[:, None, :]) / h
        w = np.exp(-(dist / (width * h)) ** 2)
        a = _quadratic_design(d) * np.sqrt(w)[..., None]
        b = vals[idx] * np.sqrt(w)
        ata = np.einsum("kia,kib->kab", a, a)
        atb = np.einsum("kia,ki->ka", a, b)
        coef = np.linalg.solve(ata + 1e-14 * np.eye(ncoef), atb[..., None])[..., 0]
        if not derivatives:
            return coef[:, 0]
        grad = coef[:, 1:1 + dim] / h
        hess = np.empty((len(x), dim, dim))
        c = 1 + dim
        for i in range(dim):
            for j in range(i, dim):
                val = coef[:, c] / h ** 2
                if i == j:
                    hess[:, i, i] = 2 * val
                else:
                    hess[:, i, j] = val
                    hess[:, j, i] = val
                c += 1
        return coef[:, 0], grad, hess

    # -- serialisation ----------------------------------------------------
    def save(self, path):
        """Write ``path.json`` (header) and ``path.bin`` (float64 box array)."""
        path = Path(path)
        header = {"shape": list(self.grid.full_shape), "spacing": self.grid.h,
                  "lo": self.grid.lo.tolist(), "domain": self.grid.domain.to_config(),
                  "boundary": self.boundary.to_string(), "dtype": "float64",
                  "order": "C", "outside": "nan"}
        path.with_suffix(".json").write_text(json.dumps(header, indent=2))
        self.full_array().astype("<f8").tofile(path.with_suffix(".bin"))
        return header

    @staticmethod
    def load_array(path):
        path = Path(path)
        header = json.loads(path.with_suffix(".json").read_text())
        arr = np.fromfile(path.with_suffix(".bin"), dtype="<f8").reshape(header["shape"])
        return header, arr


def sample_quotient(field, x, denom, neighbours=None, width=2.0, floor=1e-3):
    """Reconstruct a field vanishing on ∂M as denom(x)·q(x).

    q is a weighted quadratic least-squares fit of values/denom over interior
    nodes with denom > floor·h, so the reconstruction is exactly zero
    wherever ``denom`` is (typically ∂M for denom = σ).
    """
    grid = field.grid
    x = np.atleast_2d(np.asarray(x, dtype=float))
    nodes = grid.points
    dn = denom(nodes)
    keep = dn > floor * grid.h
    pts = nodes[keep]
    q = field.values[keep] / dn[keep]
    dim = grid.dim
    ncoef = 1 + dim + dim * (dim + 1) // 2
    k = min(neighbours or 12 * ncoef, len(pts))
    tree = cKDTree(pts)
    dist, idx = tree.query(x, k=k)
    h = grid.h
    d = (pts[idx] - x[:, None, :]) / h
    w = np.exp(-(dist / (width * h)) ** 2)
    a = _quadratic_design(d) * np.sqrt(w)[..., None]
    b = q[idx] * np.sqrt(w)
    ata = np.einsum("kia,kib->kab", a, a)
    atb = np.einsum("kia,ki->ka", a, b)
    coef = np.linalg.solve(ata + 1e-14 * np.eye(ncoef), atb[..., None])[..., 0]
    return denom(x) * coef[:, 0]
