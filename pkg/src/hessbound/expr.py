"""Closed-form scalar fields on ℂⁿ written in a small expression grammar.

Expressions use the real coordinates ``x1, y1, …, xn, yn`` (z_k = x_k + i y_k),
numeric constants, ``+ - * / ^ **``, parentheses and the functions ``exp``,
``log`` and ``sqrt``. Fields are parsed with sympy, differentiated exactly and
compiled to numpy callables. Every evaluator takes points as real arrays of
shape ``(..., 2n)`` in the interleaved order ``(x1, y1, x2, y2, …)``.
"""

from __future__ import annotations

import re
from functools import cached_property

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import (
    convert_xor,
    parse_expr,
    standard_transformations,
)

from .errors import ExpressionError

_FUNCS = {"exp": sp.exp, "log": sp.log, "sqrt": sp.sqrt}
_TOKEN = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")
_NUMBER = re.compile(r"(?<![A-Za-z_0-9])\d+\.?\d*(?:[eE][+-]?\d+)?")
_ALLOWED_CHARS = re.compile(r"^[0-9A-Za-z_.+\-*/^()\s]*$")


def real_symbols(n):
    """Sympy symbols (x1, y1, …, xn, yn)."""
    out = []
    for k in range(1, n + 1):
        out += [sp.Symbol(f"x{k}", real=True), sp.Symbol(f"y{k}", real=True)]
    return out


def to_complex(x):
    """Interleaved real coordinates to complex coordinates."""
    x = np.asarray(x, dtype=float)
    return x[..., 0::2] + 1j * x[..., 1::2]


def to_real(z):
    """Complex coordinates to interleaved real coordinates."""
    z = np.asarray(z, dtype=complex)
    out = np.empty(z.shape[:-1] + (2 * z.shape[-1],))
    out[..., 0::2] = z.real
    out[..., 1::2] = z.imag
    return out


def real_matrix(m):
    """Real 2n×2n matrix of the complex-linear map ζ ↦ Mζ."""
    m = np.asarray(m, dtype=complex)
    n = m.shape[0]
    r = np.zeros((2 * n, 2 * n))
    r[0::2, 0::2] = m.real
    r[0::2, 1::2] = -m.imag
    r[1::2, 0::2] = m.imag
    r[1::2, 1::2] = m.real
    return r


def parse(text, n):
    """Parse an expression string into a sympy expression in n complex variables."""
    if not isinstance(text, str):
        return sp.nsimplify(text) if isinstance(text, (int, float)) else sp.sympify(text)
    if not _ALLOWED_CHARS.match(text):
        raise ExpressionError(f"illegal character in {text!r}")
    syms = real_symbols(n)
    local = {str(s): s for s in syms}
    for name in _TOKEN.findall(_NUMBER.sub(" ", text)):
        if name not in local and name not in _FUNCS:
            raise ExpressionError(f"unknown identifier {name!r} in {text!r}")
    local.update(_FUNCS)
    try:
        expr = parse_expr(text, local_dict=local, global_dict={"Integer": sp.Integer,
                                                               "Float": sp.Float,
                                                               "Rational": sp.Rational,
                                                               "Symbol": sp.Symbol},
                          transformations=standard_transformations + (convert_xor,),
                          evaluate=True)
    except Exception as exc:  # sympy raises a variety of types here
        raise ExpressionError(f"cannot parse {text!r}: {exc}") from exc
    if not expr.free_symbols <= set(syms):
        raise ExpressionError(f"stray symbols in {text!r}")
    return expr


class ScalarField:
    """A scalar closed-form field with exact derivatives.

    Parameters
    ----------
    expr : str, number or sympy expression
        The field, in the grammar described in the module docstring.
    n : int
        Complex dimension.
    """

    def __init__(self, expr, n):
        self.n = int(n)
        self.symbols = real_symbols(self.n)
        self.expr = parse(expr, self.n) if isinstance(expr, str) else sp.sympify(expr)

    # -- algebra -------------------------------------------------------------
    def _lift(self, other):
        if isinstance(other, ScalarField):
            if other.n != self.n:
                raise ValueError("dimension mismatch")
            return other.expr
        return sp.sympify(other)

    def __add__(self, other):
        return ScalarField(self.expr + self._lift(other), self.n)

    __radd__ = __add__

    def __sub__(self, other):
        return ScalarField(self.expr - self._lift(other), self.n)

    def __rsub__(self, other):
        return ScalarField(self._lift(other) - self.expr, self.n)

    def __mul__(self, other):
        return ScalarField(self.expr * self._lift(other), self.n)

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(-self.expr, self.n)

    def __repr__(self):
        return f"ScalarField({str(self.expr)!r}, n={self.n})"

    def to_string(self):
        return str(self.expr)

    # -- compiled evaluators ------------------------------------------------
    @cached_property
    def _grad_exprs(self):
        return [sp.diff(self.expr, s) for s in self.symbols]

    @cached_property
    def _hess_exprs(self):
        g = self._grad_exprs
        m = len(self.symbols)
        return [[sp.diff(g[a], self.symbols[b]) if b >= a else None
                 for b in range(m)] for a in range(m)]

    def _compile(self, exprs):
        return sp.lambdify(self.symbols, exprs, modules="numpy", cse=True)

    @cached_property
    def _f_value(self):
        return self._compile(self.expr)

    @cached_property
    def _f_grad(self):
        return self._compile(self._grad_exprs)

    @cached_property
    def _f_hess(self):
        m = len(self.symbols)
        flat = [self._hess_exprs[a][b] for a in range(m) for b in range(a, m)]
        return self._compile(flat)

    @staticmethod
    def _args(x):
        x = np.asarray(x, dtype=float)
        return [x[..., i] for i in range(x.shape[-1])], x.shape[:-1]

    def value(self, x):
        args, shape = self._args(x)
        return np.broadcast_to(np.asarray(self._f_value(*args), float), shape).copy()

    def real_gradient(self, x):
        args, shape = self._args(x)
        vals = self._f_grad(*args)
        return np.stack([np.broadcast_to(np.asarray(v, float), shape) for v in vals], axis=-1)

    def real_hessian(self, x):
        args, shape = self._args(x)
        m = 2 * self.n
        vals = self._f_hess(*args)
        out = np.empty(shape + (m, m))
        it = iter(vals)
        for a in range(m):
            for b in range(a, m):
                v = np.broadcast_to(np.asarray(next(it), float), shape)
                out[..., a, b] = v
                out[..., b, a] = v
        return out

    def dz(self, x):
        """Wirtinger gradient ∂u/∂z_k = ½(u_{x_k} − i u_{y_k})."""
        g = self.real_gradient(x)
        return 0.5 * (g[..., 0::2] - 1j * g[..., 1::2])

    def complex_hessian(self, x):
        """u_{ij̄} = ¼[(u_{x_i x_j} + u_{y_i y_j}) + i(u_{x_i y_j} − u_{y_i x_j})]."""
        return complex_hessian_from_real(self.real_hessian(x))

    # -- coordinate changes -----------------------------------------------
    def pullback(self, offset, mreal):
        """Field in new real coordinates ξ with x = offset + mreal·ξ."""
        offset = np.asarray(offset, dtype=float)
        mreal = np.asarray(mreal, dtype=float)
        sub = {}
        for a, s in enumerate(self.symbols):
            sub[s] = sp.Float(offset[a]) + sum(
                sp.Float(mreal[a, b]) * self.symbols[b]
                for b in range(len(self.symbols)) if mreal[a, b] != 0.0)
        return ScalarField(self.expr.xreplace(sub), self.n)


def complex_hessian_from_real(hr):
    """Assemble u_{ij̄} from a real Hessian in interleaved coordinates."""
    hxx = hr[..., 0::2, 0::2]
    hyy = hr[..., 1::2, 1::2]
    hxy = hr[..., 0::2, 1::2]  # [i, j] = u_{x_i y_j}
    hyx = hr[..., 1::2, 0::2]  # [i, j] = u_{y_i x_j}
    return 0.25 * ((hxx + hyy) + 1j * (hxy - hyx))


def as_field(value, n):
    """Coerce a string, number or field into a :class:`ScalarField`."""
    if isinstance(value, ScalarField):
        return value
    return ScalarField(value, n)


def norm_squared(n):
    """|z|² as a field."""
    return ScalarField(sum(s ** 2 for s in real_symbols(n)), n)
