"""Truncated Taylor jets in the four variables (x1, x2, X, Y).

A :class:`Jet` stores the Taylor coefficients of a scalar function at an
expansion point, densely, in graded-lexicographic order of the exponent
tuples.  The coefficient array may carry leading batch axes, so one jet can
hold the expansions at many points at once; all arithmetic broadcasts over
them.

Coefficients are Taylor coefficients, not derivatives: the entry at the
multi-index ``(a, b, c, d)`` is the partial derivative divided by
``a! b! c! d!``.  Use :func:`partial` to read off derivatives.
"""

from __future__ import annotations

import functools
import itertools
import math
from typing import Callable, Sequence

import numpy as np

from .errors import DegreeExceedsOrder, DivisionByZeroValue, DomainError, OrderMismatch

NVARS = 4
X1, X2, XD, YD = range(NVARS)
DEFAULT_ORDER = 4

MultiIndex = tuple[int, int, int, int]


@functools.lru_cache(maxsize=None)
def layout(order: int) -> tuple[MultiIndex, ...]:
    """All multi-indices of degree <= order, graded, descending-lex within a degree.

    The layout of order ``k - 1`` is a prefix of the layout of order ``k``.
    """
    out: list[MultiIndex] = []
    for deg in range(order + 1):
        block = [e for e in itertools.product(range(deg + 1), repeat=NVARS) if sum(e) == deg]
        block.sort(reverse=True)
        out.extend(block)
    return tuple(out)


@functools.lru_cache(maxsize=None)
def _position(order: int) -> dict[MultiIndex, int]:
    return {idx: i for i, idx in enumerate(layout(order))}


@functools.lru_cache(maxsize=None)
def ncoeffs(order: int) -> int:
    return math.comb(order + NVARS, NVARS)


@functools.lru_cache(maxsize=None)
def _mul_plan(order: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    idx = layout(order)
    pos = _position(order)
    left, right, target = [], [], []
    for k, gamma in enumerate(idx):
        # every alpha <= gamma componentwise pairs with beta = gamma - alpha
        for alpha in itertools.product(*(range(g + 1) for g in gamma)):
            beta = tuple(g - a for g, a in zip(gamma, alpha))
            left.append(pos[alpha])
            right.append(pos[beta])
            target.append(k)
    target_arr = np.asarray(target)
    starts = np.flatnonzero(np.r_[True, target_arr[1:] != target_arr[:-1]])
    return np.asarray(left), np.asarray(right), starts


@functools.lru_cache(maxsize=None)
def _deriv_plan(order: int, var: int) -> tuple[np.ndarray, np.ndarray]:
    pos = _position(order)
    src, factor = [], []
    for beta in layout(order - 1):
        alpha = list(beta)
        alpha[var] += 1
        src.append(pos[tuple(alpha)])
        factor.append(alpha[var])
    return np.asarray(src), np.asarray(factor, dtype=float)


@functools.lru_cache(maxsize=None)
def _factorial_weights(order: int) -> np.ndarray:
    return np.array([math.prod(math.factorial(e) for e in idx) for idx in layout(order)], dtype=float)


class Jet:
    """Truncated Taylor expansion of a scalar function of (x1, x2, X, Y).

    Treat instances as immutable values.
    """

    __slots__ = ("coeffs", "order")
    __array_ufunc__ = None

    def __init__(self, coeffs: np.ndarray, order: int):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape[-1:] != (ncoeffs(order),):
            raise ValueError(f"expected {ncoeffs(order)} coefficients for order {order}, got {coeffs.shape}")
        self.coeffs = coeffs
        self.order = order

    # -- construction -----------------------------------------------------
    @classmethod
    def constant(cls, value, order: int = DEFAULT_ORDER) -> "Jet":
        value = np.asarray(value, dtype=float)
        coeffs = np.zeros(value.shape + (ncoeffs(order),))
        coeffs[..., 0] = value
        return cls(coeffs, order)

    @classmethod
    def variable(cls, value, var: int, order: int = DEFAULT_ORDER) -> "Jet":
        return jet_variable(value, var, order)

    # -- inspection -------------------------------------------------------
    @property
    def value(self) -> np.ndarray | float:
        v = self.coeffs[..., 0]
        return float(v) if v.ndim == 0 else v

    @property
    def shape(self) -> tuple[int, ...]:
        return self.coeffs.shape[:-1]

    def coefficient(self, idx: Sequence[int]):
        idx = _check_index(idx, self.order)
        c = self.coeffs[..., _position(self.order)[idx]]
        return float(c) if c.ndim == 0 else c

    def derivatives(self) -> np.ndarray:
        """All partial derivatives, in layout order."""
        return self.coeffs * _factorial_weights(self.order)

    def deriv(self, var: int) -> "Jet":
        """Jet of the partial derivative in ``var``; one order lower."""
        if not 0 <= var < NVARS:
            raise IndexError(f"variable index {var} out of range 0..3")
        if self.order == 0:
            raise DegreeExceedsOrder("cannot differentiate an order-0 jet")
        src, factor = _deriv_plan(self.order, var)
        return Jet(self.coeffs[..., src] * factor, self.order - 1)

    def truncate(self, order: int) -> "Jet":
        if order > self.order:
            raise DegreeExceedsOrder(f"cannot raise jet order from {self.order} to {order}")
        if order == self.order:
            return self
        return Jet(self.coeffs[..., : ncoeffs(order)], order)

    def __getitem__(self, item) -> "Jet":
        """Select batch entries; the coefficient axis is always kept."""
        if not isinstance(item, tuple):
            item = (item,)
        return Jet(self.coeffs[item + (slice(None),)], self.order)

    def __repr__(self) -> str:
        return f"Jet(order={self.order}, shape={self.shape}, value={self.coeffs[..., 0]!r})"

    # -- arithmetic -------------------------------------------------------
    def _coerce(self, other) -> "Jet":
        if isinstance(other, Jet):
            if other.order != self.order:
                raise OrderMismatch(f"jet orders differ: {self.order} vs {other.order}")
            return other
        return Jet.constant(other, self.order)

    def __neg__(self) -> "Jet":
        return Jet(-self.coeffs, self.order)

    def __pos__(self) -> "Jet":
        return self

    def __add__(self, other) -> "Jet":
        if isinstance(other, Jet):
            return Jet(self.coeffs + self._coerce(other).coeffs, self.order)
        if np.ndim(other) == 0:
            c = self.coeffs.copy()
        else:
            c = np.array(np.broadcast_to(self.coeffs, np.broadcast_shapes(self.coeffs.shape, np.shape(other) + (1,))))
        c[..., 0] += other
        return Jet(c, self.order)

    __radd__ = __add__

    def __sub__(self, other) -> "Jet":
        return self + (-other)

    def __rsub__(self, other) -> "Jet":
        return (-self) + other

    def __mul__(self, other) -> "Jet":
        if isinstance(other, Jet):
            return _mul(self, self._coerce(other))
        return Jet(self.coeffs * np.asarray(other, dtype=float)[..., None], self.order)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Jet":
        if isinstance(other, Jet):
            return self * reciprocal(self._coerce(other))
        other = np.asarray(other, dtype=float)
        if np.any(other == 0):
            raise DivisionByZeroValue("division by a zero constant")
        return Jet(self.coeffs / other[..., None], self.order)

    def __rtruediv__(self, other) -> "Jet":
        return reciprocal(self) * other

    def __pow__(self, exponent) -> "Jet":
        if isinstance(exponent, Jet):
            return exp(log(self) * exponent)
        if float(exponent).is_integer():
            return pow_int(self, int(exponent))
        return pow_real(self, float(exponent))


def _check_index(idx: Sequence[int], order: int) -> MultiIndex:
    idx = tuple(int(e) for e in idx)
    if len(idx) != NVARS or any(e < 0 for e in idx):
        raise ValueError(f"multi-index must be 4 non-negative integers, got {idx}")
    if sum(idx) > order:
        raise DegreeExceedsOrder(f"multi-index {idx} has degree {sum(idx)} > jet order {order}")
    return idx  # type: ignore[return-value]


def jet_variable(value, var: int, order: int = DEFAULT_ORDER) -> Jet:
    """Jet of the coordinate function ``var`` expanded at ``value``."""
    if not 0 <= var < NVARS:
        raise IndexError(f"variable index {var} out of range 0..3")
    jet = Jet.constant(value, order)
    if order >= 1:
        jet.coeffs[..., 1 + var] = 1.0
    return jet


def jet_point(x1, x2, X, Y, order: int = DEFAULT_ORDER) -> tuple[Jet, Jet, Jet, Jet]:
    """Coordinate jets for all four variables at one point (or a batch)."""
    x1, x2, X, Y = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x1, x2, X, Y)))
    return tuple(jet_variable(v, i, order) for i, v in enumerate((x1, x2, X, Y)))  # type: ignore[return-value]


def partial(jet: Jet, idx: Sequence[int]):
    """Partial derivative of ``jet`` at the multi-index ``idx``."""
    idx = _check_index(idx, jet.order)
    return jet.coefficient(idx) * math.prod(math.factorial(e) for e in idx)


def _mul_coeffs(a: np.ndarray, b: np.ndarray, order: int) -> np.ndarray:
    if order == 0:
        return a * b
    left, right, starts = _mul_plan(order)
    return np.add.reduceat(a[..., left] * b[..., right], starts, axis=-1)


def _mul(a: Jet, b: Jet) -> Jet:
    return Jet(_mul_coeffs(a.coeffs, b.coeffs, a.order), a.order)


def _compose(u: Jet, series: np.ndarray) -> Jet:
    """f(u) given ``series[n] = f^(n)(u0) / n!`` for n = 0..order."""
    h = u.coeffs.copy()
    h[..., 0] = 0.0
    out = np.zeros(np.broadcast_shapes(h.shape, series.shape[1:] + (1,)))
    out[..., 0] = series[u.order]
    for n in range(u.order - 1, -1, -1):
        out = _mul_coeffs(out, h, u.order)
        out[..., 0] += series[n]
    return Jet(out, u.order)


def _binomials(r: float, order: int) -> np.ndarray:
    out = np.ones(order + 1)
    for n in range(1, order + 1):
        out[n] = out[n - 1] * (r - n + 1) / n
    return out


def _value(u: Jet) -> np.ndarray:
    return u.coeffs[..., 0]


def reciprocal(u: Jet) -> Jet:
    u0 = _value(u)
    if np.any(u0 == 0):
        raise DivisionByZeroValue("divisor has zero value part")
    n = np.arange(u.order + 1).reshape((-1,) + (1,) * u0.ndim)
    return _compose(u, (-1.0) ** n / u0 ** (n + 1))


def pow_int(u: Jet, n: int) -> Jet:
    if n == 0:
        return Jet.constant(np.ones(u.shape), u.order)
    if n == 1:
        return u
    if n == 2:
        return u * u
    if n < 0:
        return reciprocal(pow_int(u, -n))
    u0 = _value(u)
    k = np.arange(u.order + 1)
    coef = _binomials(n, u.order).reshape((-1,) + (1,) * u0.ndim)
    powers = np.where((n - k) >= 0, n - k, 0).reshape((-1,) + (1,) * u0.ndim)
    return _compose(u, coef * u0 ** powers)


def pow_real(u: Jet, r: float) -> Jet:
    u0 = _value(u)
    if np.any(u0 <= 0):
        raise DomainError(f"real power {r} needs a positive base")
    n = np.arange(u.order + 1).reshape((-1,) + (1,) * u0.ndim)
    coef = _binomials(r, u.order).reshape((-1,) + (1,) * u0.ndim)
    return _compose(u, coef * u0 ** (r - n))


def sqrt(u: Jet) -> Jet:
    u0 = _value(u)
    if np.any(u0 < 0) or (u.order > 0 and np.any(u0 == 0)):
        raise DomainError("sqrt needs a positive argument")
    if u.order == 0:
        return Jet(np.sqrt(u.coeffs), 0)
    return pow_real(u, 0.5)


def cbrt(u: Jet) -> Jet:
    """Real (sign-preserving) cube root."""
    u0 = _value(u)
    if u.order == 0:
        return Jet(np.cbrt(u.coeffs), 0)
    if np.any(u0 == 0):
        raise DomainError("cbrt is not differentiable at 0")
    n = np.arange(u.order + 1).reshape((-1,) + (1,) * u0.ndim)
    coef = _binomials(1.0 / 3.0, u.order).reshape((-1,) + (1,) * u0.ndim)
    return _compose(u, coef * np.cbrt(u0) / u0**n)


def exp(u: Jet) -> Jet:
    u0 = _value(u)
    n = np.arange(u.order + 1)
    inv_fact = np.array([1.0 / math.factorial(k) for k in n]).reshape((-1,) + (1,) * u0.ndim)
    return _compose(u, np.exp(u0) * inv_fact)


def log(u: Jet) -> Jet:
    u0 = _value(u)
    if np.any(u0 <= 0):
        raise DomainError("ln needs a positive argument")
    series = np.empty((u.order + 1,) + u0.shape)
    series[0] = np.log(u0)
    for n in range(1, u.order + 1):
        series[n] = (-1.0) ** (n + 1) / (n * u0**n)
    return _compose(u, series)


def _trig(u: Jet, phase: float) -> Jet:
    u0 = _value(u) + phase
    cycle = (np.sin(u0), np.cos(u0), -np.sin(u0), -np.cos(u0))
    series = np.stack([cycle[n % 4] / math.factorial(n) for n in range(u.order + 1)])
    return _compose(u, series)


def sin(u: Jet) -> Jet:
    return _trig(u, 0.0)


def cos(u: Jet) -> Jet:
    return _trig(u, math.pi / 2)


def fabs(u: Jet) -> Jet:
    u0 = _value(u)
    if u.order > 0 and np.any(u0 == 0):
        raise DomainError("abs is not differentiable at 0")
    return u * np.sign(u0)


_UNARY: dict[str, Callable[[Jet], Jet]] = {
    "neg": lambda a: -a,
    "sqrt": sqrt,
    "cbrt": cbrt,
    "sin": sin,
    "cos": cos,
    "exp": exp,
    "ln": log,
    "abs": fabs,
}

_BINARY: dict[str, Callable[[Jet, Jet], Jet]] = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
}

OPS = tuple(_UNARY) + tuple(_BINARY) + ("pow_int", "pow_real")


def jet_apply(op: str, args: Sequence) -> Jet:
    """Apply a named elementary operation to jets.

    ``pow_int`` and ``pow_real`` take ``(jet, exponent)``.
    """
    jets = [a for a in args if isinstance(a, Jet)]
    if len({j.order for j in jets}) > 1:
        raise OrderMismatch("argument jets have different orders")
    if op in _UNARY:
        (a,) = args
        return _UNARY[op](a)
    if op in _BINARY:
        a, b = args
        return _BINARY[op](a, b)
    if op == "pow_int":
        a, n = args
        return pow_int(a, int(n))
    if op == "pow_real":
        a, r = args
        return pow_real(a, float(r))
    raise ValueError(f"unknown jet operation {op!r}")


# -- finite-difference oracle ---------------------------------------------

FD_STEP = 1e-4


def _central_difference(f: Callable[..., Jet], point: np.ndarray, idx: MultiIndex, h: float) -> float:
    """Tensor-product central difference, step ``h`` per differentiation."""
    # integer binomial weights, scale applied once so constants cancel exactly
    per_var = [[((e - 2 * j) * h, (-1) ** j * math.comb(e, j)) for j in range(e + 1)] for e in idx]
    offsets, weights = [], []
    for combo in itertools.product(*per_var):
        offsets.append([c[0] for c in combo])
        weights.append(math.prod(c[1] for c in combo))
    pts = point[None, :] + np.asarray(offsets)
    vals = f(*(Jet.constant(pts[:, i], 0) for i in range(NVARS))).coeffs[..., 0]
    return float(np.dot(np.asarray(weights, dtype=float), vals)) / (2 * h) ** sum(idx)


def fd_derivative(f: Callable[..., Jet], point: Sequence[float], idx: Sequence[int], h: float = FD_STEP) -> float:
    """Central finite difference with one Richardson extrapolation level.

    The level pairs steps 2h and h rather than h and h/2: at third order the
    round-off term scales like eps/h³, so never stepping below h keeps it
    about eight times smaller.
    """
    idx = _check_index(idx, 3)
    point = np.asarray(point, dtype=float)
    coarse = _central_difference(f, point, idx, 2 * h)
    fine = _central_difference(f, point, idx, h)
    return (4.0 * fine - coarse) / 3.0


def fd_crosscheck(
    f: Callable[..., Jet], point: Sequence[float], idx: Sequence[int], h: float = FD_STEP
) -> tuple[float, float, float]:
    """Compare the jet derivative of ``f`` with a finite-difference estimate.

    ``f`` takes four jets (x1, x2, X, Y) and returns a jet.  The relative
    error is taken against ``max(|jet value|, 1)``.
    """
    idx = _check_index(idx, 3)
    order = max(sum(idx), 1)
    jet = f(*jet_point(*point, order=order))
    ad = float(partial(jet, idx))
    fd = fd_derivative(f, point, idx, h)
    return ad, fd, abs(ad - fd) / max(abs(ad), 1.0)


# -- composition with base-coordinate expansions ---------------------------


def is_coordinate(jet: Jet, var: int) -> bool:
    """True when ``jet`` is exactly the coordinate function ``var`` (at any values)."""
    if jet.order == 0:
        return True
    unit = np.zeros(ncoeffs(jet.order) - 1)
    unit[var] = 1.0
    return bool(np.all(jet.coeffs[..., 1:] == unit))


def compose_base(g: Jet, x1: Jet, x2: Jet) -> Jet:
    """Evaluate a field known by its expansion in (x1, x2) along arbitrary jets.

    ``g`` must be expanded at the value points of ``x1``, ``x2`` in plain
    coordinates and depend on the base coordinates only; the result is
    ``sum g_ab (x1 - x1_0)^a (x2 - x2_0)^b`` through the shared order.
    """
    order = x1.order
    if g.order != order or x2.order != order:
        raise OrderMismatch("compose_base needs jets of one order")
    d1 = x1.coeffs.copy()
    d1[..., 0] = 0.0
    d2 = x2.coeffs.copy()
    d2[..., 0] = 0.0
    pow1 = [None, d1]
    pow2 = [None, d2]
    for n in range(2, order + 1):
        pow1.append(_mul_coeffs(pow1[-1], d1, order))
        pow2.append(_mul_coeffs(pow2[-1], d2, order))
    pos = _position(order)
    shape = np.broadcast_shapes(g.coeffs.shape, d1.shape, d2.shape)
    out = np.zeros(shape)
    for a in range(order + 1):
        for b in range(order + 1 - a):
            c = g.coeffs[..., pos[(a, b, 0, 0)]][..., None]
            if a == 0 and b == 0:
                out[..., 0] += c[..., 0]
            elif b == 0:
                out += c * pow1[a]
            elif a == 0:
                out += c * pow2[b]
            else:
                out += c * _mul_coeffs(pow1[a], pow2[b], order)
    return Jet(out, order)
