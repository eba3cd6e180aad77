"""Metric families: Kropina-type L = (AX^2 + BXY + CY^2)/(X + DY) and cubic L^3.

Every metric is evaluated on jets: ``metric.L(x1, x2, X, Y)`` takes four jets
of one order and returns the jet of the metric function, so derivatives of
any order up to the jet order come for free.  Grids pass batched jets.

The potential-based families (``MinkowskiLinear``, ``MinkowskiRational``)
are built from their profile functions with the two base coordinates
exchanged before they enter the canonical form; see :func:`profile_to_potential`.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import autodiff as ad
from . import expr as ex
from .autodiff import Jet, jet_point
from .errors import (
    DegenerateConic,
    DegenerateCubic,
    DomainSingularity,
    ExprSyntaxError,
    FinslerError,
    ImplicitSolveFailed,
    MalformedSpec,
    SingularDirection,
)

SINGULAR_TOL = 1e-9
CONIC_TOL = 1e-9
CUBIC_TOL = 1e-12

KINDS = (
    "KropinaGeneral",
    "KropinaCanonical",
    "Parabolic",
    "MinkowskiLinear",
    "MinkowskiRational",
    "CubicGeneral",
    "CubicExceptional",
)

_REQUIRED_EXPRS = {
    "KropinaGeneral": ("A", "B", "C", "D"),
    "KropinaCanonical": (),
    "Parabolic": ("sigma",),
    "MinkowskiLinear": (),
    "MinkowskiRational": (),
    "CubicGeneral": ("A", "B", "C", "D"),
    "CubicExceptional": (),
}

_REQUIRED_CONSTANTS = {
    "MinkowskiLinear": ("k1", "k2", "k3"),
    "MinkowskiRational": ("k1", "k2", "k3", "k4"),
    "CubicExceptional": ("k1", "k2", "k3", "k4"),
}

MINKOWSKI_LINEAR_PROFILE = "k1*x1 + k2*x2 + k3"
MINKOWSKI_RATIONAL_PROFILE = "(x1^2 + k2*x1 + k3)/(k1 - x2) + k4"
CUBIC_EXCEPTIONAL = {
    "A": "k1*(3*k1*x2^2 - 3*k3*x2 + k4)/(k1*x1 + k2)^6",
    "B": "0",
    "C": "(-2*k1*x2 + k3)/(k1*x1 + k2)^5",
    "D": "1/(k1*x1 + k2)^4",
}


class MultipleRootWarning(UserWarning):
    """The implicit equation for the parabolic coefficient has a near-double root."""


# -- spec -------------------------------------------------------------------


@dataclass(frozen=True)
class MetricSpec:
    """Serializable description of a metric family member."""

    kind: str
    exprs: Mapping[str, str] = field(default_factory=dict)
    constants: Mapping[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "exprs": dict(self.exprs),
            "constants": {k: float(v) for k, v in self.constants.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping) -> "MetricSpec":
        if not isinstance(data, Mapping) or "kind" not in data:
            raise MalformedSpec("metric spec needs a 'kind' field")
        exprs = data.get("exprs") or {}
        constants = data.get("constants") or {}
        if not isinstance(exprs, Mapping) or not isinstance(constants, Mapping):
            raise MalformedSpec("'exprs' and 'constants' must be objects")
        try:
            constants = {str(k): float(v) for k, v in constants.items()}
        except (TypeError, ValueError) as err:
            raise MalformedSpec(f"non-numeric constant: {err}") from err
        return cls(str(data["kind"]), {str(k): str(v) for k, v in exprs.items()}, constants)

    @classmethod
    def from_json(cls, text: str) -> "MetricSpec":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as err:
            raise MalformedSpec(f"invalid JSON: {err}") from err
        return cls.from_dict(data)


@dataclass(frozen=True)
class EvalPoint:
    x1: float
    x2: float
    X: float
    Y: float

    def jets(self, order: int) -> tuple[Jet, Jet, Jet, Jet]:
        return jet_point(self.x1, self.x2, self.X, self.Y, order=order)


# -- helpers ----------------------------------------------------------------


def _gradient_jets(node: ex.Expr, env: ex.ConstEnv, x1: Jet, x2: Jet) -> tuple[Jet, Jet]:
    """Jets of the two first partials of a base field along ``x1``, ``x2``."""
    order = x1.order
    p1, p2, _, _ = jet_point(x1.coeffs[..., 0], x2.coeffs[..., 0], 0.0, 0.0, order=order + 1)
    f = ex.eval_expr(node, env, p1, p2)
    g1, g2 = f.deriv(0), f.deriv(1)
    if ad.is_coordinate(x1, 0) and ad.is_coordinate(x2, 1):
        return g1, g2
    return ad.compose_base(g1, x1, x2), ad.compose_base(g2, x1, x2)


def _values(*arrays) -> list[np.ndarray]:
    return [np.asarray(a, dtype=float) for a in arrays]


def profile_to_potential(profile: ex.Expr) -> ex.Expr:
    """Potential of the canonical metric whose φ-equations are solved by ``profile``.

    The φ-equation systems and their closed-form solutions are written with
    the base coordinates exchanged relative to the canonical metric
    (X^2 carries the x1-derivative, XY the x2-derivative).  The exchange is
    an involution, so the same function maps potentials back to profiles.
    """
    return ex.swap_coordinates(profile)


potential_to_profile = profile_to_potential


# -- metrics ----------------------------------------------------------------


class Metric:
    """A Finsler metric function evaluable on jets."""

    kind: str = "Metric"
    spec: MetricSpec | None = None

    def L(self, x1: Jet, x2: Jet, X: Jet, Y: Jet) -> Jet:
        raise NotImplementedError

    def margin(self, x1, x2, X, Y) -> np.ndarray:
        """Scale-free distance of sample points from the metric's singular set."""
        return np.full(np.broadcast(x1, x2, X, Y).shape, np.inf)

    def __call__(self, x1: float, x2: float, X: float, Y: float) -> float:
        return float(self.L(*jet_point(x1, x2, X, Y, order=0)).value)


class KropinaMetric(Metric):
    """L = (A X^2 + B X Y + C Y^2) / (X + D Y)."""

    def coefficients(self, x1: Jet, x2: Jet) -> tuple[Jet, Jet, Jet, Jet]:
        raise NotImplementedError

    def coefficient_values(self, x1, x2) -> tuple[np.ndarray, ...]:
        x1, x2 = _values(x1, x2)
        jets = self.coefficients(Jet.constant(x1, 0), Jet.constant(x2, 0))
        return tuple(np.asarray(j.coeffs[..., 0]) for j in jets)

    def delta(self, x1, x2):
        """Conic invariant AD^2 - BD + C."""
        A, B, C, D = self.coefficient_values(x1, x2)
        out = A * D * D - B * D + C
        return float(out) if np.ndim(out) == 0 else out

    def L(self, x1: Jet, x2: Jet, X: Jet, Y: Jet) -> Jet:
        A, B, C, D = self.coefficients(x1, x2)
        den = X + D * Y
        d0 = den.coeffs[..., 0]
        if np.any(np.abs(d0) < SINGULAR_TOL):
            raise SingularDirection("direction lies on the singular direction X + DY = 0")
        a0, b0, c0, dd = (j.coeffs[..., 0] for j in (A, B, C, D))
        if np.any(np.abs(a0 * dd * dd - b0 * dd + c0) < CONIC_TOL):
            raise DegenerateConic("AD^2 - BD + C vanishes: the conics L = const are reducible")
        num = A * X * X + B * X * Y + C * Y * Y
        return num / den

    def margin(self, x1, x2, X, Y) -> np.ndarray:
        # both the pole X + DY = 0 and the zero directions of the numerator are singular for p = L_x X / 2L
        x1, x2, X, Y = np.broadcast_arrays(*_values(x1, x2, X, Y))
        A, B, C, D = self.coefficient_values(x1, x2)
        norm = np.hypot(X, Y)
        pole = np.abs(X + D * Y) / norm
        scale = np.abs(A) + np.abs(B) + np.abs(C)
        with np.errstate(divide="ignore", invalid="ignore"):
            zero = np.abs(A * X * X + B * X * Y + C * Y * Y) / (scale * norm * norm)
        return np.minimum(pole, np.where(scale > 0, zero, 0.0))

    def pole_margin(self, x1, x2, X, Y) -> np.ndarray:
        """|X + DY| / |(X, Y)|, the distance of a direction from the pole."""
        D = self.coefficient_values(x1, x2)[3]
        return np.abs(X + D * Y) / np.hypot(X, Y)

    def singular_direction(self, x1: float, x2: float) -> np.ndarray:
        _, _, _, D = self.coefficient_values(x1, x2)
        v = np.array([float(D), -1.0])
        return v / np.linalg.norm(v)


class KropinaGeneral(KropinaMetric):
    kind = "KropinaGeneral"

    def __init__(self, A: ex.Expr, B: ex.Expr, C: ex.Expr, D: ex.Expr, env: ex.ConstEnv | None = None):
        self.fields = (A, B, C, D)
        self.env = dict(env or {})

    def coefficients(self, x1, x2):
        return tuple(ex.eval_expr(f, self.env, x1, x2) for f in self.fields)  # type: ignore[return-value]


class KropinaCanonical(KropinaMetric):
    """L = (φ_x1 X^2 + φ_x2 X Y + k Y^2) / X."""

    kind = "KropinaCanonical"

    def __init__(self, phi: ex.Expr, k: float = 1.0, env: ex.ConstEnv | None = None, kind: str | None = None):
        if k == 0:
            raise MalformedSpec("canonical family needs k != 0 (the conic invariant equals k)")
        self.phi = phi
        self.k = float(k)
        self.env = dict(env or {})
        if kind is not None:
            self.kind = kind

    def coefficients(self, x1, x2):
        A, B = _gradient_jets(self.phi, self.env, x1, x2)
        zeros = np.zeros(np.broadcast_shapes(x1.shape, x2.shape))
        return A, B, Jet.constant(zeros + self.k, x1.order), Jet.constant(zeros, x1.order)

    def pole_margin(self, x1, x2, X, Y) -> np.ndarray:
        X, Y = np.asarray(X, dtype=float), np.asarray(Y, dtype=float)
        return np.abs(X) / np.hypot(X, Y)

    def rescaled(self) -> "KropinaCanonical":
        """The same space after x -> k x, which normalizes C to 1."""
        inv = ex.num(1.0 / self.k)
        phi = ex.substitute(
            self.phi,
            {"x1": ex.Binary("*", inv, ex.Var("x1")), "x2": ex.Binary("*", inv, ex.Var("x2"))},
        )
        return KropinaCanonical(phi, 1.0, self.env)


class Parabolic(KropinaMetric):
    """L = (a X + Y)^2 / X with a(x1, x2) solving x2 + x1 a + σ(a) = 0.

    σ is an expression in the placeholder variable ``x1``.
    """

    kind = "Parabolic"

    def __init__(self, sigma: ex.Expr, env: ex.ConstEnv | None = None):
        self.sigma = sigma
        self.env = dict(env or {})

    def a_jet(self, x1: Jet, x2: Jet) -> Jet:
        order = x1.order
        shape = np.broadcast_shapes(x1.shape, x2.shape)
        v1 = np.broadcast_to(np.asarray(x1.coeffs[..., 0]), shape)
        v2 = np.broadcast_to(np.asarray(x2.coeffs[..., 0]), shape)
        pairs, inverse = np.unique(np.stack([v1.ravel(), v2.ravel()], axis=-1), axis=0, return_inverse=True)
        solved = np.array([solve_parabolic_a(self.sigma, self.env, (a, b)) for a, b in pairs])
        roots = solved[np.ravel(inverse)].reshape(shape)
        if order == 0:
            return Jet.constant(roots, 0)
        p1, p2, _, _ = jet_point(v1, v2, 0.0, 0.0, order=order)
        a = _implicit_jet(self.sigma, self.env, p1, p2, roots)
        if ad.is_coordinate(x1, 0) and ad.is_coordinate(x2, 1):
            return a
        return ad.compose_base(a, x1, x2)

    def coefficients(self, x1, x2):
        a = self.a_jet(x1, x2)
        ones = Jet.constant(np.ones(a.shape), a.order)
        return a * a, 2.0 * a, ones, 0.0 * ones


def _sigma(sigma: ex.Expr, env: ex.ConstEnv, a: Jet) -> Jet:
    return ex.eval_expr(sigma, env, a, Jet.constant(np.zeros(a.shape), a.order))


def _sigma_slope(sigma: ex.Expr, env: ex.ConstEnv, a: float) -> float:
    return float(_sigma(sigma, env, ad.jet_variable(a, 0, 1)).deriv(0).value)


def _implicit_jet(sigma: ex.Expr, env: ex.ConstEnv, x1: Jet, x2: Jet, root: np.ndarray) -> Jet:
    """Jet of a(x) from x2 + x1 a + σ(a) = 0 by fixed-slope Newton; one order per sweep."""
    slope = np.asarray(x1.coeffs[..., 0]) + np.vectorize(lambda r: _sigma_slope(sigma, env, r))(root)
    a = Jet.constant(root, x1.order)
    for _ in range(x1.order + 1):
        residual = x2 + x1 * a + _sigma(sigma, env, a)
        a = a - residual / slope
    return a


def solve_parabolic_a(sigma: ex.Expr, env: ex.ConstEnv, x: tuple[float, float], scan=(-10.0, 10.0, 4001)) -> float:
    """Root a of x2 + x1 a + σ(a) = 0 (σ written in the placeholder ``x1``).

    Scans ``scan`` for sign changes, seeds Newton at the bracket closest to 0,
    and keeps the iterate inside the bracket by bisection.
    """
    x1, x2 = float(x[0]), float(x[1])
    grid = np.linspace(*scan[:2], int(scan[2]))

    def g(a):
        return x2 + x1 * a + _sigma(sigma, env, Jet.constant(a, 0)).coeffs[..., 0]

    def g_scalar(a: float) -> float:
        return float(g(np.asarray(a)))

    try:
        with np.errstate(all="ignore"):
            values = np.asarray(g(grid), dtype=float)
    except FinslerError:
        values = np.empty_like(grid)
        for i, a in enumerate(grid):
            try:
                values[i] = g_scalar(a)
            except FinslerError:
                values[i] = np.nan

    finite = np.isfinite(values)
    exact = np.flatnonzero(finite & (values == 0))
    change = np.flatnonzero(finite[:-1] & finite[1:] & (np.sign(values[:-1]) * np.sign(values[1:]) < 0))
    brackets = [(grid[i], grid[i]) for i in exact] + [(grid[i], grid[i + 1]) for i in change]
    if brackets:
        lo, hi = min(brackets, key=lambda b: (abs(0.5 * (b[0] + b[1])), 0.5 * (b[0] + b[1])))
        seed = 0.5 * (lo + hi)
    else:
        if not finite.any():
            raise ImplicitSolveFailed(f"σ could not be evaluated on the scan interval at x = {x}")
        i = int(np.nanargmin(np.where(finite, np.abs(values), np.nan)))
        lo, hi, seed = -np.inf, np.inf, grid[i]

    a = seed
    for _ in range(100):
        try:
            r = g_scalar(a)
            slope = x1 + _sigma_slope(sigma, env, a)
        except FinslerError as err:
            raise ImplicitSolveFailed(f"σ evaluation failed at a = {a}: {err}") from err
        if abs(r) < 1e-14:
            break
        step = r / slope if slope != 0 else np.inf
        nxt = a - step
        if not (lo <= nxt <= hi) or not np.isfinite(nxt):
            if np.isfinite(lo) and np.isfinite(hi) and lo < hi:
                mid = 0.5 * (lo + hi)
                if np.sign(g_scalar(lo)) * np.sign(g_scalar(mid)) <= 0:
                    hi = mid
                else:
                    lo = mid
                nxt = 0.5 * (lo + hi)
            else:
                raise ImplicitSolveFailed(f"Newton iteration diverged at x = {x}")
        if abs(nxt - a) < 1e-16 * max(1.0, abs(a)):
            a = nxt
            break
        a = nxt
    residual = abs(g_scalar(a))
    if residual >= 1e-12:
        raise ImplicitSolveFailed(f"no root of x2 + x1 a + σ(a) found at x = {x} (residual {residual:.3g})")
    if abs(x1 + _sigma_slope(sigma, env, a)) < 1e-8:
        warnings.warn(f"near-multiple root a = {a} at x = {x}", MultipleRootWarning, stacklevel=2)
    return float(a)


class CubicMetric(Metric):
    """L^3 = A X^3 + B Y^3 + 3 C X^2 Y + 3 D X Y^2, real cube root."""

    def coefficients(self, x1: Jet, x2: Jet) -> tuple[Jet, Jet, Jet, Jet]:
        raise NotImplementedError

    def coefficient_values(self, x1, x2) -> tuple[np.ndarray, ...]:
        x1, x2 = _values(x1, x2)
        jets = self.coefficients(Jet.constant(x1, 0), Jet.constant(x2, 0))
        return tuple(np.asarray(j.coeffs[..., 0]) for j in jets)

    def discriminant(self, x1, x2):
        A, B, C, D = self.coefficient_values(x1, x2)
        out = cubic_discriminant_values(A, B, C, D)
        return float(out) if np.ndim(out) == 0 else out

    def L(self, x1, x2, X, Y):
        A, B, C, D = self.coefficients(x1, x2)
        R = cubic_discriminant_values(*(j.coeffs[..., 0] for j in (A, B, C, D)))
        if np.any(np.abs(R) < CUBIC_TOL):
            raise DegenerateCubic("cubic discriminant R vanishes")
        X2 = X * X
        Y2 = Y * Y
        form = A * X2 * X + B * Y2 * Y + 3.0 * C * X2 * Y + 3.0 * D * X * Y2
        return ad.cbrt(form)

    def margin(self, x1, x2, X, Y):
        x1, x2, X, Y = np.broadcast_arrays(*_values(x1, x2, X, Y))
        A, B, C, D = self.coefficient_values(x1, x2)
        form = A * X**3 + B * Y**3 + 3 * C * X**2 * Y + 3 * D * X * Y**2
        return np.abs(np.cbrt(form)) / np.hypot(X, Y)


def cubic_discriminant_values(A, B, C, D):
    return (A * B - D * C) ** 2 - 4.0 * (A * D - C * C) * (C * B - D * D)


class CubicGeneral(CubicMetric):
    kind = "CubicGeneral"

    def __init__(self, A, B, C, D, env: ex.ConstEnv | None = None, kind: str | None = None):
        self.fields = (A, B, C, D)
        self.env = dict(env or {})
        if kind is not None:
            self.kind = kind

    def coefficients(self, x1, x2):
        return tuple(ex.eval_expr(f, self.env, x1, x2) for f in self.fields)  # type: ignore[return-value]


# -- coordinate changes -----------------------------------------------------


@dataclass(frozen=True)
class CoordinateMap:
    """x̄ = forward(x), x = inverse(x̄), both given by expressions."""

    forward_exprs: tuple[ex.Expr, ex.Expr]
    inverse_exprs: tuple[ex.Expr, ex.Expr]
    env: Mapping[str, float] = field(default_factory=dict)
    singular: tuple[str, float] | None = None  # (coordinate name, excluded value) of the old chart

    def _check(self, x1, x2) -> None:
        if self.singular is None:
            return
        name, value = self.singular
        coord = x1 if name == "x1" else x2
        if np.any(np.abs(np.asarray(coord, dtype=float) - value) < 1e-12):
            raise DomainSingularity(f"coordinate map is singular at {name} = {value}")

    def forward(self, x1, x2) -> tuple:
        self._check(x1, x2)
        return tuple(ex.eval_expr(e, self.env, Jet.constant(x1, 0), Jet.constant(x2, 0)).value for e in self.forward_exprs)

    def inverse(self, y1, y2) -> tuple:
        out = tuple(ex.eval_expr(e, self.env, Jet.constant(y1, 0), Jet.constant(y2, 0)).value for e in self.inverse_exprs)
        self._check(*out)
        return out

    def inverse_jets(self, y1: Jet, y2: Jet) -> tuple[Jet, Jet, tuple[tuple[Jet, Jet], tuple[Jet, Jet]]]:
        """Old coordinates along the new ones, and the Jacobian ∂x/∂x̄."""
        x1, x2 = (ex.eval_expr(e, self.env, y1, y2) for e in self.inverse_exprs)
        g1 = _gradient_jets(self.inverse_exprs[0], self.env, y1, y2)
        g2 = _gradient_jets(self.inverse_exprs[1], self.env, y1, y2)
        return x1, x2, (g1, g2)


class PulledBackMetric(Metric):
    """The metric expressed in the coordinates x̄ of a :class:`CoordinateMap`."""

    def __init__(self, base: Metric, cmap: CoordinateMap):
        self.base = base
        self.cmap = cmap
        self.kind = f"PulledBack[{base.kind}]"

    def L(self, y1, y2, U, V):
        x1, x2, ((j11, j12), (j21, j22)) = self.cmap.inverse_jets(y1, y2)
        return self.base.L(x1, x2, j11 * U + j12 * V, j21 * U + j22 * V)

    def margin(self, y1, y2, U, V):
        y1, y2, U, V = np.broadcast_arrays(*_values(y1, y2, U, V))
        order0 = [Jet.constant(v, 0) for v in (y1, y2)]
        x1, x2 = (np.asarray(ex.eval_expr(e, self.cmap.env, *order0).coeffs[..., 0]) for e in self.cmap.inverse_exprs)
        jets = jet_point(y1, y2, 0.0, 0.0, order=0)
        _, _, ((j11, j12), (j21, j22)) = self.cmap.inverse_jets(jets[0], jets[1])
        X = j11.coeffs[..., 0] * U + j12.coeffs[..., 0] * V
        Y = j21.coeffs[..., 0] * U + j22.coeffs[..., 0] * V
        return self.base.margin(x1, x2, X, Y)


class PulledBackKropina(PulledBackMetric, KropinaMetric):
    """Pullback of a Kropina metric; still of Kropina type, with transformed coefficients."""

    def coefficients(self, y1, y2):
        x1, x2, ((j11, j12), (j21, j22)) = self.cmap.inverse_jets(y1, y2)
        A, B, C, D = self.base.coefficients(x1, x2)  # type: ignore[attr-defined]
        b1 = j11 + D * j21
        b2 = j12 + D * j22
        a11 = A * j11 * j11 + B * j11 * j21 + C * j21 * j21
        a12 = 2.0 * A * j11 * j12 + B * (j11 * j22 + j12 * j21) + 2.0 * C * j21 * j22
        a22 = A * j12 * j12 + B * j12 * j22 + C * j22 * j22
        return a11 / b1, a12 / b1, a22 / b1, b2 / b1

    L = KropinaMetric.L
    margin = KropinaMetric.margin


def pullback(metric: Metric, cmap: CoordinateMap) -> Metric:
    if isinstance(metric, KropinaMetric):
        return PulledBackKropina(metric, cmap)
    return PulledBackMetric(metric, cmap)


# -- construction -----------------------------------------------------------


def _parse_field(spec: MetricSpec, name: str) -> ex.Expr:
    if name not in spec.exprs:
        raise MalformedSpec(f"{spec.kind} needs expression {name!r}")
    try:
        return ex.parse(spec.exprs[name])
    except ExprSyntaxError as err:
        raise MalformedSpec(f"expression {name!r}: {err}") from err


def _env(spec: MetricSpec) -> dict[str, float]:
    return {k: float(v) for k, v in spec.constants.items() if k in ex.CONSTANTS}


def _canonical_potential(spec: MetricSpec) -> ex.Expr:
    """The potential from ``phi``, or from ``profile`` (the exchanged-chart form)."""
    given = [name for name in ("phi", "profile") if name in spec.exprs]
    if len(given) != 1:
        raise MalformedSpec("KropinaCanonical needs exactly one of 'phi' or 'profile'")
    node = _parse_field(spec, given[0])
    return node if given[0] == "phi" else profile_to_potential(node)


def canonical_profile(metric: Metric) -> ex.Expr:
    """Profile of a canonical metric: its potential with the base coordinates exchanged."""
    if not isinstance(metric, KropinaCanonical):
        raise TypeError(f"{metric.kind} has no potential")
    return potential_to_profile(metric.phi)


def make_metric(spec: MetricSpec) -> Metric:
    """Build an evaluable metric from its spec."""
    if spec.kind not in KINDS:
        raise MalformedSpec(f"unknown metric kind {spec.kind!r}; expected one of {', '.join(KINDS)}")
    fields = {name: _parse_field(spec, name) for name in _REQUIRED_EXPRS[spec.kind]}
    missing = [k for k in _REQUIRED_CONSTANTS.get(spec.kind, ()) if k not in spec.constants]
    if missing:
        raise MalformedSpec(f"{spec.kind} needs constants {', '.join(missing)}")
    env = _env(spec)
    if spec.kind == "KropinaCanonical":
        fields = {"phi": _canonical_potential(spec)}
    unbound = set().union(*(ex.free_constants(f) for f in fields.values())) - set(env)
    if unbound:
        raise MalformedSpec(f"unbound constants {', '.join(sorted(unbound))}")

    kind = spec.kind
    if kind == "KropinaGeneral":
        metric: Metric = KropinaGeneral(fields["A"], fields["B"], fields["C"], fields["D"], env)
    elif kind == "KropinaCanonical":
        metric = KropinaCanonical(_canonical_potential(spec), spec.constants.get("k", 1.0), env)
    elif kind == "Parabolic":
        metric = Parabolic(fields["sigma"], env)
    elif kind in ("MinkowskiLinear", "MinkowskiRational"):
        source = MINKOWSKI_LINEAR_PROFILE if kind == "MinkowskiLinear" else MINKOWSKI_RATIONAL_PROFILE
        metric = KropinaCanonical(profile_to_potential(ex.parse(source)), 1.0, env, kind=kind)
    elif kind == "CubicGeneral":
        metric = CubicGeneral(fields["A"], fields["B"], fields["C"], fields["D"], env)
    else:
        parsed = {k: ex.parse(v) for k, v in CUBIC_EXCEPTIONAL.items()}
        metric = CubicGeneral(parsed["A"], parsed["B"], parsed["C"], parsed["D"], env, kind="CubicExceptional")
    metric.spec = spec
    return metric


def eval_L(metric: Metric, pt: EvalPoint, order: int = ad.DEFAULT_ORDER) -> Jet:
    """Jet of the metric function at one point."""
    return metric.L(*pt.jets(order))


def delta_invariant(metric: KropinaMetric, x: tuple[float, float]) -> float:
    return float(metric.delta(*x))


def cubic_discriminant(metric: CubicMetric, x: tuple[float, float]) -> float:
    return float(metric.discriminant(*x))


def minkowski_linear_profile(k1: float, k2: float, k3: float) -> tuple[ex.Expr, dict]:
    return ex.parse(MINKOWSKI_LINEAR_PROFILE), {"k1": k1, "k2": k2, "k3": k3}


def minkowski_rational_profile(k1: float, k2: float, k3: float, k4: float) -> tuple[ex.Expr, dict]:
    return ex.parse(MINKOWSKI_RATIONAL_PROFILE), {"k1": k1, "k2": k2, "k3": k3, "k4": k4}


def canonical_from_profile(profile: ex.Expr, env: ex.ConstEnv | None = None) -> KropinaCanonical:
    """Canonical metric (C = 1) whose potential is the coordinate-exchanged ``profile``."""
    return KropinaCanonical(profile_to_potential(profile), 1.0, env)


def parabolic_phi_check(metric: KropinaMetric, x1, x2):
    """4AC - B^2 at base points; for C = 1 this is 4 φ_x1 - (φ_x2)^2."""
    A, B, C, _ = metric.coefficient_values(x1, x2)
    return 4.0 * A * C - B * B


__all__ = [name for name in dir() if not name.startswith("_")]
del math
