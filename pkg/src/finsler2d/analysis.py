"""Residual evaluators for the PDE systems of projective Kropina and cubic metrics.

Two kinds of checks live here.  State-level checks (projectivity, the
Minkowski systems, curvature) evaluate the metric on jets at sample states
(x1, x2, X, Y).  Field-level checks evaluate the coefficient fields or the
potential φ at base points only.  Either way every derivative comes from
jets, so residual noise sits at round-off level.

Equation labels in reports are the left-hand sides written out, with
subscripts for base-coordinate derivatives: ``A_1`` is ∂A/∂x1,
``phi_112`` is ∂³φ/∂x1²∂x2.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from . import expr as ex
from .autodiff import Jet, jet_point
from .errors import (
    BZeroOnGrid,
    DegenerateConic,
    DegenerateCubic,
    DivisionByZeroValue,
    DomainError,
    ImplicitSolveFailed,
    IntegrationLeftDomain,
    FinslerError,
    NotProjectiveAtPoint,
    SingularDirection,
    ZeroMetricValue,
)
from .metrics import (
    CONIC_TOL,
    CUBIC_TOL,
    CoordinateMap,
    CubicMetric,
    EvalPoint,
    KropinaMetric,
    Metric,
    MetricSpec,
    cubic_discriminant_values,
    make_metric,
)

MARGIN_SKIP = 1e-3
PROJECTIVE_TOL = 1e-8
ZERO_L_TOL = 1e-12

# errors that exclude a single sample point instead of aborting the whole check
RECOVERABLE = (SingularDirection, DomainError, DivisionByZeroValue, ZeroMetricValue, ImplicitSolveFailed)


# -- sampling ---------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Base points on a rectangle times unit directions on the circle."""

    bounds: tuple[float, float, float, float] = (0.1, 0.9, 0.1, 0.9)
    n1: int = 11
    n2: int = 11
    ndirs: int = 16
    seed: int | None = None
    workers: int = 1

    def __post_init__(self):
        x1a, x1b, x2a, x2b = self.bounds
        if not (x1a < x1b and x2a < x2b):
            raise ValueError(f"degenerate grid rectangle {self.bounds}")
        if self.n1 < 2 or self.n2 < 2 or self.ndirs < 1:
            raise ValueError("grid needs at least 2x2 base points and one direction")

    @property
    def direction_offset(self) -> float:
        if self.seed is None:
            return 0.5
        return float(np.random.default_rng(self.seed).uniform())

    def base_points(self) -> tuple[np.ndarray, np.ndarray]:
        x1a, x1b, x2a, x2b = self.bounds
        g1, g2 = np.meshgrid(np.linspace(x1a, x1b, self.n1), np.linspace(x2a, x2b, self.n2), indexing="ij")
        return g1.ravel(), g2.ravel()

    def angles(self) -> np.ndarray:
        return 2.0 * np.pi * (np.arange(self.ndirs) + self.direction_offset) / self.ndirs

    def states(self) -> tuple[np.ndarray, ...]:
        x1, x2 = self.base_points()
        th = self.angles()
        X1 = np.repeat(x1, th.size)
        X2 = np.repeat(x2, th.size)
        T = np.tile(th, x1.size)
        return X1, X2, np.cos(T), np.sin(T)

    def describe(self) -> dict:
        return {
            "bounds": list(self.bounds),
            "n1": self.n1,
            "n2": self.n2,
            "ndirs": self.ndirs,
            "seed": self.seed,
            "direction_offset": self.direction_offset,
        }


# -- reports ----------------------------------------------------------------


@dataclass(frozen=True)
class EquationResidual:
    label: str
    max_residual: float
    at_point: tuple[float, ...] | None

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "max_residual": self.max_residual,
            "at_point": None if self.at_point is None else list(self.at_point),
        }


@dataclass
class ResidualReport:
    system: str
    equations: list[EquationResidual]
    grid: dict
    excluded: int = 0
    evaluated: int = 0
    notes: list[str] = field(default_factory=list)

    def __getitem__(self, label: str) -> EquationResidual:
        for eq in self.equations:
            if eq.label == label:
                return eq
        raise KeyError(label)

    @property
    def labels(self) -> list[str]:
        return [eq.label for eq in self.equations]

    @property
    def max_residual(self) -> float:
        return max((eq.max_residual for eq in self.equations), default=0.0)

    def worst(self) -> EquationResidual:
        return max(self.equations, key=lambda eq: eq.max_residual)

    def passed(self, threshold: float = PROJECTIVE_TOL) -> bool:
        return self.max_residual < threshold

    def to_dict(self) -> dict:
        return {
            "system": self.system,
            "equations": [eq.to_dict() for eq in self.equations],
            "grid": dict(self.grid, excluded=self.excluded, evaluated=self.evaluated),
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _summarize(values: np.ndarray, points: np.ndarray) -> tuple[float, tuple[float, ...] | None]:
    if values.size == 0:
        return 0.0, None
    mag = np.abs(values)
    if np.any(np.isnan(mag)):
        i = int(np.flatnonzero(np.isnan(mag))[0])
        return float("nan"), tuple(float(v) for v in points[i])
    i = int(np.argmax(mag))
    return float(mag[i]), tuple(float(v) for v in points[i])


def _report(system: str, labels: Sequence[str], residuals: Mapping[str, np.ndarray], points: np.ndarray, grid: Grid, excluded: int = 0, notes=()) -> ResidualReport:
    equations = []
    for label in labels:
        value, at = _summarize(np.asarray(residuals[label]).ravel(), points)
        equations.append(EquationResidual(label, value, at))
    return ResidualReport(system, equations, grid.describe(), excluded, int(points.shape[0]), list(notes))


Evaluator = Callable[[Metric, tuple[Jet, Jet, Jet, Jet]], dict[str, np.ndarray]]


def _run_chunk(metric: Metric, fn: Evaluator, states: np.ndarray, order: int) -> tuple[dict[str, np.ndarray], np.ndarray]:
    try:
        out = fn(metric, jet_point(*states.T, order=order))
        return {k: np.broadcast_to(v, states.shape[:1]) for k, v in out.items()}, np.ones(len(states), bool)
    except RECOVERABLE:
        pass
    rows, keep = [], np.zeros(len(states), bool)
    for i, s in enumerate(states):
        try:
            rows.append(fn(metric, jet_point(*s, order=order)))
            keep[i] = True
        except RECOVERABLE:
            continue
    if not rows:
        return {}, keep
    return {k: np.array([float(np.asarray(r[k])) for r in rows]) for k in rows[0]}, keep


def safe_margin(metric: Metric, states: np.ndarray) -> np.ndarray:
    """Singular-set margins; states whose margin cannot be evaluated get 0."""
    try:
        return np.broadcast_to(np.asarray(metric.margin(*states.T), dtype=float), states.shape[:1])
    except RECOVERABLE:
        out = np.zeros(len(states))
        for i, s in enumerate(states):
            try:
                out[i] = float(metric.margin(*s))
            except RECOVERABLE:
                pass
        return out


def evaluate_states(metric: Metric, grid: Grid, fn: Evaluator, order: int) -> tuple[dict[str, np.ndarray], np.ndarray, int]:
    """Run ``fn`` on every admissible grid state; returns residual arrays, kept states, exclusions."""
    states = np.stack(grid.states(), axis=-1)
    margin = safe_margin(metric, states)
    states = states[margin >= MARGIN_SKIP]
    excluded = int(np.sum(margin < MARGIN_SKIP))
    chunks = np.array_split(states, max(1, min(grid.workers, len(states))))
    if grid.workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=grid.workers) as pool:
            results = list(pool.map(lambda c: _run_chunk(metric, fn, c, order), chunks))
    else:
        results = [_run_chunk(metric, fn, c, order) for c in chunks]
    keys = next((list(r[0]) for r in results if r[0]), [])
    merged = {k: np.concatenate([r[0][k] for r in results if r[0]]) for k in keys}
    kept = np.concatenate([c[r[1]] for c, r in zip(chunks, results)]) if chunks else states
    excluded += len(states) - len(kept)
    return merged, kept, excluded


def base_jets(grid: Grid, order: int) -> tuple[Jet, Jet, np.ndarray]:
    x1, x2 = grid.base_points()
    j1, j2, _, _ = jet_point(x1, x2, 0.0, 0.0, order=order)
    return j1, j2, np.stack([x1, x2], axis=-1)


def _field_derivatives(jet: Jet) -> dict[str, np.ndarray]:
    """Base-coordinate partials of a field jet keyed by subscript string ('' , '1', '12', ...)."""
    out = {"": np.asarray(jet.coeffs[..., 0])}
    frontier = {"": jet}
    for _ in range(jet.order):
        nxt = {}
        for key, j in frontier.items():
            for var in (0, 1):
                name = "".join(sorted(key + str(var + 1)))
                if name not in nxt:
                    nxt[name] = j.deriv(var)
        for name, j in nxt.items():
            out[name] = np.asarray(j.coeffs[..., 0])
        frontier = nxt
    return out


# -- projectivity -----------------------------------------------------------


def projectivity_values(L: Jet, X, Y) -> list[np.ndarray]:
    """L_{x^i} - L_{x^a X^i} X^a for i = 1, 2, from a jet of order >= 2."""
    out = []
    for i in (0, 1):
        Li = L.deriv(i)
        LXi = L.deriv(2 + i)
        out.append(Li.value - (LXi.deriv(0).value * X + LXi.deriv(1).value * Y))
    return out


def _projectivity_eval(metric: Metric, jets) -> dict[str, np.ndarray]:
    L = metric.L(*jets)
    X, Y = jets[2].value, jets[3].value
    r1, r2 = projectivity_values(L, X, Y)
    return {"L_1 - L_a1 X^a": r1, "L_2 - L_a2 X^a": r2}


PROJECTIVITY_LABELS = ("L_1 - L_a1 X^a", "L_2 - L_a2 X^a")


def projectivity_residual(metric: Metric, pt: EvalPoint) -> np.ndarray:
    """Left side of the straight-geodesics condition at one state, for i = 1, 2.

    ``L_ai`` is the mixed derivative ∂²L/∂x^a∂X^i.
    """
    L = metric.L(*pt.jets(2))
    return np.array([float(v) for v in projectivity_values(L, pt.X, pt.Y)])


def projectivity_report(metric: Metric, grid: Grid) -> ResidualReport:
    res, pts, excluded = evaluate_states(metric, grid, _projectivity_eval, 2)
    return _report("projectivity", PROJECTIVITY_LABELS, res, pts, grid, excluded)


# -- Kropina coefficient systems --------------------------------------------


SYSTEM_I_LABELS = (
    "D A_1 + A_2 - B_1 + A D_1",
    "D^2 A_1 - A D D_1 + 3 D A_2 - 2 C_1 - D B_1 + 2 B D_1",
    "2 D^2 A_2 - 3 D C_1 - C_2 + D B_2 + 3 C D_1 + B D_2 - 2 A D D_2",
    "D^2 C_1 - D^2 B_2 + D C_2 - C D D_1 + B D D_2 - 2 C D_2",
)
PRINTED_FOURTH_LABEL = "D^2 C_1 - D^2 B_2 + D C_2 - C D D_1 + B D D_1 + B D D_2 - 2 C D_2"
COMPATIBILITY_LABEL = "D D_1 - D_2"


def system_I_residuals(metric: KropinaMetric, grid: Grid, variant: str = "corrected") -> ResidualReport:
    """Coefficient-level form of the straight-geodesics condition for L = (AX²+BXY+CY²)/(X+DY).

    Also reports the compatibility condition D D_1 - D_2 = 0 that follows
    from the four equations when the conic invariant is nonzero.
    ``variant="printed"`` uses the textbook form of the fourth equation, which carries
    an extra B D D_1 term; it differs from the exact one only where D_1 != 0.
    """
    if variant not in ("corrected", "printed"):
        raise ValueError(f"unknown variant {variant!r}; expected 'corrected' or 'printed'")
    j1, j2, pts = base_jets(grid, 1)
    fields = [_field_derivatives(f) for f in metric.coefficients(j1, j2)]
    A, B, C, D = (f[""] for f in fields)
    A1, B1, C1, D1 = (f["1"] for f in fields)
    A2, B2, C2, D2 = (f["2"] for f in fields)
    delta = A * D * D - B * D + C
    if np.any(np.abs(delta) < CONIC_TOL):
        i = int(np.argmin(np.abs(delta)))
        raise DegenerateConic(f"AD^2 - BD + C vanishes near {tuple(pts[i])}")
    res = {
        SYSTEM_I_LABELS[0]: D * A1 + A2 - B1 + A * D1,
        SYSTEM_I_LABELS[1]: D * D * A1 - A * D * D1 + 3 * D * A2 - 2 * C1 - D * B1 + 2 * B * D1,
        SYSTEM_I_LABELS[2]: 2 * D * D * A2 - 3 * D * C1 - C2 + D * B2 + 3 * C * D1 + B * D2 - 2 * A * D * D2,
        SYSTEM_I_LABELS[3]: D * D * C1 - D * D * B2 + D * C2 - C * D * D1 + B * D * D2 - 2 * C * D2,
        COMPATIBILITY_LABEL: D * D1 - D2,
    }
    labels = SYSTEM_I_LABELS + (COMPATIBILITY_LABEL,)
    notes = []
    if variant == "printed":
        res[PRINTED_FOURTH_LABEL] = res.pop(SYSTEM_I_LABELS[3]) + B * D * D1
        labels = SYSTEM_I_LABELS[:3] + (PRINTED_FOURTH_LABEL, COMPATIBILITY_LABEL)
        notes.append("printed variant: the fourth equation carries an extra B D D_1 term")
    return _report("I", labels, res, pts, grid, notes=notes)


BETA_LABELS = ("D_11", "D_2 - D D_1")


def system_beta_residuals(D: ex.Expr, env: ex.ConstEnv, grid: Grid) -> ResidualReport:
    """Second-order system that the singular-direction coefficient D must satisfy."""
    j1, j2, pts = base_jets(grid, 2)
    d = _field_derivatives(ex.eval_expr(D, env, j1, j2))
    res = {BETA_LABELS[0]: d["11"], BETA_LABELS[1]: d["2"] - d[""] * d["1"]}
    return _report("beta", BETA_LABELS, res, pts, grid)


def singular_direction(metric: KropinaMetric, x: Sequence[float]) -> np.ndarray:
    """Unit vector along (D, -1), the direction where X + DY vanishes."""
    return metric.singular_direction(float(x[0]), float(x[1]))


def chord_deviation(xy: np.ndarray) -> float:
    """Max distance of the points from the chord through the first and last, over chord length."""
    from .errors import DegenerateChord

    xy = np.asarray(xy, dtype=float)
    if len(xy) < 3:
        raise DegenerateChord("need at least 3 samples")
    chord = xy[-1] - xy[0]
    length = float(np.hypot(*chord))
    if length < 1e-9:
        raise DegenerateChord(f"chord length {length:.3g} is too short")
    rel = xy - xy[0]
    dist = np.abs(rel[:, 0] * chord[1] - rel[:, 1] * chord[0]) / length
    return float(dist.max() / length)


def flow_line_straightness(metric: KropinaMetric, x0: Sequence[float], arc_length: float = 1.0, steps: int = 200) -> float:
    """Integrate the singular direction field from ``x0`` by RK4 in arc length; return chord deviation."""

    def field_at(x: np.ndarray) -> np.ndarray:
        try:
            v = metric.singular_direction(float(x[0]), float(x[1]))
        except FinslerError as err:
            raise IntegrationLeftDomain(f"direction field undefined at {tuple(x)}: {err}") from err
        if not np.all(np.isfinite(v)):
            raise IntegrationLeftDomain(f"direction field not finite at {tuple(x)}")
        return v

    h = arc_length / steps
    x = np.array(x0, dtype=float)
    ref = field_at(x)
    path = [x.copy()]

    def oriented(v):
        return v if v @ ref >= 0 else -v

    for _ in range(steps):
        k1 = oriented(field_at(x))
        k2 = oriented(field_at(x + 0.5 * h * k1))
        k3 = oriented(field_at(x + 0.5 * h * k2))
        k4 = oriented(field_at(x + h * k3))
        step = (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        ref = step / np.linalg.norm(step)
        x = x + h * step
        path.append(x.copy())
    return chord_deviation(np.array(path))


def kill_D_transform(case: str, k1: float, k2: float | None = None) -> CoordinateMap:
    """Change of chart sending the singular direction onto the x̄2 axis, so D̄ = 0.

    ``case`` is ``"rational"`` for D = (x1 + k1)/(k2 - x2) and ``"constant"``
    for D = k1.
    """
    env = {"k1": float(k1)}
    if case == "rational":
        if k2 is None:
            raise ValueError("rational case needs k2")
        env["k2"] = float(k2)
        forward = (ex.parse("(x1 + k1)/(x2 - k2)"), ex.parse("1/(x2 - k2)"))
        inverse = (ex.parse("x1/x2 - k1"), ex.parse("k2 + 1/x2"))
        return CoordinateMap(forward, inverse, env, ("x2", float(k2)))
    if case == "constant":
        forward = (ex.parse("x1 + k1*x2"), ex.parse("x2"))
        inverse = (ex.parse("x1 - k1*x2"), ex.parse("x2"))
        return CoordinateMap(forward, inverse, env)
    raise ValueError(f"unknown case {case!r}; expected 'rational' or 'constant'")


# -- potential systems ------------------------------------------------------


MINKOWSKI_PHI_LABELS = ("2 phi_12 - phi_1 phi_11", "phi_22 - phi_2 phi_11", "phi_111")


def _phi_derivatives(phi: ex.Expr, env: ex.ConstEnv, grid: Grid) -> tuple[dict[str, np.ndarray], np.ndarray]:
    j1, j2, pts = base_jets(grid, 3)
    return _field_derivatives(ex.eval_expr(phi, env, j1, j2)), pts


def system_IIprime_residuals(phi: ex.Expr, env: ex.ConstEnv, grid: Grid) -> ResidualReport:
    """Potential-level Minkowski conditions, for φ given as a profile (exchanged chart)."""
    f, pts = _phi_derivatives(phi, env, grid)
    res = {
        MINKOWSKI_PHI_LABELS[0]: 2 * f["12"] - f["1"] * f["11"],
        MINKOWSKI_PHI_LABELS[1]: f["22"] - f["2"] * f["11"],
        MINKOWSKI_PHI_LABELS[2]: f["111"],
    }
    return _report("II-prime", MINKOWSKI_PHI_LABELS, res, pts, grid)


def _skew_equations(f: Mapping[str, np.ndarray], variant: str) -> dict[str, np.ndarray]:
    f1, f2 = f["1"], f["2"]
    f11, f12, f22 = f["11"], f["12"], f["22"]
    f111, f112, f122, f222 = f["111"], f["112"], f["122"], f["222"]
    eqs = {
        "phi_111": f111,
        "2 phi_112 - phi_11^2": 2 * f112 - f11**2,
    }
    if variant == "corrected":
        eqs["phi_1 phi_112 - 2 phi_11 phi_12 + phi_122"] = f1 * f112 - 2 * f11 * f12 + f122
        eqs["3 phi_2 phi_11^2 - 6 phi_1^2 phi_112 + 12 phi_1 phi_11 phi_12 - 12 phi_12^2 - 6 phi_11 phi_22 + 2 phi_222"] = (
            3 * f2 * f11**2 - 6 * f1**2 * f112 + 12 * f1 * f11 * f12 - 12 * f12**2 - 6 * f11 * f22 + 2 * f222
        )
        eqs[
            "5 phi_1 phi_2 phi_112 - 14 phi_2 phi_11 phi_12 + 14 phi_22 phi_12 - 2 phi_1^2 phi_122"
            " + 4 phi_1 phi_12^2 + 2 phi_1 phi_11 phi_22 - 3 phi_1 phi_222"
        ] = (
            5 * f1 * f2 * f112 - 14 * f2 * f11 * f12 + 14 * f22 * f12 - 2 * f1**2 * f122
            + 4 * f1 * f12**2 + 2 * f1 * f11 * f22 - 3 * f1 * f222
        )
        eqs[
            "2 phi_2^2 phi_112 - 2 phi_2 phi_222 - phi_1^2 phi_222 - 2 phi_2 phi_11 phi_22 - 4 phi_2 phi_12^2"
            " + 6 phi_1 phi_22 phi_12 + 4 phi_22^2 - phi_1 phi_2 phi_122"
        ] = (
            2 * f2**2 * f112 - 2 * f2 * f222 - f1**2 * f222 - 2 * f2 * f11 * f22 - 4 * f2 * f12**2
            + 6 * f1 * f22 * f12 + 4 * f22**2 - f1 * f2 * f122
        )
    elif variant == "printed":
        eqs["phi_2 phi_112 - 2 phi_11 phi_12 + phi_122"] = f2 * f112 - 2 * f11 * f12 + f122
        eqs["3 phi_2 phi_11^2 - 6 phi_1^2 phi_112 + 12 phi_1 phi_11 phi_12 - 12 phi_12^2 - 6 phi_11 phi_22 + 2 phi_111"] = (
            3 * f2 * f11**2 - 6 * f1**2 * f112 + 12 * f1 * f11 * f12 - 12 * f12**2 - 6 * f11 * f22 + 2 * f111
        )
        eqs[
            "5 phi_1 phi_2 phi_112 - 14 phi_2 phi_11 phi_12 + 14 phi_22 phi_12 - 2 phi_1^2 phi_122"
            " + 4 phi_1 phi_12^3 + 2 phi_1 phi_11 phi_22 - 3 phi_1 phi_222"
        ] = (
            5 * f1 * f2 * f112 - 14 * f2 * f11 * f12 + 14 * f22 * f12 - 2 * f1**2 * f122
            + 4 * f1 * f12**3 + 2 * f1 * f11 * f22 - 3 * f1 * f222
        )
        eqs[
            "2 phi_2^2 phi_112 - 2 phi_2 phi_222 - phi_1^2 phi_222 - 2 phi_2 phi_11 phi_22 - 4 phi_2 phi_12^2"
            " + 6 phi_1 phi_22 phi_12 + 4 phi_11^2 - phi_1 phi_2 phi_122"
        ] = (
            2 * f2**2 * f112 - 2 * f2 * f222 - f1**2 * f222 - 2 * f2 * f11 * f22 - 4 * f2 * f12**2
            + 6 * f1 * f22 * f12 + 4 * f11**2 - f1 * f2 * f122
        )
    else:
        raise ValueError(f"unknown variant {variant!r}; expected 'corrected' or 'printed'")
    eqs["2 phi_2 phi_22 phi_12 - phi_2^2 phi_122 + phi_1 phi_2 phi_222 - 2 phi_1 phi_22^2"] = (
        2 * f2 * f22 * f12 - f2**2 * f122 + f1 * f2 * f222 - 2 * f1 * f22**2
    )
    return eqs


def constant_curvature_residuals(phi: ex.Expr, env: ex.ConstEnv, grid: Grid, variant: str = "corrected") -> ResidualReport:
    """Seven potential-level equations equivalent to the skew condition P_12 = P_21.

    φ is a profile (exchanged chart, like :func:`system_IIprime_residuals`).
    ``variant="printed"`` keeps the commonly quoted third to sixth
    equations, which carry transcription slips; ``"corrected"`` replaces
    them by forms that vanish exactly when P_12 - P_21 does.
    """
    f, pts = _phi_derivatives(phi, env, grid)
    res = _skew_equations(f, variant)
    notes = [] if variant == "corrected" else ["printed variant: equations 3-6 carry known transcription slips"]
    return _report("constant-curvature", list(res), res, pts, grid, notes=notes)


# -- p-functions and curvature ----------------------------------------------


@dataclass
class PFunctions:
    """p = (L_{x^a} X^a)/(2L) and its derivatives at one state (or a batch)."""

    p: np.ndarray
    p_i: np.ndarray  # [i]
    p_ij: np.ndarray  # [i, j]
    dp_dx: np.ndarray  # [i] = ∂p/∂x^i
    dpi_dxj: np.ndarray  # [i, j] = ∂p_i/∂x^j
    X: np.ndarray  # [a] direction components

    def euler_defects(self) -> tuple[np.ndarray, np.ndarray]:
        """p_a X^a - p and p_ia X^a, both zero by 1-homogeneity of p."""
        first = np.einsum("a...,a...->...", self.p_i, self.X) - self.p
        second = np.einsum("ia...,a...->i...", self.p_ij, self.X)
        return first, second


def p_jet(L: Jet, X: Jet, Y: Jet) -> Jet:
    """Jet of p = (L_{x^a} X^a)/(2L), one order below ``L``."""
    value = np.asarray(L.coeffs[..., 0])
    if np.any(np.abs(value) < ZERO_L_TOL):
        raise ZeroMetricValue("metric function vanishes at a sample state")
    k = L.order - 1
    num = L.deriv(0) * X.truncate(k) + L.deriv(1) * Y.truncate(k)
    return num / (2.0 * L.truncate(k))


def _p_blocks(metric: Metric, jets):
    L = metric.L(*jets)
    p = p_jet(L, jets[2], jets[3])
    pi = [p.deriv(2), p.deriv(3)]
    return L, p, pi


def p_functions_from_jets(metric: Metric, jets) -> PFunctions:
    order = jets[0].order
    if order < 3:
        raise ValueError("p-functions need jets of order >= 3")
    _, p, pi = _p_blocks(metric, jets)
    val = lambda j: np.asarray(j.coeffs[..., 0])  # noqa: E731
    return PFunctions(
        p=val(p),
        p_i=np.array([val(j) for j in pi]),
        p_ij=np.array([[val(pi[i].deriv(2 + j)) for j in (0, 1)] for i in (0, 1)]),
        dp_dx=np.array([val(p.deriv(i)) for i in (0, 1)]),
        dpi_dxj=np.array([[val(pi[i].deriv(j)) for j in (0, 1)] for i in (0, 1)]),
        X=np.array([val(jets[2]), val(jets[3])]),
    )


def p_functions(metric: Metric, pt: EvalPoint, order: int = 3) -> PFunctions:
    return p_functions_from_jets(metric, pt.jets(order))


@dataclass(frozen=True)
class MinkowskiResidual:
    p_ij: float  # max |p_ij|
    grad: float  # max |∂p/∂x^i - p p_i|
    transport: float  # max |∂p_j/∂x^i - p_j p_i|

    @property
    def max(self) -> float:
        return max(self.p_ij, self.grad)


def _minkowski_blocks(pf: PFunctions) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    grad = pf.dp_dx - pf.p * pf.p_i
    transport = np.swapaxes(pf.dpi_dxj, 0, 1) - np.einsum("j...,i...->ij...", pf.p_i, pf.p_i)
    return pf.p_ij, grad, transport


def minkowski_residual(metric: Metric, pt: EvalPoint) -> MinkowskiResidual:
    """Residuals of p_ij = 0 with ∂p/∂x^i = p p_i, and of the transport form ∂p_j/∂x^i = p_j p_i."""
    pij, grad, transport = _minkowski_blocks(p_functions(metric, pt))
    return MinkowskiResidual(float(np.abs(pij).max()), float(np.abs(grad).max()), float(np.abs(transport).max()))


MINKOWSKI_LABELS = ("p_ij", "p_,i - p p_i")
TRANSPORT_LABEL = "p_j,i - p_j p_i"


def _minkowski_eval(metric: Metric, jets) -> dict[str, np.ndarray]:
    pij, grad, transport = _minkowski_blocks(p_functions_from_jets(metric, jets))
    return {
        MINKOWSKI_LABELS[0]: np.abs(pij).max(axis=(0, 1)),
        MINKOWSKI_LABELS[1]: np.abs(grad).max(axis=0),
        TRANSPORT_LABEL: np.abs(transport).max(axis=(0, 1)),
    }


def minkowski_report(metric: Metric, grid: Grid, include_transport: bool = False) -> ResidualReport:
    """Grid maxima of the Minkowski system; ``p_,i`` is ∂p/∂x^i."""
    res, pts, excluded = evaluate_states(metric, grid, _minkowski_eval, 3)
    labels = MINKOWSKI_LABELS + ((TRANSPORT_LABEL,) if include_transport else ())
    return _report("III", labels, res, pts, grid, excluded)


def _require_projective(L: Jet, X, Y) -> None:
    r = np.abs(np.array(projectivity_values(L, X, Y)))
    if np.any(r >= PROJECTIVE_TOL):
        raise NotProjectiveAtPoint(f"straight-geodesics residual {float(r.max()):.3g} exceeds {PROJECTIVE_TOL:g}")


def connection_G(metric: Metric, pt: EvalPoint) -> np.ndarray:
    """G^i_jk = δ^i_j p_k + δ^i_k p_j + X^i p_jk, as an array [i, j, k]."""
    jets = pt.jets(3)
    _require_projective(metric.L(*jets), pt.X, pt.Y)
    pf = p_functions_from_jets(metric, jets)
    return _connection(pf)


def _connection(pf: PFunctions) -> np.ndarray:
    eye = np.eye(2)
    return (
        np.einsum("ij,k...->ijk...", eye, pf.p_i)
        + np.einsum("ik,j...->ijk...", eye, pf.p_i)
        + np.einsum("i...,jk...->ijk...", pf.X, pf.p_ij)
    )


@dataclass
class CurvatureBundle:
    G: np.ndarray  # [i, j, k]
    P: np.ndarray  # [i, j]
    dP_dX: np.ndarray  # [k, l, j] = ∂P_kl/∂X^j
    K: np.ndarray  # [i, j, k, l]
    variant: str

    def trace(self) -> np.ndarray:
        """K^a_akl."""
        return np.einsum("aakl...->kl...", self.K)

    def trace_defect(self, n: int = 2) -> np.ndarray:
        """K^a_akl - (n + 1)(P_kl - P_lk)."""
        skew = self.P - np.swapaxes(self.P, 0, 1)
        return self.trace() - (n + 1) * skew


def _P_jets(p: Jet, pi: Sequence[Jet]) -> list[list[Jet]]:
    k = pi[0].order - 1
    pv = p.truncate(k)
    pt = [q.truncate(k) for q in pi]
    return [[pi[i].deriv(j) - pt[i] * pt[j] - pi[i].deriv(2 + j).truncate(k) * pv for j in (0, 1)] for i in (0, 1)]


def curvature_from_jets(metric: Metric, jets, variant: str = "complete", check_projective: bool = True) -> CurvatureBundle:
    if jets[0].order < 4:
        raise ValueError("curvature needs jets of order >= 4")
    L, p, pi = _p_blocks(metric, jets)
    X = np.array([np.asarray(jets[2].coeffs[..., 0]), np.asarray(jets[3].coeffs[..., 0])])
    if check_projective:
        _require_projective(L, X[0], X[1])
    val = lambda j: np.asarray(j.coeffs[..., 0])  # noqa: E731
    pf = PFunctions(
        p=val(p),
        p_i=np.array([val(j) for j in pi]),
        p_ij=np.array([[val(pi[i].deriv(2 + j)) for j in (0, 1)] for i in (0, 1)]),
        dp_dx=np.array([val(p.deriv(i)) for i in (0, 1)]),
        dpi_dxj=np.array([[val(pi[i].deriv(j)) for j in (0, 1)] for i in (0, 1)]),
        X=X,
    )
    Pj = _P_jets(p, pi)
    P = np.array([[val(Pj[k][l]) for l in (0, 1)] for k in (0, 1)])
    dP = np.array([[[val(Pj[k][l].deriv(2 + j)) for j in (0, 1)] for l in (0, 1)] for k in (0, 1)])
    K = curvature_tensor(P, dP, X, variant)
    return CurvatureBundle(_connection(pf), P, dP, K, variant)


def curvature_tensor(P: np.ndarray, dP: np.ndarray, X: np.ndarray, variant: str = "complete") -> np.ndarray:
    """K^i_jkl of a projective connection from P_kl and ∂P_kl/∂X^j.

    ``"complete"`` includes the term -δ^i_l P_jk; ``"printed"`` omits it,
    which breaks the trace identity K^a_akl = 3(P_kl - P_lk) in two dimensions.
    """
    eye = np.eye(2)
    skew = P - np.swapaxes(P, 0, 1)
    dskew = dP - np.swapaxes(dP, 0, 1)  # [k, l, j]
    K = (
        np.einsum("ij,kl...->ijkl...", eye, skew)
        + np.einsum("ik,jl...->ijkl...", eye, P)
        + np.einsum("i...,klj...->ijkl...", X, dskew)
    )
    if variant == "complete":
        K = K - np.einsum("il,jk...->ijkl...", eye, P)
    elif variant != "printed":
        raise ValueError(f"unknown variant {variant!r}; expected 'complete' or 'printed'")
    return K


def curvature_bundle(metric: Metric, pt: EvalPoint, variant: str = "complete", order: int = ad.DEFAULT_ORDER) -> CurvatureBundle:
    return curvature_from_jets(metric, pt.jets(max(order, 4)), variant)


def skewness_condition_residual(metric: Metric, pt: EvalPoint) -> float:
    """|P_12 - P_21|, zero for every space of constant curvature."""
    b = curvature_bundle(metric, pt)
    return float(abs(b.P[0, 1] - b.P[1, 0]))


SKEW_LABEL = "P_12 - P_21"


def _skew_eval(metric: Metric, jets) -> dict[str, np.ndarray]:
    b = curvature_from_jets(metric, jets, check_projective=False)
    return {SKEW_LABEL: b.P[0, 1] - b.P[1, 0]}


def skewness_report(metric: Metric, grid: Grid) -> ResidualReport:
    res, pts, excluded = evaluate_states(metric, grid, _skew_eval, 4)
    return _report("skew", (SKEW_LABEL,), res, pts, grid, excluded)


# -- cubic metrics ----------------------------------------------------------


ALPHA_LABELS = (
    "A_1 - 2A/B B_1 + AD/B^2 B_2",
    "A_2 - (AB - CD)/(2B^2) B_2 - C/B B_1",
    "C_2 - 2D/(3B) B_1 - (2BC - D^2)/(3B^2) B_2",
    "D_1 - 4D/(3B) B_1 - (BC - 2D^2)/(3B^2) B_2",
    "D_2 - B_1/3 - 2D/(3B) B_2",
    "6 B B_22 - 7 B_2^2",
    "B_12 - 4/(3B) B_1 B_2 + D/(6B^2) B_2^2",
    "B_11 - 4/(3B) B_1^2 - (BC - 2D^2)/(6B^2) B_2^2",
)
ALPHA_EXCLUDED_NOTE = (
    "excluded: the C_1 equation, whose known right side divides by B_2 in a way that cannot be "
    "dimensionally consistent"
)


def cubic_system_alpha_residuals(metric: CubicMetric, grid: Grid) -> ResidualReport:
    """Coefficient system for straight geodesics of L³ = AX³ + BY³ + 3CX²Y + 3DXY², B ≠ 0."""
    j1, j2, pts = base_jets(grid, 2)
    A, B, C, D = (_field_derivatives(f) for f in metric.coefficients(j1, j2))
    b = B[""]
    if np.any(np.abs(b) < 1e-12):
        i = int(np.argmin(np.abs(b)))
        raise BZeroOnGrid(f"B vanishes near {tuple(pts[i])}")
    a, c, d = A[""], C[""], D[""]
    B1, B2 = B["1"], B["2"]
    res = {
        ALPHA_LABELS[0]: A["1"] - 2 * a / b * B1 + a * d / b**2 * B2,
        ALPHA_LABELS[1]: A["2"] - (a * b - c * d) / (2 * b**2) * B2 - c / b * B1,
        ALPHA_LABELS[2]: C["2"] - 2 * d / (3 * b) * B1 - (2 * b * c - d**2) / (3 * b**2) * B2,
        ALPHA_LABELS[3]: D["1"] - 4 * d / (3 * b) * B1 - (b * c - 2 * d**2) / (3 * b**2) * B2,
        ALPHA_LABELS[4]: D["2"] - B1 / 3 - 2 * d / (3 * b) * B2,
        ALPHA_LABELS[5]: 6 * b * B["22"] - 7 * B2**2,
        ALPHA_LABELS[6]: B["12"] - 4 / (3 * b) * B1 * B2 + d / (6 * b**2) * B2**2,
        ALPHA_LABELS[7]: B["11"] - 4 / (3 * b) * B1**2 - (b * c - 2 * d**2) / (6 * b**2) * B2**2,
    }
    return _report("alpha-cubic", ALPHA_LABELS, res, pts, grid, notes=[ALPHA_EXCLUDED_NOTE])


def _require_nondegenerate_cubic(metric: CubicMetric, grid: Grid) -> None:
    x1, x2 = grid.base_points()
    R = np.asarray(metric.discriminant(x1, x2))
    if np.any(np.abs(R) < CUBIC_TOL):
        raise DegenerateCubic("cubic discriminant R vanishes on the grid")


def cubic_exceptional_check(k: Sequence[float], grid: Grid) -> ResidualReport:
    """Straight-geodesics and Minkowski residuals of the B = 0 cubic family."""
    spec = MetricSpec("CubicExceptional", {}, {f"k{i + 1}": float(v) for i, v in enumerate(k)})
    metric = make_metric(spec)
    _require_nondegenerate_cubic(metric, grid)  # type: ignore[arg-type]
    proj = projectivity_report(metric, grid)
    mink = minkowski_report(metric, grid)
    return ResidualReport(
        "cubic-exceptional",
        proj.equations + mink.equations,
        grid.describe(),
        max(proj.excluded, mink.excluded),
        mink.evaluated,
    )


__all__ = [name for name in dir() if not name.startswith("_")]
