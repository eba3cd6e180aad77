"""Geodesic spray, fixed-step RK4 geodesics and chord straightness."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import jet_point
from .errors import DegenerateChord, DegenerateTensor, FinslerError, ImmediateSingularity, SingularDirection
from .metrics import EvalPoint, KropinaMetric, Metric

DET_TOL = 1e-10
HALT_MARGIN = 1e-6
# a step that grows or shrinks the speed by more than this factor is not resolved
# by the fixed step; it happens next to finite-time blow-ups near zero directions of L
SPEED_JUMP = 2.0


@dataclass
class FundamentalTensor:
    g: np.ndarray  # [i, j, *batch]
    det: np.ndarray


def _squared_jet(metric: Metric, x1, x2, X, Y):
    L = metric.L(*jet_point(x1, x2, X, Y, order=2))
    return L * L


def _tensor_from(F) -> FundamentalTensor:
    FX = [F.deriv(2), F.deriv(3)]
    g = 0.5 * np.array([[np.asarray(FX[i].deriv(2 + j).coeffs[..., 0]) for j in (0, 1)] for i in (0, 1)])
    with np.errstate(over="ignore", invalid="ignore"):
        det = g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
    if not np.all(np.isfinite(det)):
        raise DegenerateTensor("fundamental tensor is not finite")
    if np.any(np.abs(det) < DET_TOL):
        raise DegenerateTensor(f"fundamental tensor is degenerate (|det| = {float(np.abs(det).min()):.3g})")
    return FundamentalTensor(g, det)


def fundamental_tensor(metric: Metric, pt: EvalPoint) -> FundamentalTensor:
    """g_ij = ½ ∂²L²/∂X^i∂X^j."""
    return _tensor_from(_squared_jet(metric, pt.x1, pt.x2, pt.X, pt.Y))


def spray_values(metric: Metric, x1, x2, X, Y) -> np.ndarray:
    """G^i = ¼ g^ik (∂²L²/∂X^k∂x^j X^j - ∂L²/∂x^k), array [i, *batch]."""
    F = _squared_jet(metric, x1, x2, X, Y)
    t = _tensor_from(F)
    X, Y = np.asarray(X, dtype=float), np.asarray(Y, dtype=float)
    rhs = []
    for k in (0, 1):
        Fk = F.deriv(2 + k)
        mixed = np.asarray(Fk.deriv(0).coeffs[..., 0]) * X + np.asarray(Fk.deriv(1).coeffs[..., 0]) * Y
        rhs.append(mixed - np.asarray(F.deriv(k).coeffs[..., 0]))
    g = t.g
    inv = np.array([[g[1, 1], -g[0, 1]], [-g[1, 0], g[0, 0]]]) / t.det
    return 0.25 * np.einsum("ik...,k...->i...", inv, np.array(rhs))


def spray(metric: Metric, pt: EvalPoint) -> np.ndarray:
    return spray_values(metric, pt.x1, pt.x2, pt.X, pt.Y)


@dataclass
class GeodesicTrace:
    samples: np.ndarray  # rows (t, x1, x2, v1, v2)
    deviation: float
    termination: str
    t_end: float
    steps: int
    notes: list[str] = field(default_factory=list)

    @property
    def completed(self) -> bool:
        return self.termination == "completed"

    @property
    def positions(self) -> np.ndarray:
        return self.samples[:, 1:3]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t", "x1", "x2", "v1", "v2"])
        for row in self.samples:
            writer.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "start": [float(v) for v in self.samples[0, 1:]],
            "end": [float(v) for v in self.samples[-1, 1:]],
            "t_final": float(self.samples[-1, 0]),
            "t_end": self.t_end,
            "steps": self.steps,
            "samples": int(len(self.samples)),
            "deviation": None if not np.isfinite(self.deviation) else self.deviation,
            "termination": self.termination,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def straightness(trace: GeodesicTrace | np.ndarray) -> float:
    """Max distance of sampled positions from the endpoint chord, over chord length."""
    xy = trace.positions if isinstance(trace, GeodesicTrace) else np.asarray(trace, dtype=float)
    if len(xy) < 3:
        raise DegenerateChord("need at least 3 samples")
    chord = xy[-1] - xy[0]
    length = float(np.hypot(*chord))
    if length < 1e-9:
        raise DegenerateChord(f"chord length {length:.3g} is too short")
    rel = xy - xy[0]
    dist = np.abs(rel[:, 0] * chord[1] - rel[:, 1] * chord[0]) / length
    return float(dist.max() / length)


def _pole_margin(metric: Metric, x: np.ndarray, v: np.ndarray) -> float:
    if not isinstance(metric, KropinaMetric):
        return np.inf
    return float(metric.pole_margin(x[0], x[1], v[0], v[1]))


def _speed_resolved(v_old: np.ndarray, v_new: np.ndarray) -> bool:
    ratio = np.hypot(*v_new) / np.hypot(*v_old)
    return bool(np.all((ratio <= SPEED_JUMP) & (ratio >= 1.0 / SPEED_JUMP)))


def _rhs(metric: Metric, state: np.ndarray) -> np.ndarray:
    x, v = state[:2], state[2:]
    if _pole_margin(metric, x, v) < HALT_MARGIN:
        raise SingularDirection(f"velocity reached the singular direction at ({x[0]:.6g}, {x[1]:.6g})")
    G = spray_values(metric, x[0], x[1], v[0], v[1])
    return np.concatenate([v, -2.0 * np.asarray(G, dtype=float)])


def integrate_geodesic(
    metric: Metric,
    x0: Sequence[float],
    v0: Sequence[float],
    t_end: float = 1.0,
    steps: int = 200,
    box: tuple[float, float, float, float] | None = None,
) -> GeodesicTrace:
    """Classical RK4 for x'' = -2 G(x, x').

    Halts early, recording why, on singularities, on leaving ``box``, or on a
    step whose speed jumps by more than ``SPEED_JUMP`` (a blow-up the fixed
    step cannot follow).
    """
    if steps < 16:
        raise ValueError("steps must be at least 16")
    state = np.array([*x0, *v0], dtype=float)
    try:
        _rhs(metric, state)
    except FinslerError as err:
        raise ImmediateSingularity(f"cannot start geodesic: {type(err).__name__}: {err}") from err

    h = t_end / steps
    rows = [np.concatenate([[0.0], state])]
    termination = "completed"
    for n in range(1, steps + 1):
        try:
            k1 = _rhs(metric, state)
            k2 = _rhs(metric, state + 0.5 * h * k1)
            k3 = _rhs(metric, state + 0.5 * h * k2)
            k4 = _rhs(metric, state + h * k3)
        except DegenerateTensor:
            termination = "degenerate-tensor"
            break
        except SingularDirection:
            termination = "singular-direction"
            break
        except FinslerError as err:
            termination = f"error: {type(err).__name__}"
            break
        nxt = state + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(nxt)):
            termination = "non-finite"
            break
        if not _speed_resolved(state[2:], nxt[2:]):
            termination = "unresolved-step"
            break
        if box is not None:
            x1a, x1b, x2a, x2b = box
            if not (x1a <= nxt[0] <= x1b and x2a <= nxt[1] <= x2b):
                termination = "left-box"
                break
        state = nxt
        rows.append(np.concatenate([[n * h], state]))
    samples = np.array(rows)
    try:
        deviation = straightness(samples[:, 1:3])
    except DegenerateChord:
        deviation = float("nan")
    return GeodesicTrace(samples, deviation, termination, float(t_end), int(steps))


def _batch_rhs(metric: Metric, state: np.ndarray) -> np.ndarray:
    x1, x2, v1, v2 = state
    if isinstance(metric, KropinaMetric):
        if np.any(metric.pole_margin(x1, x2, v1, v2) < HALT_MARGIN):
            raise SingularDirection("a velocity reached the singular direction")
    G = spray_values(metric, x1, x2, v1, v2)
    return np.stack([v1, v2, -2.0 * G[0], -2.0 * G[1]])


def integrate_geodesics(
    metric: Metric,
    x0s: Sequence[Sequence[float]],
    v0s: Sequence[Sequence[float]],
    t_end: float = 1.0,
    steps: int = 200,
    box: tuple[float, float, float, float] | None = None,
) -> list[GeodesicTrace]:
    """Many geodesics in one vectorized RK4 sweep.

    Gives the same traces as calling :func:`integrate_geodesic` per start;
    if any trajectory halts early the batch falls back to exactly that.
    """
    x0s, v0s = np.asarray(x0s, dtype=float), np.asarray(v0s, dtype=float)
    state = np.concatenate([x0s.T, v0s.T])
    h = t_end / steps
    rows = [state.copy()]
    try:
        for _ in range(steps):
            k1 = _batch_rhs(metric, state)
            k2 = _batch_rhs(metric, state + 0.5 * h * k1)
            k3 = _batch_rhs(metric, state + 0.5 * h * k2)
            k4 = _batch_rhs(metric, state + h * k3)
            nxt = state + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(nxt)) or not _speed_resolved(state[2:], nxt[2:]):
                raise FloatingPointError
            state = nxt
            if box is not None:
                x1a, x1b, x2a, x2b = box
                if not np.all((x1a <= state[0]) & (state[0] <= x1b) & (x2a <= state[1]) & (state[1] <= x2b)):
                    raise FloatingPointError
            rows.append(state.copy())
    except (FinslerError, FloatingPointError):
        return [integrate_geodesic(metric, x, v, t_end, steps, box) for x, v in zip(x0s, v0s)]
    t = np.arange(steps + 1) * h
    path = np.array(rows)  # [step, component, geodesic]
    traces = []
    for g in range(path.shape[2]):
        samples = np.column_stack([t, path[:, :, g]])
        traces.append(GeodesicTrace(samples, straightness(samples[:, 1:3]), "completed", float(t_end), int(steps)))
    return traces


def metric_along(metric: Metric, trace: GeodesicTrace) -> np.ndarray:
    """L(x(t), x'(t)) at every sample; constant along a geodesic."""
    s = trace.samples
    return np.asarray(metric.L(*jet_point(s[:, 1], s[:, 2], s[:, 3], s[:, 4], order=0)).coeffs[..., 0])


__all__ = [name for name in dir() if not name.startswith("_")]
