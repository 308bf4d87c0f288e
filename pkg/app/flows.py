"""
Flows of vector fields on a chart: adaptive integration, conservation
monitoring, recurrence detection and a sampling classifier for invariant fibers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, List, Optional, Sequence, TextIO, Tuple

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, FixedPoint, FlowEscapedChart, StepUnderflow, ValidationError
from .events import log_event
from .expr import Expression, compile_expression
from .poisson import VectorField, is_regular

MIN_STEP = 1e-14
FIXED_POINT_SPEED = 1e-10
CLASSIFICATION_NOTE = "sampling heuristic: periodic directions found up to t_max, not a proof"

Rhs = Callable[[np.ndarray], np.ndarray]

# Dormand–Prince 5(4); the last row doubles as the 5th order weights (FSAL)
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_BT = {
    1: (1 / 5,),
    2: (3 / 40, 9 / 40),
    3: (44 / 45, -56 / 15, 32 / 9),
    4: (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    5: (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    6: (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
}
_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)
_E = tuple(b5 - b4 for b5, b4 in zip(_BT[6] + (0.0,), _B4))


@dataclass
class FlowTrajectory:
    coords: Tuple[str, ...]
    times: np.ndarray
    states: np.ndarray
    steps: int = 0
    rejected: int = 0
    max_error: float = 0.0
    escaped_at: Optional[float] = None

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def column(self, name: str) -> np.ndarray:
        return self.states[:, self.coords.index(name)]

    def stats(self) -> dict:
        return {
            "steps": self.steps,
            "rejected_steps": self.rejected,
            "max_local_error": self.max_error,
            "samples": int(len(self.times)),
            "escaped_at": self.escaped_at,
        }


def _guarded(rhs: Rhs) -> Rhs:
    def call(y: np.ndarray) -> np.ndarray:
        out = rhs(y)
        if not np.all(np.isfinite(out)):
            raise DomainError("vector field is not finite")
        return out

    return call


def integrate_compiled(
    rhs: Rhs,
    coords: Tuple[str, ...],
    x0: Sequence[float],
    t_end: float,
    tol: float,
    max_step: float,
    on_escape: str = "raise",
) -> FlowTrajectory:
    rhs = _guarded(rhs)
    y = np.array(x0, dtype=float)
    times = [0.0]
    states = [y.copy()]
    traj = FlowTrajectory(coords, np.array(times), np.array(states))
    if t_end == 0.0:
        return traj
    try:
        k1 = rhs(y)
    except DomainError as exc:
        raise FlowEscapedChart(f"field undefined at the initial point: {exc}", 0.0, y) from None

    speed = float(np.max(np.abs(k1))) if len(k1) else 0.0
    scale = max(1.0, float(np.max(np.abs(y)))) if len(y) else 1.0
    h = min(max_step, t_end, 0.01 * scale / speed if speed > 0 else t_end)
    t = 0.0

    def escape(message: str) -> FlowTrajectory:
        if on_escape == "stop":
            traj.times, traj.states = np.array(times), np.array(states)
            traj.escaped_at = t
            return traj
        raise FlowEscapedChart(message, t, y)

    while t < t_end:
        remaining = t_end - t
        if remaining < MIN_STEP:
            break
        h = min(h, remaining)
        try:
            k = [k1]
            for stage in range(1, 7):
                row = _BT[stage]
                yi = y + h * sum(a * kj for a, kj in zip(row, k) if a != 0.0)
                k.append(rhs(yi))
            y_new = yi
        except DomainError as exc:
            traj.rejected += 1
            h *= 0.25
            if h < MIN_STEP:
                return escape(f"trajectory left the chart near t={t:.17g}: {exc}")
            continue

        err_vec = h * sum(e * kj for e, kj in zip(_E, k) if e != 0.0)
        sc = tol + tol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.max(np.abs(err_vec) / sc)) if len(y) else 0.0

        if err <= 1.0:
            last = h == remaining
            t = t_end if last else t + h
            y = y_new
            k1 = k[6]
            times.append(t)
            states.append(y.copy())
            traj.steps += 1
            traj.max_error = max(traj.max_error, float(np.max(np.abs(err_vec))) if len(y) else 0.0)
            factor = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
        else:
            traj.rejected += 1
            factor = max(0.2, 0.9 * err ** -0.2)
        h = min(h * factor, max_step)
        if h < MIN_STEP and t < t_end:
            raise StepUnderflow(f"step size fell below {MIN_STEP:g} at t={t:.17g}", t)

    traj.times, traj.states = np.array(times), np.array(states)
    return traj


def require_on_chart(exprs: Sequence[Expression], coords: Sequence[str], x0: Sequence[float]) -> None:
    if not is_regular(exprs, coords, x0):
        where = ", ".join(f"{c}={float(v):.17g}" for c, v in zip(coords, x0))
        raise ValidationError(f"start point ({where}) lies off the chart: a field or integral is undefined there")


def integrate_flow(
    V: VectorField,
    x0: Sequence[float],
    t_end: float,
    tol: float = 1e-10,
    max_step: Optional[float] = None,
    on_escape: str = "raise",
) -> FlowTrajectory:
    """
    Adaptive Dormand–Prince 5(4) integration of ``V`` from ``x0`` over ``[0, t_end]``.

    ``max_step`` bounds the spacing of the returned samples (default ``0.01 * t_end``;
    pass ``math.inf`` for error-controlled steps only). With ``on_escape="stop"`` a
    trajectory that leaves the chart is returned up to the escape time instead of raising.
    """
    if tol <= 0:
        raise ValidationError("tol must be > 0")
    if t_end < 0:
        raise ValidationError("t_end must be >= 0")
    if len(x0) != V.dim:
        raise ValidationError(f"initial point needs {V.dim} coordinates, got {len(x0)}")
    if max_step is None:
        max_step = 0.01 * t_end if t_end > 0 else math.inf
    return integrate_compiled(V.compile(), V.coords, x0, t_end, tol, max_step, on_escape)


def invariant_drift(traj: FlowTrajectory, fns: Sequence[Expression]) -> List[float]:
    """``max_t |f(x(t)) - f(x(0))|`` per function."""
    drifts = []
    for f in fns:
        fc = compile_expression(f, traj.coords)
        base = None
        worst = 0.0
        for t, state in zip(traj.times, traj.states):
            try:
                value = fc(state)
            except DomainError as exc:
                raise DomainError(f"{f} undefined along the trajectory at t={t:.17g}: {exc}") from None
            if base is None:
                base = value
            worst = max(worst, abs(value - base))
        drifts.append(worst)
    return drifts


def fit_linear(traj: FlowTrajectory, fn: Expression) -> Tuple[float, float, float]:
    """Least-squares line through ``fn`` along the trajectory: ``(slope, intercept, max residual)``."""
    fc = compile_expression(fn, traj.coords)
    values = np.array([fc(s) for s in traj.states])
    if len(values) < 2:
        return 0.0, float(values[0]) if len(values) else 0.0, 0.0
    slope, intercept = np.polyfit(traj.times, values, 1)
    residual = float(np.max(np.abs(values - (slope * traj.times + intercept))))
    return float(slope), float(intercept), residual


def write_trajectory_csv(traj: FlowTrajectory, stream: TextIO) -> None:
    stream.write(",".join(("t",) + tuple(traj.coords)) + "\n")
    for t, state in zip(traj.times, traj.states):
        stream.write(",".join("%.17g" % v for v in (t, *state)) + "\n")


# ---------------------------------------------------------------------------
# recurrence


def _wrap(delta: np.ndarray, angle_mask: Optional[np.ndarray]) -> np.ndarray:
    if angle_mask is None or not np.any(angle_mask):
        return delta
    out = delta.copy()
    out[angle_mask] = (out[angle_mask] + math.pi) % (2 * math.pi) - math.pi
    return out


@dataclass
class DirectionEvidence:
    coefficients: Tuple[int, ...]
    period: Optional[float] = None
    recurrence_distance: Optional[float] = None
    closest_return: Optional[float] = None
    final_distance: Optional[float] = None
    monotone: Optional[bool] = None
    horizon: Optional[float] = None
    note: str = ""

    @property
    def periodic(self) -> bool:
        return self.period is not None

    def to_dict(self) -> dict:
        return {
            "coefficients": list(self.coefficients),
            "periodic": self.periodic,
            "period": self.period,
            "recurrence_distance": self.recurrence_distance,
            "closest_return": self.closest_return,
            "final_distance": self.final_distance,
            "monotone_escape": self.monotone,
            "horizon": self.horizon,
            "note": self.note,
        }


def recurrence_evidence(
    V: VectorField,
    x0: Sequence[float],
    t_max: float,
    eps: float,
    tol: float = 1e-10,
    angle_mask: Optional[np.ndarray] = None,
    coefficients: Tuple[int, ...] = (),
) -> DirectionEvidence:
    """
    Scan ``g(t) = <x(t) - x0, V(x(t))>`` for sign changes from negative to positive
    (local minima of the return distance), refine each with ``brentq`` and accept the
    first whose distance is below ``eps``.
    """
    x0 = np.asarray(x0, dtype=float)
    rhs = _guarded(V.compile())
    try:
        v0 = rhs(x0)
    except DomainError as exc:
        raise FlowEscapedChart(f"field undefined at the initial point: {exc}", 0.0, x0) from None
    if float(np.linalg.norm(v0)) <= FIXED_POINT_SPEED:
        raise FixedPoint(f"|V(x0)| = {np.linalg.norm(v0):.3g} is below {FIXED_POINT_SPEED:g}")

    traj = integrate_compiled(rhs, V.coords, x0, t_max, tol, 0.01 * t_max, on_escape="stop")
    evidence = DirectionEvidence(coefficients=coefficients, horizon=float(traj.times[-1]))
    if traj.escaped_at is not None:
        evidence.note = f"left the chart at t={traj.escaped_at:.17g}"

    deltas = np.array([_wrap(s - x0, angle_mask) for s in traj.states])
    distances = np.linalg.norm(deltas, axis=1)
    g = np.array([float(d @ rhs(s)) for d, s in zip(deltas, traj.states)])

    def g_after(start: int, s: float) -> float:
        state = traj.states[start]
        if s > 0:
            state = integrate_compiled(rhs, V.coords, state, s, tol, math.inf).final
        return float(_wrap(state - x0, angle_mask) @ rhs(state))

    def distance_after(start: int, s: float) -> float:
        state = traj.states[start]
        if s > 0:
            state = integrate_compiled(rhs, V.coords, state, s, tol, math.inf).final
        return float(np.linalg.norm(_wrap(state - x0, angle_mask)))

    closest = math.inf
    for i in range(2, len(traj.times)):
        if not (g[i - 1] < 0.0 <= g[i]):
            continue
        span = float(traj.times[i] - traj.times[i - 1])
        try:
            s = brentq(lambda s: g_after(i - 1, s), 0.0, span, xtol=1e-13) if g[i] > 0.0 else span
        except ValueError:
            s = span if distances[i] < distances[i - 1] else 0.0
        distance = distance_after(i - 1, s)
        closest = min(closest, distance)
        if distance < eps:
            evidence.period = float(traj.times[i - 1] + s)
            evidence.recurrence_distance = distance
            evidence.closest_return = distance
            return evidence

    evidence.closest_return = None if math.isinf(closest) else closest
    evidence.final_distance = float(distances[-1])
    evidence.monotone = bool(np.all(np.diff(distances[1:]) >= -eps))
    return evidence


def detect_period(
    V: VectorField,
    x0: Sequence[float],
    t_max: float = 100.0,
    eps: float = 1e-4,
    tol: float = 1e-10,
    angle_mask: Optional[np.ndarray] = None,
) -> Optional[float]:
    """Smallest return time below ``eps`` in ``(0, t_max]``, or ``None``."""
    return recurrence_evidence(V, x0, t_max, eps, tol, angle_mask).period


# ---------------------------------------------------------------------------
# classification


@dataclass
class TopologyReport:
    m: int
    r: int
    classification: str
    directions: List[DirectionEvidence] = field(default_factory=list)
    x0: Tuple[float, ...] = ()
    t_max: float = 0.0
    eps: float = 0.0
    note: str = CLASSIFICATION_NOTE

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "r": self.r,
            "classification": self.classification,
            "x0": list(self.x0),
            "t_max": self.t_max,
            "eps": self.eps,
            "directions": [d.to_dict() for d in self.directions],
            "note": self.note,
        }


def classification_label(m: int, r: int) -> str:
    parts = []
    if m - r > 0:
        parts.append(f"R^{m - r}")
    if r > 0:
        parts.append(f"T^{r}")
    return " x ".join(parts) if parts else "R^0"


def integer_directions(m: int, bound: int) -> List[Tuple[int, ...]]:
    """Primitive coefficient vectors in ``[-bound, bound]^m`` with a positive leading entry; unit vectors first."""
    units = [tuple(1 if j == i else 0 for j in range(m)) for i in range(m)]
    others = []
    for c in product(range(-bound, bound + 1), repeat=m):
        nonzero = [v for v in c if v != 0]
        if not nonzero or nonzero[0] < 0 or c in units:
            continue
        if math.gcd(*(abs(v) for v in nonzero)) != 1:
            continue
        others.append(c)
    others.sort(key=lambda c: (sum(abs(v) for v in c), c))
    return units + others


def classify_fiber(
    sys,
    x0: Sequence[float],
    t_max: float = 100.0,
    eps: float = 1e-4,
    bound: int = 2,
    tol: float = 1e-10,
    verbose: bool = False,
) -> TopologyReport:
    """
    Estimate ``r`` in ``R^(m-r) x T^r`` for the fiber through ``x0`` from the
    Casimir pullback fields and their small integer combinations.
    """
    from .integrability import casimir_pullback_fields

    fields = casimir_pullback_fields(sys)
    require_on_chart([*sys.integrals, *(c for f in fields for c in f.components)], sys.coords, x0)
    m = len(fields)
    mask = sys.angle_mask
    report = TopologyReport(m=m, r=0, classification=classification_label(m, 0), x0=tuple(float(v) for v in x0), t_max=t_max, eps=eps)
    periodic: List[Tuple[int, ...]] = []
    for coeffs in integer_directions(m, bound):
        V = fields[0].scaled(coeffs[0]) if coeffs[0] else None
        for c, fld in zip(coeffs[1:], fields[1:]):
            if c:
                V = fld.scaled(c) if V is None else V + fld.scaled(c)
        try:
            evidence = recurrence_evidence(V, x0, t_max, eps, tol, mask, coeffs)
        except FixedPoint as exc:
            evidence = DirectionEvidence(coefficients=coeffs, note=f"fixed point: {exc}")
        report.directions.append(evidence)
        log_event("classify.direction", {"coefficients": list(coeffs), "period": evidence.period}, verbose)
        if evidence.periodic:
            periodic.append(coeffs)
            r = int(np.linalg.matrix_rank(np.array(periodic, dtype=float)))
            if r == m:
                break
    report.r = int(np.linalg.matrix_rank(np.array(periodic, dtype=float))) if periodic else 0
    report.classification = classification_label(m, report.r)
    return report
