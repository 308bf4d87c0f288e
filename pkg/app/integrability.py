"""
Sampled checks of the integrability hypotheses for a SystemDefinition.

Every check works on a seeded sample of the system's box. Points where a formula
is undefined are excised and listed as warnings, never silently dropped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import null_space

from .config import RunConfig
from .errors import DegenerateForm, DomainError, FlowEscapedChart, MissingCasimirs, StepUnderflow
from .events import log_event
from .expr import Expression, Var, compile_expression, differentiate, is_zero
from .flows import integrate_compiled
from .lie_poisson import generic_rank
from .models import SystemDefinition
from .poisson import (
    VectorField,
    bracket,
    hamiltonian_vector_field,
    jacobiator,
    RANK_RTOL,
    numerical_rank,
    omega_at,
    zero_field,
)

ASSUMPTIONS = (
    "fibers of H are connected and mutually diffeomorphic; only the pointwise submersion property is sampled",
    "completeness of the Hamiltonian vector fields is advisory: flows are integrated to a finite horizon",
    "the topology classification is a sampling heuristic, not a proof",
)

PASS = "pass"
FAIL = "fail"
NOT_APPLICABLE = "not_applicable"
ADVISORY = "advisory"


@dataclass
class CheckResult:
    name: str
    status: str
    details: Dict[str, object] = field(default_factory=dict)
    mandatory: bool = True

    @property
    def ok(self) -> bool:
        return self.status in (PASS, NOT_APPLICABLE) or not self.mandatory

    def to_dict(self) -> dict:
        return {"status": self.status, "mandatory": self.mandatory, **self.details}


def sample_points(sys: SystemDefinition, count: int, seed: int) -> np.ndarray:
    """Uniform points in the sampling box from a seeded generator, in generation order."""
    rng = np.random.default_rng(seed)
    lo, hi = sys.box_bounds()
    return rng.uniform(lo, hi, size=(count, sys.dim))


class _Compiled:
    """Compiled formulas of a system, built once per run."""

    def __init__(self, sys: SystemDefinition):
        self.sys = sys
        coords = sys.coords
        self.integrals = [compile_expression(h, coords) for h in sys.integrals]
        self.jacobian_rows = [[compile_expression(differentiate(h, x), coords) for x in coords] for h in sys.integrals]
        self.brackets = {
            (i, j): compile_expression(bracket(sys.integrals[i], sys.integrals[j], sys.bivector), coords)
            for i, j in combinations(range(sys.k), 2)
        }

    def values(self, point) -> np.ndarray:
        return np.array([h(point) for h in self.integrals])

    def jacobian(self, point) -> np.ndarray:
        return np.array([[d(point) for d in row] for row in self.jacobian_rows])

    def structure_matrix(self, point) -> np.ndarray:
        s = np.zeros((self.sys.k, self.sys.k))
        for (i, j), fn in self.brackets.items():
            v = fn(point)
            s[i, j] = v
            s[j, i] = -v
        return s


def regular_points(sys: SystemDefinition, points: np.ndarray, warnings: List[str]) -> List[int]:
    """Indices of points where the structure, the integrals and the pulled-back Casimirs are all defined."""
    formulas = list(sys.bivector.upper.values()) + list(sys.integrals) + list(sys.pulled_back_casimirs)
    compiled = [compile_expression(f, sys.coords) for f in formulas]
    keep = []
    for index, point in enumerate(points):
        try:
            for fn in compiled:
                fn(point)
        except DomainError as exc:
            warnings.append(f"point {index} excised: {exc}")
            continue
        keep.append(index)
    return keep


# ---------------------------------------------------------------------------
# submersion


def check_submersion(sys: SystemDefinition, points: Sequence[Sequence[float]]) -> CheckResult:
    compiled = _Compiled(sys)
    ranks = []
    excised = []
    for index, point in enumerate(points):
        try:
            ranks.append(numerical_rank(compiled.jacobian(point)))
        except DomainError:
            excised.append(index)
    passed = bool(ranks) and all(r == sys.k for r in ranks)
    return CheckResult(
        "submersion",
        PASS if passed else FAIL,
        {"k": sys.k, "ranks": ranks, "min_rank": min(ranks, default=0), "excised_points": excised},
    )


# ---------------------------------------------------------------------------
# structure matrix, closure, corank


def structure_matrix(sys: SystemDefinition, point: Sequence[float]) -> np.ndarray:
    """``s[i][j] = {H_i, H_j}`` at ``point``."""
    return _Compiled(sys).structure_matrix(point)


@dataclass
class StructureMatrixReport:
    k: int
    points: List[List[float]] = field(default_factory=list)
    matrices: List[np.ndarray] = field(default_factory=list)
    ranks: List[int] = field(default_factory=list)
    generic_rank: int = 0
    m: int = 0
    degenerate: List[int] = field(default_factory=list)
    above_generic: List[int] = field(default_factory=list)
    max_antisymmetry: float = 0.0
    closure_drift: Optional[float] = None
    per_point_drift: List[float] = field(default_factory=list)

    def to_dict(self, include_matrices: bool = False) -> dict:
        out = {
            "k": self.k,
            "generic_rank": self.generic_rank,
            "m": self.m,
            "ranks": list(self.ranks),
            "degenerate_points": list(self.degenerate),
            "closure_drift": self.closure_drift,
        }
        if include_matrices:
            out["points"] = self.points
            out["matrices"] = [m.tolist() for m in self.matrices]
        return out


def structure_matrix_report(sys: SystemDefinition, points: Sequence[Sequence[float]]) -> StructureMatrixReport:
    compiled = _Compiled(sys)
    report = StructureMatrixReport(k=sys.k)
    for point in points:
        s = compiled.structure_matrix(point)
        report.points.append([float(v) for v in point])
        report.matrices.append(s)
        report.ranks.append(numerical_rank(s))
        report.max_antisymmetry = max(report.max_antisymmetry, float(np.max(np.abs(s + s.T))) if s.size else 0.0)
    rank = generic_rank(report.ranks)
    report.generic_rank = rank if rank is not None else 0
    report.m = sys.k - report.generic_rank
    report.degenerate = [i for i, r in enumerate(report.ranks) if r < report.generic_rank]
    report.above_generic = [i for i, r in enumerate(report.ranks) if r > report.generic_rank]
    return report


def corank(report: StructureMatrixReport, n: int) -> Tuple[int, bool]:
    """``(m, passed)``: ``m = k - generic rank``; degenerate points are excluded, not failed."""
    passed = bool(report.ranks) and not report.above_generic and report.m == 2 * n - report.k
    return report.m, passed


def casimir_kernel_residual(sys: SystemDefinition, report: StructureMatrixReport) -> Optional[float]:
    """
    Largest relative distance of ``dC_l(H(x))`` from the kernel of the structure
    matrix over the regular points. ``None`` when there is nothing to compare.
    """
    if not sys.casimirs or not report.matrices:
        return None
    base = sys.coalgebra_coords
    grads = [[compile_expression(differentiate(c, x), base) for x in base] for c in sys.casimirs]
    integrals = [compile_expression(h, sys.coords) for h in sys.integrals]
    degenerate = set(report.degenerate)
    worst = 0.0
    for index, (point, s) in enumerate(zip(report.points, report.matrices)):
        if index in degenerate:
            continue
        kernel = null_space(s, rcond=RANK_RTOL)
        try:
            h = [fn(point) for fn in integrals]
            rows = [np.array([d(h) for d in row]) for row in grads]
        except DomainError:
            continue
        for g in rows:
            norm = float(np.linalg.norm(g))
            if norm < 1e-12:
                continue
            projected = kernel @ (kernel.T @ g) if kernel.size else np.zeros_like(g)
            worst = max(worst, float(np.linalg.norm(g - projected)) / norm)
    return worst


def casimir_pullback_fields(sys: SystemDefinition) -> List[VectorField]:
    """``v_l = sum_i (dC_l/dx_i o H) X_{H_i}``, assembled by the chain rule."""
    if not sys.casimirs:
        if sys.m == 0:
            return []
        raise MissingCasimirs(f"system '{sys.name}' declares m = {sys.m} but gives no casimirs")
    hamiltonian = [hamiltonian_vector_field(h, sys.bivector) for h in sys.integrals]
    fields = []
    for c in sys.casimirs:
        total = zero_field(sys.coords)
        for x, field_i in zip(sys.coalgebra_coords, hamiltonian):
            coeff = sys.compose(differentiate(c, x))
            if is_zero(coeff) or field_i.is_zero():
                continue
            total = total + field_i.scaled(coeff)
        fields.append(total)
    return fields


def _fiber_samples(rhs_list, coords, point, times, tol):
    """States reached from ``point`` along each field at each time of ``times`` (ascending)."""
    for rhs in rhs_list:
        state = np.asarray(point, dtype=float)
        previous = 0.0
        for t in sorted(times):
            state = integrate_compiled(rhs, coords, state, t - previous, tol, math.inf).final
            previous = t
            yield state


def check_closure(
    sys: SystemDefinition,
    points: Sequence[Sequence[float]],
    times: Sequence[float] = (0.5, 1.0, 2.0, 5.0),
    tolerance: float = 1e-6,
    flow_tol: float = 1e-10,
    warnings: Optional[List[str]] = None,
) -> CheckResult:
    """
    Sample each fiber by flowing the Casimir pullback fields and report the
    largest variation of ``s_ij`` along it.
    """
    warnings = warnings if warnings is not None else []
    compiled = _Compiled(sys)
    fields = [f.compile() for f in casimir_pullback_fields(sys)]
    drifts = []
    excised = []
    for index, point in enumerate(points):
        try:
            s0 = compiled.structure_matrix(point)
            worst = 0.0
            for state in _fiber_samples(fields, sys.coords, point, times, flow_tol):
                worst = max(worst, float(np.max(np.abs(compiled.structure_matrix(state) - s0))) if s0.size else 0.0)
        except (FlowEscapedChart, StepUnderflow, DomainError) as exc:
            warnings.append(f"closure: fiber through point {index} left the chart ({exc})")
            excised.append(index)
            continue
        drifts.append(worst)
    max_drift = max(drifts, default=0.0)
    passed = bool(drifts) and max_drift < tolerance
    return CheckResult(
        "closure",
        PASS if passed else FAIL,
        {"max_drift": max_drift, "tolerance": tolerance, "times": list(times), "per_point_drift": drifts, "excised_points": excised},
    )


# ---------------------------------------------------------------------------
# fiber geometry


def check_isotropy(sys: SystemDefinition, points: Sequence[Sequence[float]], tolerance: float = 1e-8) -> CheckResult:
    """
    ``max |Omega(v_l, v_m)|`` over pairs, plus fiber tangency ``max |dH_i(v_l)|``.
    Needs a symplectic chart; on a Poisson base chart the check does not apply.
    """
    if not sys.is_symplectic_chart:
        return CheckResult("isotropy", NOT_APPLICABLE, {"reason": "chart is a Poisson base chart, not symplectic"})
    compiled = _Compiled(sys)
    fields = [f.compile() for f in casimir_pullback_fields(sys)]
    max_pairing = 0.0
    max_tangency = 0.0
    excised = []
    for index, point in enumerate(points):
        try:
            omega = omega_at(sys.structure, point)
            vectors = [fld(point) for fld in fields]
            J = compiled.jacobian(point)
        except (DomainError, DegenerateForm):
            excised.append(index)
            continue
        for u, v in combinations(vectors, 2):
            max_pairing = max(max_pairing, abs(float(u @ omega @ v)))
        for v in vectors:
            max_tangency = max(max_tangency, float(np.max(np.abs(J @ v))) if J.size else 0.0)
    checked = len(points) - len(excised)
    passed = checked > 0 and max_pairing < tolerance and max_tangency < tolerance
    return CheckResult(
        "isotropy",
        PASS if passed else FAIL,
        {"max_pairing": max_pairing, "max_tangency": max_tangency, "tolerance": tolerance, "excised_points": excised},
    )


def coinduced_bracket_check(
    sys: SystemDefinition,
    pairs: Sequence[Tuple[Expression, Expression]],
    points: Sequence[Sequence[float]],
    times: Sequence[float] = (0.5, 1.0, 2.0, 5.0),
    flow_tol: float = 1e-10,
) -> dict:
    """
    For base functions ``f, g`` in ``x1..xk``: ``{f o H, g o H}`` must be constant
    along fibers and equal the coinduced bracket ``sum s_ij d_i f d_j g`` at ``H(z)``.
    """
    compiled = _Compiled(sys)
    fields = [f.compile() for f in casimir_pullback_fields(sys)]
    base = sys.coalgebra_coords
    results = []
    for f, g in pairs:
        total = compile_expression(bracket(sys.compose(f), sys.compose(g), sys.bivector), sys.coords)
        df = [compile_expression(differentiate(f, x), base) for x in base]
        dg = [compile_expression(differentiate(g, x), base) for x in base]
        variation = 0.0
        defect = 0.0
        for point in points:
            value = total(point)
            h = compiled.values(point)
            s = compiled.structure_matrix(point)
            expected = float(np.array([d(h) for d in df]) @ s @ np.array([d(h) for d in dg]))
            defect = max(defect, abs(value - expected))
            for state in _fiber_samples(fields, sys.coords, point, times, flow_tol):
                variation = max(variation, abs(total(state) - value))
        results.append({"f": str(f), "g": str(g), "fiber_variation": variation, "morphism_defect": defect})
    return {"pairs": results, "max_variation": max((r["fiber_variation"] for r in results), default=0.0)}


def check_poisson(sys: SystemDefinition, points: Sequence[Sequence[float]], tolerance: float = 1e-8) -> CheckResult:
    """Jacobi identity on all coordinate triples."""
    P = sys.bivector
    cyclic = [
        compile_expression(jacobiator(P, Var(a), Var(b), Var(c)), sys.coords)
        for a, b, c in combinations(sys.coords, 3)
    ]
    residuals = []
    for point in points:
        try:
            residuals.append(max((abs(fn(point)) for fn in cyclic), default=0.0))
        except DomainError:
            continue
    max_residual = max(residuals, default=0.0)
    passed = bool(residuals) and max_residual < tolerance
    return CheckResult("poisson", PASS if passed else FAIL, {"max_jacobi_residual": max_residual, "tolerance": tolerance})


def check_partial_integrability(sys: SystemDefinition, points: Sequence[Sequence[float]], tolerance: float = 1e-8) -> CheckResult:
    """
    The pulled-back Casimirs ``F_l = C_l o H`` must be independent, in involution,
    and span a regular rank-``m`` distribution.
    """
    if not sys.is_symplectic_chart:
        return CheckResult("partial_integrability", NOT_APPLICABLE, {"reason": "chart is a Poisson base chart, not symplectic"})
    if sys.m == 0:
        return CheckResult("partial_integrability", NOT_APPLICABLE, {"reason": "m = 0"})
    F = sys.pulled_back_casimirs
    grads = [[compile_expression(differentiate(f, x), sys.coords) for x in sys.coords] for f in F]
    involution = [compile_expression(bracket(a, b, sys.bivector), sys.coords) for a, b in combinations(F, 2)]
    fields = [f.compile() for f in casimir_pullback_fields(sys)]
    independence = []
    distribution = []
    max_involution = 0.0
    for point in points:
        try:
            J = np.array([[d(point) for d in row] for row in grads])
            V = np.array([fld(point) for fld in fields])
            bracket_values = [abs(fn(point)) for fn in involution]
        except DomainError:
            continue
        independence.append(numerical_rank(J))
        distribution.append(numerical_rank(V))
        max_involution = max([max_involution, *bracket_values])
    passed = (
        bool(independence)
        and all(r == sys.m for r in independence)
        and all(r == sys.m for r in distribution)
        and max_involution < tolerance
    )
    return CheckResult(
        "partial_integrability",
        PASS if passed else FAIL,
        {
            "m": sys.m,
            "independence_ranks": sorted(set(independence)),
            "distribution_ranks": sorted(set(distribution)),
            "max_involution": max_involution,
            "tolerance": tolerance,
        },
    )


def check_completeness(
    sys: SystemDefinition,
    points: Sequence[Sequence[float]],
    horizon: float = 5.0,
    flow_tol: float = 1e-10,
    sample: int = 5,
) -> CheckResult:
    """Advisory: flows of every ``X_{H_i}``, forwards and backwards, up to ``horizon``."""
    escapes = []
    fields = [hamiltonian_vector_field(h, sys.bivector) for h in sys.integrals]
    for i, fld in enumerate(fields, start=1):
        forward = fld.compile()
        backward = fld.scaled(-1).compile()
        for index, point in enumerate(points[:sample]):
            for direction, rhs in (("forward", forward), ("backward", backward)):
                try:
                    traj = integrate_compiled(rhs, sys.coords, point, horizon, flow_tol, 0.01 * horizon, on_escape="stop")
                except (FlowEscapedChart, StepUnderflow) as exc:
                    escapes.append({"integral": i, "point": index, "direction": direction, "time": exc.time})
                    continue
                if traj.escaped_at is not None:
                    escapes.append({"integral": i, "point": index, "direction": direction, "time": traj.escaped_at})
    verdict = "no incompleteness detected" if not escapes else "flows left the chart before the horizon"
    return CheckResult(
        "completeness",
        ADVISORY,
        {"horizon": horizon, "verdict": verdict, "escapes": escapes},
        mandatory=False,
    )


# ---------------------------------------------------------------------------
# report


@dataclass
class HypothesisReport:
    system: str
    n: int
    k: int
    declared_m: int
    seed: int
    points: int
    checks: Dict[str, CheckResult] = field(default_factory=dict)
    structure: Optional[StructureMatrixReport] = None
    warnings: List[str] = field(default_factory=list)
    assumptions: Tuple[str, ...] = ASSUMPTIONS

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.ok for c in self.checks.values())

    @property
    def m(self) -> Optional[int]:
        return self.structure.m if self.structure is not None else None

    def to_dict(self) -> dict:
        return {
            "system": self.system,
            "passed": self.passed,
            "n": self.n,
            "k": self.k,
            "m": self.m,
            "declared_m": self.declared_m,
            "seed": self.seed,
            "points": self.points,
            "checks": {name: c.to_dict() for name, c in self.checks.items()},
            "structure_matrix": self.structure.to_dict() if self.structure is not None else None,
            "warnings": list(self.warnings),
            "assumptions": list(self.assumptions),
        }


def run_hypotheses(sys: SystemDefinition, config: Optional[RunConfig] = None) -> HypothesisReport:
    config = (config or RunConfig()).validate()
    report = HypothesisReport(sys.name, sys.n, sys.k, sys.m, config.seed, config.points)
    sampled = sample_points(sys, config.points, config.seed)
    keep = regular_points(sys, sampled, report.warnings)
    points = sampled[keep]

    def record(result: CheckResult) -> None:
        report.checks[result.name] = result
        log_event("verify.check.done", {"system": sys.name, "check": result.name, "status": result.status}, config.verbose)

    record(check_poisson(sys, points, config.tol_jacobi))
    record(check_submersion(sys, points))

    structure = structure_matrix_report(sys, points)
    m, corank_ok = corank(structure, sys.n)
    for i in structure.degenerate:
        report.warnings.append(
            f"point {keep[i]} excised from the corank check: structure matrix rank {structure.ranks[i]} below generic {structure.generic_rank}"
        )
    report.structure = structure
    record(
        CheckResult(
            "corank",
            PASS if corank_ok else FAIL,
            {
                "m": m,
                "expected": 2 * sys.n - sys.k,
                "generic_rank": structure.generic_rank,
                "points_above_generic": [keep[i] for i in structure.above_generic],
                "casimir_kernel_residual": casimir_kernel_residual(sys, structure),
            },
        )
    )

    try:
        closure = check_closure(sys, points, config.fiber_times, config.tol_closure, config.tol_flow, report.warnings)
        structure.closure_drift = closure.details["max_drift"]
        structure.per_point_drift = list(closure.details["per_point_drift"])
        record(closure)
        record(check_isotropy(sys, points, config.tol_isotropy))
        record(check_partial_integrability(sys, points, config.tol_isotropy))
    except MissingCasimirs as exc:
        for name in ("closure", "isotropy", "partial_integrability"):
            record(CheckResult(name, FAIL, {"reason": str(exc)}))

    record(check_completeness(sys, points, config.completeness_horizon, config.tol_flow))
    if report.warnings:
        log_event("verify.warnings", {"system": sys.name, "count": len(report.warnings)}, config.verbose)
    return report
