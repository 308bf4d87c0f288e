"""
System definitions: the line-oriented ``.system`` format, the shipped golden
systems, and the Darboux-chart verifiers.

File format (UTF-8, ``#`` starts a comment)::

    [system]       name = <text>, n = <int>, k = <int>, m = <int>
    [coordinates]  <name> : linear|angle
    [structure]    kind = bivector|symplectic, then W[i,j] = <expr> (upper triangle, 1-based)
    [integrals]    H<i> = <expr in the coordinates>
    [casimirs]     C<l> = <expr in x1..xk>
    [sampling]     <coord> in [<lo>, <hi>]
    [darboux]      <name> : action|angle|momentum|position = <expr in the coordinates>
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, ExpressionSyntaxError, ValidationError
from .expr import Const, Expression, Var, compile_expression, cosh, format_number, parse_expression, sinh, sqrt, substitute, to_text
from .flows import fit_linear, integrate_flow, invariant_drift
from .lie_poisson import lie_poisson_bivector, so3_algebra, so21_algebra
from .models import CoordinateKind, DarbouxChart, Role, SystemDefinition
from .poisson import PoissonStructure, SymplecticForm, bracket, hamiltonian_vector_field, pushforward_bivector

SECTIONS = ("system", "coordinates", "structure", "integrals", "casimirs", "sampling", "darboux")

_NUMBER = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"
_IDENT = r"[A-Za-z_][A-Za-z_0-9]*"

_section_re = re.compile(r"^\s*\[(?P<name>[a-z]+)\]\s*$")
_assign_re = re.compile(rf"^\s*(?P<key>{_IDENT})\s*=\s*(?P<val>.*?)\s*$")
_entry_re = re.compile(r"^\s*(?P<sym>W|Omega)\[\s*(?P<i>\d+)\s*,\s*(?P<j>\d+)\s*\]\s*=\s*(?P<val>.*?)\s*$")
_coord_re = re.compile(rf"^\s*(?P<name>{_IDENT})\s*:\s*(?P<kind>{_IDENT})\s*$")
_interval_re = re.compile(rf"^\s*(?P<name>{_IDENT})\s+in\s+\[\s*(?P<lo>{_NUMBER})\s*,\s*(?P<hi>{_NUMBER})\s*\]\s*$")
_darboux_re = re.compile(rf"^\s*(?P<name>{_IDENT})\s*:\s*(?P<role>{_IDENT})\s*=\s*(?P<val>.*?)\s*$")
_indexed_re = re.compile(r"^(?P<prefix>[HC])(?P<index>\d+)$")


def _strip_comment(line: str) -> str:
    cut = line.find("#")
    return line if cut < 0 else line[:cut]


def _syntax(message: str, line_no: int, line: str) -> ExpressionSyntaxError:
    column = len(line) - len(line.lstrip()) + 1
    return ExpressionSyntaxError(message, line_no, column)


def _expression(match: re.Match, line_no: int) -> Expression:
    text = match.group("val")
    if not text:
        raise ExpressionSyntaxError("missing expression", line_no, match.start("val") + 1)
    return parse_expression(text, line=line_no, column_offset=match.start("val"))


def _indexed(items: Dict[int, Expression], what: str) -> Tuple[Expression, ...]:
    if sorted(items) != list(range(1, len(items) + 1)):
        raise ValidationError(f"{what} must be numbered 1..{len(items)} without gaps")
    return tuple(items[i] for i in range(1, len(items) + 1))


def parse_system_file(text: str) -> SystemDefinition:
    """Parse and fully validate a ``.system`` document."""
    section: Optional[str] = None
    seen = set()
    header: Dict[str, str] = {}
    coords: List[str] = []
    kinds: List[CoordinateKind] = []
    structure_kind: Optional[str] = None
    entries: Dict[Tuple[int, int], Expression] = {}
    entry_symbols = set()
    integrals: Dict[int, Expression] = {}
    casimirs: Dict[int, Expression] = {}
    box: Dict[str, Tuple[float, float]] = {}
    darboux: List[Tuple[str, Role, Expression]] = []

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).rstrip()
        if not line.strip():
            continue
        m = _section_re.match(line)
        if m:
            section = m.group("name")
            if section not in SECTIONS:
                raise _syntax(f"unknown section [{section}]", line_no, line)
            if section in seen:
                raise ValidationError(f"section [{section}] appears twice (line {line_no})")
            seen.add(section)
            continue
        if section is None:
            raise _syntax("content before the first section header", line_no, line)

        if section == "system":
            m = _assign_re.match(line)
            if not m or m.group("key") not in ("name", "n", "k", "m"):
                raise _syntax("expected name = ..., n = ..., k = ... or m = ...", line_no, line)
            header[m.group("key")] = m.group("val")
        elif section == "coordinates":
            m = _coord_re.match(line)
            if not m:
                raise _syntax("expected '<name> : linear|angle'", line_no, line)
            try:
                kind = CoordinateKind(m.group("kind"))
            except ValueError:
                raise ExpressionSyntaxError(f"unknown coordinate kind '{m.group('kind')}'", line_no, m.start("kind") + 1) from None
            coords.append(m.group("name"))
            kinds.append(kind)
        elif section == "structure":
            m = _entry_re.match(line)
            if m:
                i, j = int(m.group("i")), int(m.group("j"))
                if not i < j:
                    raise ValidationError(f"line {line_no}: only upper-triangle entries (i < j) may be given")
                if (i, j) in entries:
                    raise ValidationError(f"line {line_no}: entry [{i},{j}] given twice")
                entries[(i, j)] = _expression(m, line_no)
                entry_symbols.add(m.group("sym"))
                continue
            m = _assign_re.match(line)
            if not m or m.group("key") != "kind":
                raise _syntax("expected 'kind = bivector|symplectic' or 'W[i,j] = <expression>'", line_no, line)
            if structure_kind is not None:
                raise ValidationError("exactly one structure must be given; found two kinds")
            structure_kind = m.group("val")
            if structure_kind not in ("bivector", "symplectic"):
                raise ExpressionSyntaxError(f"unknown structure kind '{structure_kind}'", line_no, m.start("val") + 1)
        elif section in ("integrals", "casimirs"):
            m = _assign_re.match(line)
            key = _indexed_re.match(m.group("key")) if m else None
            prefix = "H" if section == "integrals" else "C"
            if not key or key.group("prefix") != prefix:
                raise _syntax(f"expected '{prefix}<index> = <expression>'", line_no, line)
            target = integrals if section == "integrals" else casimirs
            index = int(key.group("index"))
            if index in target:
                raise ValidationError(f"line {line_no}: {prefix}{index} given twice")
            target[index] = _expression(m, line_no)
        elif section == "sampling":
            m = _interval_re.match(line)
            if not m:
                raise _syntax("expected '<coord> in [<lo>, <hi>]'", line_no, line)
            box[m.group("name")] = (float(m.group("lo")), float(m.group("hi")))
        elif section == "darboux":
            m = _darboux_re.match(line)
            if not m:
                raise _syntax("expected '<name> : action|angle|momentum|position = <expression>'", line_no, line)
            try:
                role = Role(m.group("role"))
            except ValueError:
                raise ExpressionSyntaxError(f"unknown role '{m.group('role')}'", line_no, m.start("role") + 1) from None
            darboux.append((m.group("name"), role, _expression(m, line_no)))

    for key in ("name", "n", "k", "m"):
        if key not in header:
            raise ValidationError(f"[system] is missing '{key}'")
    try:
        n, k, m_decl = (int(header[key]) for key in ("n", "k", "m"))
    except ValueError:
        raise ValidationError("n, k and m must be integers") from None
    if not coords:
        raise ValidationError("no coordinates declared")
    if structure_kind is None:
        raise ValidationError("exactly one structure must be given; found none")
    if len(entry_symbols) > 1 or (structure_kind == "bivector" and "Omega" in entry_symbols):
        raise ValidationError("exactly one structure must be given; found both bivector and symplectic entries")
    for i, j in entries:
        if j > len(coords):
            raise ValidationError(f"entry [{i},{j}] outside a {len(coords)}-dimensional chart")
    zero_based = {(i - 1, j - 1): e for (i, j), e in entries.items()}
    if structure_kind == "symplectic":
        if len(coords) % 2:
            raise ValidationError("a symplectic form needs an even-dimensional chart")
        structure = SymplecticForm.from_entries(coords, zero_based)
    else:
        structure = PoissonStructure.from_entries(coords, zero_based)

    chart = None
    if darboux:
        chart = DarbouxChart(
            names=tuple(d[0] for d in darboux),
            roles=tuple(d[1] for d in darboux),
            forward=tuple(d[2] for d in darboux),
        )
    return SystemDefinition(
        name=header["name"],
        n=n,
        k=k,
        m=m_decl,
        coords=tuple(coords),
        kinds=tuple(kinds),
        structure=structure,
        integrals=_indexed(integrals, "integrals"),
        casimirs=_indexed(casimirs, "casimirs"),
        box=box,
        darboux=chart,
    ).validate()


def serialize_system(sys: SystemDefinition) -> str:
    """Canonical text; ``parse_system_file`` of it serializes to the same text."""
    symplectic = isinstance(sys.structure, SymplecticForm)
    lines = [
        "[system]",
        f"name = {sys.name}",
        f"n = {sys.n}",
        f"k = {sys.k}",
        f"m = {sys.m}",
        "",
        "[coordinates]",
    ]
    lines += [f"{c} : {kind.value}" for c, kind in zip(sys.coords, sys.kinds)]
    lines += ["", "[structure]", f"kind = {'symplectic' if symplectic else 'bivector'}"]
    symbol = "Omega" if symplectic else "W"
    for (i, j) in sorted(sys.structure.upper):
        lines.append(f"{symbol}[{i + 1},{j + 1}] = {to_text(sys.structure.upper[(i, j)])}")
    lines += ["", "[integrals]"]
    lines += [f"H{i} = {to_text(h)}" for i, h in enumerate(sys.integrals, start=1)]
    if sys.casimirs:
        lines += ["", "[casimirs]"]
        lines += [f"C{i} = {to_text(c)}" for i, c in enumerate(sys.casimirs, start=1)]
    lines += ["", "[sampling]"]
    lines += [f"{c} in [{format_number(sys.box[c][0])}, {format_number(sys.box[c][1])}]" for c in sys.coords]
    if sys.darboux is not None:
        lines += ["", "[darboux]"]
        for name, role, e in zip(sys.darboux.names, sys.darboux.roles, sys.darboux.forward):
            lines.append(f"{name} : {role.value} = {to_text(e)}")
    return "\n".join(lines) + "\n"


def load_system(path) -> SystemDefinition:
    return parse_system_file(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# built-in systems


def _linear(coords: Sequence[str]) -> Tuple[CoordinateKind, ...]:
    return tuple(CoordinateKind.LINEAR for _ in coords)


def _coalgebra_casimir() -> Expression:
    x1, x2, x3 = Var("x1"), Var("x2"), Var("x3")
    return sqrt(x1 ** 2 + x2 ** 2 - x3 ** 2)


def builtin_so21() -> SystemDefinition:
    """The so(2,1) example on the symplectic chart (r, y, gamma, x1)."""
    coords = ("r", "y", "gamma", "x1")
    r, y, gamma, x1 = (Var(c) for c in coords)
    rho = sqrt(r ** 2 - x1 ** 2)
    return SystemDefinition(
        name="so21",
        n=2,
        k=3,
        m=1,
        coords=coords,
        kinds=_linear(coords),
        structure=PoissonStructure.canonical(coords, [("r", "y"), ("gamma", "x1")]),
        integrals=(x1, rho * cosh(gamma), rho * sinh(gamma)),
        casimirs=(_coalgebra_casimir(),),
        box={"r": (1.0, 3.0), "y": (-1.0, 1.0), "gamma": (-1.0, 1.0), "x1": (-0.5, 0.5)},
        darboux=DarbouxChart(
            names=("J", "phi", "p", "q"),
            roles=(Role.ACTION, Role.ANGLE, Role.MOMENTUM, Role.POSITION),
            forward=(r, y, x1, gamma),
        ),
    ).validate()


def builtin_so21_coalgebra() -> SystemDefinition:
    """The same example on the coalgebra chart (x1, x2, x3), a Poisson base chart."""
    algebra = so21_algebra()
    coords = algebra.basis
    return SystemDefinition(
        name="so21-coalgebra",
        n=2,
        k=3,
        m=1,
        coords=coords,
        kinds=_linear(coords),
        structure=lie_poisson_bivector(algebra),
        integrals=tuple(Var(c) for c in coords),
        casimirs=(_coalgebra_casimir(),),
        box={"x1": (-0.5, 0.5), "x2": (2.0, 3.0), "x3": (-1.0, 1.0)},
    ).validate()


def builtin_so3_coalgebra() -> SystemDefinition:
    algebra = so3_algebra()
    coords = algebra.basis
    x1, x2, x3 = (Var(c) for c in coords)
    return SystemDefinition(
        name="so3-coalgebra",
        n=2,
        k=3,
        m=1,
        coords=coords,
        kinds=_linear(coords),
        structure=lie_poisson_bivector(algebra),
        integrals=(x1, x2, x3),
        casimirs=(x1 ** 2 + x2 ** 2 + x3 ** 2,),
        box={"x1": (0.5, 1.5), "x2": (0.5, 1.5), "x3": (0.5, 1.5)},
    ).validate()


def _canonical_form(coords: Sequence[str]) -> SymplecticForm:
    # dp ^ dq for each consecutive (q, p) pair
    return SymplecticForm.from_entries(coords, {(i, i + 1): Const(-1.0) for i in range(0, len(coords), 2)})


def builtin_oscillator() -> SystemDefinition:
    coords = ("q", "p")
    q, p = Var("q"), Var("p")
    return SystemDefinition(
        name="oscillator",
        n=1,
        k=1,
        m=1,
        coords=coords,
        kinds=_linear(coords),
        structure=_canonical_form(coords),
        integrals=((q ** 2 + p ** 2) / 2,),
        casimirs=(Var("x1"),),
        box={"q": (0.5, 1.5), "p": (-0.5, 0.5)},
    ).validate()


def builtin_free_particle() -> SystemDefinition:
    coords = ("q", "p")
    return SystemDefinition(
        name="free-particle",
        n=1,
        k=1,
        m=1,
        coords=coords,
        kinds=_linear(coords),
        structure=_canonical_form(coords),
        integrals=(Var("p"),),
        casimirs=(Var("x1"),),
        box={"q": (-1.0, 1.0), "p": (0.5, 1.5)},
    ).validate()


def builtin_oscillator_free_particle() -> SystemDefinition:
    coords = ("q1", "p1", "q2", "p2")
    q1, p1, q2, p2 = (Var(c) for c in coords)
    return SystemDefinition(
        name="oscillator-free-particle",
        n=2,
        k=2,
        m=2,
        coords=coords,
        kinds=_linear(coords),
        structure=_canonical_form(coords),
        integrals=((q1 ** 2 + p1 ** 2) / 2, p2),
        casimirs=(Var("x1"), Var("x2")),
        box={"q1": (0.5, 1.5), "p1": (-0.5, 0.5), "q2": (-1.0, 1.0), "p2": (0.5, 1.5)},
    ).validate()


BUILTINS: Dict[str, Callable[[], SystemDefinition]] = {
    "so21": builtin_so21,
    "so21-coalgebra": builtin_so21_coalgebra,
    "so3-coalgebra": builtin_so3_coalgebra,
    "oscillator": builtin_oscillator,
    "free-particle": builtin_free_particle,
    "oscillator-free-particle": builtin_oscillator_free_particle,
}


def builtin(name: str) -> SystemDefinition:
    try:
        return BUILTINS[name]()
    except KeyError:
        raise ValidationError(f"unknown builtin '{name}'; choose from {', '.join(sorted(BUILTINS))}") from None


def resolve_system(builtin_name: Optional[str] = None, path: Optional[str] = None) -> SystemDefinition:
    if (builtin_name is None) == (path is None):
        raise ValidationError("give exactly one of a builtin name or a system file")
    if builtin_name is not None:
        return builtin(builtin_name)
    return load_system(path)


# ---------------------------------------------------------------------------
# Darboux verification


@dataclass
class DarbouxReport:
    tolerance: float
    max_deviation: float = 0.0
    worst_entry: Optional[Tuple[str, str]] = None
    per_point: List[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.per_point) and self.max_deviation < self.tolerance

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tolerance": self.tolerance,
            "max_deviation": self.max_deviation,
            "worst_entry": list(self.worst_entry) if self.worst_entry else None,
        }


def verify_darboux(sys: SystemDefinition, chart: DarbouxChart, points: Sequence[Sequence[float]], tolerance: float = 1e-9) -> DarbouxReport:
    """Push the bivector through ``chart`` and compare with the canonical one its roles imply."""
    chart.validate(sys.n, sys.m, sys.coords)
    target = chart.canonical_bivector()
    report = DarbouxReport(tolerance=tolerance)
    for point in points:
        W = pushforward_bivector(sys.bivector, chart.forward, point)
        delta = np.abs(W - target)
        deviation = float(np.max(delta))
        if report.worst_entry is None or deviation > report.max_deviation:
            a, b = np.unravel_index(int(np.argmax(delta)), delta.shape)
            report.worst_entry = (chart.names[a], chart.names[b])
            report.max_deviation = deviation
        report.per_point.append(deviation)
    return report


def hamiltonian_in_base(sys: SystemDefinition, Hfn: Expression) -> Expression:
    named = {f"C{i}": c for i, c in enumerate(sys.casimirs, start=1)}
    return sys.compose(substitute(Hfn, named))


def action_hamiltonian_check(
    sys: SystemDefinition,
    Hfn: Expression,
    points: Sequence[Sequence[float]],
    horizon: float = 10.0,
    tolerance: float = 1e-8,
    flow_tol: float = 1e-10,
    chart: Optional[DarbouxChart] = None,
) -> dict:
    """
    Flow ``Hfn o H`` (``Hfn`` in ``x1..xk``, ``C<l>`` allowed) and check that every
    ``H_i`` is conserved; in a Darboux chart actions, momenta and positions stay
    put while angles advance linearly.
    """
    chart = chart if chart is not None else sys.darboux
    H = hamiltonian_in_base(sys, Hfn)
    V = hamiltonian_vector_field(H, sys.bivector)
    worst_integral = 0.0
    worst_fixed = 0.0
    worst_linear = 0.0
    slopes: List[Dict[str, float]] = []
    for point in points:
        traj = integrate_flow(V, point, horizon, flow_tol)
        worst_integral = max([worst_integral, *invariant_drift(traj, sys.integrals)])
        if chart is None:
            continue
        point_slopes = {}
        for name, role, e in zip(chart.names, chart.roles, chart.forward):
            if role is Role.ANGLE:
                slope, _, residual = fit_linear(traj, e)
                worst_linear = max(worst_linear, residual)
                point_slopes[name] = slope
            else:
                worst_fixed = max([worst_fixed, *invariant_drift(traj, [e])])
        slopes.append(point_slopes)
    passed = len(points) > 0 and max(worst_integral, worst_fixed, worst_linear) < tolerance
    return {
        "hamiltonian": to_text(Hfn),
        "passed": passed,
        "tolerance": tolerance,
        "horizon": horizon,
        "max_integral_drift": worst_integral,
        "max_fixed_coordinate_drift": worst_fixed if chart is not None else None,
        "max_angle_residual": worst_linear if chart is not None else None,
        "angle_slopes": slopes,
    }


def casimir_action_check(
    sys: SystemDefinition,
    chart: DarbouxChart,
    points: Sequence[Sequence[float]],
    tolerance: float = 1e-9,
) -> dict:
    """Pulled-back Casimirs depend on the actions only: ``{C_l o H, u} = 0`` for non-angle chart functions ``u``."""
    brackets = [
        (f"C{l}", name, bracket(F, e, sys.bivector))
        for l, F in enumerate(sys.pulled_back_casimirs, start=1)
        for name, role, e in zip(chart.names, chart.roles, chart.forward)
        if role is not Role.ANGLE
    ]
    compiled = [(c, name, compile_expression(b, sys.coords)) for c, name, b in brackets]
    worst = 0.0
    checked = 0
    for point in points:
        try:
            values = [abs(fn(point)) for _, _, fn in compiled]
        except DomainError:
            continue
        checked += 1
        worst = max([worst, *values])
    return {"passed": checked > 0 and worst < tolerance, "tolerance": tolerance, "max_bracket": worst, "points": checked}
