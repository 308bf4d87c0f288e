from __future__ import annotations

import argparse
import io
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import RunConfig, config_from_env
from .errors import CHART_ERRORS, INPUT_ERRORS, DomainError, FlowEscapedChart, StepUnderflow, ValidationError
from .events import log_event
from .expr import Expression, evaluate, fold_constants, parse_expression, substitute, to_text, variables
from .flows import classify_fiber, integrate_flow, invariant_drift, require_on_chart, write_trajectory_csv
from .integrability import casimir_pullback_fields, run_hypotheses, sample_points
from .models import SystemDefinition
from .poisson import VectorField, bracket, hamiltonian_vector_field, zero_field
from .reports import dumps_report
from .systems import action_hamiltonian_check, casimir_action_check, hamiltonian_in_base, resolve_system, verify_darboux

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_INPUT = 2
BRACKET_SAMPLES = 5


def _config(args) -> RunConfig:
    base = config_from_env()
    return base.with_overrides(
        system=args.system,
        builtin=args.builtin,
        seed=args.seed,
        points=args.points,
        tol_closure=args.tol_closure,
        tol_isotropy=args.tol_isotropy,
        tol_flow=args.tol_flow,
        t_max=args.t_max,
        eps=args.eps,
        combination_bound=getattr(args, "bound", None),
        out=args.out,
        verbose=args.verbose or None,
    ).validate()


def _system(config: RunConfig) -> SystemDefinition:
    return resolve_system(config.builtin, config.system)


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _parse_x0(system: SystemDefinition, raw: Optional[str]) -> np.ndarray:
    if raw is None:
        lo, hi = system.box_bounds()
        return (lo + hi) / 2.0
    try:
        values = [float(v) for v in raw.split(",")]
    except ValueError:
        raise ValidationError(f"--x0 must be a comma-separated list of numbers, got {raw!r}") from None
    if len(values) != system.dim:
        raise ValidationError(f"--x0 needs {system.dim} values ({', '.join(system.coords)}), got {len(values)}")
    return np.array(values)


def resolve_expression(system: SystemDefinition, text: str) -> Expression:
    """Parse ``text``; ``H<i>`` and ``C<l>`` stand for integrals and pulled-back Casimirs."""
    expr = parse_expression(text)
    named = {name: system.resolve_name(name) for name in variables(expr) if name not in system.coords}
    return substitute(expr, named) if named else expr


def select_field(system: SystemDefinition, selector: str) -> VectorField:
    kind, _, arg = selector.partition(":")
    if kind == "zero":
        return zero_field(system.coords)
    if kind == "hamiltonian" and arg:
        return hamiltonian_vector_field(hamiltonian_in_base(system, parse_expression(arg)), system.bivector)
    if kind in ("casimir", "integral") and arg.isdigit():
        index = int(arg)
        pool = casimir_pullback_fields(system) if kind == "casimir" else system.integrals
        if not 1 <= index <= len(pool):
            raise ValidationError(f"{kind} index {index} outside 1..{len(pool)}")
        if kind == "casimir":
            return pool[index - 1]
        return hamiltonian_vector_field(pool[index - 1], system.bivector)
    raise ValidationError(f"unknown field selector {selector!r}; use casimir:<l>, integral:<i>, hamiltonian:<expr> or zero")


def cmd_verify(args) -> int:
    config = _config(args)
    system = _system(config)
    log_event("verify.start", {"system": system.name, "seed": config.seed, "points": config.points}, config.verbose)
    report = run_hypotheses(system, config)
    _emit(dumps_report(report), config.out)
    log_event("verify.done", {"system": system.name, "passed": report.passed}, config.verbose)
    return EXIT_PASS if report.passed else EXIT_FAIL


def cmd_bracket(args) -> int:
    config = _config(args)
    system = _system(config)
    f = resolve_expression(system, args.f)
    g = resolve_expression(system, args.g)
    result = fold_constants(bracket(f, g, system.bivector))
    lines = [to_text(result)]
    for point in sample_points(system, BRACKET_SAMPLES, config.seed):
        where = ", ".join(f"{c}={'%.17g' % v}" for c, v in zip(system.coords, point))
        try:
            value = "%.17g" % evaluate(result, dict(zip(system.coords, point)))
        except DomainError:
            value = "undefined"
        lines.append(f"{where}: {value}")
    _emit("\n".join(lines) + "\n", config.out)
    return EXIT_PASS


def cmd_flow(args) -> int:
    config = _config(args)
    system = _system(config)
    field = select_field(system, args.field)
    x0 = _parse_x0(system, args.x0)
    require_on_chart([*field.components, *system.integrals], system.coords, x0)
    try:
        traj = integrate_flow(field, x0, args.t_end, config.tol_flow)
    except (FlowEscapedChart, StepUnderflow) as exc:
        log_event("flow.escaped", {"system": system.name, "field": args.field, "time": exc.time}, config.verbose)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    drift = invariant_drift(traj, system.integrals)
    summary = {
        "system": system.name,
        "field": args.field,
        "t_end": args.t_end,
        "tolerance": config.tol_flow,
        "drift": {f"H{i}": d for i, d in enumerate(drift, start=1)},
        "integrator": traj.stats(),
    }
    if args.format == "json":
        document = dict(summary, coords=list(traj.coords), times=traj.times, states=traj.states)
        _emit(dumps_report(document), config.out)
        return EXIT_PASS
    buffer = io.StringIO()
    write_trajectory_csv(traj, buffer)
    _emit(buffer.getvalue(), config.out)
    # stdout carries the CSV unless it went to a file
    print(dumps_report(summary), end="", file=sys.stdout if config.out else sys.stderr)
    return EXIT_PASS


def cmd_classify(args) -> int:
    config = _config(args)
    system = _system(config)
    x0 = _parse_x0(system, args.x0)
    report = classify_fiber(system, x0, config.t_max, config.eps, config.combination_bound, config.tol_flow, config.verbose)
    document = {"system": system.name, **report.to_dict()}
    _emit(dumps_report(document), config.out)
    return EXIT_PASS


def cmd_darboux(args) -> int:
    config = _config(args)
    system = _system(config)
    if system.darboux is None:
        raise ValidationError(f"system '{system.name}' declares no [darboux] chart")
    points = sample_points(system, config.points, config.seed)
    hamiltonian = resolve_hamiltonian(system, args.hamiltonian)
    darboux = verify_darboux(system, system.darboux, points)
    actions = casimir_action_check(system, system.darboux, points)
    motion = action_hamiltonian_check(
        system,
        hamiltonian,
        points[: args.flows],
        horizon=args.t_end,
        tolerance=config.tol_closure,
        flow_tol=config.tol_flow,
    )
    passed = darboux.passed and actions["passed"] and motion["passed"]
    document = {
        "system": system.name,
        "passed": passed,
        "darboux": darboux.to_dict(),
        "casimirs_depend_on_actions": actions,
        "equations_of_motion": motion,
    }
    _emit(dumps_report(document), config.out)
    return EXIT_PASS if passed else EXIT_FAIL


def resolve_hamiltonian(system: SystemDefinition, text: str) -> Expression:
    expr = parse_expression(text)
    allowed = set(system.coalgebra_coords) | {f"C{i}" for i in range(1, len(system.casimirs) + 1)}
    unknown = sorted(variables(expr) - allowed)
    if unknown:
        raise ValidationError(f"--hamiltonian may only use {', '.join(sorted(allowed))}; found {', '.join(unknown)}")
    return expr


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    source = common.add_mutually_exclusive_group(required=True)
    source.add_argument("--system", metavar="PATH", help="system definition file")
    source.add_argument("--builtin", metavar="NAME", help="built-in system name")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--points", type=int, default=None)
    common.add_argument("--tol-closure", type=float, default=None)
    common.add_argument("--tol-isotropy", type=float, default=None)
    common.add_argument("--tol-flow", type=float, default=None)
    common.add_argument("--t-max", type=float, default=None)
    common.add_argument("--eps", type=float, default=None)
    common.add_argument("--out", metavar="PATH", default=None)
    common.add_argument("--verbose", action="store_true")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Sampled checks of noncommutative integrability hypotheses")
    common = _common()
    sub = parser.add_subparsers(dest="command", required=True)

    verify = sub.add_parser("verify", parents=[common], help="Run every hypothesis check and write a JSON report")
    verify.set_defaults(func=cmd_verify)

    br = sub.add_parser("bracket", parents=[common], help="Poisson bracket of two expressions")
    br.add_argument("f")
    br.add_argument("g")
    br.set_defaults(func=cmd_bracket)

    flow = sub.add_parser("flow", parents=[common], help="Integrate a vector field and export the trajectory")
    flow.add_argument("--field", default="casimir:1", help="casimir:<l> | integral:<i> | hamiltonian:<expr> | zero")
    flow.add_argument("--x0", default=None, help="comma-separated start point (default: box centre)")
    flow.add_argument("--t-end", type=float, default=10.0)
    flow.add_argument("--format", choices=("json", "csv"), default="csv")
    flow.set_defaults(func=cmd_flow)

    classify = sub.add_parser("classify", parents=[common], help="Classify the fiber through a point")
    classify.add_argument("--x0", default=None)
    classify.add_argument("--bound", type=int, default=None, help="integer combination bound (default 2)")
    classify.set_defaults(func=cmd_classify)

    darboux = sub.add_parser("darboux", parents=[common], help="Verify the declared Darboux chart")
    darboux.add_argument("--hamiltonian", default="C1", help="Hamiltonian in x1..xk (C<l> allowed)")
    darboux.add_argument("--t-end", type=float, default=10.0)
    darboux.add_argument("--flows", type=int, default=3, help="number of sampled points to flow from")
    darboux.set_defaults(func=cmd_darboux)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except CHART_ERRORS as exc:
        print(f"error: off the chart: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
