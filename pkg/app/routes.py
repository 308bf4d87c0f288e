from __future__ import annotations

import re
from pathlib import Path
from typing import Any, Dict

import numpy as np
from flask import Blueprint, abort, current_app, jsonify, request

from .config import RunConfig
from .errors import CHART_ERRORS, INPUT_ERRORS, DomainError, ValidationError
from .events import log_info
from .expr import evaluate, fold_constants, parse_expression, substitute, to_text, variables
from .flows import classify_fiber
from .integrability import run_hypotheses, sample_points
from .models import SystemDefinition
from .poisson import bracket
from .reports import dumps_report
from .systems import BUILTINS, builtin, load_system, parse_system_file, serialize_system

api_bp = Blueprint("api", __name__, url_prefix="/api")
BRACKET_SAMPLES = 5
_system_name_re = re.compile(r"^[A-Za-z0-9_-]+$")


def _report_response(document: Any, status: int = 200):
    return current_app.response_class(dumps_report(document), status=status, mimetype="application/json")


def _payload() -> Dict[str, Any]:
    data = request.get_json(force=True, silent=False)
    if not isinstance(data, dict):
        raise ValidationError("request body must be a JSON object")
    return data


def _run_config(data: Dict[str, Any]) -> RunConfig:
    cfg = current_app.config
    base = RunConfig(
        seed=cfg["SEED"],
        points=cfg["POINTS"],
        t_max=cfg["T_MAX"],
        eps=cfg["EPS"],
        systems_dir=cfg["SYSTEMS_DIR"],
    )
    try:
        overrides = {
            "seed": None if data.get("seed") is None else int(data["seed"]),
            "points": None if data.get("points") is None else int(data["points"]),
            "t_max": None if data.get("t_max") is None else float(data["t_max"]),
            "eps": None if data.get("eps") is None else float(data["eps"]),
        }
    except (TypeError, ValueError):
        raise ValidationError("seed and points must be integers; t_max and eps must be numbers") from None
    return base.with_overrides(**overrides).validate()


def _system_from(data: Dict[str, Any]) -> SystemDefinition:
    name = data.get("builtin")
    text = data.get("system")
    if (name is None) == (text is None):
        raise ValidationError("give exactly one of 'builtin' or 'system'")
    if name is not None:
        if not isinstance(name, str) or name not in BUILTINS:
            abort(404)
        return builtin(name)
    return parse_system_file(str(text))


def _expression(system: SystemDefinition, text: Any):
    if not isinstance(text, str) or not text.strip():
        raise ValidationError("'f' and 'g' must be non-empty expression strings")
    expr = parse_expression(text)
    named = {name: system.resolve_name(name) for name in variables(expr) if name not in system.coords}
    return substitute(expr, named) if named else expr


def input_error(exc):
    return jsonify({"error": str(exc)}), 400


for _error in INPUT_ERRORS:
    api_bp.register_error_handler(_error, input_error)


def off_chart_error(exc):
    return jsonify({"error": f"off the chart: {exc}"}), 400


for _error in CHART_ERRORS:
    api_bp.register_error_handler(_error, off_chart_error)


@api_bp.errorhandler(404)
def not_found(_exc):
    return jsonify({"error": "Not found"}), 404


@api_bp.get("/health")
def health():
    return jsonify({"ok": True})


@api_bp.get("/builtins")
def list_builtins():
    return jsonify({"items": sorted(BUILTINS)})


@api_bp.get("/systems/<name>")
def get_system(name: str):
    if name in BUILTINS:
        system = builtin(name)
    else:
        path = Path(current_app.config["SYSTEMS_DIR"]) / f"{name}.system"
        if not _system_name_re.match(name) or not path.is_file():
            abort(404)
        system = load_system(path)
    return current_app.response_class(serialize_system(system), mimetype="text/plain")


@api_bp.post("/verify")
def verify():
    data = _payload()
    config = _run_config(data)
    system = _system_from(data)
    report = run_hypotheses(system, config)
    log_info(
        current_app.logger,
        "Hypotheses verified",
        extra={"name": system.name, "passed": report.passed, "seed": config.seed, "points": config.points},
    )
    return _report_response(report)


@api_bp.post("/bracket")
def poisson_bracket():
    data = _payload()
    config = _run_config(data)
    system = _system_from(data)
    result = fold_constants(bracket(_expression(system, data.get("f")), _expression(system, data.get("g")), system.bivector))
    samples = []
    for point in sample_points(system, BRACKET_SAMPLES, config.seed):
        try:
            value = evaluate(result, dict(zip(system.coords, point)))
        except DomainError:
            value = None
        samples.append({"point": dict(zip(system.coords, point)), "value": value})
    return _report_response({"expression": to_text(result), "samples": samples})


@api_bp.post("/classify")
def classify():
    data = _payload()
    config = _run_config(data)
    system = _system_from(data)
    raw = data.get("x0")
    if raw is None:
        lo, hi = system.box_bounds()
        x0 = (lo + hi) / 2.0
    else:
        try:
            x0 = np.array([float(v) for v in raw])
        except (TypeError, ValueError):
            raise ValidationError("'x0' must be a list of numbers") from None
        if x0.shape != (system.dim,):
            raise ValidationError(f"'x0' needs {system.dim} values ({', '.join(system.coords)})")
    bound = data.get("bound", config.combination_bound)
    if not isinstance(bound, int) or bound < 1:
        raise ValidationError("'bound' must be a positive integer")
    report = classify_fiber(system, x0, config.t_max, config.eps, bound, config.tol_flow)
    log_info(current_app.logger, "Fiber classified", extra={"name": system.name, "classification": report.classification})
    return _report_response({"system": system.name, **report.to_dict()})
