from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, Optional, Tuple

from .errors import ValidationError

REPO_ROOT = Path(__file__).resolve().parents[1]
DEFAULT_SYSTEMS_DIR = REPO_ROOT / "data" / "systems"


@dataclass(frozen=True)
class RunConfig:
    """Everything a checker run depends on; identical configs give identical reports."""

    system: Optional[str] = None
    builtin: Optional[str] = None
    seed: int = 0
    points: int = 50
    tol_closure: float = 1e-6
    tol_isotropy: float = 1e-8
    tol_flow: float = 1e-10
    tol_jacobi: float = 1e-8
    t_max: float = 100.0
    eps: float = 1e-4
    fiber_times: Tuple[float, ...] = (0.5, 1.0, 2.0, 5.0)
    combination_bound: int = 2
    completeness_horizon: float = 5.0
    out: Optional[str] = None
    verbose: bool = False
    systems_dir: str = field(default=str(DEFAULT_SYSTEMS_DIR))

    def validate(self) -> "RunConfig":
        if self.points < 1:
            raise ValidationError("points must be >= 1")
        if self.seed < 0:
            raise ValidationError("seed must be an unsigned integer")
        for name in ("tol_closure", "tol_isotropy", "tol_flow", "tol_jacobi", "t_max", "eps", "completeness_horizon"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be > 0")
        if not self.fiber_times or any(t <= 0 for t in self.fiber_times):
            raise ValidationError("fiber_times must be a non-empty list of positive times")
        if self.combination_bound < 1:
            raise ValidationError("combination_bound must be >= 1")
        return self

    def with_overrides(self, **overrides) -> "RunConfig":
        known = {f.name for f in fields(self)}
        return replace(self, **{k: v for k, v in overrides.items() if k in known and v is not None})


_ENV_OVERRIDES = (
    ("APP_SEED", "seed", int),
    ("APP_POINTS", "points", int),
    ("APP_T_MAX", "t_max", float),
    ("APP_EPS", "eps", float),
    ("APP_SYSTEMS_DIR", "systems_dir", str),
)


def config_from_env(environ: Optional[Mapping[str, str]] = None, base: Optional[RunConfig] = None) -> RunConfig:
    environ = os.environ if environ is None else environ
    overrides = {}
    for env_name, attr, cast in _ENV_OVERRIDES:
        raw = environ.get(env_name)
        if raw is None or raw == "":
            continue
        try:
            overrides[attr] = cast(raw)
        except ValueError:
            raise ValidationError(f"{env_name} has an invalid value: {raw!r}") from None
    return (base or RunConfig()).with_overrides(**overrides)
