from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import UnboundVariable, ValidationError
from .expr import Expression, Var, substitute, variables
from .poisson import PoissonStructure, SymplecticForm

Structure = Union[PoissonStructure, SymplecticForm]
Box = Dict[str, Tuple[float, float]]


class CoordinateKind(enum.Enum):
    LINEAR = "linear"
    ANGLE = "angle"


class Role(enum.Enum):
    ACTION = "action"
    ANGLE = "angle"
    MOMENTUM = "momentum"
    POSITION = "position"


@dataclass(frozen=True, eq=False)
class DarbouxChart:
    """New coordinates as expressions in the system chart, each tagged with its role."""

    names: Tuple[str, ...]
    roles: Tuple[Role, ...]
    forward: Tuple[Expression, ...]

    def indices(self, role: Role) -> List[int]:
        return [i for i, r in enumerate(self.roles) if r is role]

    def canonical_bivector(self) -> np.ndarray:
        """``W^{J_l y^l} = 1`` and ``W^{q^A p_A} = 1`` paired in declaration order; zero elsewhere."""
        dim = len(self.names)
        W = np.zeros((dim, dim))
        pairs = list(zip(self.indices(Role.ACTION), self.indices(Role.ANGLE)))
        pairs += list(zip(self.indices(Role.POSITION), self.indices(Role.MOMENTUM)))
        for a, b in pairs:
            W[a, b] = 1.0
            W[b, a] = -1.0
        return W

    def validate(self, n: int, m: int, coords: Sequence[str]) -> None:
        if len(self.names) != 2 * n:
            raise ValidationError(f"darboux chart needs {2 * n} coordinates, got {len(self.names)}")
        if len(self.roles) != len(self.names) or len(self.forward) != len(self.names):
            raise ValidationError("darboux chart needs one role and one expression per coordinate")
        expected = {Role.ACTION: m, Role.ANGLE: m, Role.MOMENTUM: n - m, Role.POSITION: n - m}
        for role, count in expected.items():
            found = len(self.indices(role))
            if found != count:
                raise ValidationError(f"darboux chart needs {count} {role.value} coordinate(s), got {found}")
        known = set(coords)
        for e in self.forward:
            for name in variables(e):
                if name not in known:
                    raise ValidationError(f"darboux expression uses unknown coordinate '{name}'")


@dataclass(frozen=True, eq=False)
class SystemDefinition:
    """
    A chart of dimension ``2n`` (or ``k`` for a Poisson base chart), one structure,
    integrals ``H_1..H_k`` and optional coalgebra Casimirs in ``x1..xk``.
    """

    name: str
    n: int
    k: int
    m: int
    coords: Tuple[str, ...]
    kinds: Tuple[CoordinateKind, ...]
    structure: Structure
    integrals: Tuple[Expression, ...]
    casimirs: Tuple[Expression, ...] = ()
    box: Box = field(default_factory=dict)
    darboux: Optional[DarbouxChart] = None

    @property
    def dim(self) -> int:
        return len(self.coords)

    @property
    def is_symplectic_chart(self) -> bool:
        return self.dim == 2 * self.n

    @property
    def coalgebra_coords(self) -> Tuple[str, ...]:
        return tuple(f"x{i}" for i in range(1, self.k + 1))

    @property
    def angle_mask(self) -> np.ndarray:
        return np.array([kind is CoordinateKind.ANGLE for kind in self.kinds])

    @cached_property
    def bivector(self) -> PoissonStructure:
        if isinstance(self.structure, SymplecticForm):
            return self.structure.to_bivector()
        return self.structure

    def compose(self, expr: Expression) -> Expression:
        """Rewrite an expression in ``x1..xk`` as a function on the chart (``f`` to ``f o H``)."""
        return substitute(expr, dict(zip(self.coalgebra_coords, self.integrals)))

    @cached_property
    def pulled_back_casimirs(self) -> Tuple[Expression, ...]:
        return tuple(self.compose(c) for c in self.casimirs)

    def resolve_name(self, name: str) -> Expression:
        """``H<i>`` and ``C<l>`` name integrals and Casimirs; anything else is a coordinate."""
        if len(name) > 1 and name[0] in "HC" and name[1:].isdigit():
            index = int(name[1:])
            pool = self.integrals if name[0] == "H" else self.pulled_back_casimirs
            if 1 <= index <= len(pool):
                return pool[index - 1]
        if name in self.coords:
            return Var(name)
        raise UnboundVariable(name)

    def box_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        lo = np.array([self.box[c][0] for c in self.coords], dtype=float)
        hi = np.array([self.box[c][1] for c in self.coords], dtype=float)
        return lo, hi

    def validate(self) -> "SystemDefinition":
        if self.n < 1 or self.k < 1 or self.m < 0:
            raise ValidationError("n and k must be positive and m non-negative")
        if self.k > 2 * self.n:
            raise ValidationError(f"k = {self.k} exceeds 2n = {2 * self.n}")
        if len(set(self.coords)) != len(self.coords):
            raise ValidationError("duplicate coordinate names")
        if len(self.kinds) != self.dim:
            raise ValidationError("every coordinate needs a kind")
        if tuple(self.structure.coords) != tuple(self.coords):
            raise ValidationError("structure is defined on a different chart")
        if isinstance(self.structure, SymplecticForm):
            if self.dim != 2 * self.n:
                raise ValidationError(f"symplectic form needs a chart of dimension 2n = {2 * self.n}, got {self.dim}")
        elif self.dim not in (2 * self.n, self.k):
            raise ValidationError(f"chart dimension {self.dim} is neither 2n = {2 * self.n} nor k = {self.k}")
        if len(self.integrals) != self.k:
            raise ValidationError(f"declared k = {self.k} but {len(self.integrals)} integrals given")
        if self.casimirs and len(self.casimirs) != self.m:
            raise ValidationError(f"declared m = {self.m} but {len(self.casimirs)} casimirs given")
        try:
            self.structure.check_variables()
        except UnboundVariable as exc:
            raise ValidationError(f"structure uses unknown coordinate '{exc.name}'") from None
        known = set(self.coords)
        for i, h in enumerate(self.integrals, start=1):
            for name in variables(h):
                if name not in known:
                    raise ValidationError(f"H{i} uses unknown coordinate '{name}'")
        reserved = set(self.coalgebra_coords)
        for i, c in enumerate(self.casimirs, start=1):
            for name in variables(c):
                if name not in reserved:
                    raise ValidationError(f"C{i} may only use {', '.join(self.coalgebra_coords)}; found '{name}'")
        missing = [c for c in self.coords if c not in self.box]
        if missing:
            raise ValidationError(f"sampling box missing coordinate(s): {', '.join(missing)}")
        for c, (lo, hi) in self.box.items():
            if c not in known:
                raise ValidationError(f"sampling box names unknown coordinate '{c}'")
            if not lo < hi:
                raise ValidationError(f"empty sampling interval for '{c}'")
        if self.darboux is not None:
            if not self.is_symplectic_chart:
                raise ValidationError("a darboux chart needs a 2n-dimensional system chart")
            self.darboux.validate(self.n, self.m, self.coords)
        return self
