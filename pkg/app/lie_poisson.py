"""Lie–Poisson structures on coalgebra charts built from structure constants."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, IndexOutOfRange, InvalidStructureConstants
from .expr import ZERO, Const, Expression, Var, evaluate, fold_constants
from .poisson import PoissonStructure, VectorField, bracket, numerical_rank

STRUCTURE_TOL = 1e-12
MAX_ALGEBRA_DIM = 16


def _jacobi_sums(c: np.ndarray) -> np.ndarray:
    return (
        np.einsum("ijh,hlm->ijlm", c, c)
        + np.einsum("jlh,him->ijlm", c, c)
        + np.einsum("lih,hjm->ijlm", c, c)
    )


@dataclass(frozen=True, eq=False)
class LieAlgebra:
    """
    Structure constants ``c[i][j][h]`` (``c_ij^h``), zero-based in storage.

    Basis names double as the coalgebra coordinate names.
    """

    name: str
    basis: Tuple[str, ...]
    constants: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.asarray(self.constants, dtype=float)
        k = len(self.basis)
        if c.shape != (k, k, k):
            raise InvalidStructureConstants(f"expected a {k}x{k}x{k} array, got {c.shape}")
        if k > MAX_ALGEBRA_DIM:
            raise InvalidStructureConstants(f"algebras above dimension {MAX_ALGEBRA_DIM} are not supported")
        object.__setattr__(self, "constants", c)
        asym = float(np.max(np.abs(c + c.transpose(1, 0, 2)))) if k else 0.0
        if asym > STRUCTURE_TOL:
            raise InvalidStructureConstants(f"structure constants are not antisymmetric (defect {asym:.3g})")
        defect = jacobi_defect(self)
        if defect > STRUCTURE_TOL:
            raise InvalidStructureConstants(f"structure constants violate the Jacobi identity (defect {defect:.3g})")

    @property
    def dim(self) -> int:
        return len(self.basis)

    @classmethod
    def from_brackets(cls, name: str, basis: Sequence[str], table: Iterable[Tuple[int, int, int, float]]) -> "LieAlgebra":
        """Build from 1-based rows ``(i, j, h, value)`` meaning ``c_ij^h = value``; ``c_ji^h`` is filled in."""
        k = len(basis)
        c = np.zeros((k, k, k))
        for i, j, h, value in table:
            c[i - 1, j - 1, h - 1] = value
            c[j - 1, i - 1, h - 1] = -value
        return cls(name, tuple(basis), c)


def jacobi_defect(A: LieAlgebra) -> float:
    if A.dim == 0:
        return 0.0
    return float(np.max(np.abs(_jacobi_sums(A.constants))))


def coalgebra_coords(k: int) -> Tuple[str, ...]:
    return tuple(f"x{i}" for i in range(1, k + 1))


def so21_algebra() -> LieAlgebra:
    # {x1,x2} = -x3, {x2,x3} = x1, {x3,x1} = x2
    return LieAlgebra.from_brackets("so(2,1)", coalgebra_coords(3), [(1, 2, 3, -1.0), (2, 3, 1, 1.0), (3, 1, 2, 1.0)])


def so3_algebra() -> LieAlgebra:
    return LieAlgebra.from_brackets("so(3)", coalgebra_coords(3), [(1, 2, 3, 1.0), (2, 3, 1, 1.0), (3, 1, 2, 1.0)])


def abelian_algebra(k: int) -> LieAlgebra:
    return LieAlgebra(f"R^{k}", coalgebra_coords(k), np.zeros((k, k, k)))


def _linear_form(coefficients: np.ndarray, basis: Sequence[str]) -> Expression:
    total: Expression = ZERO
    for value, name in zip(coefficients, basis):
        if value != 0.0:
            total = total + Const(float(value)) * Var(name)
    return fold_constants(total)


def lie_poisson_bivector(A: LieAlgebra) -> PoissonStructure:
    """``W^{ij} = sum_h c_ij^h x_h`` on the coalgebra chart."""
    entries = {}
    for i in range(A.dim):
        for j in range(i + 1, A.dim):
            w = _linear_form(A.constants[i, j], A.basis)
            entries[(i, j)] = w
    return PoissonStructure.from_entries(A.basis, entries)


def coadjoint_action(A: LieAlgebra, i: int) -> VectorField:
    """Field of the ``i``-th basis element (1-based): component ``j`` is ``sum_h c_ij^h x_h``."""
    if not 1 <= i <= A.dim:
        raise IndexOutOfRange(f"basis index {i} outside 1..{A.dim}")
    row = A.constants[i - 1]
    return VectorField(A.basis, tuple(_linear_form(row[j], A.basis) for j in range(A.dim)))


@dataclass
class CasimirReport:
    casimir: str
    tolerance: float
    max_residual: float = 0.0
    per_point: List[float] = field(default_factory=list)
    excised: List[int] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.per_point) and self.max_residual < self.tolerance

    def to_dict(self) -> dict:
        return {
            "casimir": self.casimir,
            "passed": self.passed,
            "tolerance": self.tolerance,
            "max_residual": self.max_residual,
            "excised_points": list(self.excised),
        }


def verify_casimir(C: Expression, P: PoissonStructure, points: Sequence[Sequence[float]], tolerance: float = 1e-9) -> CasimirReport:
    """Max over points and coordinates of ``|{C, x_j}|``; off-domain points are excised."""
    brackets = [bracket(C, Var(x), P) for x in P.coords]
    report = CasimirReport(casimir=str(C), tolerance=tolerance)
    for index, point in enumerate(points):
        values = dict(zip(P.coords, point))
        try:
            residual = max((abs(evaluate(b, values)) for b in brackets), default=0.0)
        except DomainError:
            report.excised.append(index)
            continue
        report.per_point.append(residual)
    report.max_residual = max(report.per_point, default=0.0)
    return report


def generic_rank(ranks: Sequence[int]) -> Optional[int]:
    """Most frequent rank; ties go to the larger rank."""
    if not ranks:
        return None
    counts = Counter(ranks)
    return max(counts, key=lambda r: (counts[r], r))


def coadjoint_orbit_dimension(A: LieAlgebra, point: Sequence[float]) -> int:
    return numerical_rank(lie_poisson_bivector(A).evaluate_at(point))


def generic_corank(P: PoissonStructure, points: Sequence[Sequence[float]]) -> int:
    """
    Corank of ``W`` at generic sampled points.

    For a Lie–Poisson bivector this stands in for the rank of the algebra.
    """
    ranks = []
    for point in points:
        try:
            ranks.append(numerical_rank(P.evaluate_at(point)))
        except DomainError:
            continue
    rank = generic_rank(ranks)
    return P.dim - (rank if rank is not None else 0)
