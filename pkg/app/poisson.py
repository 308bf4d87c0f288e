"""
Poisson and symplectic structures on a single coordinate chart.

Sign conventions (fixed for the whole package):

* a wedge term ``a * d_i ^ d_j`` contributes ``W[i][j] = a`` and ``W[j][i] = -a``;
* ``{f, g} = sum_ij W[i][j] * d_i f * d_j g``;
* the Hamiltonian vector field of ``H`` contracts ``dH`` into the first slot,
  ``X_H[j] = sum_i W[i][j] * d_i H``, so ``X_H(f) = {H, f}``;
* a symplectic form maps to its bivector through ``W = -inverse(Omega)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np

from .errors import DegenerateForm, DomainError, SingularChart, UnboundVariable, ValidationError
from .expr import (
    ZERO,
    Binary,
    Const,
    Expression,
    compile_expression,
    differentiate,
    evaluate,
    fold_constants,
    is_zero,
    variables,
)

DEGENERATE_DET = 1e-12
RANK_RTOL = 1e-9

Entries = Dict[Tuple[int, int], Expression]


def _store_upper(dim: int, entries: Mapping[Tuple[int, int], Expression]) -> Entries:
    upper: Entries = {}
    for (i, j), value in entries.items():
        if not (0 <= i < dim and 0 <= j < dim):
            raise ValidationError(f"entry ({i + 1},{j + 1}) outside a {dim}-dimensional chart")
        if i == j:
            if not is_zero(fold_constants(value)):
                raise ValidationError(f"diagonal entry ({i + 1},{i + 1}) must vanish")
            continue
        value = fold_constants(value)
        if i > j:
            i, j = j, i
            value = fold_constants(-value)
        if is_zero(value):
            continue
        upper[(i, j)] = value
    return upper


class _Antisymmetric:
    coords: Tuple[str, ...]
    upper: Entries

    @property
    def dim(self) -> int:
        return len(self.coords)

    def entry(self, i: int, j: int) -> Expression:
        if i == j:
            return ZERO
        if i < j:
            return self.upper.get((i, j), ZERO)
        value = self.upper.get((j, i))
        return fold_constants(-value) if value is not None else ZERO

    def matrix(self) -> List[List[Expression]]:
        return [[self.entry(i, j) for j in range(self.dim)] for i in range(self.dim)]

    def check_variables(self) -> None:
        known = set(self.coords)
        for value in self.upper.values():
            for name in variables(value):
                if name not in known:
                    raise UnboundVariable(name)

    def evaluate_at(self, point: Sequence[float]) -> np.ndarray:
        values = dict(zip(self.coords, point))
        out = np.zeros((self.dim, self.dim))
        for (i, j), expr in self.upper.items():
            v = evaluate(expr, values)
            out[i, j] = v
            out[j, i] = -v
        return out


@dataclass(frozen=True, eq=False)
class PoissonStructure(_Antisymmetric):
    """Bivector ``W`` stored as its strict upper triangle."""

    coords: Tuple[str, ...]
    upper: Entries = field(default_factory=dict)

    @classmethod
    def from_entries(cls, coords: Sequence[str], entries: Mapping[Tuple[int, int], Expression]) -> "PoissonStructure":
        coords = tuple(coords)
        return cls(coords, _store_upper(len(coords), entries))

    @classmethod
    def from_wedges(cls, coords: Sequence[str], wedges: Iterable[Tuple[Expression, str, str]]) -> "PoissonStructure":
        """Build from terms ``a * d_u ^ d_v`` given as ``(a, u, v)``."""
        coords = tuple(coords)
        index = {c: i for i, c in enumerate(coords)}
        entries: Entries = {}
        for coeff, u, v in wedges:
            if u not in index or v not in index:
                raise ValidationError(f"wedge term names an unknown coordinate: {u}, {v}")
            i, j = index[u], index[v]
            if i > j:
                i, j, coeff = j, i, -coeff
            previous = entries.get((i, j))
            entries[(i, j)] = coeff if previous is None else previous + coeff
        return cls.from_entries(coords, entries)

    @classmethod
    def canonical(cls, coords: Sequence[str], pairs: Iterable[Tuple[str, str]]) -> "PoissonStructure":
        return cls.from_wedges(coords, [(Const(1.0), u, v) for u, v in pairs])


@dataclass(frozen=True, eq=False)
class SymplecticForm(_Antisymmetric):
    """2-form ``Omega`` stored as its strict upper triangle."""

    coords: Tuple[str, ...]
    upper: Entries = field(default_factory=dict)

    @classmethod
    def from_entries(cls, coords: Sequence[str], entries: Mapping[Tuple[int, int], Expression]) -> "SymplecticForm":
        coords = tuple(coords)
        if len(coords) % 2:
            raise ValidationError("a symplectic form needs an even-dimensional chart")
        return cls(coords, _store_upper(len(coords), entries))

    def to_bivector(self) -> PoissonStructure:
        """Symbolic ``W = -inverse(Omega)`` by cofactors (charts up to dimension 6)."""
        if self.dim > 6:
            raise ValidationError("symbolic inversion is limited to charts of dimension <= 6")
        m = self.matrix()
        det = _determinant(m)
        if isinstance(det, Const) and abs(det.value) < DEGENERATE_DET:
            raise DegenerateForm("symplectic form is degenerate everywhere")
        entries: Entries = {}
        for i, j in combinations(range(self.dim), 2):
            # inverse[i][j] = cofactor[j][i] / det
            cof = _cofactor(m, j, i)
            if is_zero(cof):
                continue
            entries[(i, j)] = fold_constants(-(cof / det))
        return PoissonStructure.from_entries(self.coords, entries)


@dataclass(frozen=True, eq=False)
class VectorField:
    coords: Tuple[str, ...]
    components: Tuple[Expression, ...]

    def __post_init__(self):
        if len(self.components) != len(self.coords):
            raise ValidationError("vector field needs one component per coordinate")

    @property
    def dim(self) -> int:
        return len(self.coords)

    def is_zero(self) -> bool:
        return all(is_zero(c) for c in self.components)

    def compile(self) -> Callable[[Sequence[float]], np.ndarray]:
        fns = [compile_expression(c, self.coords) for c in self.components]
        return lambda state: np.array([fn(state) for fn in fns], dtype=float)

    def evaluate_at(self, point: Sequence[float]) -> np.ndarray:
        return self.compile()(point)

    def apply(self, f: Expression) -> Expression:
        """Directional derivative ``V(f)``."""
        terms = [c * differentiate(f, x) for c, x in zip(self.components, self.coords) if not is_zero(c)]
        return _sum(terms)

    def scaled(self, factor: Expression) -> "VectorField":
        return VectorField(self.coords, tuple(fold_constants(factor * c) for c in self.components))

    def __add__(self, other: "VectorField") -> "VectorField":
        return VectorField(self.coords, tuple(fold_constants(a + b) for a, b in zip(self.components, other.components)))


def zero_field(coords: Sequence[str]) -> VectorField:
    coords = tuple(coords)
    return VectorField(coords, tuple(ZERO for _ in coords))


def _sum(terms: Sequence[Expression]) -> Expression:
    total: Expression = ZERO
    for t in terms:
        total = Binary("add", total, t)
    return fold_constants(total)


def _determinant(m: List[List[Expression]]) -> Expression:
    n = len(m)
    if n == 1:
        return m[0][0]
    if n == 2:
        return fold_constants(m[0][0] * m[1][1] - m[0][1] * m[1][0])
    terms = []
    for j in range(n):
        if is_zero(m[0][j]):
            continue
        minor = [row[:j] + row[j + 1:] for row in m[1:]]
        term = m[0][j] * _determinant(minor)
        terms.append(term if j % 2 == 0 else -term)
    return _sum(terms)


def _cofactor(m: List[List[Expression]], i: int, j: int) -> Expression:
    minor = [row[:j] + row[j + 1:] for k, row in enumerate(m) if k != i]
    det = _determinant(minor) if minor else Const(1.0)
    return fold_constants(det if (i + j) % 2 == 0 else -det)


def _require_bound(P: _Antisymmetric, *exprs: Expression) -> None:
    known = set(P.coords)
    for e in exprs:
        for name in variables(e):
            if name not in known:
                raise UnboundVariable(name)


# ---------------------------------------------------------------------------
# operations


def bracket(f: Expression, g: Expression, P: PoissonStructure) -> Expression:
    _require_bound(P, f, g)
    if f == g:
        return ZERO
    df = [differentiate(f, x) for x in P.coords]
    dg = [differentiate(g, x) for x in P.coords]
    terms = []
    for (i, j), w in P.upper.items():
        a = fold_constants(df[i] * dg[j] - df[j] * dg[i])
        if not is_zero(a):
            terms.append(w * a)
    return _sum(terms)


def hamiltonian_vector_field(H: Expression, P: PoissonStructure) -> VectorField:
    _require_bound(P, H)
    dH = [differentiate(H, x) for x in P.coords]
    components = []
    for j in range(P.dim):
        terms = []
        for i in range(P.dim):
            if is_zero(dH[i]):
                continue
            w = P.entry(i, j)
            if not is_zero(w):
                terms.append(w * dH[i])
        components.append(_sum(terms))
    return VectorField(P.coords, tuple(components))


def jacobiator(P: PoissonStructure, f: Expression, g: Expression, h: Expression) -> Expression:
    """Cyclic sum {f,{g,h}} + {g,{h,f}} + {h,{f,g}}."""
    cyclic = (
        bracket(f, bracket(g, h, P), P)
        + bracket(g, bracket(h, f, P), P)
        + bracket(h, bracket(f, g, P), P)
    )
    return fold_constants(cyclic)


def jacobi_residual(P: PoissonStructure, f: Expression, g: Expression, h: Expression, point: Sequence[float]) -> float:
    return evaluate(jacobiator(P, f, g, h), dict(zip(P.coords, point)))


def finite_difference_bracket(
    f: Expression,
    g: Expression,
    P: PoissonStructure,
    point: Sequence[float],
    h: float = 1e-5,
) -> float:
    """Central-difference oracle for ``{f, g}``; independent of the symbolic path."""
    x = np.asarray(point, dtype=float)
    fc = compile_expression(f, P.coords)
    gc = compile_expression(g, P.coords)

    def grad(fn) -> np.ndarray:
        out = np.zeros(len(x))
        for i in range(len(x)):
            e = np.zeros(len(x))
            e[i] = h
            out[i] = (fn(x + e) - fn(x - e)) / (2.0 * h)
        return out

    W = P.evaluate_at(x)
    return float(grad(fc) @ W @ grad(gc))


def evaluate_bivector(P: PoissonStructure, point: Sequence[float]) -> np.ndarray:
    return P.evaluate_at(point)


def invert_symplectic(S: SymplecticForm, point: Sequence[float]) -> np.ndarray:
    omega = S.evaluate_at(point)
    return bivector_from_omega(omega)


def bivector_from_omega(omega: np.ndarray) -> np.ndarray:
    if abs(np.linalg.det(omega)) < DEGENERATE_DET:
        raise DegenerateForm("symplectic form is degenerate at this point")
    return -np.linalg.inv(omega)


def omega_from_bivector(W: np.ndarray) -> np.ndarray:
    if abs(np.linalg.det(W)) < DEGENERATE_DET:
        raise DegenerateForm("bivector is degenerate at this point; no symplectic form")
    return -np.linalg.inv(W)


def omega_at(structure: _Antisymmetric, point: Sequence[float]) -> np.ndarray:
    if isinstance(structure, SymplecticForm):
        return structure.evaluate_at(point)
    return omega_from_bivector(structure.evaluate_at(point))


def pairing(structure: _Antisymmetric, u: Sequence[float], v: Sequence[float], point: Sequence[float]) -> float:
    """``Omega(u, v)`` at ``point``; ``Omega = -inverse(W)`` when only a bivector is given."""
    return float(np.asarray(u) @ omega_at(structure, point) @ np.asarray(v))


def structure_from_symplectic(S: SymplecticForm) -> PoissonStructure:
    return S.to_bivector()


def jacobian(exprs: Sequence[Expression], coords: Sequence[str], point: Sequence[float]) -> np.ndarray:
    values = dict(zip(coords, point))
    out = np.zeros((len(exprs), len(coords)))
    for a, e in enumerate(exprs):
        for i, x in enumerate(coords):
            d = differentiate(e, x)
            if not is_zero(d):
                out[a, i] = evaluate(d, values)
    return out


def numerical_rank(matrix: np.ndarray, rtol: float = RANK_RTOL, atol: float = 1e-12) -> int:
    """Count singular values above ``rtol`` times the largest one."""
    if matrix.size == 0:
        return 0
    s = np.linalg.svd(matrix, compute_uv=False)
    if s[0] <= atol:
        return 0
    return int(np.sum(s > rtol * s[0]))


def pushforward_bivector(P: PoissonStructure, chart: Sequence[Expression], point: Sequence[float]) -> np.ndarray:
    """``W'[a][b] = sum_ij d_i(chart_a) W[i][j] d_j(chart_b)`` at ``point``."""
    _require_bound(P, *chart)
    J = jacobian(chart, P.coords, point)
    if numerical_rank(J) < min(J.shape):
        raise SingularChart("chart Jacobian is rank deficient at this point")
    return J @ evaluate_bivector(P, point) @ J.T


def is_regular(exprs: Sequence[Expression], coords: Sequence[str], point: Sequence[float]) -> bool:
    values = dict(zip(coords, point))
    try:
        for e in exprs:
            evaluate(e, values)
    except DomainError:
        return False
    return True
