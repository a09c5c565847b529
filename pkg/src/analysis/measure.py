"""Cell-level energy measures and the audits built on them.

For piecewise harmonic f, g of level <= m and a cell K_w with |w| = m:

    nu_{f,g}(K_w) = -(2 / r_w) (P u_w)^T D (P v_w)

where u_w, v_w are the boundary values of f o psi_w, g o psi_w, obtained by
descending A_i along the word. All tables are read from one per-cell Gram
stack (cells x F x F), so diagonal, mutual and polarized tables agree exactly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Sequence

import numpy as np

from src.core.errors import LevelTooShallow, NonpositiveCoefficient
from src.core.parallel import parallel_map, split_blocks
from src.core.scalars import Mode, format_scalar, infer_mode, is_negligible, parse_scalar, zeros
from src.fractal.harmonic import (
    HarmonicStructure,
    PiecewiseHarmonicFn,
    basis_function,
    cell_boundary_values,
    energy,
    linear_combination,
    pullback,
    refine_boundary_data,
)
from src.fractal.structure import Word, cell_index, format_word, word_at

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CellMeasureTable:
    """Values of a (signed) measure on the cells of W_m, lexicographic order.

    Attributes:
        level: m
        values: array of length N^m in the structure's scalar mode
        n_symbols: N
        meta: description of the measure ("nu[f]", "nu[f,g]", "dominant")
    """
    level: int
    values: np.ndarray
    n_symbols: int
    meta: str = ""

    def __len__(self) -> int:
        return int(self.values.shape[0])

    @property
    def mode(self) -> Mode:
        return infer_mode(self.values)

    def total(self) -> Any:
        return self.values.sum()

    def value(self, word: Word) -> Any:
        if len(word) != self.level:
            raise LevelTooShallow(f"Word {word} is not a level-{self.level} cell")
        return self.values[cell_index(word, self.n_symbols)]

    def words(self) -> list[Word]:
        return [word_at(i, self.level, self.n_symbols) for i in range(len(self))]

    def subtree(self, word: Word) -> np.ndarray:
        """Values of the cells word.u, u in W_{level - |word|}."""
        depth = self.level - len(word)
        if depth < 0:
            raise LevelTooShallow(f"Word {word} is deeper than table level {self.level}")
        start = cell_index(word, self.n_symbols) * self.n_symbols ** depth
        return self.values[start:start + self.n_symbols ** depth]

    def coarsen(self) -> "CellMeasureTable":
        """Table one level up: value(w) = sum_i value(w.i)."""
        if self.level == 0:
            raise LevelTooShallow("Level-0 table has no parent level")
        parent = self.values.reshape(-1, self.n_symbols).sum(axis=1)
        return CellMeasureTable(self.level - 1, parent, self.n_symbols, self.meta)

    def zero_mask(self, zero_mass: float = 0.0) -> np.ndarray:
        """Cells carrying no mass; float tables use zero_mass relative to the total."""
        if self.mode is Mode.RATIONAL:
            return np.array([v == 0 for v in self.values], dtype=bool)
        scale = float(np.abs(self.values).sum())
        return np.abs(self.values.astype(np.float64)) <= zero_mass * scale

    def scaled(self, factor: Any) -> "CellMeasureTable":
        return CellMeasureTable(self.level, self.values * factor, self.n_symbols, self.meta)

    def rows(self) -> list[dict[str, str]]:
        return [
            {"word": format_word(word_at(i, self.level, self.n_symbols)), "value": format_scalar(v)}
            for i, v in enumerate(self.values)
        ]


@dataclass
class DominantMeasure:
    """sum_i a_i nu_{f_i} with a_i > 0; components kept by label."""
    table: CellMeasureTable
    coefficients: list[Any]
    labels: list[str]
    functions: list[PiecewiseHarmonicFn] = field(default_factory=list, repr=False)


# Gram tables

def _integer_form(arr: np.ndarray) -> tuple[np.ndarray, int]:
    """Integer array n and common denominator d with arr == n / d."""
    flat = [Fraction(x) for x in arr.flat]
    den = math.lcm(*(x.denominator for x in flat))
    ints = np.array([x.numerator * (den // x.denominator) for x in flat], dtype=object)
    return ints.reshape(arr.shape), den


def _projected_block(A: np.ndarray, P: np.ndarray, B: np.ndarray, depth: int) -> tuple[np.ndarray, Any]:
    """P B_w for the cells below B, as (values, unit) with true values = values * unit.

    Rational blocks are descended in integers over one common denominator.
    """
    if B.dtype != object:
        return P @ refine_boundary_data(A, B, depth), 1.0
    A_int, a_den = _integer_form(A)
    B_int, b_den = _integer_form(B)
    P_int, p_den = _integer_form(P)
    PB = P_int @ refine_boundary_data(A_int, B_int, depth)
    return PB, Fraction(1, p_den * b_den * a_den ** depth)


def _gram_block(task: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, int]) -> np.ndarray:
    A, D, P, B, weights, depth = task
    PB, unit = _projected_block(A, P, B, depth)
    if PB.dtype != object:
        G = np.swapaxes(PB, 1, 2) @ D @ PB
        return -2 * G / weights[:, None, None]
    D_int, d_den = _integer_form(D)
    G = np.swapaxes(PB, 1, 2) @ D_int @ PB
    factor = -2 * unit * unit / d_den
    cell_factors = np.array([factor / w for w in weights], dtype=object)
    return G * cell_factors[:, None, None]


def _projection_block(task: tuple[np.ndarray, np.ndarray, np.ndarray, int]) -> np.ndarray:
    A, P, B, depth = task
    PB, unit = _projected_block(A, P, B, depth)
    return PB * unit if PB.dtype == object else PB


def _cell_tasks(
    hs: HarmonicStructure,
    fns: Sequence[PiecewiseHarmonicFn],
    m: int,
    threads: int,
) -> tuple[np.ndarray, int, int, list[tuple[int, int]]]:
    if not fns:
        raise ValueError("Cell tables need at least one function")
    base = max(f.level for f in fns)
    if m < base:
        raise LevelTooShallow(f"Level {m} is below the function level {base}")
    hs.structure.cell_count(m)
    B = cell_boundary_values(hs, fns, base)
    depth = m - base
    return B, depth, hs.n_symbols ** depth, split_blocks(B.shape[0], threads)


def cell_gram_tables(
    hs: HarmonicStructure,
    fns: Sequence[PiecewiseHarmonicFn],
    m: int,
    threads: int = 1,
) -> np.ndarray:
    """nu_{f_i,f_j}(K_w) for all w in W_m at once, shape (N^m, F, F).

    Cells are split into contiguous blocks below the functions' common level,
    so the result is the same for every thread count.

    Raises:
        LevelTooShallow: m is below some function's level
    """
    B, depth, fan, blocks = _cell_tasks(hs, fns, m, threads)
    weights = hs.cell_weights(m)
    tasks = [
        (hs.A, hs.D, hs.P, B[start:stop], weights[start * fan:stop * fan], depth)
        for start, stop in blocks
    ]
    gram = np.concatenate(parallel_map(_gram_block, tasks, threads), axis=0)
    logger.debug("Gram tables: %d functions, level %d, %d cells", len(fns), m, gram.shape[0])
    return gram


def cell_projections(
    hs: HarmonicStructure,
    fns: Sequence[PiecewiseHarmonicFn],
    m: int,
    threads: int = 1,
) -> np.ndarray:
    """P u_w for every function and every w in W_m, shape (N^m, n0, F)."""
    B, depth, _, blocks = _cell_tasks(hs, fns, m, threads)
    tasks = [(hs.A, hs.P, B[start:stop], depth) for start, stop in blocks]
    return np.concatenate(parallel_map(_projection_block, tasks, threads), axis=0)


def _label(f: PiecewiseHarmonicFn, default: str) -> str:
    return f.label or default


def cell_energy_measure(
    hs: HarmonicStructure,
    f: PiecewiseHarmonicFn,
    g: PiecewiseHarmonicFn | None = None,
    m: int | None = None,
    threads: int = 1,
) -> CellMeasureTable:
    """nu_{f,g} (or nu_f when g is omitted) on the cells of W_m.

    Example:
        >>> cell_energy_measure(gasket, h1, m=1).values
        array([Fraction(12, 5), Fraction(4, 5), Fraction(4, 5)], dtype=object)
    """
    level = m if m is not None else max(f.level, g.level if g is not None else 0)
    if g is None:
        gram = cell_gram_tables(hs, [f], level, threads)
        return CellMeasureTable(level, gram[:, 0, 0], hs.n_symbols, f"nu[{_label(f, 'f')}]")
    gram = cell_gram_tables(hs, [f, g], level, threads)
    return CellMeasureTable(level, gram[:, 0, 1], hs.n_symbols, f"nu[{_label(f, 'f')},{_label(g, 'g')}]")


def diagonal_tables(gram: np.ndarray, n_symbols: int, level: int, labels: Sequence[str]) -> list[CellMeasureTable]:
    return [
        CellMeasureTable(level, gram[:, i, i], n_symbols, f"nu[{label}]")
        for i, label in enumerate(labels)
    ]


def _positive_coefficients(hs: HarmonicStructure, coefficients: Sequence[Any]) -> list[Any]:
    if not coefficients:
        raise NonpositiveCoefficient("A dominant measure needs at least one component")
    coeffs = [parse_scalar(a, hs.mode) for a in coefficients]
    bad = [i for i, a in enumerate(coeffs) if not a > 0]
    if bad:
        raise NonpositiveCoefficient(f"Coefficients must be positive; component(s) {bad} are not")
    return coeffs


def dominant_from_gram(
    hs: HarmonicStructure,
    gram: np.ndarray,
    components: Sequence[tuple[Any, PiecewiseHarmonicFn]],
    m: int,
) -> DominantMeasure:
    """Dominant measure read off the diagonal of an already computed Gram stack.

    ``gram`` holds the components' tables in the order given.

    Raises:
        NonpositiveCoefficient: Some a_i <= 0
    """
    coeffs = _positive_coefficients(hs, [a for a, _ in components])
    fns = [f for _, f in components]
    if gram.shape[1] != len(fns):
        raise ValueError(f"Gram stack has {gram.shape[1]} functions, {len(fns)} components given")
    values = zeros(gram.shape[0], hs.mode)
    for i, a in enumerate(coeffs):
        values = values + a * gram[:, i, i]
    return DominantMeasure(
        table=CellMeasureTable(m, values, hs.n_symbols, "dominant"),
        coefficients=coeffs,
        labels=[_label(f, f"f{i}") for i, f in enumerate(fns)],
        functions=fns,
    )


def dominant_measure(
    hs: HarmonicStructure,
    components: Sequence[tuple[Any, PiecewiseHarmonicFn]],
    m: int,
    threads: int = 1,
) -> DominantMeasure:
    """Weighted sum of diagonal energy measures with positive coefficients.

    Raises:
        NonpositiveCoefficient: Some a_i <= 0
    """
    _positive_coefficients(hs, [a for a, _ in components])
    gram = cell_gram_tables(hs, [f for _, f in components], m, threads)
    return dominant_from_gram(hs, gram, components, m)


def boundary_basis(hs: HarmonicStructure) -> list[PiecewiseHarmonicFn]:
    return [basis_function(hs, q) for q in range(1, hs.boundary_size + 1)]


def boundary_dominant(hs: HarmonicStructure, m: int, threads: int = 1) -> DominantMeasure:
    """nu = sum over q in V_0 of nu_{h_q}."""
    return dominant_measure(hs, [(1, h) for h in boundary_basis(hs)], m, threads)


def _same_function(f: PiecewiseHarmonicFn, g: PiecewiseHarmonicFn) -> bool:
    return f.level == g.level and bool(np.all(f.values == g.values))


def gram_with_boundary_dominant(
    hs: HarmonicStructure,
    fns: Sequence[PiecewiseHarmonicFn],
    m: int,
    threads: int = 1,
) -> tuple[np.ndarray, DominantMeasure]:
    """Gram stack of fns and the boundary dominant nu from a single descent.

    The basis h_q is appended to fns unless fns already is the basis.
    """
    basis = boundary_basis(hs)
    components = [(1, h) for h in basis]
    if len(fns) == len(basis) and all(_same_function(f, h) for f, h in zip(fns, basis)):
        gram = cell_gram_tables(hs, fns, m, threads)
        return gram, dominant_from_gram(hs, gram, components, m)
    k = len(fns)
    full = cell_gram_tables(hs, list(fns) + basis, m, threads)
    return full[:, :k, :k], dominant_from_gram(hs, full[:, k:, k:], components, m)


# Ratios and findings

@dataclass
class RatioTable:
    """Per-cell num/den with 0/0 := 1.

    ``violations`` lists cells with den = 0 and num != 0 (absolute continuity
    fails there); their value is +/-inf.
    """
    level: int
    values: list[Any]
    n_symbols: int
    violations: list[int] = field(default_factory=list)

    def value(self, word: Word) -> Any:
        return self.values[cell_index(word, self.n_symbols)]

    def violation_words(self) -> list[str]:
        return [format_word(word_at(i, self.level, self.n_symbols)) for i in self.violations]


def rn_ratio(num: CellMeasureTable, den: CellMeasureTable, zero_mass: float = 0.0) -> RatioTable:
    """Z_m: per-cell num/den.

    Example:
        >>> rn_ratio(nu_h1, nu_dominant).value((1,))
        Fraction(3, 5)
    """
    if num.level != den.level:
        raise LevelTooShallow(f"Ratio tables must share a level ({num.level} != {den.level})")
    num_scale = float(np.abs(num.values.astype(np.float64)).sum()) if len(num) else 0.0
    den_scale = float(np.abs(den.values.astype(np.float64)).sum()) if len(den) else 0.0
    one = parse_scalar(1, den.mode)
    values: list[Any] = []
    violations: list[int] = []
    for i, (a, b) in enumerate(zip(num.values, den.values)):
        b_zero = is_negligible(b, den_scale, zero_mass)
        if b_zero and is_negligible(a, num_scale, zero_mass):
            values.append(one)
        elif b_zero:
            values.append(math.copysign(math.inf, float(a)))
            violations.append(i)
        else:
            values.append(a / b)
    if violations:
        logger.warning("%d cells where %s vanishes but %s does not", len(violations), den.meta, num.meta)
    return RatioTable(num.level, values, num.n_symbols, violations)


@dataclass
class SingularityReport:
    """Cells where exactly one of two diagonal measures vanishes."""
    only_first: list[int]
    only_second: list[int]
    cells: int

    @property
    def mutually_absolutely_continuous(self) -> bool:
        return not self.only_first and not self.only_second


def singularity_check(first: CellMeasureTable, second: CellMeasureTable, zero_mass: float = 0.0) -> SingularityReport:
    z1 = first.zero_mask(zero_mass)
    z2 = second.zero_mask(zero_mass)
    return SingularityReport(
        only_first=np.flatnonzero(~z1 & z2).tolist(),
        only_second=np.flatnonzero(z1 & ~z2).tolist(),
        cells=len(first),
    )


# Audits

@dataclass
class InequalityAudit:
    """Worst violations of the energy-measure inequalities over all cells.

    energy: |sqrt(nu_f) - sqrt(nu_g)|^2 <= nu_{f-g}
    schwarz: |nu_{f,g}| <= sqrt(nu_f) sqrt(nu_g)
    total: nu_{f-g}(K_w) <= 2 E(f - g)
    Violation sizes are relative to nu_f(K) + nu_g(K).
    """
    level: int
    energy_violations: int
    schwarz_violations: int
    total_violations: int
    max_energy_violation: float
    max_schwarz_violation: float
    schwarz_equality_cells: int

    @property
    def ok(self) -> bool:
        return self.energy_violations == 0 and self.schwarz_violations == 0 and self.total_violations == 0


def audit_cell_tables(
    a: np.ndarray,
    b: np.ndarray,
    c_fg: np.ndarray,
    total_bound: Any,
    level: int,
    slack: float = 0.0,
    equality_tol: float = 0.0,
) -> InequalityAudit:
    """Check the three cell inequalities on given tables of nu_f, nu_g and nu_{f,g}.

    ``total_bound`` is 2 E(f - g), computed independently of the tables.
    Object (rational) tables are compared exactly and ignore slack.
    """
    exact = a.dtype == object
    c = a + b - 2 * c_fg  # nu_{f-g}
    scale = float(a.sum() + b.sum()) or 1.0

    energy_bad = schwarz_bad = total_bad = equal = 0
    worst_energy = worst_schwarz = 0.0
    for ai, bi, ci, xi in zip(a, b, c, c_fg):
        # |sqrt a - sqrt b|^2 <= c  <=>  a + b - c <= 2 sqrt(ab)
        s = ai + bi - ci
        if exact:
            energy_ok = s <= 0 or s * s <= 4 * ai * bi
            excess = 0.0 if energy_ok else float(s - 2 * math.sqrt(ai * bi)) / scale
        else:
            excess = max(0.0, (math.sqrt(max(ai, 0.0)) - math.sqrt(max(bi, 0.0))) ** 2 - ci) / scale
            energy_ok = excess <= slack
        if not energy_ok:
            energy_bad += 1
            worst_energy = max(worst_energy, excess)

        lhs, rhs = xi * xi, ai * bi
        if exact:
            schwarz_ok = lhs <= rhs
            gap = 0.0 if schwarz_ok else float(lhs - rhs) / scale ** 2
            equal += int(lhs == rhs)
        else:
            gap = max(0.0, float(lhs - rhs)) / scale ** 2
            schwarz_ok = gap <= slack
            equal += int(abs(float(lhs - rhs)) <= equality_tol * scale ** 2)
        if not schwarz_ok:
            schwarz_bad += 1
            worst_schwarz = max(worst_schwarz, gap)

        if exact:
            total_bad += int(ci > total_bound)
        else:
            total_bad += int(float(ci - total_bound) > slack * scale)

    return InequalityAudit(
        level=level,
        energy_violations=energy_bad,
        schwarz_violations=schwarz_bad,
        total_violations=total_bad,
        max_energy_violation=worst_energy,
        max_schwarz_violation=worst_schwarz,
        schwarz_equality_cells=equal,
    )


def inequality_audit(
    hs: HarmonicStructure,
    f: PiecewiseHarmonicFn,
    g: PiecewiseHarmonicFn,
    m: int,
    threads: int = 1,
) -> InequalityAudit:
    """Check the cell inequalities on every cell; rational mode compares exactly.

    The total-mass bound 2 E(f - g) comes from the graph energy of f - g, not
    from the cell tables.
    """
    gram = cell_gram_tables(hs, [f, g], m, threads)
    bound = 2 * energy(hs, linear_combination(hs, [1, -1], [f, g]))
    exact = hs.mode is Mode.RATIONAL
    report = audit_cell_tables(
        gram[:, 0, 0],
        gram[:, 1, 1],
        gram[:, 0, 1],
        bound,
        m,
        slack=0.0 if exact else hs.tolerances.audit,
        equality_tol=hs.tolerances.audit,
    )
    if not report.ok:
        logger.warning("Inequality audit at level %d found violations: %s", m, report)
    return report


@dataclass
class ScalingAudit:
    """nu_{f,g}(K_{w.u}) against (1/r_w) nu_{psi_w^* f, psi_w^* g}(K_u) for u in W_depth."""
    word: Word
    depth: int
    max_discrepancy: float
    lhs: np.ndarray
    rhs: np.ndarray

    @property
    def exact(self) -> bool:
        return self.max_discrepancy == 0.0


def scaling_audit(
    hs: HarmonicStructure,
    f: PiecewiseHarmonicFn,
    g: PiecewiseHarmonicFn,
    word: Word,
    depth: int,
    threads: int = 1,
) -> ScalingAudit:
    """Both sides are computed independently; discrepancy is relative to max |lhs|."""
    word = tuple(word)
    m = len(word) + depth
    lhs = cell_energy_measure(hs, f, g, m=m, threads=threads).subtree(word)
    pf, pg = pullback(hs, f, word), pullback(hs, g, word)
    rhs = cell_energy_measure(hs, pf, pg, m=depth, threads=threads).values / hs.word_weight(word)
    diff = lhs - rhs
    if hs.mode is Mode.RATIONAL and all(x == 0 for x in diff):
        worst = 0.0
    else:
        ref = max((abs(float(x)) for x in lhs), default=0.0) or 1.0
        worst = max((abs(float(x)) for x in diff), default=0.0) / ref
    return ScalingAudit(word=word, depth=depth, max_discrepancy=worst, lhs=lhs, rhs=rhs)


def total_mass_gap(hs: HarmonicStructure, f: PiecewiseHarmonicFn, m: int, threads: int = 1) -> Any:
    """sum_w nu_f(K_w) - 2 E(f); exactly zero for every m >= f.level."""
    return cell_energy_measure(hs, f, m=m, threads=threads).total() - 2 * energy(hs, f)


def additivity_gap(coarse: CellMeasureTable, fine: CellMeasureTable) -> float:
    """Largest |coarse(w) - sum_i fine(w.i)| relative to the coarse total."""
    if fine.level != coarse.level + 1:
        raise LevelTooShallow(f"Additivity compares consecutive levels, got {coarse.level} and {fine.level}")
    diff = coarse.values - fine.coarsen().values
    if coarse.mode is Mode.RATIONAL and all(x == 0 for x in diff):
        return 0.0
    ref = float(np.abs(coarse.values.astype(np.float64)).sum()) or 1.0
    return max(abs(float(x)) for x in diff) / ref


@dataclass
class AtomProfile:
    """Largest single-cell share nu_f(K_w) / nu_f(K) per level."""
    levels: list[int]
    max_share: list[float]

    @property
    def strictly_decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.max_share, self.max_share[1:]))


def atom_profile(hs: HarmonicStructure, f: PiecewiseHarmonicFn, levels: Sequence[int], threads: int = 1) -> AtomProfile:
    shares = []
    for m in levels:
        table = cell_energy_measure(hs, f, m=m, threads=threads)
        total = table.total()
        shares.append(0.0 if total == 0 else float(max(table.values) / total))
    return AtomProfile(levels=list(levels), max_share=shares)


def polarization_gap(hs: HarmonicStructure, f: PiecewiseHarmonicFn, g: PiecewiseHarmonicFn, m: int) -> float:
    """Max |nu_{f,g} - (nu_{f+g} - nu_f - nu_g) / 2| over cells."""
    s = linear_combination(hs, [1, 1], [f, g])
    mutual = cell_energy_measure(hs, f, g, m=m).values
    polar = (cell_energy_measure(hs, s, m=m).values - cell_energy_measure(hs, f, m=m).values
             - cell_energy_measure(hs, g, m=m).values) / 2
    return max((abs(float(x)) for x in mutual - polar), default=0.0)
