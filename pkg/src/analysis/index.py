"""Gram-matrix fields, numerical ranks and the index estimate.

M_w = (nu_{f_i,f_j}(K_w) / nu(K_w))_{i,j} is the cell average of the density
matrix. Its numerical rank, weighted by nu, stands in for the pointwise index;
the essential supremum is approximated after dropping a light mass tail.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Any, Sequence

import numpy as np

from src.analysis.measure import CellMeasureTable, DominantMeasure, cell_gram_tables
from src.analysis.stats import weighted_quantiles
from src.core.config_loader import IndexSettings
from src.core.errors import LevelMismatch
from src.core.scalars import Mode, exact_rank as _sympy_rank, infer_mode, relative_residual
from src.fractal.harmonic import HarmonicStructure, PiecewiseHarmonicFn, pullback
from src.fractal.structure import Word, format_word, word_at

logger = logging.getLogger(__name__)


@dataclass
class GramField:
    """Per-cell Gram matrices of a function family against a dominant measure.

    Attributes:
        gram: (C, F, F) raw tables nu_{f_i,f_j}(K_w)
        masses: (C,) nu(K_w)
        matrices: (C, F, F) gram / mass as float64; zero-mass cells hold zeros
        zero_cells: indices where nu(K_w) = 0
    """
    level: int
    n_symbols: int
    labels: list[str]
    gram: np.ndarray
    masses: np.ndarray
    matrices: np.ndarray
    zero_cells: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return int(self.gram.shape[0])

    def exact_matrix(self, i: int) -> np.ndarray:
        """M_w in the scalar mode of the tables (exact in rational mode)."""
        return self.gram[i] / self.masses[i]


@dataclass
class IndexField:
    """Per-cell numerical ranks with singular-value ratios and nu masses."""
    level: int
    n_symbols: int
    ranks: np.ndarray
    sigma_ratio: np.ndarray
    masses: np.ndarray
    zero_cells: list[int] = field(default_factory=list)

    def rows(self) -> list[dict[str, Any]]:
        return [
            {
                "word": format_word(word_at(i, self.level, self.n_symbols)),
                "rank": int(self.ranks[i]),
                "sigma_ratio": repr(float(self.sigma_ratio[i])),
                "mass": repr(float(self.masses[i])),
            }
            for i in range(len(self.ranks))
        ]


@dataclass
class ExceptionalCell:
    word: str
    rank: int
    high_rank_share: list[float]
    shrinking: bool


@dataclass
class IndexReport:
    level: int
    esssup_proxy: int
    bulk_rank: int
    histogram: dict[int, float]
    quantiles: dict[str, float]
    trimmed_cells: list[str]
    trimmed_mass: float
    exceptional: list[ExceptionalCell]
    zero_cells: int
    positivity_violations: list[str]

    def to_dict(self) -> dict[str, Any]:
        return {
            "level": self.level,
            "esssup_proxy": self.esssup_proxy,
            "bulk_rank": self.bulk_rank,
            "histogram": {str(k): v for k, v in sorted(self.histogram.items())},
            "sigma_ratio_quantiles": self.quantiles,
            "trimmed": {"cells": self.trimmed_cells, "mass_share": self.trimmed_mass},
            "exceptional": [asdict(e) for e in self.exceptional],
            "zero_cells": self.zero_cells,
            "positivity_violations": self.positivity_violations,
        }


def _dominant_table(dominant: DominantMeasure | CellMeasureTable) -> CellMeasureTable:
    return dominant.table if isinstance(dominant, DominantMeasure) else dominant


def gram_field(
    hs: HarmonicStructure,
    fns: Sequence[PiecewiseHarmonicFn],
    dominant: DominantMeasure | CellMeasureTable,
    m: int,
    threads: int = 1,
    gram: np.ndarray | None = None,
) -> GramField:
    """Assemble M_w for every cell of W_m.

    ``gram`` is the precomputed stack of fns at level m, when the caller has one.
    """
    table = _dominant_table(dominant)
    if table.level != m:
        raise LevelMismatch(f"Dominant measure is at level {table.level}, field requested at {m}")
    if gram is None:
        gram = cell_gram_tables(hs, fns, m, threads)
    elif gram.shape[:2] != (len(table), len(fns)):
        raise LevelMismatch(f"Gram stack of shape {gram.shape} does not match {len(fns)} functions at level {m}")
    masses = table.values
    zero = np.flatnonzero(table.zero_mask(hs.tolerances.zero_mass)).tolist()
    safe = masses.astype(np.float64)
    safe[zero] = 1.0
    matrices = gram.astype(np.float64) / safe[:, None, None]
    matrices[zero] = 0.0
    # symmetrize away float noise; exact tables are already symmetric
    matrices = 0.5 * (matrices + np.swapaxes(matrices, 1, 2))
    labels = [f.label or f"f{i}" for i, f in enumerate(fns)]
    return GramField(m, hs.n_symbols, labels, gram, masses, matrices, zero)


def rank_estimate(M: np.ndarray, rank_tol: float = 1e-9) -> tuple[int, np.ndarray]:
    """Numerical rank #{sigma_k > rank_tol * sigma_1} and the singular values.

    Example:
        >>> rank_estimate(np.diag([1.0, 1e-15, 0.0]))[0]
        1
    """
    sigma = np.linalg.svd(np.asarray(M, dtype=np.float64), compute_uv=False)
    if sigma.size == 0 or sigma[0] == 0.0:
        return 0, sigma
    return int(np.sum(sigma > rank_tol * sigma[0])), sigma


def exact_rank(M: np.ndarray) -> int:
    """Rank of a rational matrix by exact elimination; float input falls back to SVD."""
    if infer_mode(M) is Mode.RATIONAL:
        return _sympy_rank(M)
    return rank_estimate(M)[0]


def index_field(gf: GramField, rank_tol: float = 1e-9) -> IndexField:
    """Ranks and sigma_2/sigma_1 of every M_w, from one batched SVD."""
    sigma = np.linalg.svd(gf.matrices, compute_uv=False)
    top = sigma[:, :1]
    live = top[:, 0] > 0
    ranks = np.where(live, np.sum(sigma > rank_tol * top, axis=1), 0).astype(np.int64)
    ratios = np.zeros(len(gf))
    if sigma.shape[1] > 1:
        ratios[live] = sigma[live, 1] / sigma[live, 0]
    masses = gf.masses.astype(np.float64)
    return IndexField(gf.level, gf.n_symbols, ranks, ratios, masses, list(gf.zero_cells))


def _tail(masses: np.ndarray, delta: float) -> list[int]:
    """Lightest cells whose combined mass stays within delta of the total."""
    total = masses.sum()
    order = np.argsort(masses, kind="stable")
    cum = np.cumsum(masses[order])
    return sorted(order[cum <= delta * total].tolist())


def _subtree_high_rank_share(
    hs: HarmonicStructure,
    fns: Sequence[PiecewiseHarmonicFn],
    reference: Sequence[tuple[Any, PiecewiseHarmonicFn]],
    word: Word,
    bulk_rank: int,
    depth: int,
    rank_tol: float,
) -> list[float]:
    """nu-share of subcells of K_w whose rank exceeds bulk_rank, for depths 0..depth.

    Subcell tables come from the pulled-back functions; the 1/r_w factor is
    common to the whole subtree and cancels in both ranks and shares.
    """
    pulled = [pullback(hs, f, word) for f in fns]
    pulled_ref = [(a, pullback(hs, g, word)) for a, g in reference]
    start = max(f.level for f in pulled + [g for _, g in pulled_ref])
    shares = []
    for d in range(start, start + depth + 1):
        gram = cell_gram_tables(hs, pulled, d)
        ref_gram = cell_gram_tables(hs, [g for _, g in pulled_ref], d)
        mass = sum(float(a) * ref_gram[:, i, i].astype(np.float64) for i, (a, _) in enumerate(pulled_ref))
        high = 0.0
        for c in range(gram.shape[0]):
            if mass[c] <= 0:
                continue
            rank, _ = rank_estimate(gram[c].astype(np.float64) / mass[c], rank_tol)
            if rank > bulk_rank:
                high += mass[c]
        total = float(np.sum(mass))
        shares.append(high / total if total > 0 else 0.0)
    return shares


def index_estimate(
    hs: HarmonicStructure,
    fns: Sequence[PiecewiseHarmonicFn],
    field_ranks: IndexField,
    dominant: DominantMeasure | CellMeasureTable,
    settings: IndexSettings | None = None,
    rank_tol: float = 1e-9,
) -> IndexReport:
    """Esssup proxy, nu-weighted rank histogram and sigma_2/sigma_1 quantiles.

    Cells in the lightest tail_delta of nu-mass are dropped. Among the rest, a
    cell of rank above the bulk (weighted median) rank is refined refine_depth
    levels; if the share of high-rank subcells strictly decreases it is
    reported as shrinking and left out of the proxy.
    """
    settings = settings or IndexSettings()
    masses = field_ranks.masses
    total = float(masses.sum())
    if total <= 0:
        return IndexReport(field_ranks.level, 0, 0, {}, {}, [], 0.0, [], len(masses), [])

    trimmed = _tail(masses, settings.tail_delta)
    trimmed_set = set(trimmed)
    kept = np.array([i for i in range(len(masses)) if i not in trimmed_set], dtype=np.int64)
    kept_mass = masses[kept]

    histogram: dict[int, float] = {}
    for rank, mass in zip(field_ranks.ranks[kept], kept_mass):
        histogram[int(rank)] = histogram.get(int(rank), 0.0) + float(mass) / total

    cum = 0.0
    bulk_rank = 0
    for rank in sorted(histogram):
        cum += histogram[rank]
        if cum >= 0.5 * kept_mass.sum() / total:
            bulk_rank = rank
            break

    reference: list[tuple[Any, PiecewiseHarmonicFn]]
    if isinstance(dominant, DominantMeasure) and dominant.functions:
        reference = list(zip(dominant.coefficients, dominant.functions))
    else:
        reference = [(1, f) for f in fns]

    exceptional: list[ExceptionalCell] = []
    proxy = bulk_rank
    for i in kept:
        rank = int(field_ranks.ranks[i])
        if rank <= bulk_rank:
            continue
        word = word_at(int(i), field_ranks.level, field_ranks.n_symbols)
        shares = _subtree_high_rank_share(hs, fns, reference, word, bulk_rank, settings.refine_depth, rank_tol)
        shrinking = len(shares) > 1 and all(b < a for a, b in zip(shares, shares[1:]))
        exceptional.append(ExceptionalCell(format_word(word), rank, shares, shrinking))
        if not shrinking:
            proxy = max(proxy, rank)
    if exceptional:
        logger.info("%d exceptional cells above bulk rank %d", len(exceptional), bulk_rank)

    positive = [i for i in range(len(masses)) if masses[i] > 0 and field_ranks.ranks[i] == 0]
    return IndexReport(
        level=field_ranks.level,
        esssup_proxy=proxy,
        bulk_rank=bulk_rank,
        histogram=histogram,
        quantiles=weighted_quantiles(field_ranks.sigma_ratio, masses, settings.quantiles),
        trimmed_cells=[format_word(word_at(i, field_ranks.level, field_ranks.n_symbols)) for i in trimmed],
        trimmed_mass=float(masses[trimmed].sum()) / total if trimmed else 0.0,
        exceptional=exceptional,
        zero_cells=len(field_ranks.zero_cells),
        positivity_violations=[format_word(word_at(i, field_ranks.level, field_ranks.n_symbols)) for i in positive],
    )


def rank_one_factor(M: np.ndarray) -> tuple[np.ndarray, float]:
    """zeta with zeta_i = M[i, n] / sqrt(M[n, n]) for the first n with M[n, n] > 0.

    The residual ||M - zeta zeta^T||_F / ||M||_F is computed from
    M[:, n] M[n, :] / M[n, n], so it is exact for rational input.

    Example:
        >>> rank_one_factor(np.eye(2))[1]
        0.7071067811865476
    """
    n_dim = M.shape[0]
    pivot = next((n for n in range(n_dim) if M[n, n] > 0), None)
    if pivot is None:
        return np.zeros(n_dim), 0.0
    col = M[:, pivot]
    outer = np.outer(col, M[pivot, :]) / M[pivot, pivot]
    zeta = np.array([float(x) for x in col]) / np.sqrt(float(M[pivot, pivot]))
    return zeta, relative_residual(M - outer, M)


@dataclass
class StabilityReport:
    compared: int
    disagreements: list[str]
    excluded: list[str]


def stability_check(
    hs: HarmonicStructure,
    fns: Sequence[PiecewiseHarmonicFn],
    dominant_a: DominantMeasure | CellMeasureTable,
    dominant_b: DominantMeasure | CellMeasureTable,
    m: int,
    rank_tol: float = 1e-9,
    threads: int = 1,
) -> StabilityReport:
    """Compare per-cell ranks under two dominant measures.

    Cells where either dominant vanishes are excluded and listed.
    """
    gram = cell_gram_tables(hs, fns, m, threads)
    fa = index_field(gram_field(hs, fns, dominant_a, m, threads, gram=gram), rank_tol)
    fb = index_field(gram_field(hs, fns, dominant_b, m, threads, gram=gram), rank_tol)
    excluded = sorted(set(fa.zero_cells) | set(fb.zero_cells))
    skip = set(excluded)
    name = lambda i: format_word(word_at(i, m, hs.n_symbols))  # noqa: E731
    disagreements = [name(i) for i in range(len(fa.ranks)) if i not in skip and fa.ranks[i] != fb.ranks[i]]
    if disagreements:
        logger.warning("Rank disagreements on %d cells", len(disagreements))
    return StabilityReport(
        compared=len(fa.ranks) - len(excluded),
        disagreements=disagreements,
        excluded=[name(i) for i in excluded],
    )


def psd_violations(gf: GramField, psd_tol: float = 1e-10) -> list[str]:
    """Cells whose M_w has an eigenvalue below -psd_tol * sigma_1."""
    bad = []
    for i, M in enumerate(gf.matrices):
        eig = np.linalg.eigvalsh(M)
        top = float(np.max(np.abs(eig))) if eig.size else 0.0
        if eig.size and eig[0] < -psd_tol * top:
            bad.append(format_word(word_at(i, gf.level, gf.n_symbols)))
    return bad


def principal_rank_check(gf: GramField, rank_tol: float = 1e-9) -> list[str]:
    """Cells where some principal submatrix has larger rank than M_w itself."""
    n = gf.matrices.shape[1]
    subsets = [list(s) for k in range(1, n) for s in combinations(range(n), k)]
    bad = []
    for i, M in enumerate(gf.matrices):
        full, sigma = rank_estimate(M, rank_tol)
        if full == 0:
            continue
        # submatrix ranks use the threshold of the full matrix
        cut = rank_tol * sigma[0]
        if any(int(np.sum(np.linalg.svd(M[np.ix_(s, s)], compute_uv=False) > cut)) > full for s in subsets):
            bad.append(format_word(word_at(i, gf.level, gf.n_symbols)))
    return bad
