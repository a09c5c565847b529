"""Cell-level derivative df/dg and its diagnostics.

On a cell K_w the slope is a_w = nu_{f,g}(K_w) / nu_g(K_w) and the remainder
ratio is rho_w = (nu_f(K_w) - a_w^2 nu_g(K_w)) / nu_g(K_w), the normalized
energy-measure mass of f - a_w g on that cell.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from src.analysis.measure import cell_gram_tables, cell_projections
from src.analysis.stats import weighted_quantiles
from src.core.errors import ConstantReference, LevelTooShallow
from src.core.scalars import Mode, format_scalar, is_negligible
from src.fractal.harmonic import HarmonicStructure, PiecewiseHarmonicFn, energy, harmonic_extend
from src.fractal.structure import format_word, word_at

logger = logging.getLogger(__name__)

DEFAULT_QUANTILES = (0.1, 0.5, 0.9)


@dataclass
class SlopeField:
    """Per-cell slopes a_w, remainder ratios rho_w and nu_g masses.

    ``undefined`` lists cells with nu_g(K_w) = 0; their slope and remainder
    are None and they carry no weight anywhere.
    """
    level: int
    n_symbols: int
    slopes: list[Any]
    remainders: list[Any]
    masses: np.ndarray
    undefined: list[int] = field(default_factory=list)
    f_label: str = "f"
    g_label: str = "g"

    def defined(self) -> list[int]:
        skip = set(self.undefined)
        return [i for i in range(len(self.slopes)) if i not in skip]

    def rows(self) -> list[dict[str, str]]:
        rows = []
        for i, (a, rho) in enumerate(zip(self.slopes, self.remainders)):
            rows.append({
                "word": format_word(word_at(i, self.level, self.n_symbols)),
                "slope": "undefined" if a is None else format_scalar(a),
                "remainder_ratio": "undefined" if rho is None else format_scalar(rho),
                "mass": format_scalar(self.masses[i]),
            })
        return rows


def slope_field(
    hs: HarmonicStructure,
    f: PiecewiseHarmonicFn,
    g: PiecewiseHarmonicFn,
    m: int,
    threads: int = 1,
) -> SlopeField:
    """a_w and rho_w on every cell of W_m.

    Raises:
        ConstantReference: g is constant
        LevelTooShallow: m below the function levels

    Example:
        >>> sf = slope_field(hs, linear_combination(hs, [3], [g], 5), g, 4)
        >>> set(sf.slopes)
        {Fraction(3, 1)}
    """
    if g.is_constant(hs.tolerances.eigen):
        raise ConstantReference("Reference function g is constant; df/dg is undefined")
    gram = cell_gram_tables(hs, [f, g], m, threads)
    a, b, c = gram[:, 0, 0], gram[:, 1, 1], gram[:, 0, 1]
    scale = float(np.abs(b.astype(np.float64)).sum())
    undefined = [i for i, bi in enumerate(b) if is_negligible(bi, scale, hs.tolerances.zero_mass)]
    skip = set(undefined)
    slope_values = np.array([0 if i in skip else c[i] / b[i] for i in range(len(b))], dtype=b.dtype)

    # nu_{f - a_w g}(K_w) straight from P(u_w - a_w v_w)
    PB = cell_projections(hs, [f, g], m, threads)
    d = PB[:, :, 0] - slope_values[:, None] * PB[:, :, 1]
    rest = -2 * ((d @ hs.D) * d).sum(axis=1) / hs.cell_weights(m)

    slopes: list[Any] = []
    remainders: list[Any] = []
    for i in range(len(b)):
        if i in skip:
            slopes.append(None)
            remainders.append(None)
            continue
        mass = rest[i]
        if hs.mode is Mode.FLOAT and mass <= hs.tolerances.zero_mass * abs(a[i]):
            mass = 0.0
        slopes.append(slope_values[i])
        remainders.append(mass / b[i])
    if undefined:
        logger.debug("%d of %d cells carry no nu_g mass at level %d", len(undefined), len(slopes), m)
    return SlopeField(m, hs.n_symbols, slopes, remainders, b, undefined, f.label or "f", g.label or "g")


@dataclass
class GapRow:
    level: int
    s_m: Any
    energy: Any
    gap: Any

    def to_dict(self) -> dict[str, str]:
        return {"level": str(self.level), "s_m": format_scalar(self.s_m),
                "energy": format_scalar(self.energy), "gap": format_scalar(self.gap)}


def _s_m(sf: SlopeField) -> Any:
    terms = [sf.slopes[i] * sf.slopes[i] * sf.masses[i] for i in sf.defined()]
    total = sum(terms[1:], terms[0]) if terms else 0
    return total / 2


def energy_identity_gap(
    hs: HarmonicStructure,
    f: PiecewiseHarmonicFn,
    g: PiecewiseHarmonicFn,
    m: int,
    threads: int = 1,
) -> GapRow:
    """S_m = (1/2) sum_w a_w^2 nu_g(K_w) against E(f); S_m <= E(f) always."""
    sf = slope_field(hs, f, g, m, threads)
    s_m = _s_m(sf)
    e = energy(hs, f)
    return GapRow(level=m, s_m=s_m, energy=e, gap=e - s_m)


def _sqrt_remainders(sf: SlopeField) -> tuple[list[float], list[float]]:
    idx = sf.defined()
    values = [math.sqrt(max(float(sf.remainders[i]), 0.0)) for i in idx]
    weights = [float(sf.masses[i]) for i in idx]
    return values, weights


@dataclass
class RemainderRow:
    level: int
    quantiles: dict[str, float]
    cells: int
    undefined: int


def remainder_negligibility(
    hs: HarmonicStructure,
    f: PiecewiseHarmonicFn,
    g: PiecewiseHarmonicFn,
    levels: Sequence[int],
    quantiles: Sequence[float] = DEFAULT_QUANTILES,
    threads: int = 1,
) -> list[RemainderRow]:
    """nu_g-weighted quantiles of sqrt(rho_w) along a ladder of levels."""
    rows = []
    for m in sorted(levels):
        sf = slope_field(hs, f, g, m, threads)
        values, weights = _sqrt_remainders(sf)
        rows.append(RemainderRow(m, weighted_quantiles(values, weights, quantiles), len(sf.slopes), len(sf.undefined)))
    return rows


@dataclass
class DerivativeLadder:
    """Gap rows and remainder quantiles per level, plot-ready."""
    gaps: list[GapRow]
    remainders: list[RemainderRow]

    @property
    def s_nondecreasing(self) -> bool:
        return all(b.s_m >= a.s_m - _slack(a.s_m) for a, b in zip(self.gaps, self.gaps[1:]))

    @property
    def gap_nonincreasing(self) -> bool:
        return all(b.gap <= a.gap + _slack(a.energy) for a, b in zip(self.gaps, self.gaps[1:]))

    @property
    def bounded(self) -> bool:
        return all(row.s_m <= row.energy + _slack(row.energy) for row in self.gaps)

    def rows(self) -> list[dict[str, str]]:
        out = []
        for gap, rem in zip(self.gaps, self.remainders):
            row = gap.to_dict()
            row.update({f"sqrt_rho_q{q}": repr(v) for q, v in rem.quantiles.items()})
            out.append(row)
        return out


def _slack(x: Any) -> Any:
    if isinstance(x, (float, np.floating)):
        return 1e-10 * max(1.0, abs(float(x)))
    return 0


def derivative_ladder(
    hs: HarmonicStructure,
    f: PiecewiseHarmonicFn,
    g: PiecewiseHarmonicFn,
    levels: Sequence[int],
    quantiles: Sequence[float] = DEFAULT_QUANTILES,
    threads: int = 1,
) -> DerivativeLadder:
    gaps = []
    remainders = []
    e = energy(hs, f)
    for m in sorted(levels):
        sf = slope_field(hs, f, g, m, threads)
        s_m = _s_m(sf)
        gaps.append(GapRow(m, s_m, e, e - s_m))
        values, weights = _sqrt_remainders(sf)
        remainders.append(RemainderRow(m, weighted_quantiles(values, weights, quantiles), len(sf.slopes), len(sf.undefined)))
        logger.debug("Ladder level %d: gap %s", m, format_scalar(e - s_m))
    return DerivativeLadder(gaps, remainders)


@dataclass
class ChainReport:
    """Per-cell slopes(f,g) * slopes(g,f) = nu_{f,g}^2 / (nu_f nu_g)."""
    level: int
    products: list[Any]
    flagged: list[int]
    violations: int
    weighted_median: float

    @property
    def max_product(self) -> float:
        defined = [float(p) for p in self.products if p is not None]
        return max(defined, default=0.0)


def chain_consistency(
    hs: HarmonicStructure,
    f: PiecewiseHarmonicFn,
    g: PiecewiseHarmonicFn,
    m: int,
    threads: int = 1,
) -> ChainReport:
    """Products never exceed 1; equality means both remainders vanish on the cell."""
    gram = cell_gram_tables(hs, [f, g], m, threads)
    a, b, c = gram[:, 0, 0], gram[:, 1, 1], gram[:, 0, 1]
    scale_a = float(np.abs(a.astype(np.float64)).sum())
    scale_b = float(np.abs(b.astype(np.float64)).sum())
    tol = hs.tolerances.zero_mass
    products: list[Any] = []
    flagged: list[int] = []
    violations = 0
    weights = []
    for i, (ai, bi, ci) in enumerate(zip(a, b, c)):
        if is_negligible(ai, scale_a, tol) or is_negligible(bi, scale_b, tol):
            products.append(None)
            flagged.append(i)
            continue
        p = ci * ci / (ai * bi)
        products.append(p)
        weights.append(float(bi))
        if p > 1 + _slack(p):
            violations += 1
    defined = [float(p) for p in products if p is not None]
    median = weighted_quantiles(defined, weights, [0.5])["0.5"] if defined else math.nan
    return ChainReport(m, products, flagged, violations, median)


@dataclass
class OscillationReport:
    """Osc_w against sqrt(r_w nu_f(K_w)); band over cells with nu_f > 0."""
    level: int
    probe_depth: int
    oscillation: np.ndarray
    scale: np.ndarray
    ratio: np.ndarray
    band_min: float
    band_max: float
    n_cells: int

    @property
    def empty(self) -> bool:
        return self.n_cells == 0

    @property
    def spread(self) -> float:
        if self.empty or self.band_min == 0:
            return math.inf
        return self.band_max / self.band_min

    def rows(self, n_symbols: int) -> list[dict[str, str]]:
        return [
            {
                "word": format_word(word_at(i, self.level, n_symbols)),
                "osc": repr(float(self.oscillation[i])),
                "scale": repr(float(self.scale[i])),
                "ratio": repr(float(self.ratio[i])),
            }
            for i in range(len(self.ratio))
        ]


def oscillation_audit(
    hs: HarmonicStructure,
    f: PiecewiseHarmonicFn,
    m: int,
    probe_depth: int = 3,
    threads: int = 1,
) -> OscillationReport:
    """Sample f on the vertices of each level-m cell at depth m + probe_depth.

    For f of level <= m each cell piece is harmonic, so its extremes sit on the
    cell boundary and the sample is exact at any probe depth.
    """
    if m < f.level:
        raise LevelTooShallow(f"Level {m} is below the function level {f.level}")
    n = m + probe_depth
    fine = harmonic_extend(hs, f, n)
    incidence = hs.structure.vertex_set(n).incidence
    samples = fine.values[incidence].astype(np.float64).reshape(hs.n_symbols ** m, -1)
    osc = samples.max(axis=1) - samples.min(axis=1)

    nu = cell_gram_tables(hs, [f], m, threads)[:, 0, 0]
    scale = np.sqrt(np.maximum((hs.cell_weights(m) * nu).astype(np.float64), 0.0))
    positive = nu.astype(np.float64) > hs.tolerances.zero_mass * float(np.abs(nu.astype(np.float64)).sum())
    ratio = np.zeros_like(osc)
    ratio[positive] = osc[positive] / scale[positive]
    if positive.any():
        band_min, band_max = float(ratio[positive].min()), float(ratio[positive].max())
    else:
        band_min = band_max = 0.0
    return OscillationReport(m, probe_depth, osc, scale, ratio, band_min, band_max, int(positive.sum()))

