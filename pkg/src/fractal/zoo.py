"""Built-in structures: Sierpinski gaskets, Hata's tree-like set, the interval.

Families are addressed as ``gasket:d,l``, ``hata:r`` and ``interval``.
Every generator returns ``(SelfSimilarStructure, HarmonicStructure)``.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from src.analysis.measure import boundary_basis, cell_gram_tables
from src.core.config_loader import Tolerances
from src.core.errors import ConfigError, ConstantFunction, NotAnchored, ParamOutOfRange, UnsupportedScale
from src.core.scalars import Mode, as_array, determinant, format_scalar, is_negligible, parse_scalar, to_sympy
from src.fractal.harmonic import HarmonicStructure, PiecewiseHarmonicFn, build_harmonic_structure
from src.fractal.structure import SelfSimilarStructure, StructureSpec, build_structure, format_word, word_at

logger = logging.getLogger(__name__)

ZOO_MAX_CELLS = 64

Built = tuple[SelfSimilarStructure, HarmonicStructure]


# Gaskets

def gasket_cells(d: int, l: int) -> list[tuple[int, ...]]:
    """Integer offsets of the upward subsimplices, corner cells first.

    A subsimplex with offset o has corners o + e_a (barycentric coordinates
    scaled by l). The cell with offset (l-1) e_a contains corner q_a.
    """
    corners = []
    for a in range(d + 1):
        o = [0] * (d + 1)
        o[a] = l - 1
        corners.append(tuple(o))
    rest = sorted(
        o for o in itertools.product(range(l), repeat=d + 1)
        if sum(o) == l - 1 and o not in corners
    )
    return corners + rest


def gasket_spec(d: int, l: int, max_cells: int = ZOO_MAX_CELLS) -> StructureSpec:
    """Structure description of the d-dimensional level-l gasket.

    Raises:
        ParamOutOfRange: d < 2 or l < 2
        UnsupportedScale: more than max_cells cells
    """
    if d < 2 or l < 2:
        raise ParamOutOfRange(f"Gasket needs d >= 2 and l >= 2, got d={d}, l={l}")
    n_cells = math.comb(l - 1 + d, d)
    if n_cells > max_cells:
        raise UnsupportedScale(f"gasket:{d},{l} has {n_cells} cells, above the cap of {max_cells}")
    cells = gasket_cells(d, l)
    n0 = d + 1

    def corner(o: tuple[int, ...], a: int) -> tuple[int, ...]:
        return tuple(x + (1 if k == a else 0) for k, x in enumerate(o))

    gluing = []
    for (i, oi), (j, oj) in itertools.combinations(enumerate(cells, start=1), 2):
        for a in range(n0):
            for b in range(n0):
                if corner(oi, a) == corner(oj, b):
                    gluing.append([i, a + 1, j, b + 1])
    return StructureSpec(
        n_symbols=len(cells),
        boundary_size=n0,
        gluing=gluing,
        anchors={str(a): a for a in range(1, n0 + 1)},
        name=f"gasket:{d},{l}",
    )


def complete_graph_form(n0: int, mode: Mode) -> np.ndarray:
    """D with -(n0 - 1) on the diagonal and 1 elsewhere."""
    return as_array([[-(n0 - 1) if i == j else 1 for j in range(n0)] for i in range(n0)], mode)


def gasket(
    d: int,
    l: int,
    mode: Mode = Mode.RATIONAL,
    tolerances: Tolerances | None = None,
    max_cells: int = ZOO_MAX_CELLS,
) -> Built:
    """Gasket with the complete-graph form and solved equal weights.

    Example:
        >>> _, hs = gasket(2, 2)
        >>> hs.r[0]
        Fraction(3, 5)
    """
    structure = build_structure(gasket_spec(d, l, max_cells))
    hs = build_harmonic_structure(structure, complete_graph_form(d + 1, mode), None, "mean", mode, tolerances)
    logger.debug("gasket:%d,%d has %d cells, r=%s", d, l, structure.n_symbols, format_scalar(hs.r[0]))
    return structure, hs


# Hata's tree-like set: q_1 = c, q_2 = 0, q_3 = 1

HATA_SPEC = StructureSpec(
    n_symbols=2,
    boundary_size=3,
    gluing=[[1, 1, 2, 2]],
    anchors={"1": [1, 3], "2": 1, "3": 2},
    name="hata",
)


def hata_form(r: Any, mode: Mode) -> np.ndarray:
    h = 1 / parse_scalar(r, mode)
    return as_array([[-h, h, 0], [h, -h - 1, 1], [0, 1, -1]], mode)


def hata(r: Any = "1/2", mode: Mode = Mode.RATIONAL, tolerances: Tolerances | None = None) -> Built:
    """Hata's set with weights (r, 1 - r^2) and Q pinned at q_3.

    Raises:
        ParamOutOfRange: r outside (0, 1)
    """
    rr = parse_scalar(r, mode)
    if not 0 < rr < 1:
        raise ParamOutOfRange(f"Hata parameter must satisfy 0 < r < 1, got {format_scalar(rr)}")
    structure = build_structure(HATA_SPEC)
    hs = build_harmonic_structure(
        structure, hata_form(rr, mode), [rr, 1 - rr * rr], {"pin": 3}, mode, tolerances
    )
    return structure, hs


def hata_closed_forms(r: Any, mode: Mode = Mode.RATIONAL) -> tuple[np.ndarray, np.ndarray]:
    """A_1, A_2 written out directly in terms of r."""
    rr = parse_scalar(r, mode)
    s = rr * rr
    A1 = as_array([[0, 1 - s, s], [0, 1, 0], [1, 0, 0]], mode)
    A2 = as_array([[0, 1 - s, s], [0, 1 - s, s], [0, 0, 1]], mode)
    return A1, A2


INTERVAL_SPEC = StructureSpec(
    n_symbols=2,
    boundary_size=2,
    gluing=[[1, 2, 2, 1]],
    anchors={"1": 1, "2": 2},
    name="interval",
)


def interval(mode: Mode = Mode.RATIONAL, tolerances: Tolerances | None = None) -> Built:
    structure = build_structure(INTERVAL_SPEC)
    hs = build_harmonic_structure(structure, [[-1, 1], [1, -1]], None, "mean", mode, tolerances)
    return structure, hs


# Family registry

@dataclass(frozen=True)
class Family:
    name: str
    syntax: str
    description: str
    builder: Callable[..., Built]


def _build_gasket(params: str, mode: Mode, tolerances: Tolerances | None, max_cells: int) -> Built:
    try:
        d, l = (int(x) for x in params.split(","))
    except ValueError:
        raise ConfigError(f"gasket expects 'd,l', got {params!r}") from None
    return gasket(d, l, mode, tolerances, max_cells)


def _build_hata(params: str, mode: Mode, tolerances: Tolerances | None, max_cells: int) -> Built:
    return hata(params or "1/2", mode, tolerances)


def _build_interval(params: str, mode: Mode, tolerances: Tolerances | None, max_cells: int) -> Built:
    if params:
        raise ConfigError("interval takes no parameters")
    return interval(mode, tolerances)


FAMILIES: dict[str, Family] = {
    "gasket": Family("gasket", "gasket:d,l", "d-dimensional level-l Sierpinski gasket", _build_gasket),
    "hata": Family("hata", "hata:r", "Hata's tree-like set, weights (r, 1-r^2)", _build_hata),
    "interval": Family("interval", "interval", "unit interval, two halves, r = 1/2", _build_interval),
}


def from_family(
    text: str,
    mode: Mode = Mode.RATIONAL,
    tolerances: Tolerances | None = None,
    max_cells: int = ZOO_MAX_CELLS,
) -> Built:
    """Build a family member from ``name:params``.

    Example:
        >>> structure, hs = from_family("hata:1/3")
    """
    name, _, params = text.strip().partition(":")
    family = FAMILIES.get(name.lower())
    if family is None:
        raise ConfigError(f"Unknown family '{name}'. Available: {sorted(FAMILIES)}")
    return family.builder(params.strip(), mode, tolerances, max_cells)


# Checks

@dataclass
class NondegeneracyRow:
    symbol: int
    det: Any
    condition: float
    degenerate: bool


def nondegeneracy_check(hs: HarmonicStructure) -> list[NondegeneracyRow]:
    """det A_i and its condition number per symbol; |det| <= tolerance is degenerate."""
    rows = []
    for i in range(hs.n_symbols):
        det = determinant(hs.A[i], hs.mode)
        singular = det == 0 if hs.mode is Mode.RATIONAL else abs(det) <= hs.tolerances.determinant
        cond = math.inf if singular else float(np.linalg.cond(hs.A[i].astype(np.float64)))
        rows.append(NondegeneracyRow(symbol=i + 1, det=det, condition=cond, degenerate=bool(singular)))
    return rows


@dataclass
class EigenReport:
    q: int
    symbol: int
    r: Any
    left_residual: float
    right_residual: float
    pairing: Any
    pairing_ok: bool
    eigenvalues: list[complex]
    gap_ok: bool

    @property
    def ok(self) -> bool:
        return self.pairing_ok and self.gap_ok and self.left_residual <= 1e-10 and self.right_residual <= 1e-10


def _corner_symbol(hs: HarmonicStructure, q: int) -> int:
    anchor = hs.structure.anchors.get(q)
    if anchor is None or anchor.index != q:
        raise NotAnchored(f"q_{q} is not the fixed point of a contraction")
    return anchor.symbol


def _corner_vectors(hs: HarmonicStructure, q: int) -> tuple[np.ndarray, np.ndarray]:
    n0 = hs.boundary_size
    d = n0 - 1
    u = as_array([-d if a == q else 1 for a in range(1, n0 + 1)], hs.mode)
    v = as_array([0 if a == q else 1 for a in range(1, n0 + 1)], hs.mode)
    return u, v


def _residual(x: np.ndarray, ref: np.ndarray) -> float:
    scale = max(1.0, max(abs(float(t)) for t in ref))
    return max(abs(float(t)) for t in x) / scale


def boundary_eigencheck(hs: HarmonicStructure, q: int) -> EigenReport:
    """A_q^T u_q = r u_q, A_q v_q = r v_q, (u_q, v_q) = d, other |lambda| < r.

    Raises:
        NotAnchored: q is not the fixed point of some psi_i
    """
    symbol = _corner_symbol(hs, q)
    A = hs.A[symbol - 1]
    r = hs.r[symbol - 1]
    u, v = _corner_vectors(hs, q)
    left = A.T @ u - r * u
    right = A @ v - r * v
    pairing = (u * v).sum()
    d = hs.boundary_size - 1

    eig = np.linalg.eigvals(A.astype(np.float64))
    rest = list(eig)
    for target in (1.0, float(r)):
        k = int(np.argmin([abs(x - target) for x in rest]))
        rest.pop(k)
    gap_ok = all(abs(x) < float(r) - hs.tolerances.eigen for x in rest)
    return EigenReport(
        q=q,
        symbol=symbol,
        r=r,
        left_residual=_residual(left, u),
        right_residual=_residual(right, v),
        pairing=pairing,
        pairing_ok=bool(pairing == d),
        eigenvalues=sorted(eig.tolist(), key=lambda x: -abs(x)),
        gap_ok=gap_ok,
    )


@dataclass
class BlowupReport:
    q: int
    distances: list[float]
    coefficient: Any

    @property
    def converging(self) -> bool:
        tol = 1e-12
        steps_ok = all(b <= a + tol for a, b in zip(self.distances, self.distances[1:]))
        return steps_ok and self.distances[-1] <= self.distances[0] + tol


def corner_blowup(hs: HarmonicStructure, q: int, values: Any, n: int) -> BlowupReport:
    """Distances ||r^{-k} P A_q^k u - ((u_q, u)/d) P v_q|| for k = 1..n."""
    symbol = _corner_symbol(hs, q)
    A = hs.A[symbol - 1]
    r = hs.r[symbol - 1]
    u_q, v_q = _corner_vectors(hs, q)
    u = as_array(values, hs.mode)
    coefficient = (u_q * u).sum() / (hs.boundary_size - 1)
    target = hs.P @ v_q * coefficient
    distances = []
    current = u
    for k in range(1, n + 1):
        current = A @ current
        diff = (hs.P @ current) / r ** k - target
        distances.append(math.sqrt(sum(float(x) ** 2 for x in diff)))
    return BlowupReport(q=q, distances=distances, coefficient=coefficient)


@dataclass
class FdomReport:
    level: int
    min_ratio: float
    zero_cells: list[str]
    cells: int

    @property
    def dominant(self) -> bool:
        return not self.zero_cells and self.min_ratio > 0


def fdom_probe(hs: HarmonicStructure, h: PiecewiseHarmonicFn, m: int, threads: int = 1) -> FdomReport:
    """min over cells of nu_h(K_w) / nu(K_w) with nu = sum_q nu_{h_q}.

    Raises:
        ConstantFunction: h is constant
    """
    if h.is_constant(hs.tolerances.eigen):
        raise ConstantFunction("F_dom probe needs a nonconstant function")
    basis = boundary_basis(hs)
    gram = cell_gram_tables(hs, [h] + basis, m, threads)
    nu_h = gram[:, 0, 0]
    nu = sum((gram[:, i, i] for i in range(2, len(basis) + 1)), gram[:, 1, 1])
    zero_mass = hs.tolerances.zero_mass
    h_scale = float(np.abs(nu_h.astype(np.float64)).sum())
    scale = float(np.abs(nu.astype(np.float64)).sum())
    ratios = []
    zero = []
    for i, (a, b) in enumerate(zip(nu_h, nu)):
        ratio = 1.0 if is_negligible(b, scale, zero_mass) else float(a / b)
        ratios.append(ratio)
        if is_negligible(a, h_scale, zero_mass):
            zero.append(format_word(word_at(i, m, hs.n_symbols)))
    if zero:
        logger.warning("nu_h vanishes on %d of %d cells at level %d", len(zero), len(ratios), m)
    return FdomReport(level=m, min_ratio=min(ratios), zero_cells=zero, cells=len(ratios))


def symmetric_spectrum(hs: HarmonicStructure, symbol: int) -> list[float]:
    """Sorted |eigenvalues| of A_symbol, used to compare corner cells."""
    return sorted(abs(x) for x in np.linalg.eigvals(hs.A[symbol - 1].astype(np.float64)))


def exact_characteristic_roots(hs: HarmonicStructure, symbol: int) -> dict[Any, int]:
    """Exact eigenvalues of A_symbol with multiplicities (rational mode)."""
    return dict(to_sympy(hs.A[symbol - 1]).eigenvals())
