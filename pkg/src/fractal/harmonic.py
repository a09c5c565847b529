"""Harmonic structures and piecewise harmonic functions.

Conventions:
    - D is the boundary form; E^(0)(u, v) = -u^T D v.
    - E^(m)(u, v) = sum over w in W_m of (1/r_w) E^(0)(u o psi_w, v o psi_w).
    - A_i maps boundary values of a harmonic function to the boundary values of
      its restriction to cell i, so cell w = w_1..w_m carries A_{w_m}...A_{w_1}.
    - Q is a projection onto constants of the form 1 a^T with a^T 1 = 1, P = I - Q.

Everything works in either scalar mode; rational mode is exact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Any, Mapping, Sequence

import numpy as np
from pydantic import BaseModel

from src.core.config_loader import Tolerances
from src.core.errors import (
    AsymmetricInput,
    ConfigError,
    HarmonicError,
    LevelMismatch,
    MissingVertexValue,
    NotHarmonic,
    NotProportional,
    NotRegular,
    SingularInteriorBlock,
    StructureError,
)
from src.core.scalars import (
    Mode,
    as_array,
    format_scalar,
    frobenius_sq,
    identity,
    infer_mode,
    parse_scalar,
    relative_residual,
    solve,
    to_sympy,
    zeros,
)
from src.fractal.structure import SelfSimilarStructure, StructureSpec, VertexId, Word, cell_index

logger = logging.getLogger(__name__)

Projection = str | Mapping[str, int]


class HarmonicSpec(BaseModel):
    """JSON form of a harmonic structure.

    ``r`` may be omitted (or the string "solve") to request the equal-weight
    renormalization solver. ``structure`` optionally embeds the structure.
    """
    D: list[list[int | str | float]]
    r: list[int | str | float] | str | None = None
    Q: str | dict[str, int] = "mean"
    structure: StructureSpec | None = None
    name: str | None = None

    model_config = {"extra": "ignore"}

    @property
    def solve(self) -> bool:
        return self.r is None or (isinstance(self.r, str) and self.r.lower() == "solve")


@dataclass
class BoundaryFormReport:
    """Outcome of the (D1)-(D3) checks on a boundary form."""
    d1_ok: bool
    d2_ok: bool
    d3_ok: bool
    eigenvalues: list[float]
    kernel_dim: int

    @property
    def ok(self) -> bool:
        return self.d1_ok and self.d2_ok and self.d3_ok

    def checks(self) -> list[tuple[str, bool]]:
        return [("D1 nonpositive definite", self.d1_ok), ("D2 kernel is constants", self.d2_ok),
                ("D3 off-diagonal nonnegative", self.d3_ok)]

    def failures(self) -> list[str]:
        return [name for name, ok in self.checks() if not ok]

    def to_dict(self) -> dict[str, Any]:
        return {
            "ok": self.ok,
            "checks": {name: ok for name, ok in self.checks()},
            "eigenvalues": self.eigenvalues,
            "kernel_dim": self.kernel_dim,
        }


@dataclass
class RenormalizationResult:
    """Equal-weight renormalization: trace(unit weights) = rho * D."""
    rho: Any
    residual: float
    trace: np.ndarray


@dataclass(frozen=True, eq=False)
class PiecewiseHarmonicFn:
    """Element of H_k given by its values on V_k (in V_k's sorted vertex order)."""
    level: int
    values: np.ndarray
    label: str = ""

    @property
    def mode(self) -> Mode:
        return infer_mode(self.values)

    def is_constant(self, atol: float = 0.0) -> bool:
        if self.values.size == 0:
            return True
        first = self.values[0]
        if self.mode is Mode.RATIONAL:
            return all(v == first for v in self.values)
        return bool(np.max(np.abs(self.values - first)) <= atol * max(1.0, float(np.max(np.abs(self.values)))))

    def with_label(self, label: str) -> "PiecewiseHarmonicFn":
        return PiecewiseHarmonicFn(self.level, self.values, label)


@dataclass(frozen=True, eq=False)
class HarmonicStructure:
    """Verified (D, r) on a structure with cached extension matrices.

    Attributes:
        D: n0 x n0 boundary form
        r: per-symbol weights
        A: (N, n0, n0) extension matrices
        A_proj: (N, n0, n0) matrices P A_i
        Q, P: projection onto constants and its complement
        projection: "mean" or "pin:k"
        residual: relative Frobenius residual of trace(E^(1)) against D
    """
    structure: SelfSimilarStructure
    D: np.ndarray
    r: np.ndarray
    A: np.ndarray
    A_proj: np.ndarray
    Q: np.ndarray
    P: np.ndarray
    projection: str
    mode: Mode
    residual: float
    tolerances: Tolerances = field(default_factory=Tolerances)
    _weight_cache: dict[int, np.ndarray] = field(default_factory=dict, init=False, repr=False)

    @property
    def n_symbols(self) -> int:
        return self.structure.n_symbols

    @property
    def boundary_size(self) -> int:
        return self.structure.boundary_size

    def cell_weights(self, m: int) -> np.ndarray:
        """r_w for every w in W_m, lexicographic order."""
        if m not in self._weight_cache:
            self.structure.cell_count(m)
            weights = as_array([1], self.mode)
            for _ in range(m):
                weights = (weights[:, None] * self.r[None, :]).reshape(-1)
            self._weight_cache[m] = weights
        return self._weight_cache[m]

    def word_weight(self, word: Word) -> Any:
        out = parse_scalar(1, self.mode)
        for s in word:
            out = out * self.r[s - 1]
        return out

    def word_matrix(self, word: Word) -> np.ndarray:
        """A_w = A_{w_m} ... A_{w_1}."""
        out = identity(self.boundary_size, self.mode)
        for s in word:
            out = self.A[s - 1] @ out
        return out

    def projected_word_matrix(self, word: Word) -> np.ndarray:
        return self.P @ self.word_matrix(word)

    def function(self, level: int, values: Any, label: str = "") -> PiecewiseHarmonicFn:
        return project_Hn(self, values, level, label=label)

    def to_spec(self) -> HarmonicSpec:
        q: str | dict[str, int] = self.projection
        if self.projection.startswith("pin:"):
            q = {"pin": int(self.projection.split(":", 1)[1])}
        return HarmonicSpec(
            D=[[format_scalar(x) for x in row] for row in self.D.tolist()],
            r=[format_scalar(x) for x in self.r.tolist()],
            Q=q,
            structure=self.structure.to_spec(),
            name=self.structure.name,
        )


# Boundary forms and level-1 traces

def _in_mode(x: Any, mode: Mode) -> np.ndarray:
    if isinstance(x, np.ndarray) and infer_mode(x) is mode:
        return x
    return as_array(x, mode)


def _check_symmetric(D: np.ndarray, tol: float) -> None:
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise AsymmetricInput(f"Boundary form must be square, got shape {D.shape}")
    diff = D - D.T
    worst = max((abs(float(x)) for x in diff.ravel()), default=0.0)
    if worst > tol:
        raise AsymmetricInput(f"Boundary form is not symmetric (max |D - D^T| = {worst:.3g})")


def validate_boundary_form(D: Any, mode: Mode = Mode.RATIONAL, tolerances: Tolerances | None = None) -> BoundaryFormReport:
    """Check (D1) nonpositive definite, (D2) kernel = constants, (D3) off-diagonals >= 0.

    Example:
        >>> validate_boundary_form([[-2, 1, 1], [1, -2, 1], [1, 1, -2]]).ok
        True
    """
    tol = tolerances or Tolerances()
    D = _in_mode(D, mode)
    _check_symmetric(D, tol.symmetry)
    n = D.shape[0]

    eigenvalues = sorted(np.linalg.eigvalsh(D.astype(np.float64)).tolist(), reverse=True)
    scale = max(1.0, max(abs(x) for x in eigenvalues))
    ones = as_array([1] * n, mode)

    if mode is Mode.RATIONAL:
        kernel = to_sympy(D).nullspace()
        kernel_dim = len(kernel)
        constants_killed = all(x == 0 for x in D @ ones)
        # exact semidefiniteness: -D is PSD iff all principal minors of -D are >= 0
        d1 = _exact_nonpositive(D)
    else:
        kernel_dim = sum(1 for x in eigenvalues if abs(x) <= tol.eigen * scale)
        constants_killed = bool(np.max(np.abs(D @ ones)) <= tol.eigen * scale)
        d1 = all(x <= tol.eigen * scale for x in eigenvalues)

    off = [D[i, j] for i in range(n) for j in range(n) if i != j]
    d3 = all(x >= 0 for x in off) if mode is Mode.RATIONAL else all(x >= -tol.symmetry for x in off)
    return BoundaryFormReport(
        d1_ok=bool(d1),
        d2_ok=kernel_dim == 1 and constants_killed,
        d3_ok=bool(d3),
        eigenvalues=eigenvalues,
        kernel_dim=kernel_dim,
    )


def _exact_nonpositive(D: np.ndarray) -> bool:
    neg = to_sympy(-D)
    n = neg.rows
    for k in range(1, n + 1):
        for rows in combinations(range(n), k):
            if neg.extract(list(rows), list(rows)).det() < 0:
                return False
    return True


def _level_one_form(structure: SelfSimilarStructure, D: np.ndarray, weights: np.ndarray, mode: Mode) -> np.ndarray:
    v1 = structure.vertex_set(1)
    M = zeros((v1.size, v1.size), mode)
    for i in range(structure.n_symbols):
        inc = v1.incidence[i]
        M[np.ix_(inc, inc)] += D / weights[i]
    return M


def _split_boundary(structure: SelfSimilarStructure) -> tuple[list[int], list[int]]:
    boundary = structure.boundary_positions()
    if len(set(boundary)) != len(boundary):
        raise StructureError(f"Boundary points collapse inside V_1 at positions {boundary}")
    taken = set(boundary)
    interior = [p for p in range(structure.vertex_set(1).size) if p not in taken]
    return boundary, interior


def _interior_solve(M: np.ndarray, boundary: list[int], interior: list[int], mode: Mode) -> np.ndarray:
    """X = M_II^{-1} M_IB."""
    M_II = M[np.ix_(interior, interior)]
    M_IB = M[np.ix_(interior, boundary)]
    try:
        return solve(M_II, M_IB, mode)
    except np.linalg.LinAlgError:
        raise SingularInteriorBlock(
            f"Level-1 interior block ({len(interior)} vertices) is singular; "
            f"some cell is not connected to the boundary"
        ) from None


def trace_to_boundary(structure: SelfSimilarStructure, D: Any, weights: Any, mode: Mode = Mode.RATIONAL) -> np.ndarray:
    """Schur complement of the level-1 form onto V_0.

    Returns the boundary form D' with E^(0)_{D'}(v, v) = inf E^(1)(u, u) over u
    with u|V_0 = v.

    Example:
        >>> trace_to_boundary(gasket_structure, gasket_D, [1, 1, 1])  # (3/5) D
    """
    D = _in_mode(D, mode)
    weights = as_array(weights, mode)
    M = _level_one_form(structure, D, weights, mode)
    boundary, interior = _split_boundary(structure)
    M_BB = M[np.ix_(boundary, boundary)]
    if not interior:
        return M_BB
    X = _interior_solve(M, boundary, interior, mode)
    return M_BB - M[np.ix_(boundary, interior)] @ X


def verify_harmonic_structure(structure: SelfSimilarStructure, D: Any, r: Any, mode: Mode = Mode.RATIONAL) -> float:
    """Relative Frobenius residual ||trace(D, r) - D|| / ||D||; 0.0 means exact."""
    D = _in_mode(D, mode)
    trace = trace_to_boundary(structure, D, r, mode)
    return relative_residual(trace - D, D)


def solve_renormalization(
    structure: SelfSimilarStructure,
    D: Any,
    mode: Mode = Mode.RATIONAL,
    tolerance: float = 1e-9,
) -> RenormalizationResult:
    """Equal weights r_i = rho with trace(E^(1)) = D.

    The unit-weight trace T must be a scalar multiple of D; rho is the
    least-squares ratio <T, D> / <D, D>, which is exact when T is proportional.

    Raises:
        NotProportional: T is not a multiple of D within ``tolerance`` (relative)

    Example:
        >>> solve_renormalization(gasket_structure, gasket_D).rho
        Fraction(3, 5)
    """
    D = _in_mode(D, mode)
    ones = as_array([1] * structure.n_symbols, mode)
    T = trace_to_boundary(structure, D, ones, mode)
    dd = frobenius_sq(D)
    if dd == 0:
        raise NotProportional("Boundary form is zero")
    rho = (T * D).sum() / dd
    residual = relative_residual(T - rho * D, D)
    if residual > tolerance or not rho > 0:
        raise NotProportional(
            f"Unit-weight trace is not a positive multiple of D "
            f"(best ratio {float(rho):.6g}, residual {residual:.3g} > {tolerance:g}); "
            f"supply explicit weights instead"
        )
    logger.debug("Renormalization of %s: rho=%s residual=%.3g", structure.name, rho, residual)
    return RenormalizationResult(rho=rho, residual=residual, trace=T)


# Building harmonic structures

def projection_matrix(projection: Projection, n0: int, mode: Mode) -> tuple[np.ndarray, str]:
    """Q for "mean" or a pinned boundary point ({"pin": k} or "pin:k")."""
    if isinstance(projection, Mapping):
        if set(projection) != {"pin"}:
            raise ConfigError(f"Projection object must be {{\"pin\": k}}, got {dict(projection)}")
        pin = int(projection["pin"])
    else:
        text = str(projection).strip().lower()
        if text == "mean":
            Q = zeros((n0, n0), mode) + parse_scalar(f"1/{n0}", mode)
            return Q, "mean"
        if text.startswith("pin"):
            try:
                pin = int(text[3:].lstrip(": "))
            except ValueError:
                raise ConfigError(f"Cannot parse projection {projection!r}") from None
        else:
            raise ConfigError(f"Unknown projection {projection!r}; use 'mean' or 'pin:k'")
    if not 1 <= pin <= n0:
        raise ConfigError(f"Projection pin {pin} outside boundary indices 1..{n0}")
    Q = zeros((n0, n0), mode)
    Q[:, pin - 1] = parse_scalar(1, mode)
    return Q, f"pin:{pin}"


def extension_matrices(structure: SelfSimilarStructure, D: np.ndarray, r: np.ndarray, mode: Mode) -> np.ndarray:
    """(N, n0, n0) stack of A_i from the level-1 harmonic extension."""
    M = _level_one_form(structure, D, r, mode)
    boundary, interior = _split_boundary(structure)
    n0 = structure.boundary_size
    H = zeros((M.shape[0], n0), mode)
    H[boundary, :] = identity(n0, mode)
    if interior:
        H[interior, :] = -_interior_solve(M, boundary, interior, mode)
    incidence = structure.vertex_set(1).incidence
    return np.stack([H[incidence[i]] for i in range(structure.n_symbols)])


def build_harmonic_structure(
    structure: SelfSimilarStructure,
    D: Any,
    r: Any | None = None,
    projection: Projection = "mean",
    mode: Mode = Mode.RATIONAL,
    tolerances: Tolerances | None = None,
) -> HarmonicStructure:
    """Validate (D, r), solve for r when omitted, and cache A_i, A'_i.

    Raises:
        AsymmetricInput: D is not symmetric
        HarmonicError: D fails (D1)-(D3)
        NotProportional: r omitted and the equal-weight solve fails
        NotRegular: some r_i outside (0, 1)
        NotHarmonic: trace(E^(1)) differs from D beyond tolerance
    """
    tol = tolerances or Tolerances()
    n0 = structure.boundary_size
    D = as_array(D, mode)
    if D.shape != (n0, n0):
        raise HarmonicError(f"D must be {n0}x{n0} for this structure, got {D.shape}")
    report = validate_boundary_form(D, mode, tol)
    if not report.ok:
        raise HarmonicError(f"Boundary form fails {', '.join(report.failures())}")

    if r is None or (isinstance(r, str) and r.lower() == "solve"):
        rho = solve_renormalization(structure, D, mode, tol.proportionality).rho
        r_arr = as_array([rho] * structure.n_symbols, mode)
    else:
        r_arr = as_array(list(r), mode)
        if r_arr.shape != (structure.n_symbols,):
            raise HarmonicError(f"Expected {structure.n_symbols} weights, got {r_arr.shape[0]}")

    bad = [i + 1 for i, x in enumerate(r_arr) if not 0 < x < 1]
    if bad:
        raise NotRegular(f"Weights must satisfy 0 < r_i < 1; violated for symbols {bad}")

    residual = verify_harmonic_structure(structure, D, r_arr, mode)
    if residual > tol.proportionality:
        raise NotHarmonic(
            f"trace(E^(1)) differs from D: relative residual {residual:.3g} > {tol.proportionality:g}"
        )

    A = extension_matrices(structure, D, r_arr, mode)
    Q, proj_name = projection_matrix(projection, n0, mode)
    P = identity(n0, mode) - Q
    A_proj = np.stack([P @ A[i] for i in range(structure.n_symbols)])
    logger.debug("Harmonic structure on %s: r=%s residual=%.3g", structure.name, r_arr.tolist(), residual)
    return HarmonicStructure(
        structure=structure, D=D, r=r_arr, A=A, A_proj=A_proj, Q=Q, P=P,
        projection=proj_name, mode=mode, residual=residual, tolerances=tol,
    )


def harmonic_from_spec(
    spec: HarmonicSpec | dict[str, Any],
    structure: SelfSimilarStructure,
    mode: Mode = Mode.RATIONAL,
    tolerances: Tolerances | None = None,
) -> HarmonicStructure:
    if isinstance(spec, dict):
        spec = HarmonicSpec.model_validate(spec)
    return build_harmonic_structure(
        structure, spec.D, None if spec.solve else spec.r, spec.Q, mode, tolerances
    )


# Graph energies

def _check_level_values(hs: HarmonicStructure, m: int, values: np.ndarray, what: str) -> None:
    size = hs.structure.vertex_set(m).size
    if values.shape != (size,):
        raise LevelMismatch(f"{what} has {values.shape[0]} values but V_{m} has {size} vertices")


def cell_energies(hs: HarmonicStructure, m: int, u: np.ndarray, v: np.ndarray | None = None) -> np.ndarray:
    """Per-cell terms (1/r_w) E^(0)(u o psi_w, v o psi_w) at level m."""
    incidence = hs.structure.vertex_set(m).incidence
    U = u[incidence]
    V = U if v is None else v[incidence]
    return -((U @ hs.D) * V).sum(axis=1) / hs.cell_weights(m)


def graph_energy(hs: HarmonicStructure, m: int, u: Any, v: Any | None = None) -> Any:
    """E^(m)(u, v) for vertex data on V_m.

    Example:
        >>> graph_energy(gasket, 0, [1, 0, 0])
        Fraction(2, 1)
    """
    u = _in_mode(u, hs.mode)
    _check_level_values(hs, m, u, "u")
    if v is not None:
        v = _in_mode(v, hs.mode)
        _check_level_values(hs, m, v, "v")
    return cell_energies(hs, m, u, v).sum()


def energy(hs: HarmonicStructure, f: PiecewiseHarmonicFn) -> Any:
    """E(f) = E^(k)(f, f) for f in H_k."""
    return graph_energy(hs, f.level, f.values)


def mutual_energy(hs: HarmonicStructure, f: PiecewiseHarmonicFn, g: PiecewiseHarmonicFn) -> Any:
    level = max(f.level, g.level)
    return graph_energy(hs, level, harmonic_extend(hs, f, level).values, harmonic_extend(hs, g, level).values)


# Piecewise harmonic functions

def project_Hn(hs: HarmonicStructure, values: Any, n: int, label: str = "") -> PiecewiseHarmonicFn:
    """H_n(f): the element of H_n with the given values on V_n.

    ``values`` is either a sequence in V_n order or a mapping VertexId -> value.

    Raises:
        MissingVertexValue: A vertex of V_n has no value
        LevelMismatch: A sequence of the wrong length
    """
    vs = hs.structure.vertex_set(n)
    if isinstance(values, Mapping):
        missing = [v for v in vs.vertices if v not in values]
        if missing:
            raise MissingVertexValue(f"No value for {len(missing)} vertices of V_{n}, first {missing[0]}")
        arr = as_array([values[v] for v in vs.vertices], hs.mode)
    else:
        arr = _in_mode(values, hs.mode)
        if arr.ndim != 1:
            raise LevelMismatch(f"Vertex values must be one-dimensional, got shape {arr.shape}")
        if arr.shape[0] < vs.size:
            raise MissingVertexValue(f"Got {arr.shape[0]} values for the {vs.size} vertices of V_{n}")
        _check_level_values(hs, n, arr, "values")
    return PiecewiseHarmonicFn(level=n, values=arr, label=label)


def boundary_function(hs: HarmonicStructure, values: Sequence[Any], label: str = "") -> PiecewiseHarmonicFn:
    """iota(u): the harmonic function with boundary values u."""
    return project_Hn(hs, list(values), 0, label=label or "boundary")


def basis_function(hs: HarmonicStructure, q: int) -> PiecewiseHarmonicFn:
    """h_q = iota(e_q), 1-based q."""
    n0 = hs.boundary_size
    if not 1 <= q <= n0:
        raise ConfigError(f"Boundary index {q} outside 1..{n0}")
    return boundary_function(hs, [1 if a == q else 0 for a in range(1, n0 + 1)], label=f"h_q{q}")


def random_function(hs: HarmonicStructure, seed: int, level: int = 1, low: int = -5, high: int = 5) -> PiecewiseHarmonicFn:
    """Integer vertex data on V_level drawn from numpy's default generator."""
    rng = np.random.default_rng(seed)
    size = hs.structure.vertex_set(level).size
    data = rng.integers(low, high + 1, size=size).tolist()
    return project_Hn(hs, data, level, label=f"random:{seed}:{level}")


def refine_boundary_data(A: np.ndarray, B: np.ndarray, depth: int) -> np.ndarray:
    """Refine per-cell boundary data (C, n0, F) by ``depth`` levels: B_{w.i} = A_i B_w.

    Children stay contiguous, so the output is in lexicographic word order.
    """
    n_symbols = A.shape[0]
    for _ in range(depth):
        C = B.shape[0]
        children = np.stack([A[i] @ B for i in range(n_symbols)], axis=1)
        B = children.reshape((C * n_symbols,) + B.shape[1:])
    return B


def descend_cells(hs: HarmonicStructure, B: np.ndarray, depth: int) -> np.ndarray:
    return refine_boundary_data(hs.A, B, depth)


def cell_boundary_values(hs: HarmonicStructure, fns: Sequence[PiecewiseHarmonicFn], level: int) -> np.ndarray:
    """(C_level, n0, F) boundary values of every function on every cell of W_level."""
    base = max(f.level for f in fns)
    if level < base:
        raise LevelMismatch(f"Cannot read cells at level {level} below function level {base}")
    incidence = hs.structure.vertex_set(base).incidence
    B = np.stack([harmonic_extend(hs, f, base).values[incidence] for f in fns], axis=-1)
    return descend_cells(hs, B, level - base)


def harmonic_extend(hs: HarmonicStructure, f: PiecewiseHarmonicFn, n: int) -> PiecewiseHarmonicFn:
    """Values on V_n of the piecewise harmonic f (n >= f.level).

    Raises:
        LevelMismatch: n < f.level
        LevelOverflow: N^n above the cell cap
    """
    if n < f.level:
        raise LevelMismatch(f"Cannot extend a level-{f.level} function down to level {n}")
    if n == f.level:
        return f
    hs.structure.cell_count(n)
    incidence = hs.structure.vertex_set(f.level).incidence
    U = descend_cells(hs, f.values[incidence][:, :, None], n - f.level)[:, :, 0]
    target = hs.structure.vertex_set(n)
    values = zeros(target.size, hs.mode)
    values[target.incidence.ravel()] = U.ravel()
    return PiecewiseHarmonicFn(level=n, values=values, label=f.label)


def restrict(hs: HarmonicStructure, f: PiecewiseHarmonicFn, k: int) -> PiecewiseHarmonicFn:
    """Values on V_k; extends harmonically when k is above f.level."""
    if k >= f.level:
        return harmonic_extend(hs, f, k)
    positions = hs.structure.embed(k, f.level)
    return PiecewiseHarmonicFn(level=k, values=f.values[positions], label=f.label)


def linear_combination(
    hs: HarmonicStructure,
    coeffs: Sequence[Any],
    fns: Sequence[PiecewiseHarmonicFn],
    constant: Any = 0,
    label: str = "",
) -> PiecewiseHarmonicFn:
    """sum_j c_j f_j + constant at the deepest level among fns.

    Example:
        >>> linear_combination(hs, [3], [g], constant=5)  # 3g + 5
    """
    if len(coeffs) != len(fns) or not fns:
        raise ConfigError("linear_combination needs one coefficient per function")
    level = max(f.level for f in fns)
    total = zeros(hs.structure.vertex_set(level).size, hs.mode) + parse_scalar(constant, hs.mode)
    for c, f in zip(coeffs, fns):
        total = total + parse_scalar(c, hs.mode) * harmonic_extend(hs, f, level).values
    return PiecewiseHarmonicFn(level=level, values=total, label=label)


def pullback(hs: HarmonicStructure, f: PiecewiseHarmonicFn, word: Word) -> PiecewiseHarmonicFn:
    """psi_w^* f = f o psi_w, a function of level max(f.level - |w|, 0).

    Example:
        >>> pullback(gasket, basis_function(gasket, 1), (1,)).values
        array([Fraction(1, 1), Fraction(2, 5), Fraction(2, 5)], dtype=object)
    """
    target_level = max(f.level - len(word), 0)
    n = target_level + len(word)
    fn = harmonic_extend(hs, f, n)
    vn = hs.structure.vertex_set(n)
    vt = hs.structure.vertex_set(target_level)
    values = zeros(vt.size, hs.mode)
    for j, v in enumerate(vt.vertices):
        row = cell_index(tuple(word) + v.word, hs.n_symbols)
        values[j] = fn.values[vn.incidence[row, v.index - 1]]
    return PiecewiseHarmonicFn(level=target_level, values=values, label=f.label)


@dataclass
class MonotonicityReport:
    coarse: Any
    fine: Any
    holds: bool
    harmonic: bool


def energy_monotonicity(hs: HarmonicStructure, u: Any, m: int) -> MonotonicityReport:
    """Compare E^(m)(u|V_m) with E^(m+1)(u) for raw data on V_{m+1}."""
    fine_values = _in_mode(u, hs.mode)
    _check_level_values(hs, m + 1, fine_values, "u")
    coarse_values = fine_values[hs.structure.embed(m, m + 1)]
    coarse = graph_energy(hs, m, coarse_values)
    fine = graph_energy(hs, m + 1, fine_values)
    slack = 0 if hs.mode is Mode.RATIONAL else hs.tolerances.audit * max(1.0, abs(float(fine)))
    harmonic_values = harmonic_extend(hs, PiecewiseHarmonicFn(m, coarse_values), m + 1).values
    if hs.mode is Mode.RATIONAL:
        is_harmonic = all(a == b for a, b in zip(harmonic_values, fine_values))
    else:
        is_harmonic = bool(np.allclose(harmonic_values, fine_values, atol=hs.tolerances.audit))
    return MonotonicityReport(coarse=coarse, fine=fine, holds=bool(coarse <= fine + slack), harmonic=is_harmonic)


def self_similarity_gap(hs: HarmonicStructure, f: PiecewiseHarmonicFn) -> Any:
    """E(f) - sum_i (1/r_i) E(psi_i^* f); zero for piecewise harmonic f."""
    parts = [energy(hs, pullback(hs, f, (i,))) / hs.r[i - 1] for i in range(1, hs.n_symbols + 1)]
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    return energy(hs, f) - total


def vertex_value(hs: HarmonicStructure, f: PiecewiseHarmonicFn, vertex: VertexId) -> Any:
    return f.values[hs.structure.vertex_set(f.level).lookup[vertex]]
