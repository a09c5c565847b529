"""Scalar backend: exact rationals or 64-bit floats behind one array API.

Rational mode keeps numpy object arrays of ``fractions.Fraction`` so that the
same matmul/sum code runs in both modes; exact solves, ranks and determinants
are delegated to sympy. Float mode uses plain float64 arrays and numpy.linalg.
"""

from __future__ import annotations

import math
from enum import Enum
from fractions import Fraction
from typing import Any, Iterable

import numpy as np
import sympy

from src.core.errors import ConfigError

Scalar = Fraction | float


class Mode(str, Enum):
    """Arithmetic backend.

    Example:
        >>> Mode.from_string("Rational")
        <Mode.RATIONAL: 'rational'>
    """
    RATIONAL = "rational"
    FLOAT = "float"

    @classmethod
    def from_string(cls, value: str) -> "Mode":
        normalized = value.lower().strip()
        aliases = {"exact": "rational", "fraction": "rational", "double": "float", "f64": "float"}
        normalized = aliases.get(normalized, normalized)
        try:
            return cls(normalized)
        except ValueError:
            valid = [m.value for m in cls]
            raise ConfigError(f"Invalid mode '{value}'. Valid modes: {valid}") from None

    @property
    def dtype(self) -> Any:
        return object if self is Mode.RATIONAL else np.float64


def parse_scalar(value: Any, mode: Mode) -> Scalar:
    """Parse an int, decimal string, "p/q" string, Fraction or float.

    Rational mode refuses binary floats: a float literal such as 0.1 has no
    exact meaning, so inputs must be given as strings or rationals.

    Example:
        >>> parse_scalar("3/5", Mode.RATIONAL)
        Fraction(3, 5)
        >>> parse_scalar("3/5", Mode.FLOAT)
        0.6
    """
    if isinstance(value, bool):
        raise ConfigError(f"Boolean is not a scalar: {value!r}")
    if mode is Mode.FLOAT:
        if isinstance(value, str):
            try:
                return float(Fraction(value.strip()))
            except (ValueError, ZeroDivisionError) as e:
                raise ConfigError(f"Cannot parse scalar {value!r}: {e}") from None
        return float(value)

    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, sympy.Rational):
        return Fraction(int(value.p), int(value.q))
    if isinstance(value, float):
        if value.is_integer():
            return Fraction(int(value))
        raise ConfigError(
            f"Rational mode requires exact inputs; got float {value!r}. "
            f"Pass it as a string (e.g. \"{value}\") or switch to float mode."
        )
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as e:
            raise ConfigError(f"Cannot parse scalar {value!r}: {e}") from None
    raise ConfigError(f"Unsupported scalar type {type(value).__name__}: {value!r}")


def as_array(values: Any, mode: Mode) -> np.ndarray:
    """Build an array of the mode's scalar type from nested sequences."""
    if isinstance(values, np.ndarray):
        flat = [parse_scalar(_plain(v), mode) for v in values.ravel().tolist()]
        shape = values.shape
    else:
        raw = np.array(values, dtype=object)
        shape = raw.shape
        flat = [parse_scalar(v, mode) for v in raw.ravel().tolist()]
    out = np.empty(len(flat), dtype=mode.dtype)
    out[:] = flat
    return out.reshape(shape)


def _plain(v: Any) -> Any:
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def convert(arr: np.ndarray, mode: Mode) -> np.ndarray:
    """Convert an array into the given mode. Float -> rational is exact."""
    if mode is Mode.FLOAT:
        return np.asarray(arr, dtype=object).astype(np.float64)
    if arr.dtype == object:
        return arr
    flat = [Fraction(float(v)) for v in arr.ravel()]
    out = np.empty(len(flat), dtype=object)
    out[:] = flat
    return out.reshape(arr.shape)


def infer_mode(arr: np.ndarray) -> Mode:
    return Mode.RATIONAL if arr.dtype == object else Mode.FLOAT


def zeros(shape: int | tuple[int, ...], mode: Mode) -> np.ndarray:
    if mode is Mode.FLOAT:
        return np.zeros(shape)
    return np.full(shape, Fraction(0), dtype=object)


def identity(n: int, mode: Mode) -> np.ndarray:
    out = zeros((n, n), mode)
    for i in range(n):
        out[i, i] = Fraction(1) if mode is Mode.RATIONAL else 1.0
    return out


def to_sympy(arr: np.ndarray) -> sympy.Matrix:
    """Exact sympy matrix from a rational (or integer-valued) array."""
    rows = np.atleast_2d(arr)

    def _rat(x: Any) -> sympy.Rational:
        f = x if isinstance(x, Fraction) else Fraction(x)
        return sympy.Rational(f.numerator, f.denominator)

    return sympy.Matrix([[_rat(x) for x in row] for row in rows.tolist()])


def from_sympy(mat: sympy.Matrix, mode: Mode) -> np.ndarray:
    rows = [[sympy.Rational(x) for x in mat.row(i)] for i in range(mat.rows)]
    if mode is Mode.FLOAT:
        return np.array([[float(x) for x in row] for row in rows], dtype=np.float64)
    out = np.empty((mat.rows, mat.cols), dtype=object)
    for i, row in enumerate(rows):
        for j, x in enumerate(row):
            out[i, j] = Fraction(int(x.p), int(x.q))
    return out


def solve(a: np.ndarray, b: np.ndarray, mode: Mode) -> np.ndarray:
    """Solve a·x = b; raises numpy.linalg.LinAlgError when a is singular."""
    n = a.shape[0]
    if n == 0:
        return zeros((0,) + b.shape[1:], mode)
    if mode is Mode.FLOAT:
        if np.linalg.matrix_rank(a) < n:
            raise np.linalg.LinAlgError("singular matrix")
        return np.linalg.solve(a, b)
    sa = to_sympy(a)
    if sa.rank() < n:
        raise np.linalg.LinAlgError("singular matrix")
    return from_sympy(sa.LUsolve(to_sympy(b)), mode)


def exact_rank(arr: np.ndarray) -> int:
    return int(to_sympy(arr).rank())


def determinant(arr: np.ndarray, mode: Mode) -> Scalar:
    if mode is Mode.FLOAT:
        return float(np.linalg.det(arr))
    d = sympy.Rational(to_sympy(arr).det())
    return Fraction(int(d.p), int(d.q))


def is_zero(x: Scalar, atol: float = 0.0) -> bool:
    if isinstance(x, Fraction):
        return x == 0
    return abs(x) <= atol


def is_negligible(x: Scalar, scale: float, zero_mass: float) -> bool:
    """Exact zero for rationals; |x| <= zero_mass * scale for floats."""
    if isinstance(x, (float, np.floating)):
        return abs(x) <= zero_mass * scale
    return x == 0


def frobenius_sq(arr: np.ndarray) -> Scalar:
    return (arr * arr).sum()


def relative_residual(diff: np.ndarray, ref: np.ndarray) -> float:
    """‖diff‖_F / ‖ref‖_F as a float; exactly 0.0 when diff is exactly zero."""
    num = frobenius_sq(diff)
    if is_zero(num):
        return 0.0
    den = frobenius_sq(ref)
    if is_zero(den):
        return math.inf
    return math.sqrt(float(num / den))


def format_scalar(x: Any) -> str:
    """Stable text form: "p/q" for rationals, repr for floats."""
    if isinstance(x, Fraction):
        return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def to_float_list(values: Iterable[Any]) -> list[float]:
    return [float(v) for v in values]
