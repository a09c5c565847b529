"""Exception hierarchy with machine-readable codes.

Every error raised by the library derives from FractalError and carries a
snake_case ``code`` plus the process exit code the CLI maps it to. Findings
(absolute-continuity violations, zero cells, audit failures) are never
raised; they are returned inside report objects.
"""

from __future__ import annotations


class FractalError(Exception):
    """Base class for all library errors.

    Attributes:
        code: Machine-readable identifier, stable across releases
        exit_code: Exit status used by the CLI (2 = config/input error)
    """

    code = "fractal_error"
    exit_code = 2

    def to_dict(self) -> dict[str, str]:
        return {"code": self.code, "message": str(self)}


class ConfigError(FractalError):
    code = "config_error"


# Structure
class StructureError(FractalError):
    code = "structure_error"


class DisconnectedStructure(StructureError):
    code = "disconnected_structure"


class InvalidSymbolIndex(StructureError):
    code = "invalid_symbol_index"


class DuplicateGluing(StructureError):
    code = "duplicate_gluing"


class LevelOverflow(StructureError):
    code = "level_overflow"


class NotAnchored(StructureError):
    code = "not_anchored"


# Harmonic structures
class HarmonicError(FractalError):
    code = "harmonic_error"


class AsymmetricInput(HarmonicError):
    code = "asymmetric_input"


class LevelMismatch(HarmonicError):
    code = "level_mismatch"


class SingularInteriorBlock(HarmonicError):
    code = "singular_interior_block"


class NotProportional(HarmonicError):
    code = "not_proportional"


class NotRegular(HarmonicError):
    code = "not_regular"


class NotHarmonic(HarmonicError):
    code = "not_harmonic"


class MissingVertexValue(HarmonicError):
    code = "missing_vertex_value"


# Measures and derivatives
class MeasureError(FractalError):
    code = "measure_error"


class LevelTooShallow(MeasureError):
    code = "level_too_shallow"


class NonpositiveCoefficient(MeasureError):
    code = "nonpositive_coefficient"


class ConstantReference(MeasureError):
    code = "constant_reference"


class ConstantFunction(MeasureError):
    code = "constant_function"


# Built-in families
class ZooError(FractalError):
    code = "zoo_error"


class UnsupportedScale(ZooError):
    code = "unsupported_scale"


class ParamOutOfRange(ZooError):
    code = "param_out_of_range"
