"""Exception types.

Every error carries a short machine-readable ``category`` so the CLI can
report failures on a single parseable line.
"""


class RfslError(Exception):
    category = "error"


class QuadratureOverflowError(RfslError):
    category = "quadrature-overflow"


class DegenerateGeometryError(RfslError):
    category = "degenerate-geometry"


class InfiniteAttenuationError(RfslError):
    category = "infinite-attenuation"


class InvalidSpacingError(RfslError):
    category = "invalid-spacing"


class ShapeMismatchError(RfslError):
    category = "shape-mismatch"


class TooFewNodesError(RfslError):
    category = "too-few-nodes"


class DivergenceError(RfslError):
    category = "non-finite-loss"


class SchemaError(RfslError):
    category = "schema-mismatch"


class ParseError(RfslError):
    category = "parse-error"


class ConfigKeyError(RfslError):
    category = "unknown-config-key"


class UnknownNodeError(RfslError):
    category = "unknown-node-id"


class EmptyStreamError(RfslError):
    category = "empty-stream"


class MissingReferenceError(RfslError):
    category = "missing-free-space-reference"
