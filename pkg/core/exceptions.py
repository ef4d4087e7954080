"""
Error types raised by the pipeline.

All of them are ValidationErrors so that callers can treat any bad input,
whatever stage it was detected in, with a single except clause. Management
commands turn them into exit code 2.
"""
from django.core.exceptions import ValidationError


class PipelineError(ValidationError):
    """Base class for data and validation errors"""

    default_code = 'pipeline'

    def __init__(self, message, code=None, params=None):
        super().__init__(message, code=code or self.default_code, params=params)

    def __str__(self):
        return self.messages[0] if self.messages else self.default_code


class DegenerateInputError(PipelineError):
    default_code = 'degenerate'


class DimensionMismatchError(PipelineError):
    default_code = 'dimension_mismatch'


class NonFiniteInputError(PipelineError):
    default_code = 'non_finite'


class EmptyInputError(PipelineError):
    default_code = 'empty'


class RankError(PipelineError):
    """Requested dimension exceeds the numerically valid rank"""
    default_code = 'rank'


class DivergenceError(PipelineError):
    default_code = 'divergence'


class MatrixFormatError(PipelineError):
    default_code = 'matrix_format'


class ConfigError(PipelineError):
    default_code = 'config'


class GraphError(PipelineError):
    default_code = 'graph'
