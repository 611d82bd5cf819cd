"""
Exception hierarchy shared by every module.

Each class carries a short ``category`` used by the CLI to print a single
machine-parsable error line (``error: <category>: <message>``).
"""


class MelodyFlowError(Exception):
    category = "error"


class ConfigurationError(MelodyFlowError, ValueError):
    category = "config"


class ShapeError(MelodyFlowError, ValueError):
    category = "shape"


class SpanOverflowError(MelodyFlowError, ValueError):
    category = "span"


class AlignmentError(MelodyFlowError, ValueError):
    category = "alignment"


class DegenerateInputError(MelodyFlowError, ValueError):
    category = "degenerate"


class UndefinedMetricError(MelodyFlowError, ValueError):
    category = "undefined"


class DomainError(MelodyFlowError, ValueError):
    category = "domain"


class ContractError(MelodyFlowError):
    category = "contract"


class CorpusFormatError(MelodyFlowError):
    category = "format"


class CheckpointIntegrityError(MelodyFlowError):
    category = "integrity"


class CheckpointVersionError(MelodyFlowError):
    category = "version"


class ReportParseError(MelodyFlowError):
    category = "parse"
