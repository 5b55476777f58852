"""Exception hierarchy shared by all workbench modules.

Exit-code mapping for the CLI lives in cli.py; library code raises these
and never calls sys.exit.
"""


class WorkbenchError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(WorkbenchError):
    """Malformed file header or payload (WAV, CMFEAT, CMCK, protocol)."""


class UnsupportedFormatError(FormatError):
    """File is well-formed but uses a codec/layout we do not handle."""


class CorruptFileError(FormatError):
    """Checksum mismatch, truncation, or shape disagreement in a container."""


class ParseError(WorkbenchError):
    """Protocol or config text could not be parsed."""

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class DuplicateTrialError(ParseError):
    """The same trial_id appeared twice in one protocol."""


class MissingTrialError(WorkbenchError):
    """Requested trial_id(s) absent from a manifest or audio tree."""

    def __init__(self, trial_ids):
        ids = list(trial_ids)
        super().__init__("missing trials: " + ", ".join(ids))
        self.trial_ids = ids


class ShapeError(WorkbenchError):
    """Tensor/feature dimensions inconsistent with the operation's contract."""


class ParameterError(WorkbenchError):
    """Out-of-range or inconsistent numeric parameters."""


class InsufficientInputError(WorkbenchError):
    """Input too short for the requested analysis (e.g. less than one frame)."""


class ConfigError(WorkbenchError):
    """Invalid run configuration (unknown keys, missing required entries)."""


class MetricError(WorkbenchError):
    """Metric undefined for the given inputs (e.g. single-class score set)."""


class CompatibilityError(WorkbenchError):
    """Checkpoint/model/frontend combination does not fit together."""


class NumericFaultError(WorkbenchError):
    """NaN or Inf encountered where finite values are required."""


class UnsupportedFrontendError(WorkbenchError):
    """Operation requires waveform access the frontend cannot provide."""
