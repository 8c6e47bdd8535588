"""Exception hierarchy shared by every satl module.

The CLI maps these onto its stable exit codes, so raise the most specific
class available rather than bare ValueError/RuntimeError.
"""


class SatlError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(SatlError):
    """Tensor shapes incompatible with the requested operation."""


class NumericDomainError(SatlError):
    """Input outside the mathematical domain of an operation (e.g. log of <= 0)."""


class ContractError(SatlError):
    """A documented precondition was violated by the caller."""


class ConfigError(SatlError):
    """Invalid configuration value, unknown key, or unparseable config file."""


class GeometryError(SatlError):
    """Synthetic image geometry could not be placed inside the frame."""


class IngestionError(SatlError):
    """A dataset file or CSV row could not be read or decoded."""


class CheckpointError(SatlError):
    """Checkpoint file is corrupt, truncated, or structurally invalid."""


class FingerprintError(CheckpointError):
    """Architecture fingerprint mismatch between checkpoint and model."""


class DegenerateDataError(SatlError):
    """Dataset lacks the class diversity an operation needs (e.g. AUC on one class)."""
