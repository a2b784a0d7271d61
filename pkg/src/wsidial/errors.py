"""Exception types shared across the package."""


class WsidialError(Exception):
    """Base class for package errors."""


class FormatError(WsidialError):
    """Slide directory or payload does not conform to the expected format."""


class InvariantError(WsidialError):
    """Stored data violates a structural invariant (e.g. pyramid halving)."""


class UnsupportedMagnificationError(WsidialError):
    """A read was requested above the slide's base magnification."""


class DegenerateInputError(WsidialError):
    """Input carries no usable signal (empty histogram, zero labeled pixels)."""


class SpecError(WsidialError):
    """A declarative spec (synthetic slide, run config) is invalid."""


class SplitError(WsidialError):
    """Case split cannot be performed (too few cases, bad ratios)."""


class TrainingError(WsidialError):
    """Training cannot start or continue (empty manifest, diverged loss)."""


class ContractError(WsidialError):
    """Model input/output shapes or metadata do not match the declared contract."""


class MetricUndefinedError(WsidialError):
    """Metric is undefined for the given inputs (e.g. single-class labels)."""


class LedgerError(WsidialError):
    """Interactive-learning project ledger rejected an operation."""


class JobError(WsidialError):
    """Job queue rejected a submission or transition."""
