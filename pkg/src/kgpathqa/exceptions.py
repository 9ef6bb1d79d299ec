"""Exception hierarchy shared by every stage of the pipeline."""


class KGPathQAError(Exception):
    """Base class for all errors raised by this package."""


class ContractViolation(KGPathQAError, ValueError):
    """An operation was called with arguments that break its preconditions."""


class ParseError(KGPathQAError, ValueError):
    """A data file line could not be parsed.

    Parameters
    ----------
    message : str
        Human readable description.
    line : int, optional
        1-based line number of the offending line.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TrainingDiverged(KGPathQAError, FloatingPointError):
    """A non-finite loss was produced during optimisation."""

    def __init__(self, epoch, batch, loss):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(
            f"training diverged at epoch {epoch}, batch {batch} (loss={loss})")


class FormatError(KGPathQAError, ValueError):
    """A binary checkpoint has the wrong magic header or format version."""
