"""Exception hierarchy shared by every taxrec module."""


class TaxrecError(Exception):
    """Base class for library errors."""


class DomainError(TaxrecError, ValueError):
    """An argument falls outside the domain an operation is defined on."""


class NoSiblingError(DomainError):
    """The node has no sibling to sample (root, or an only child)."""


class TaxonomyFormatError(TaxrecError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TransactionFormatError(TaxonomyFormatError):
    pass


class DivergenceError(TaxrecError, ArithmeticError):
    """Training produced a non-finite value.

    ``epoch`` and ``step`` locate the offending update; ``tuple`` holds the
    (user, t, positive, negative) training tuple when known.
    """

    def __init__(self, message, epoch=None, step=None, tuple=None):
        detail = []
        if epoch is not None:
            detail.append(f"epoch={epoch}")
        if step is not None:
            detail.append(f"step={step}")
        if tuple is not None:
            detail.append(f"tuple={tuple}")
        if detail:
            message = f"{message} ({', '.join(detail)})"
        super().__init__(message)
        self.epoch = epoch
        self.step = step
        self.tuple = tuple


class CheckpointError(TaxrecError):
    code = 10


class ChecksumError(CheckpointError):
    code = 11


class DimensionError(CheckpointError):
    code = 12


class VersionError(CheckpointError):
    code = 13
