"""Exception hierarchy shared by every stage; the CLI maps these to exit codes."""


class MaskweaveError(Exception):
    exit_code = 1


class UsageError(MaskweaveError, ValueError):
    """Bad arguments: wrong counts, empty inputs, out-of-domain values."""

    exit_code = 1


class DomainError(UsageError):
    exit_code = 1


class AlignmentError(MaskweaveError, ValueError):
    """Vectors, masks or batches laid out against different parameter spaces."""

    exit_code = 2


class FormatError(MaskweaveError):
    """Malformed binary or text artifact."""

    exit_code = 2

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CorruptionError(FormatError):
    """Stored digest does not match the recomputed one."""


class NumericError(MaskweaveError, ArithmeticError):
    exit_code = 3

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration
