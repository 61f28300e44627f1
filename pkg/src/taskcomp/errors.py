"""Exception types shared across the package.

Each failure mode callers are expected to branch on gets its own class so
tests can assert on the exact kind.
"""


class TaskcompError(Exception):
    pass


class ShapeMismatch(TaskcompError):
    """Operands with incompatible dimensions."""


class IterationLimit(TaskcompError):
    """Iterative kernel did not converge within its sweep budget."""


class Diverged(TaskcompError):
    """Training loss became non-finite or exceeded the divergence ceiling."""


class ConfigError(TaskcompError):
    """Inconsistent or unknown configuration."""


class StaleTape(TaskcompError):
    """Gradient tape already consumed or produced by a different network."""


class TargetMismatch(TaskcompError):
    """Targets of the wrong kind for the requested loss."""


class IndexOutOfRange(TaskcompError):
    """Split or layer index outside the valid range."""


class BadRank(TaskcompError):
    """Requested rank exceeds what the matrix dimensions allow."""


# Wire-protocol errors.  Kept distinguishable so every parse failure class
# is reachable by a crafted byte sequence.

class WireError(TaskcompError):
    pass


class TooLarge(WireError):
    """Payload length outside the 1..65535 range the frame can carry."""


class NonFinitePayload(WireError):
    pass


class BadMagic(WireError):
    pass


class BadVersion(WireError):
    pass


class ChecksumMismatch(WireError):
    pass


class Truncated(WireError):
    pass


class RemoteFrameError(WireError):
    """Error frame returned by the server instead of a prediction."""

    def __init__(self, code, message, sequence_id=0):
        super().__init__(f"server error {code}: {message}")
        self.code = code
        self.message = message
        self.sequence_id = sequence_id


class MissingColumn(TaskcompError):
    """CSV input lacks a required column."""

    def __init__(self, column):
        super().__init__(f"missing column: {column}")
        self.column = column
