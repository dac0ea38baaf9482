"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """Raised when an input violates an operation's precondition."""


class NoConvergence(RuntimeError):
    """Raised when an iterative procedure fails to reach its tolerance."""


class OutOfHorizon(RuntimeError):
    """Raised when a sampled attack extends past the end of a trace."""


class CheckpointError(Exception):
    """Base class for checkpoint read failures."""


class CorruptCheckpoint(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass
