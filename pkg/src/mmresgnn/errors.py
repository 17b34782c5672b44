"""Exception hierarchy shared across the pipeline."""


class MMResGNNError(Exception):
    """Base class for every error raised by this package."""


class InvalidConfig(MMResGNNError, ValueError):
    pass


class DegenerateLink(MMResGNNError, ValueError):
    """Raised when a Tx-Rx (or Rx-Rx) link has zero length."""


class OutOfBounds(MMResGNNError, IndexError):
    pass


class OutOfRange(MMResGNNError, ValueError):
    pass


class InsufficientRx(MMResGNNError, ValueError):
    pass


class RankDeficient(MMResGNNError, ValueError):
    pass


class IsolatedNode(MMResGNNError, ValueError):
    pass


class ShapeMismatch(MMResGNNError, ValueError):
    pass


class LengthMismatch(MMResGNNError, ValueError):
    pass


class ZeroReference(MMResGNNError, ValueError):
    pass


class TooFewVehicles(MMResGNNError, ValueError):
    pass


class EmptySplit(MMResGNNError, ValueError):
    pass


class NonFiniteLoss(MMResGNNError, RuntimeError):
    pass


class BaselineMismatch(MMResGNNError, ValueError):
    pass


class UnknownVariant(MMResGNNError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown variant"


class MissingCheckpoint(MMResGNNError, ValueError):
    pass


class IntegrityError(MMResGNNError):
    """A dataset file failed validation (bad magic, truncation, checksum)."""
