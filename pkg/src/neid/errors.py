"""Exception hierarchy shared by every module of the package."""


class NeidError(Exception):
    """Base class for all errors raised by :mod:`neid`."""


class MissingFile(NeidError, FileNotFoundError):
    pass


class UnsupportedFormat(NeidError, ValueError):
    pass


class InvalidSize(NeidError, ValueError):
    pass


class InvalidCode(NeidError, ValueError):
    pass


class ShapeMismatch(NeidError, ValueError):
    pass


class TooSmall(NeidError, ValueError):
    pass


class BadChannelCount(NeidError, ValueError):
    pass


class MissingPair(NeidError):
    def __init__(self, sample_id):
        super().__init__(sample_id)
        self.sample_id = sample_id


class EmptyDataset(NeidError):
    pass


class MissingDrOutput(NeidError):
    pass


class KeyMismatch(NeidError, KeyError):
    pass


class NonFiniteLoss(NeidError, ArithmeticError):
    def __init__(self, step, breakdown=None):
        super().__init__(f"non-finite loss at step {step}: {breakdown}")
        self.step = step
        self.breakdown = breakdown


class CorruptCheckpoint(NeidError):
    pass


class FingerprintMismatch(NeidError):
    pass
