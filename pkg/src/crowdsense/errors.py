class AuctionError(Exception):
    """Base class for every error raised by the crowdsense package"""


class DomainError(AuctionError, ValueError):
    """A value lies outside the domain an operation accepts"""


class UsageError(AuctionError, ValueError):
    """An operation was called with mismatched or conflicting arguments"""


class KeyGenerationError(AuctionError, RuntimeError):
    """Prime or key generation failed after bounded retries"""


class RetryExhaustedError(AuctionError, RuntimeError):
    """A randomized step kept failing its acceptance test"""


class CodeLookupError(AuctionError, LookupError):
    """A value is not a code of the order-preserving codebook"""


class TimingError(AuctionError, RuntimeError):
    """A time-lapse key was requested before its release time"""


class DecryptionError(AuctionError, ValueError):
    """A ciphertext or commitment failed to decrypt"""


class EncodingError(AuctionError, ValueError):
    """A value cannot be encoded for the set-union polynomial"""


class ScaleArithmeticError(AuctionError, ArithmeticError):
    """A fixed-point division is not exact under the configured scale"""


class VerificationError(AuctionError, RuntimeError):
    """The bulletin board lacks entries an audit depends on"""


class BoardRejection(AuctionError, ValueError):
    """A bulletin board post carried an invalid signature"""


class ScenarioError(AuctionError, ValueError):
    """A scenario file could not be parsed or validated"""
