"""Exception hierarchy.

Every error raised by the library derives from :class:`MorseError`. The
``exit_code`` attribute feeds the command-line exit code contract
(2 = mathematical check failed, 3 = configuration error, 4 = numerical
failure).
"""


class MorseError(Exception):
    exit_code = 4


# configuration / input ---------------------------------------------------


class ConfigError(MorseError):
    exit_code = 3


class ParseError(ConfigError):
    """Malformed expression text; ``offset`` is the byte offset of the fault."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class UnknownIdentifierError(ParseError):
    pass


class VariableRangeError(ParseError):
    pass


class NonIntegerExponentError(ParseError):
    pass


class ScenarioError(ConfigError):
    pass


class ContractError(ConfigError):
    """A documented precondition was violated by the caller."""


class InvalidSpecError(ConfigError):
    pass


# numerical ----------------------------------------------------------------


class DomainError(MorseError):
    pass


class NonFiniteError(MorseError):
    pass


class RetractionError(MorseError):
    pass


class DegeneratePresentationError(MorseError):
    pass


class DegenerateCriticalPointError(MorseError):
    exit_code = 2

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class FixedPointError(MorseError):
    """The involution fixes a point of the manifold."""


class UnresolvedLimitError(MorseError):
    pass


class TransportError(MorseError):
    pass


class RadiusTooLargeError(MorseError):
    pass


class TransversalityError(MorseError):
    exit_code = 2


class IllConditionedSignError(MorseError):
    pass


class CompactnessAnomalyError(MorseError):
    pass


# mathematical checks ------------------------------------------------------


class CheckFailure(MorseError):
    exit_code = 2


class ComplexInconsistencyError(CheckFailure):
    def __init__(self, message, entry=None):
        super().__init__(message)
        self.entry = entry


class GluingVerificationError(CheckFailure):
    pass


class OrientationCoherenceError(CheckFailure):
    pass


class KappaTooSmallError(CheckFailure):
    pass


class ContinuationError(CheckFailure):
    pass
