from typing import Any, Never


class QueryAfterExplosionException(Exception):
    """Path was queried at or after its explosion time"""


class QueryBeyondHorizonException(Exception):
    """Path was queried after the last simulated time"""


class DomainException(Exception):
    """Value outside the domain of the function, usually a jump at or below -1 fed to a log"""


class IntegrabilityException(Exception):
    """Integral is infinite where a finite value was required"""


class CompensatorDivergesException(IntegrabilityException):
    """Compensator integral diverges before the requested time"""


class JumpBelowMinusOneException(Exception):
    """Stochastic exponential would change sign. Pass signed=True to allow it"""


class NotNonnegativeException(Exception):
    """Stochastic logarithm needs a nonnegative path starting at one"""


class RevivesAfterZeroException(Exception):
    """Path leaves zero after reaching it, so it has no stochastic logarithm"""


class UnsupportedPathException(Exception):
    """Path has structure this operation cannot handle"""


class InvalidParametersException(Exception):
    """Model parameters are inconsistent or violate the model's invariants"""


class OracleUnavailableException(Exception):
    """No closed-form asymptotic oracle exists for this model"""


def oracle_unavailable(model_kind: str) -> Never:
    """Custom tables and composites have no series test"""
    raise OracleUnavailableException(f"No analytic oracle for model kind: {model_kind}")


class UnknownPresetException(Exception):
    """Preset id is not registered"""


class UnknownExampleException(Exception):
    """No reproduction recipe is registered for this example id"""


class UnsupportedModelException(Exception):
    """Model cannot be tilted or simulated on the dual side"""


class NonFiniteSampleException(Exception):
    """An exponent overflowed the float range"""


class EnsembleTimeoutException(Exception):
    """Ensemble run did not finish within its timeout"""


class ConfigError(Exception):
    """Experiment configuration failed validation"""

    def __init__(self, message: str, errors: list[dict[str, Any]] | None = None) -> None:
        super().__init__(message)
        self.errors = errors or []
