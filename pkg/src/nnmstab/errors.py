"""Exception and warning classes shared across the package."""


class NnmStabError(Exception):
    """Base class for all package errors."""


class DomainError(NnmStabError, ValueError):
    """Evaluation left the domain where the model is defined."""


class DegenerateMassError(DomainError):
    """Mass matrix is singular (or not positive definite) at a point."""

    def __init__(self, q):
        self.q = q
        super().__init__(f"degenerate mass matrix at q={list(q)}")


class PreconditionError(NnmStabError, ValueError):
    pass


class IntegrationError(NnmStabError, RuntimeError):
    """Time integration failed; ``last_time`` is the last accepted time."""

    def __init__(self, message, last_time=None):
        self.last_time = last_time
        super().__init__(f"{message} (last good time: {last_time})")


class NoConvergenceError(NnmStabError, RuntimeError):
    def __init__(self, message, residuals=()):
        self.residuals = list(residuals)
        super().__init__(f"{message}; residual history: {self.residuals}")


class ContinuationStallError(NnmStabError, RuntimeError):
    def __init__(self, message, last_orbit=None, family=None):
        self.last_orbit = last_orbit
        self.family = family
        super().__init__(message)


class ExtrapolationError(NnmStabError, ValueError):
    pass


class NonGenericSpectrumError(NnmStabError, ValueError):
    """Monodromy has -1 multipliers or repeated normal pairs."""


class ResonanceSpecError(NnmStabError, ValueError):
    pass


class CapabilityError(NnmStabError, NotImplementedError):
    pass


class StaleSubspaceError(NnmStabError, ValueError):
    pass


class IncompleteInputError(NnmStabError, ValueError):
    pass


class EpsilonGuardError(NnmStabError, ValueError):
    pass


class NoOrbitFoundError(NnmStabError, RuntimeError):
    def __init__(self, message, residuals=(), last_point=None):
        self.residuals = list(residuals)
        self.last_point = last_point
        super().__init__(message)


class ConfigError(NnmStabError, ValueError):
    pass


class NnmStabWarning(UserWarning):
    pass


class NonNormalityWarning(NnmStabWarning):
    pass


class AmbiguousNormalityWarning(NnmStabWarning):
    pass


class UnstableEquilibriumWarning(NnmStabWarning):
    pass


class EpsilonValidityWarning(NnmStabWarning):
    pass


class ClusteringWarning(NnmStabWarning):
    pass
