from enum import Enum


class Direction(Enum):
    """Direction in which the scale layers of a field are stacked"""

    SHRINKING = "shrinking"
    """Layers on [s, s + delta] with covariance int K(e^r h) dr

    The correlation length shrinks like e^{-s}. This is the martingale
    approximation X_t of the log-correlated field.
    """

    GROWING = "growing"
    """Layers on [s, s + delta] with covariance int K(e^{-r} h) dr

    The correlation length grows like e^{s}. Used for the field behind the
    pinned shape field Z_b.
    """


class GmcPhase(Enum):
    """Normalizations of the chaos measure"""

    SUBCRITICAL = "subcritical"
    """gamma < sqrt(2d), density e^{gamma X_t - gamma^2 t / 2}"""

    CRITICAL_DERIVATIVE = "critical_derivative"
    """gamma = sqrt(2d), derivative normalization

    The density (-X_t + gamma t) e^{gamma X_t - gamma^2 t / 2} is signed at
    finite t. It is clipped at zero.
    """

    CRITICAL_SENETA_HEYDE = "critical_seneta_heyde"
    """gamma = sqrt(2d), density sqrt(t) e^{gamma X_t - gamma^2 t / 2}"""

    SUPERCRITICAL = "supercritical"
    """gamma > sqrt(2d), density converging to a purely atomic measure

    t^{3 gamma / (2 sqrt(2d))} e^{t (gamma / sqrt(2) - sqrt(d))^2}
    e^{gamma X_t - gamma^2 t / 2}
    """

    @property
    def is_critical(self):
        return self in (GmcPhase.CRITICAL_DERIVATIVE, GmcPhase.CRITICAL_SENETA_HEYDE)


class CurveKind(Enum):
    """Barrier curves for Brownian bridges"""

    CONSTANT = "constant"
    ZETA = "zeta"
    """a (1 + log(1 + k + s)^2)"""
    THETA = "theta"
    """log(1 + max(k, s))^2"""
    TABLE = "table"
    """Linear interpolation of a user supplied table"""


class EnsembleKind(Enum):
    """Kinds of cluster ensembles"""

    TILDE_UPSILON = "tilde_upsilon"
    """Shape fields conditioned on their maximum staying below lambda"""

    PSI = "psi"
    """Conditioned shape fields recentred at their argmax, with tilt weights"""


class GmclabError(Exception):
    """Base class of all errors raised by gmclab"""


class ConfigurationError(GmclabError, ValueError):
    """Invalid configuration (unknown phase, too small table, ...)"""


class DomainError(GmclabError, ValueError):
    """A numeric argument is outside the domain of an operation"""


class StatisticsError(GmclabError, ValueError):
    """Not enough samples for an estimator"""


class SamplerError(GmclabError, RuntimeError):
    """Circulant embedding is not nonnegative definite

    Args:
        message (str): message
        min_eigenvalue (float): most negative eigenvalue of the last attempt
        embedding_size (int): embedding size of the last attempt
    """

    def __init__(self, message, min_eigenvalue=None, embedding_size=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue
        self.embedding_size = embedding_size


class ResourceError(GmclabError, RuntimeError):
    """The requested computation exceeds the cost envelope"""


class CoverageError(GmclabError, RuntimeError):
    """The sampling domain does not cover the mass of the integrand"""


class PartialResultError(GmclabError, RuntimeError):
    """A replicate worker failed

    Args:
        message (str): message
        completed (int): number of replicates that finished
        results (list): results of the finished replicates, ordered by index
    """

    def __init__(self, message, completed=0, results=None):
        super().__init__(message)
        self.completed = completed
        self.results = results if results is not None else []
