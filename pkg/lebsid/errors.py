"""Exception hierarchy shared by the library and the command-line front end."""

__all__ = ['LebsidError', 'ConfigurationError', 'FactorizationError', 'PoleProximityError',
           'SamplerError', 'EstimationError']


class LebsidError(Exception):
    """Base class for every error raised by lebsid."""


class ConfigurationError(LebsidError, ValueError):
    """Invalid parameters, unknown presets or inconsistent grids."""


class FactorizationError(LebsidError):
    """A Cholesky factorization failed even after jitter escalation."""


class PoleProximityError(LebsidError):
    """Closed-form Laplace evaluation requested too close to one of its poles."""

    def __init__(self, s, pole):
        super().__init__(f"s = {s} lies within tolerance of the closed-form pole {pole}")
        self.s = s
        self.pole = pole


class SamplerError(LebsidError):
    """Truncated Gaussian sampling produced a draw outside its box, or got a bad covariance."""


class EstimationError(LebsidError):
    """Failure inside an estimator, labelled with the stage it happened in."""

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
