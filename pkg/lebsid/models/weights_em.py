"""
MAP-EM for the representer weights c at fixed hyperparameters.

E-step: replace every unknown output by its mean under N(K_i^T c, sigma^2) truncated to its band.
M-step: c = (K + gamma_tilde I)^-1 z_tilde, reusing one Cholesky factor of K + gamma_tilde I.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from lebsid.errors import ConfigurationError
from lebsid.sampling.lebesgue import midpoints
from lebsid.sampling.trunc_gauss import log_band_mass, trunc_normal_mean
from lebsid.util.linalg import cholesky_jitter
from lebsid.util.training.early_stopping import EarlyStopping

__all__ = ['WeightState', 'RidgeFactor', 'init_midpoint', 'conditional_mean', 'expected_outputs',
           'map_em_step', 'overrelaxed_step', 'posterior_objective', 'stationarity_residual', 'solve_weights']

logger = logging.getLogger(__name__)

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)

# cap on the over-relaxation stretch
MAX_STEP = 64.0


@dataclass(frozen=True, eq=False)
class WeightState:
    c: np.ndarray
    iteration: int = 0
    converged: bool = False

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        if not np.all(np.isfinite(c)):
            raise ConfigurationError("weight vector has non-finite entries")
        object.__setattr__(self, 'c', c)


class RidgeFactor:
    """Cached Cholesky factor of K + gamma_tilde I."""

    def __init__(self, K, gamma_tilde):
        if not gamma_tilde > 0:
            raise ConfigurationError(f"gamma_tilde must be positive, got {gamma_tilde}")
        self.K = np.asarray(K, dtype=float)
        self.gamma_tilde = float(gamma_tilde)
        self.L, self.jitter = cholesky_jitter(self.K + self.gamma_tilde * np.eye(self.K.shape[0]),
                                              what="K + gamma_tilde I")

    def solve(self, rhs):
        return linalg.cho_solve((self.L, True), rhs)


def _factor(K, gamma_tilde, factor):
    return factor if factor is not None else RidgeFactor(K, gamma_tilde)


def init_midpoint(K, gamma_tilde, ds, factor=None):
    """c = (K + gamma_tilde I)^-1 (eta + h/2)."""
    return _factor(K, gamma_tilde, factor).solve(midpoints(ds))


def conditional_mean(eta, h, pred, sigma):
    """Mean of N(pred, sigma^2) restricted to [eta, eta + h); vectorized over bands."""
    eta = np.asarray(eta, dtype=float)
    return trunc_normal_mean(pred, sigma, eta, eta + h)


def expected_outputs(c, K, sigma, ds):
    return conditional_mean(ds.eta, ds.h, K @ c, sigma)


def map_em_step(state, K, gamma_tilde, sigma, ds, factor=None):
    z_tilde = expected_outputs(state.c, K, sigma, ds)
    c = _factor(K, gamma_tilde, factor).solve(z_tilde)
    return WeightState(c=c, iteration=state.iteration + 1)


def posterior_objective(c, K, gamma_tilde, sigma, ds):
    """
    sum_i log int_band exp(-(z - K_i^T c)^2 / (2 sigma^2)) dz - gamma c^T K c / 2, gamma = gamma_tilde / sigma^2.
    """
    pred = K @ c
    alpha = (ds.lower - pred) / sigma
    beta = (ds.upper - pred) / sigma
    log_bands = np.log(sigma) + _LOG_SQRT_2PI + log_band_mass(alpha, beta)
    return float(np.sum(log_bands) - 0.5 * gamma_tilde / sigma ** 2 * (c @ pred))


def stationarity_residual(c, K, gamma_tilde, sigma, ds):
    """||K (z_tilde - K c) - gamma_tilde K c||, zero at a MAP-EM fixed point."""
    pred = K @ c
    z_tilde = conditional_mean(ds.eta, ds.h, pred, sigma)
    return float(np.linalg.norm(K @ (z_tilde - pred) - gamma_tilde * pred))


def overrelaxed_step(state, K, gamma_tilde, sigma, ds, factor, step):
    """
    MAP-EM step stretched by `step` along the EM direction, kept only if it scores at least as high as
    the plain EM update; step = 1 is the plain update.

    Returns (WeightState, objective, accepted).
    """
    plain = map_em_step(state, K, gamma_tilde, sigma, ds, factor)
    value = posterior_objective(plain.c, K, gamma_tilde, sigma, ds)
    if step <= 1.0:
        return plain, value, True
    trial = state.c + step * (plain.c - state.c)
    trial_value = posterior_objective(trial, K, gamma_tilde, sigma, ds)
    if trial_value >= value:
        return WeightState(trial, plain.iteration), trial_value, True
    return plain, value, False


def solve_weights(K, rho, ds, config):
    """
    Midpoint initialization followed by MAP-EM steps until the relative change of c drops below
    config.eps_weights or config.m_iter_weights steps are done.

    Steps are over-relaxed: the stretch factor grows by config.step_growth after every accepted
    stretch and falls back to 1 after a rejected one, so the objective never decreases.

    Returns:
        c (ndarray): final weights.
        trace (list of float): posterior objective at the initializer and after every step.
    """
    K = np.asarray(K, dtype=float)
    if K.shape != (ds.n, ds.n):
        raise ConfigurationError(f"Gram matrix {K.shape} does not match {ds.n} bands")
    sigma = np.sqrt(rho.sigma2)
    factor = RidgeFactor(K, rho.gamma_tilde)
    state = WeightState(init_midpoint(K, rho.gamma_tilde, ds, factor))
    trace = [posterior_objective(state.c, K, rho.gamma_tilde, sigma, ds)]
    stopper = EarlyStopping(eps=config.eps_weights, max_iter=config.m_iter_weights,
                            verbose=config.diagnostics, name="weight EM").reset(state.c)
    step = 1.0
    while not stopper.early_stop:
        state, value, accepted = overrelaxed_step(state, K, rho.gamma_tilde, sigma, ds, factor, step)
        step = min(step * config.step_growth, MAX_STEP) if accepted else 1.0
        trace.append(value)
        logger.debug("weight EM %d: objective %.8g, step %.3g", state.iteration, value, step)
        stopper(state.c)
    state = WeightState(state.c, state.iteration, stopper.converged)
    logger.info("weights after %d MAP-EM steps (%s), objective %.6g", state.iteration,
                "converged" if stopper.converged else "iteration limit", trace[-1])
    return state.c, trace
