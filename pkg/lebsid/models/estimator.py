"""
End-to-end estimators on one record, and evaluation of the fitted impulse response.

    lebesgue  - EM hyperparameters on the bands, then MAP-EM weights
    midpoint  - EM hyperparameters on the bands, weights from the midpoint initializer only
    riemann   - one-shot Empirical Bayes on the band midpoints
    oracle    - one-shot Empirical Bayes on the noisy output before quantization
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from lebsid.errors import ConfigurationError, EstimationError, LebsidError
from lebsid.models.hyper_em import HyperParams, fit_hyperparams_direct, optimize_hyperparams
from lebsid.models.kernel import (GramFactors, InputMatrix, KernelSpec, cross_gram_matrix, gram_matrix,
                                  integrated_kernel_vector, laplace_kernel_vector)
from lebsid.models.weights_em import RidgeFactor, init_midpoint, solve_weights
from lebsid.sampling.lebesgue import midpoints
from lebsid.util.training.fit_metric import FitScore, fit_metric, snr_db

__all__ = ['METHODS', 'EstimateResult', 'FitScore', 'estimate_lebesgue', 'estimate_midpoint',
           'estimate_riemann', 'estimate_oracle', 'to_transfer_function', 'predict_output',
           'impulse_response', 'default_frequency_grid', 'frequency_response_table', 'simulate_estimate',
           'fit_metric', 'snr_db']

logger = logging.getLogger(__name__)

METHODS = ('lebesgue', 'riemann', 'oracle', 'midpoint')


@dataclass(frozen=True, eq=False)
class EstimateResult:
    c: np.ndarray
    phi: InputMatrix
    rho: HyperParams
    spec: KernelSpec
    method: str
    hyper_trace: list = field(default_factory=list)
    weight_trace: list = field(default_factory=list)

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        if c.size != self.phi.n:
            raise ConfigurationError(f"{c.size} weights do not match input matrix size {self.phi.n}")
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}, expected one of {METHODS}")
        object.__setattr__(self, 'c', c)

    @cached_property
    def factors(self):
        return GramFactors.build(self.spec, self.phi)

    @cached_property
    def gram(self):
        return gram_matrix(self.factors)

    @property
    def n(self):
        return self.phi.n

    @property
    def hyper_iterations(self):
        return len(self.hyper_trace)

    @property
    def weight_iterations(self):
        return max(len(self.weight_trace) - 1, 0)

    def to_dict(self):
        return {'method': self.method, 'rho': self.rho.to_dict(), 'q': self.spec.q, 'delta': self.phi.delta,
                'c': self.c.tolist(), 'u': self.phi.first_column.tolist()}


def _run_stage(stage, fn, *args):
    try:
        return fn(*args)
    except EstimationError:
        raise
    except LebsidError as e:
        raise EstimationError(stage, str(e)) from e


def _hyper_stage(u, ds, config):
    phi = InputMatrix.from_signal(u, ds.delta, ds.n)
    rho, trace = _run_stage('hyper', optimize_hyperparams, ds, phi, KernelSpec(config.q), config)
    spec = KernelSpec(config.q, rho.beta)
    return phi, rho, spec, trace


def estimate_lebesgue(u, ds, config):
    """Hyperparameters by EM over the bands, then MAP-EM weights at those hyperparameters."""
    phi, rho, spec, hyper_trace = _hyper_stage(u, ds, config)
    K = gram_matrix(GramFactors.build(spec, phi))
    c, weight_trace = _run_stage('weights', solve_weights, K, rho, ds, config)
    return EstimateResult(c, phi, rho, spec, 'lebesgue', hyper_trace, weight_trace)


def estimate_midpoint(u, ds, config, fitted=None):
    """
    Same hyperparameters as estimate_lebesgue, weights from the midpoint initializer only.

    fitted, a lebesgue result on the same record and config, supplies those hyperparameters
    without repeating the EM.
    """
    if fitted is None:
        phi, rho, spec, hyper_trace = _hyper_stage(u, ds, config)
        K = gram_matrix(GramFactors.build(spec, phi))
    else:
        if fitted.method != 'lebesgue' or fitted.n != ds.n:
            raise ConfigurationError("hyperparameters can only be shared from a lebesgue fit of the same record")
        phi, rho, spec, hyper_trace, K = fitted.phi, fitted.rho, fitted.spec, fitted.hyper_trace, fitted.gram
    c = _run_stage('weights', init_midpoint, K, rho.gamma_tilde, ds)
    return EstimateResult(c, phi, rho, spec, 'midpoint', hyper_trace)


def _one_shot(u, z, delta, config, method):
    z = np.asarray(z, dtype=float).ravel()
    phi = InputMatrix.from_signal(u, delta, z.size)
    rho, hyper_trace = _run_stage('hyper', fit_hyperparams_direct, z, phi, KernelSpec(config.q), config)
    spec = KernelSpec(config.q, rho.beta)
    K = gram_matrix(GramFactors.build(spec, phi))
    c = _run_stage('weights', lambda: RidgeFactor(K, rho.gamma_tilde).solve(z))
    return EstimateResult(c, phi, rho, spec, method, hyper_trace)


def estimate_riemann(u, ds, config):
    """Standard kernel estimator treating the band midpoints eta + h/2 as exact outputs."""
    return _one_shot(u, midpoints(ds), ds.delta, config, 'riemann')


def estimate_oracle(u, z_noisy, config, delta):
    """Standard kernel estimator on the noisy output before quantization."""
    return _one_shot(u, z_noisy, delta, config, 'oracle')


def to_transfer_function(res, s, fallback=False):
    """G_hat(s) = c^T Phi Kvec(s)."""
    kvec = laplace_kernel_vector(res.spec, res.phi.delta, res.n, s, fallback=fallback)
    return complex((res.phi.phi.T @ res.c) @ kvec)


def predict_output(res, n_steps=None):
    """Noiseless model output K_i^T c at grid times i*delta, i = 1..n_steps."""
    n_steps = res.n if n_steps is None else n_steps
    if not 0 <= n_steps <= res.n:
        raise ConfigurationError(f"n_steps must lie in [0, {res.n}], got {n_steps}")
    return (res.gram @ res.c)[:n_steps]


def impulse_response(res, t):
    """g_hat(t) = sum_l (Phi^T c)_l * int over cell l of k(t, tau) d tau."""
    w = integrated_kernel_vector(res.spec, res.phi.delta, res.n, t)
    return w @ (res.phi.phi.T @ res.c)


def default_frequency_grid(lo=1e-1, hi=1e2, per_decade=100):
    decades = np.log10(hi) - np.log10(lo)
    return np.logspace(np.log10(lo), np.log10(hi), int(round(decades * per_decade)) + 1)


def frequency_response_table(res, omegas=None, fallback=False):
    """(M, 3) array of omega, Re G_hat(i omega), Im G_hat(i omega)."""
    omegas = default_frequency_grid() if omegas is None else np.asarray(omegas, dtype=float)
    values = np.array([to_transfer_function(res, 1j * w, fallback=fallback) for w in omegas])
    return np.column_stack((omegas, values.real, values.imag))


def simulate_estimate(res, u, n_steps=None):
    """Model output on the fitting grid for a new ZOH input u: Phi_new O Phi^T c."""
    phi_new = InputMatrix.from_signal(u, res.phi.delta, res.n)
    y = cross_gram_matrix(phi_new, res.factors.O, res.phi) @ res.c
    return y if n_steps is None else y[:n_steps]
