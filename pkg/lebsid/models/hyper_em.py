"""
Empirical-Bayes hyperparameters rho = (gamma_tilde, beta, sigma2) for set-valued output data.

Each EM iteration estimates Qbar = E{z z^T | bands, rho} by Gibbs sampling under the current
prior z ~ N(0, sigma2 * (K_beta / gamma_tilde + I)), factors Qbar = C C^T, and then minimizes the
sigma2-concentrated criterion

    N log(||C||_F^2 - ||R2||_F^2) + 2 log det R1

over (gamma_tilde, beta), where R1, R2 come from one QR of [[Phi L, C], [I, 0]] with
O_beta / gamma_tilde = L L^T. sigma2 then follows in closed form.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from lebsid.errors import ConfigurationError, EstimationError, FactorizationError
from lebsid.models.kernel import integrated_kernel_matrix
from lebsid.sampling.trunc_gauss import BoxRegion, second_moment
from lebsid.util.linalg import cholesky_jitter
from lebsid.util.training.early_stopping import EarlyStopping

__all__ = ['HyperParams', 'HyperBounds', 'QrBlocks', 'stacked_qr', 'prior_factor', 'em_objective',
           'full_objective', 'sigma2_update', 'm_step', 'prior_covariance', 'hyper_em_step',
           'optimize_hyperparams', 'fit_hyperparams_direct']

logger = logging.getLogger(__name__)

# Qbar is a sample second moment; one small shift is enough
_QBAR_LADDER = (0.0, 1e-10)


@dataclass(frozen=True)
class HyperBounds:
    """Admissible box for rho."""
    gamma_tilde: tuple = (1e-8, 1e6)
    beta: tuple = (1e-3, 1e3)
    sigma2: tuple = (1e-10, 1e6)

    def __post_init__(self):
        for name in ('gamma_tilde', 'beta', 'sigma2'):
            lo, hi = (float(v) for v in getattr(self, name))
            if not 0 < lo < hi:
                raise ConfigurationError(f"bounds for {name} must satisfy 0 < lo < hi, got ({lo}, {hi})")
            object.__setattr__(self, name, (lo, hi))


@dataclass(frozen=True)
class HyperParams:
    """
    Args:
        gamma_tilde (float): ridge level gamma * sigma2 in (K + gamma_tilde I)^-1 solves.
        beta (float): kernel decay rate [1/s].
        sigma2 (float): output noise variance.
    """
    gamma_tilde: float
    beta: float
    sigma2: float

    def __post_init__(self):
        for name in ('gamma_tilde', 'beta', 'sigma2'):
            v = float(getattr(self, name))
            if not (np.isfinite(v) and v > 0):
                raise ConfigurationError(f"{name} must be positive and finite, got {v}")
            object.__setattr__(self, name, v)

    @classmethod
    def default(cls, h):
        """gamma_tilde = 1, beta = 1 and the variance of a uniform band of width h."""
        return cls(1.0, 1.0, (h / 2.0) ** 2 / 3.0)

    @property
    def gamma(self):
        return self.gamma_tilde / self.sigma2

    def as_vector(self):
        return np.array([self.gamma_tilde, self.beta, self.sigma2])

    def stopping_vector(self):
        """(beta, gamma, sigma2): the coordinates the relative-change stopping rule is measured in."""
        return np.array([self.beta, self.gamma, self.sigma2])

    def clamp(self, bounds):
        return HyperParams(float(np.clip(self.gamma_tilde, *bounds.gamma_tilde)),
                           float(np.clip(self.beta, *bounds.beta)),
                           float(np.clip(self.sigma2, *bounds.sigma2)))

    def to_dict(self):
        return {'gamma_tilde': self.gamma_tilde, 'beta': self.beta, 'sigma2': self.sigma2}


@dataclass(frozen=True, eq=False)
class QrBlocks:
    """R1^T R1 = L^T Phi^T Phi L + I and R1^T R2 = L^T Phi^T C."""
    R1: np.ndarray
    R2: np.ndarray

    @property
    def logdet_r1(self):
        return float(np.sum(np.log(np.diag(self.R1))))


def stacked_qr(phiL, C):
    """Householder QR of [[Phi L, C], [I, 0]], keeping only the leading block row of R."""
    phiL = np.atleast_2d(np.asarray(phiL, dtype=float))
    n = phiL.shape[0]
    if phiL.shape != (n, n):
        raise ConfigurationError(f"Phi L must be square, got {phiL.shape}")
    C = np.asarray(C, dtype=float).reshape(n, -1)
    m = C.shape[1]
    stacked = np.block([[phiL, C], [np.eye(n), np.zeros((n, m))]])
    R = np.linalg.qr(stacked, mode='r')
    R1, R2 = R[:n, :n], R[:n, n:]
    signs = np.where(np.diag(R1) < 0, -1.0, 1.0)
    return QrBlocks(R1=signs[:, None] * R1, R2=signs[:, None] * R2)


def _pair(rho):
    if isinstance(rho, HyperParams):
        return rho.gamma_tilde, rho.beta
    gamma_tilde, beta = rho
    return float(gamma_tilde), float(beta)


def prior_factor(spec, phi, beta):
    """Phi L0 with O_beta = L0 L0^T (jittered Cholesky)."""
    O = integrated_kernel_matrix(spec.with_beta(beta), phi.delta, phi.n)
    L0, _ = cholesky_jitter(O, what=f"O_beta (beta={beta:.4g})")
    return phi.phi @ L0


def _criterion_terms(rho, C, phi, spec):
    gamma_tilde, beta = _pair(rho)
    blocks = stacked_qr(prior_factor(spec, phi, beta) / np.sqrt(gamma_tilde), C)
    c_norm2 = float(np.sum(np.square(C)))
    r2_norm2 = float(np.sum(np.square(blocks.R2)))
    return c_norm2 - r2_norm2, blocks.logdet_r1


def em_objective(rho, C, phi, spec):
    """sigma2-concentrated EM criterion; +inf when ||C||^2 - ||R2||^2 is not positive."""
    residual, logdet_r1 = _criterion_terms(rho, C, phi, spec)
    if not residual > 0:
        return np.inf
    return phi.n * np.log(residual) + 2.0 * logdet_r1


def full_objective(rho, C, phi, spec):
    """log det S_rho + tr(S_rho^-1 C C^T) at the given sigma2."""
    residual, logdet_r1 = _criterion_terms(rho, C, phi, spec)
    return phi.n * np.log(rho.sigma2) + 2.0 * logdet_r1 + residual / rho.sigma2


def sigma2_update(rho, C, phi, spec):
    residual, _ = _criterion_terms(rho, C, phi, spec)
    if not residual > 0:
        raise EstimationError('hyper', f"noise variance update is not positive ({residual:.3g}); "
                                       f"second moment is numerically inconsistent")
    return residual / phi.n


def _log_grid(config):
    gt = np.geomspace(*config.gamma_tilde_grid, config.grid_size)
    beta = np.geomspace(*config.beta_grid, config.grid_size)
    G, B = np.meshgrid(np.log(gt), np.log(beta), indexing='ij')
    return np.column_stack((G.ravel(), B.ravel()))


def m_step(C, phi, spec, start, config, seed_grid=False):
    """
    Minimizes the concentrated criterion over (log gamma_tilde, log beta) with a bounded
    Nelder-Mead simplex, then sets sigma2 in closed form.

    The simplex starts from the better of `start` and, when seed_grid is set, the best point of a
    log-spaced grid. Returns (HyperParams, criterion value).
    """
    bounds = config.bounds
    lo = np.log([bounds.gamma_tilde[0], bounds.beta[0]])
    hi = np.log([bounds.gamma_tilde[1], bounds.beta[1]])

    def criterion(x):
        gamma_tilde, beta = np.exp(np.clip(x, lo, hi))
        try:
            return em_objective((gamma_tilde, beta), C, phi, spec)
        except FactorizationError:
            return np.inf

    x0 = np.clip(np.log([start.gamma_tilde, start.beta]), lo, hi)
    f0 = criterion(x0)
    if seed_grid:
        grid = np.clip(_log_grid(config), lo, hi)
        values = np.array([criterion(x) for x in grid])
        best = int(np.argmin(values))
        logger.debug("grid seed: best criterion %.6g at gamma_tilde=%.3g beta=%.3g", values[best],
                     *np.exp(grid[best]))
        if values[best] < f0:
            x0, f0 = grid[best], values[best]
    if not np.isfinite(f0):
        raise EstimationError('hyper', "criterion is infinite at every starting point")

    res = optimize.minimize(criterion, x0, method='Nelder-Mead', bounds=list(zip(lo, hi)),
                            options={'xatol': 1e-4, 'fatol': 1e-9, 'maxiter': 400})
    if not res.success:
        logger.warning("Nelder-Mead stopped early: %s", res.message)
    x, fx = (res.x, float(res.fun)) if res.fun <= f0 else (x0, float(f0))
    gamma_tilde, beta = np.exp(np.clip(x, lo, hi))
    sigma2 = sigma2_update((gamma_tilde, beta), C, phi, spec)
    return HyperParams(gamma_tilde, beta, float(np.clip(sigma2, *bounds.sigma2))), fx


def prior_covariance(rho, spec, phi):
    """S_rho = sigma2 * (Phi O_beta Phi^T / gamma_tilde + I), the prior covariance of z."""
    O = integrated_kernel_matrix(spec.with_beta(rho.beta), phi.delta, phi.n)
    K = phi.phi @ O @ phi.phi.T
    S = rho.sigma2 * (K / rho.gamma_tilde + np.eye(phi.n))
    return 0.5 * (S + S.T)


def _em_iteration(rho, ds, phi, spec, config, iteration):
    # same sampler seed every iteration: Qbar then moves only with rho and the EM map is deterministic
    cov = prior_covariance(rho, spec, phi)
    moment = second_moment(cov, BoxRegion.from_dataset(ds), n_samples=config.n_samples, seed=config.seed,
                           burn_in=config.burn_in, n_chains=config.n_chains, thin=config.thin)
    C, _ = cholesky_jitter(moment.Q, ladder=_QBAR_LADDER, what="second moment")
    return m_step(C, phi, spec, rho, config, seed_grid=iteration == 0)


def hyper_em_step(rho, ds, phi, spec, config, iteration=0):
    """One EM update of rho; the grid seed is only used on iteration 0."""
    new_rho, _ = _em_iteration(rho, ds, phi, spec, config, iteration)
    return new_rho


def optimize_hyperparams(ds, phi, spec, config):
    """
    Runs EM iterations until the relative change of (beta, gamma, sigma2) drops below config.eps_hyper
    or config.m_iter_hyper iterations are done. gamma = gamma_tilde / sigma2 keeps the rule sensitive to
    a still-moving noise variance.

    Returns:
        rho (HyperParams): final iterate.
        trace (list of dict): iteration, gamma_tilde, beta, sigma2, objective per iteration.
    """
    if phi.n != ds.n:
        raise ConfigurationError(f"input matrix size {phi.n} does not match {ds.n} bands")
    rho = (config.initial or HyperParams.default(ds.h)).clamp(config.bounds)
    stopper = EarlyStopping(eps=config.eps_hyper, max_iter=config.m_iter_hyper, name="hyper EM",
                            verbose=config.diagnostics)
    stopper.reset(rho.stopping_vector())
    trace = []
    iteration = 0
    while not stopper.early_stop:
        rho, value = _em_iteration(rho, ds, phi, spec, config, iteration)
        trace.append({'iteration': iteration + 1, **rho.to_dict(), 'objective': value})
        logger.debug("hyper EM %d: gamma_tilde=%.4g beta=%.4g sigma2=%.4g objective=%.6g",
                     iteration + 1, rho.gamma_tilde, rho.beta, rho.sigma2, value)
        stopper(rho.stopping_vector())
        iteration += 1
    logger.info("hyperparameters after %d EM iterations (%s): gamma_tilde=%.4g beta=%.4g sigma2=%.4g",
                iteration, "converged" if stopper.converged else "iteration limit",
                rho.gamma_tilde, rho.beta, rho.sigma2)
    return rho, trace


def fit_hyperparams_direct(z, phi, spec, config):
    """
    One-shot Empirical-Bayes fit for point data z, i.e. Qbar = z z^T and C = z (thin QR).
    """
    z = np.asarray(z, dtype=float).ravel()
    if z.size != phi.n:
        raise ConfigurationError(f"{z.size} outputs do not match input matrix size {phi.n}")
    if not np.any(z):
        raise EstimationError('hyper', "all outputs are zero; marginal likelihood is degenerate")
    start = config.initial or HyperParams(1.0, 1.0, 1.0)
    rho, value = m_step(z[:, None], phi, spec, start.clamp(config.bounds), config, seed_grid=True)
    trace = [{'iteration': 1, **rho.to_dict(), 'objective': value}]
    return rho, trace
