"""
Box-truncated Gaussians: univariate moments, coordinate-wise Gibbs sampling and the Monte Carlo
estimate of the conditional second moment E{z z^T | z in box}.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import log_ndtr, ndtri_exp

from lebsid.errors import ConfigurationError, SamplerError

__all__ = ['BoxRegion', 'SecondMoment', 'log_band_mass', 'trunc_normal_mean', 'truncated_standard_draw',
           'gibbs_sample_box', 'second_moment']

logger = logging.getLogger(__name__)

_LOG_TAIL_FLOOR = np.log(1e-12)
_MAX_TAIL_ROUNDS = 50
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class BoxRegion:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float).ravel()
        upper = np.asarray(self.upper, dtype=float).ravel()
        if lower.shape != upper.shape:
            raise ConfigurationError("box bounds must have equal length")
        if np.any(~(lower < upper)):
            raise ConfigurationError("box must satisfy lower < upper elementwise")
        object.__setattr__(self, 'lower', lower)
        object.__setattr__(self, 'upper', upper)

    @classmethod
    def from_dataset(cls, ds):
        return cls(ds.lower, ds.upper)

    @property
    def dim(self):
        return self.lower.size

    def contains(self, z):
        return np.all((z >= self.lower) & (z < self.upper), axis=-1)

    def interior_point(self):
        mid = 0.5 * (self.lower + self.upper)
        finite = np.isfinite(mid)
        start = np.clip(0.0, self.lower, np.nextafter(self.upper, -np.inf))
        return np.where(finite, mid, start)

    def random_points(self, rng, size):
        """size points drawn uniformly inside the finite bands; unbounded coordinates use interior_point."""
        u = rng.random((size, self.dim))
        with np.errstate(invalid='ignore', over='ignore'):
            inside = self.lower + u * (self.upper - self.lower)
        finite = np.isfinite(self.lower) & np.isfinite(self.upper)
        points = np.where(finite, inside, self.interior_point())
        return np.clip(points, self.lower, np.nextafter(self.upper, -np.inf))


@dataclass(frozen=True, eq=False)
class SecondMoment:
    Q: np.ndarray
    n_samples: int


def log_band_mass(alpha, beta):
    """log(Phi(beta) - Phi(alpha)) for alpha < beta, evaluated in whichever tail keeps precision."""
    alpha, beta = np.broadcast_arrays(np.asarray(alpha, dtype=float), np.asarray(beta, dtype=float))
    flip = alpha > 0
    lo = np.where(flip, -beta, alpha)
    hi = np.where(flip, -alpha, beta)
    la, lb = log_ndtr(lo), log_ndtr(hi)
    with np.errstate(divide='ignore', invalid='ignore'):
        return lb + np.log(-np.expm1(la - lb))


def _log_pdf(x):
    return -0.5 * np.square(x) - _LOG_SQRT_2PI


def trunc_normal_mean(mu, sigma, a, b):
    """E[Z | a <= Z < b] for Z ~ N(mu, sigma^2); erf-ratio form evaluated in the log domain."""
    mu, a, b = np.broadcast_arrays(np.asarray(mu, dtype=float), np.asarray(a, dtype=float),
                                   np.asarray(b, dtype=float))
    if not np.all(sigma > 0):
        raise ConfigurationError(f"sigma must be positive, got {sigma}")
    if np.any(~(a < b)):
        raise ConfigurationError("truncation interval must satisfy a < b")
    alpha, beta = (a - mu) / sigma, (b - mu) / sigma
    log_z = log_band_mass(alpha, beta)
    with np.errstate(over='ignore', invalid='ignore'):
        # (phi(alpha) - phi(beta)) / Z with the larger density factored out; d = log phi(alpha) - log phi(beta)
        d = 0.5 * (beta - alpha) * (beta + alpha)
        alpha_near = np.abs(alpha) <= np.abs(beta)
        ratio = np.where(alpha_near,
                         np.exp(_log_pdf(alpha) - log_z) * -np.expm1(-d),
                         np.exp(_log_pdf(beta) - log_z) * np.expm1(d))
        ratio = np.where(np.isfinite(alpha) | np.isfinite(beta), ratio, 0.0)
        mean = mu + sigma * ratio
    bad = ~np.isfinite(mean)
    if np.any(bad):
        logger.debug("truncated mean fell back to the nearest edge for %d entries", int(bad.sum()))
        nearest = np.where(np.abs(mu - a) <= np.abs(mu - b), a, b)
        mean = np.where(bad, nearest, mean)
    mean = np.clip(mean, a, np.nextafter(b, -np.inf))
    return mean if mean.ndim else float(mean)


def _tail_proposal(a, b, rate, u):
    """Exponential with the given rate truncated to [a, b); uniform where a < 0 (interval around the mode)."""
    with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
        exp_draw = a - np.log1p(-u * -np.expm1(-rate * (b - a))) / rate
        uniform = a + u * (b - a)
    return np.where(a >= 0, exp_draw, uniform)


def _tail_log_accept(y, a, b, rate):
    # density ratio phi(y) / proposal(y), normalized to a maximum of 1 over [a, b)
    peak = np.square(np.maximum(rate - b, 0.0))
    return np.where(a >= 0, 0.5 * (peak - np.square(y - rate)), -0.5 * np.square(y))


def _tail_draw(lo, hi, u, rng):
    """
    Accept-reject draws of N(0, 1) on [lo, hi) for lo <= 0 intervals of negligible mass (Robert, 1995).

    Works on the mirrored interval [a, b) = [-hi, -lo): an exponential proposal with rate
    (a + sqrt(a^2 + 4)) / 2 when a >= 0, a uniform one otherwise. First proposals use u.
    """
    a, b = -hi, -lo
    rate = 0.5 * (a + np.sqrt(np.square(a) + 4.0))
    y = _tail_proposal(a, b, rate, u)
    pending = np.log(rng.random(y.shape)) > _tail_log_accept(y, a, b, rate)
    for _ in range(_MAX_TAIL_ROUNDS):
        if not np.any(pending):
            break
        idx = np.flatnonzero(pending)
        proposal = _tail_proposal(a[idx], b[idx], rate[idx], rng.random(idx.size))
        y[idx] = proposal
        pending[idx] = np.log(rng.random(idx.size)) > _tail_log_accept(proposal, a[idx], b[idx], rate[idx])
    else:
        if np.any(pending):
            logger.debug("tail sampler kept %d unaccepted proposals", int(pending.sum()))
    return -y


def truncated_standard_draw(alpha, beta, u, rng=None):
    """
    Inverse-CDF draw of N(0, 1) restricted to [alpha, beta) from uniforms u.

    Intervals entirely in the upper tail are mirrored into the lower tail so log_ndtr keeps its
    precision. Intervals carrying less than 1e-12 probability switch to an exact accept-reject
    sampler whose extra uniforms come from rng.
    """
    alpha, beta, u = np.broadcast_arrays(np.asarray(alpha, dtype=float), np.asarray(beta, dtype=float),
                                         np.asarray(u, dtype=float))
    flip = alpha > 0
    lo = np.where(flip, -beta, alpha)
    hi = np.where(flip, -alpha, beta)
    with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
        la, lb = log_ndtr(lo), log_ndtr(hi)
        log_z = lb + np.log(-np.expm1(la - lb))
        x = ndtri_exp(np.logaddexp(la, np.log(u) + log_z))
    x = np.array(x, dtype=float, ndmin=1)

    tail = np.array((log_z < _LOG_TAIL_FLOOR) | ~np.isfinite(x), ndmin=1)
    if np.any(tail):
        rng = np.random.default_rng() if rng is None else rng
        lo_t, hi_t, u_t = (np.array(v, dtype=float, ndmin=1)[tail] for v in (lo, hi, u))
        x[tail] = _tail_draw(lo_t, hi_t, u_t, rng)
    x = x.reshape(alpha.shape)
    x = np.where(flip, -x, x)
    return np.clip(x, alpha, np.nextafter(beta, -np.inf))


def gibbs_sample_box(cov, box, n_samples, burn_in=100, seed=0, n_chains=10, thin=1):
    """
    Draws from N(0, cov) truncated to an axis-aligned box by coordinate-wise Gibbs sweeps.

    Conditionals come from the precision matrix P = cov^-1: z_j | z_-j ~ N(z_j - (Pz)_j / P_jj, 1 / P_jj).
    n_chains independent chains start at uniform points of the box and are advanced together; each
    discards burn_in sweeps, then contributes one draw every thin sweeps until n_samples rows are
    collected.
    """
    cov = np.asarray(cov, dtype=float)
    n = box.dim
    if cov.shape != (n, n):
        raise ConfigurationError(f"covariance {cov.shape} does not match box dimension {n}")
    if thin < 1:
        raise ConfigurationError(f"thin must be >= 1, got {thin}")
    if n_samples <= 0:
        return np.zeros((0, n))
    try:
        P = linalg.cho_solve(linalg.cho_factor(0.5 * (cov + cov.T)), np.eye(n))
    except linalg.LinAlgError as e:
        raise SamplerError(f"covariance is not positive definite: {e}") from e
    P = 0.5 * (P + P.T)
    p_diag = np.diag(P).copy()
    cond_sd = 1.0 / np.sqrt(p_diag)

    rng = np.random.default_rng(seed)
    n_chains = max(1, min(n_chains, n_samples))
    n_kept = -(-n_samples // n_chains)
    Z = box.random_points(rng, n_chains)
    upper_incl = np.nextafter(box.upper, -np.inf)
    samples = np.empty((n_kept * n_chains, n))

    for sweep in range(burn_in + n_kept * thin):
        PZ = Z @ P
        U = rng.random((n_chains, n))
        for j in range(n):
            mean = Z[:, j] - PZ[:, j] / p_diag[j]
            alpha = (box.lower[j] - mean) / cond_sd[j]
            beta = (box.upper[j] - mean) / cond_sd[j]
            new = mean + cond_sd[j] * truncated_standard_draw(alpha, beta, U[:, j], rng=rng)
            new = np.clip(new, box.lower[j], upper_incl[j])
            PZ += np.outer(new - Z[:, j], P[j])
            Z[:, j] = new
        kept, offset = divmod(sweep - burn_in, thin)
        if sweep >= burn_in and offset == thin - 1:
            samples[kept * n_chains:(kept + 1) * n_chains] = Z

    samples = samples[:n_samples]
    if not np.all(box.contains(samples)):
        raise SamplerError("Gibbs draw left the truncation box")
    return samples


def second_moment(cov, box, n_samples=1000, seed=0, burn_in=100, n_chains=10, thin=1):
    """Monte Carlo estimate Q = (1/S) sum z z^T over S Gibbs draws."""
    Z = gibbs_sample_box(cov, box, n_samples, burn_in=burn_in, seed=seed, n_chains=n_chains, thin=thin)
    Q = Z.T @ Z / Z.shape[0]
    return SecondMoment(Q=0.5 * (Q + Q.T), n_samples=Z.shape[0])
