"""
Stable-spline kernel and its cell-integrated forms for zero-order-hold inputs.

Every closed form here is a sum over r = 0..q-1 of terms

    gamma_{q,r} * exp(-a * max(t, tau)) * exp(-b * min(t, tau)),  a = beta*(2q-r-1), b = r*beta,

integrated over grid cells [(l-1)*delta, l*delta]. All exponents are kept non-positive, so long
records underflow towards zero instead of overflowing.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.linalg import toeplitz

from lebsid.errors import ConfigurationError, PoleProximityError

__all__ = ['KernelSpec', 'InputMatrix', 'GramFactors', 'gamma_coeff', 'eval_kernel',
           'integrated_kernel_matrix', 'gram_matrix', 'cross_gram_matrix', 'integrated_kernel_vector',
           'laplace_kernel_vector', 'pole_set']

logger = logging.getLogger(__name__)

POLE_TOL = 1e-8
_SERIES_CUTOFF = 1e-2


@dataclass(frozen=True)
class KernelSpec:
    """Stable-spline kernel of order q with decay rate beta."""
    q: int = 1
    beta: float = 1.0

    def __post_init__(self):
        if int(self.q) != self.q or self.q < 1:
            raise ConfigurationError(f"spline order q must be a positive integer, got {self.q}")
        if not self.beta > 0:
            raise ConfigurationError(f"beta must be positive, got {self.beta}")
        object.__setattr__(self, 'q', int(self.q))
        object.__setattr__(self, 'beta', float(self.beta))

    def with_beta(self, beta):
        return KernelSpec(self.q, beta)

    def terms(self):
        """(gamma_{q,r}, a, b) for r = 0..q-1."""
        q, beta = self.q, self.beta
        return [(gamma_coeff(q, r), beta * (2 * q - r - 1), beta * r) for r in range(q)]


@dataclass(frozen=True, eq=False)
class InputMatrix:
    """Lower-triangular Toeplitz matrix with first column u(0), u(delta), ..., u((N-1)*delta)."""
    phi: np.ndarray
    delta: float

    def __post_init__(self):
        phi = np.atleast_2d(np.asarray(self.phi, dtype=float))
        if phi.shape[0] != phi.shape[1]:
            raise ConfigurationError(f"input matrix must be square, got {phi.shape}")
        if not self.delta > 0:
            raise ConfigurationError(f"grid period must be positive, got {self.delta}")
        object.__setattr__(self, 'phi', phi)
        object.__setattr__(self, 'delta', float(self.delta))

    @classmethod
    def from_samples(cls, u_samples, delta):
        u_samples = np.asarray(u_samples, dtype=float).ravel()
        return cls(toeplitz(u_samples, np.zeros(u_samples.size)), delta)

    @classmethod
    def from_signal(cls, u, delta, n):
        return cls.from_samples(u.sample(delta, n), delta)

    @property
    def n(self):
        return self.phi.shape[0]

    @property
    def first_column(self):
        return self.phi[:, 0]


@dataclass(frozen=True, eq=False)
class GramFactors:
    phi: InputMatrix
    O: np.ndarray

    def __post_init__(self):
        if self.O.shape != (self.phi.n, self.phi.n):
            raise ConfigurationError(f"O{self.O.shape} does not match Phi of size {self.phi.n}")

    @classmethod
    def build(cls, spec, phi):
        return cls(phi, integrated_kernel_matrix(spec, phi.delta, phi.n))


def gamma_coeff(q, r):
    """gamma_{q,r} = (-1)^(q+r-1) / (r! (2q-r-1)!)."""
    if not 0 <= r <= q - 1:
        raise ConfigurationError(f"index r must lie in [0, {q - 1}], got {r}")
    return (-1.0) ** (q + r - 1) / (math.factorial(r) * math.factorial(2 * q - r - 1))


def eval_kernel(spec, t, tau):
    t, tau = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(tau, dtype=float))
    hi, lo = np.maximum(t, tau), np.minimum(t, tau)
    out = np.zeros(hi.shape)
    for g, a, b in spec.terms():
        out += g * np.exp(-a * hi - b * lo)
    return out if out.ndim else float(out)


def _decay_integral(c, delta):
    """int_0^delta exp(-c x) dx for real or complex c, accurate as c*delta -> 0."""
    c = np.asarray(c)
    x = c * delta
    small = np.abs(x) < _SERIES_CUTOFF
    safe = np.where(small, 1.0, x)
    direct = -np.expm1(-safe) / safe
    series = 1 - x / 2 + x ** 2 / 6 - x ** 3 / 24 + x ** 4 / 120 - x ** 5 / 720
    return delta * np.where(small, series, direct)


def _ramp_decay_integral(c, delta):
    """int_0^delta x exp(-c x) dx for real or complex c, accurate as c*delta -> 0."""
    c = np.asarray(c)
    x = c * delta
    small = np.abs(x) < _SERIES_CUTOFF
    safe = np.where(small, 1.0, x)
    direct = (-np.expm1(-safe) - safe * np.exp(-safe)) / safe ** 2
    series = 0.5 - x / 3 + x ** 2 / 8 - x ** 3 / 30 + x ** 4 / 144 - x ** 5 / 840
    return delta ** 2 * np.where(small, series, direct)


def integrated_kernel_matrix(spec, delta, n):
    """
    O_ij = double integral of k over the cell [(i-1)d, i*d] x [(j-1)d, j*d].

    Off-diagonal cells never overlap, so the max/min split is fixed and the integral factors.
    Diagonal cells integrate the two triangles explicitly; the b = 0 term uses the ramp integral
    instead of dividing by b.
    """
    if n < 1 or not delta > 0:
        raise ConfigurationError(f"need n >= 1 and delta > 0, got n={n}, delta={delta}")
    starts = delta * np.arange(n)
    O = np.zeros((n, n))
    for g, a, b in spec.terms():
        da, db = _decay_integral(a, delta), _decay_integral(b, delta)
        lower = np.tril(np.exp(-a * starts[:, None] - b * starts[None, :]) * (da * db), -1)
        if b > 0:
            diag = 2.0 * np.exp(-(a + b) * starts) * (da - _decay_integral(a + b, delta)) / b
        else:
            diag = 2.0 * np.exp(-a * starts) * _ramp_decay_integral(a, delta)
        O += g * (lower + lower.T + np.diag(diag))
    return O


def gram_matrix(factors):
    """K = Phi O Phi^T, symmetrized against round-off."""
    phi = factors.phi.phi
    K = phi @ factors.O @ phi.T
    return 0.5 * (K + K.T)


def cross_gram_matrix(phi_new, O, phi):
    """Phi_new O Phi^T: noiseless outputs under a new input for weights fitted on phi."""
    return phi_new.phi @ O @ phi.phi.T


def integrated_kernel_vector(spec, delta, n, t):
    """
    w_l(t) = int over cell l of k(t, tau) d tau, l = 1..n, for each t (shape t.shape + (n,)).
    """
    t = np.asarray(t, dtype=float)[..., None]
    s0 = delta * np.arange(n)
    s1 = s0 + delta
    out = np.zeros(np.broadcast_shapes(t.shape, s0.shape))
    for g, a, b in spec.terms():
        before = np.exp(-b * t - a * s0) * _decay_integral(a, delta)
        after = np.exp(-a * t - b * s0) * _decay_integral(b, delta)
        tt = np.clip(t, s0, s1)
        if b > 0:
            inside = (np.exp(-a * tt - b * s0) - np.exp(-(a + b) * tt)) / b \
                + (np.exp(-(a + b) * tt) - np.exp(-b * tt - a * s1)) / a
        else:
            inside = np.exp(-a * tt) * (tt - s0) + (np.exp(-a * tt) - np.exp(-a * s1)) / a
        out += g * np.where(t <= s0, before, np.where(t >= s1, after, inside))
    return out


def pole_set(spec):
    return [-k * spec.beta for k in range(2 * spec.q)]


def _check_poles(spec, s):
    tol = POLE_TOL * max(1.0, spec.beta)
    for pole in pole_set(spec):
        if abs(s - pole) < tol:
            raise PoleProximityError(s, pole)


def _laplace_closed_form(spec, delta, n, s):
    s0 = delta * np.arange(n)
    s1 = s0 + delta
    out = np.zeros(n, dtype=complex)
    for g, a, b in spec.terms():
        da, db = _decay_integral(a, delta), _decay_integral(b, delta)
        # tau-cell entirely after t
        t1 = np.exp(-a * s0) * da * _decay_integral(b + s, s0)
        # tau-cell entirely before t
        t3 = np.exp(-b * s0) * db * np.exp(-(a + s) * s1) / (a + s)
        # t inside the tau-cell
        e_as = np.exp(-(a + s) * s0) * _decay_integral(a + s, delta)
        if b > 0:
            e_abs = np.exp(-(a + b + s) * s0) * _decay_integral(a + b + s, delta)
            e_bs = np.exp(-(b + s) * s0) * _decay_integral(b + s, delta)
            t2 = np.exp(-b * s0) * e_as / b + (1.0 / a - 1.0 / b) * e_abs - np.exp(-a * s1) * e_bs / a
        else:
            e_s = np.exp(-s * s0) * _decay_integral(s, delta)
            t2 = np.exp(-(a + s) * s0) * _ramp_decay_integral(a + s, delta) + e_as / a - np.exp(-a * s1) * e_s / a
        out += g * (t1 + t2 + t3)
    return out


def _laplace_numeric(spec, delta, n, s):
    out = np.zeros(n, dtype=complex)
    horizon = 60.0 / (spec.q * spec.beta)
    for l in range(n):
        s0, s1 = l * delta, (l + 1) * delta
        upper = s1 + horizon

        def integrand(t, part):
            v = integrated_kernel_vector(spec, delta, n, t)[l] * np.exp(-s * t)
            return v.real if part == 0 else v.imag

        re = sum(integrate.quad(integrand, lo, hi, args=(0,), limit=200)[0]
                 for lo, hi in ((0, s0), (s0, s1), (s1, upper)) if hi > lo)
        im = sum(integrate.quad(integrand, lo, hi, args=(1,), limit=200)[0]
                 for lo, hi in ((0, s0), (s0, s1), (s1, upper)) if hi > lo)
        out[l] = re + 1j * im
    return out


def laplace_kernel_vector(spec, delta, n, s, fallback=False):
    """
    K_l(s) = int_0^inf (int over cell l of k(t, tau) d tau) exp(-s t) dt, l = 1..n.

    Evaluations within POLE_TOL of {-k*beta, k = 0..2q-1} raise PoleProximityError unless
    fallback is set, in which case the transform is computed by quadrature.
    """
    s = complex(s)
    try:
        _check_poles(spec, s)
    except PoleProximityError:
        if not fallback:
            raise
        logger.warning("s = %s is near a closed-form pole, using numerical Laplace transform", s)
        return _laplace_numeric(spec, delta, n, s)
    return _laplace_closed_form(spec, delta, n, s)
