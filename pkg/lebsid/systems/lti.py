"""Continuous-time LTI plumbing: transfer functions, ZOH discretization and exact simulation."""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import signal
from scipy.linalg import expm

from lebsid.errors import ConfigurationError

__all__ = ['RationalTF', 'StateSpace', 'ZohSignal', 'tf_to_ss', 'zoh_discretize', 'simulate_zoh',
           'freq_response', 'integer_ratio']

logger = logging.getLogger(__name__)


def _trim(coeffs):
    coeffs = np.atleast_1d(np.asarray(coeffs, dtype=float))
    nonzero = np.flatnonzero(coeffs)
    if nonzero.size == 0:
        return np.zeros(1)
    return coeffs[nonzero[0]:]


@dataclass(frozen=True, eq=False)
class RationalTF:
    """G(s) = num(s) / den(s), coefficients in descending powers of s."""
    num: tuple
    den: tuple

    def __post_init__(self):
        num, den = _trim(self.num), _trim(self.den)
        if not np.all(np.isfinite(num)) or not np.all(np.isfinite(den)):
            raise ConfigurationError("transfer function coefficients must be finite")
        if den.size == 1 and den[0] == 0.0:
            raise ConfigurationError("denominator must have a nonzero leading coefficient")
        if np.any(num) and num.size >= den.size:
            raise ConfigurationError(
                f"transfer function must be strictly proper, got deg(num)={num.size - 1} >= deg(den)={den.size - 1}")
        if den.size < 2:
            raise ConfigurationError("denominator must have degree >= 1")
        object.__setattr__(self, 'num', tuple(float(v) for v in num))
        object.__setattr__(self, 'den', tuple(float(v) for v in den))

    @property
    def order(self):
        return len(self.den) - 1

    def poles(self):
        return np.roots(self.den)

    def is_stable(self):
        return bool(np.all(self.poles().real < 0))

    def __eq__(self, other):
        return isinstance(other, RationalTF) and self.num == other.num and self.den == other.den

    def __hash__(self):
        return hash((self.num, self.den))


@dataclass(frozen=True, eq=False)
class StateSpace:
    """x' = A x + B u, y = C x (no feedthrough)."""
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float).reshape(-1, 1)
        C = np.asarray(self.C, dtype=float).reshape(1, -1)
        n = A.shape[0]
        if A.shape != (n, n) or B.shape[0] != n or C.shape[1] != n:
            raise ConfigurationError(f"inconsistent state-space dimensions A{A.shape} B{B.shape} C{C.shape}")
        object.__setattr__(self, 'A', A)
        object.__setattr__(self, 'B', B)
        object.__setattr__(self, 'C', C)

    @property
    def n_states(self):
        return self.A.shape[0]


@dataclass(frozen=True, eq=False)
class ZohSignal:
    """Piecewise-constant signal: values[k] holds on [k*period, (k+1)*period), zero outside."""
    values: np.ndarray
    period: float

    def __post_init__(self):
        if not self.period > 0:
            raise ConfigurationError(f"ZOH period must be positive, got {self.period}")
        object.__setattr__(self, 'values', np.asarray(self.values, dtype=float).ravel())

    def sample(self, delta, n):
        """Samples u(k*delta), k = 0..n-1, for delta dividing the hold period."""
        ratio = integer_ratio(self.period, delta)
        idx = np.arange(n) // ratio
        out = np.zeros(n)
        inside = idx < self.values.size
        out[inside] = self.values[idx[inside]]
        return out


def integer_ratio(period, dt, tol=1e-9):
    """Returns period/dt as an int, rejecting non-integer ratios."""
    if not dt > 0:
        raise ConfigurationError(f"time step must be positive, got {dt}")
    ratio = period / dt
    k = int(round(ratio))
    if k < 1 or abs(ratio - k) > tol * max(1.0, ratio):
        raise ConfigurationError(f"period {period} is not an integer multiple of dt {dt}")
    return k


def tf_to_ss(tf):
    """Controllable canonical realization of a strictly proper transfer function."""
    n = tf.order
    if not np.any(tf.num):
        A = np.diag(np.ones(n - 1), -1)
        A[0, :] = -np.asarray(tf.den[1:]) / tf.den[0]
        B = np.zeros((n, 1))
        B[0, 0] = 1.0
        return StateSpace(A, B, np.zeros((1, n)))
    A, B, C, D = signal.tf2ss(tf.num, tf.den)
    if np.any(np.abs(D) > 0):
        raise ConfigurationError("realization has a feedthrough term; transfer function is not strictly proper")
    return StateSpace(A, B, C)


def zoh_discretize(ss, dt):
    """Exact ZOH pair (Ad, Bd) from one exponential of the augmented matrix [[A, B], [0, 0]]."""
    if not dt > 0:
        raise ConfigurationError(f"time step must be positive, got {dt}")
    n = ss.n_states
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = ss.A
    M[:n, n:] = ss.B
    E = expm(M * dt)
    return E[:n, :n], E[:n, n:]


def simulate_zoh(ss, u, dt, n_steps):
    """Noiseless output x(i*dt), i = 1..n_steps, from zero initial state."""
    ratio = integer_ratio(u.period, dt)
    if n_steps <= 0:
        return np.zeros(0)
    Ad, Bd = zoh_discretize(ss, dt)
    u_fine = u.sample(dt, n_steps + 1)
    logger.debug("simulating %d steps with hold ratio %d", n_steps, ratio)
    _, y, _ = signal.dlsim((Ad, Bd, ss.C, np.zeros((1, 1)), dt), u_fine)
    return np.asarray(y).ravel()[1:]


def freq_response(tf, omegas):
    """G(i*omega) by polynomial evaluation."""
    s = 1j * np.asarray(omegas, dtype=float)
    return np.polyval(tf.num, s) / np.polyval(tf.den, s)
