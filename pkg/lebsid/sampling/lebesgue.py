"""Set-valued quantizer and Lebesgue (threshold-crossing) event extraction on a fine grid."""
import logging
from dataclasses import dataclass

import numpy as np

from lebsid.errors import ConfigurationError

__all__ = ['LebesgueDataset', 'quantize', 'sample_events', 'midpoints', 'eta_from_events', 'add_noise']

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class LebesgueDataset:
    """
    Band data of one Lebesgue-sampled record.

    Args:
        h (float): threshold spacing.
        delta (float): fine grid period.
        eta (ndarray): lower band edges eta_1..eta_N (grid index 0 dropped).
        events (ndarray): (L, 2) array of (t_l, m_l), m_l the integer level crossed into.
    """
    h: float
    delta: float
    eta: np.ndarray
    events: np.ndarray

    def __post_init__(self):
        if not self.h > 0 or not self.delta > 0:
            raise ConfigurationError(f"h and delta must be positive, got h={self.h}, delta={self.delta}")
        eta = np.asarray(self.eta, dtype=float).ravel()
        events = np.asarray(self.events, dtype=float).reshape(-1, 2)
        levels = eta / self.h
        if not np.allclose(levels, np.round(levels), rtol=0.0, atol=1e-9 * max(1.0, np.max(np.abs(levels), initial=0))):
            raise ConfigurationError("every band edge must be an integer multiple of h")
        if events.shape[0] > 1:
            if np.any(np.diff(events[:, 0]) <= 0):
                raise ConfigurationError("event times must be strictly increasing")
        object.__setattr__(self, 'eta', eta)
        object.__setattr__(self, 'events', events)

    @property
    def n(self):
        return self.eta.size

    @property
    def n_events(self):
        return self.events.shape[0]

    @property
    def lower(self):
        return self.eta

    @property
    def upper(self):
        return self.eta + self.h

    @property
    def times(self):
        """Grid instants i*delta, i = 1..N, that the bands refer to."""
        return self.delta * np.arange(1, self.n + 1)

    def compression(self):
        """Fraction of grid samples that produced an event."""
        return self.n_events / max(self.n + 1, 1)

    def shifted(self, levels):
        """Same record with every band moved by an integer number of levels."""
        events = self.events.copy()
        events[:, 1] += levels
        return LebesgueDataset(self.h, self.delta, self.eta + levels * self.h, events)


def quantize(z, h):
    """Lower band edge eta = h*floor(z/h), so that z lies in [eta, eta + h)."""
    if not h > 0:
        raise ConfigurationError(f"threshold spacing must be positive, got {h}")
    z = np.asarray(z, dtype=float)
    k = np.floor(z / h)
    # z/h can round across a threshold; correct the level so z stays in [eta, eta + h)
    k = np.where(z < h * k, k - 1, k)
    k = np.where(z >= h * k + h, k + 1, k)
    eta = h * k
    return eta if eta.ndim else float(eta)


def sample_events(z_fine, h, delta):
    """Quantizes a fine-grid record and keeps grid-level band changes as the event stream."""
    z_fine = np.asarray(z_fine, dtype=float).ravel()
    if z_fine.size == 0:
        raise ConfigurationError("cannot sample an empty signal")
    eta_all = quantize(z_fine, h)
    levels = np.round(eta_all / h).astype(np.int64)
    changes = np.flatnonzero(np.diff(levels)) + 1
    idx = np.concatenate(([0], changes))
    events = np.column_stack((idx * delta, levels[idx].astype(float)))
    logger.debug("%d events from %d grid samples (h=%g)", idx.size, z_fine.size, h)
    return LebesgueDataset(h=h, delta=delta, eta=eta_all[1:], events=events)


def eta_from_events(events, n, h, delta):
    """Rebuilds eta_1..eta_N from the event stream alone by holding the last crossed level."""
    events = np.asarray(events, dtype=float).reshape(-1, 2)
    grid_idx = np.round(events[:, 0] / delta).astype(np.int64)
    pos = np.searchsorted(grid_idx, np.arange(n + 1), side='right') - 1
    if np.any(pos < 0):
        raise ConfigurationError("event stream does not start at the first grid sample")
    levels = events[pos, 1]
    return h * levels[1:]


def midpoints(ds):
    return ds.eta + ds.h / 2.0


def add_noise(z, sigma, rng):
    """i.i.d. Gaussian measurement noise on the fine grid, before quantization."""
    z = np.asarray(z, dtype=float)
    return z + sigma * rng.standard_normal(z.shape)
