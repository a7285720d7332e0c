from dataclasses import dataclass

import numpy as np

from lebsid.errors import ConfigurationError

__all__ = ['FitScore', 'FitSummary', 'fit_metric', 'snr_db', 'quartiles']


@dataclass(frozen=True)
class FitScore:
    """fit = 100 (1 - ||x_hat - x|| / ||x - mean(x)||), in percent; can be negative."""
    fit: float

    def __float__(self):
        return self.fit


def fit_metric(x_hat, x):
    x_hat = np.asarray(x_hat, dtype=float).ravel()
    x = np.asarray(x, dtype=float).ravel()
    if x_hat.shape != x.shape:
        raise ConfigurationError(f"length mismatch: {x_hat.size} predicted vs {x.size} reference samples")
    spread = np.linalg.norm(x - x.mean())
    if spread == 0:
        raise ConfigurationError("reference sequence is constant; fit is undefined")
    return FitScore(float(100.0 * (1.0 - np.linalg.norm(x_hat - x) / spread)))


def snr_db(z_clean, noise):
    """10 log10 of signal energy over noise energy."""
    z_clean, noise = np.asarray(z_clean, dtype=float), np.asarray(noise, dtype=float)
    noise_energy = float(np.sum(np.square(noise)))
    if noise_energy == 0:
        return np.inf
    return float(10.0 * np.log10(np.sum(np.square(z_clean)) / noise_energy))


def quartiles(values):
    """(min, q1, median, q3, max)."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ConfigurationError("no values to summarize")
    return tuple(float(v) for v in np.percentile(values, [0, 25, 50, 75, 100]))


class FitSummary(object):
    """Accumulates per-method fit, event counts and wall time over Monte Carlo runs."""

    def __init__(self, methods=()):
        super(FitSummary, self).__init__()
        self.methods = list(methods)
        self.reset()

    def update(self, method, fit, n_events, wall_ms):
        if method not in self.fits:
            self.methods.append(method)
            self.fits[method], self.events[method], self.wall_ms[method] = [], [], []
        self.fits[method].append(float(fit))
        self.events[method].append(int(n_events))
        self.wall_ms[method].append(float(wall_ms))

    def get(self):
        """
        Returns:
            rows (list of dict): one row per method with min, q1, median, q3, max of fit,
            mean_events, mean_wall_ms and n_runs.
        """
        rows = []
        for method in self.methods:
            if not self.fits[method]:
                continue
            lo, q1, med, q3, hi = quartiles(self.fits[method])
            rows.append({'method': method, 'min': lo, 'q1': q1, 'median': med, 'q3': q3, 'max': hi,
                         'mean_events': float(np.mean(self.events[method])),
                         'mean_wall_ms': float(np.mean(self.wall_ms[method])),
                         'n_runs': len(self.fits[method])})
        return rows

    def reset(self):
        self.fits = {m: [] for m in self.methods}
        self.events = {m: [] for m in self.methods}
        self.wall_ms = {m: [] for m in self.methods}
