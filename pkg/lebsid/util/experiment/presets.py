"""
Benchmark presets. Desk-scale by default; full=True restores the full record lengths,
iteration limits and 100 Monte Carlo runs.
"""
from dataclasses import replace

from lebsid.errors import ConfigurationError
from lebsid.systems.lti import RationalTF
from lebsid.util.experiment.config import EstimatorConfig, ExperimentConfig

__all__ = ['PRESETS', 'preset', 'preset_names']

# mass-spring-damper, m = 0.05, c = 0.2, k = 1
MSD = RationalTF((1.0,), (0.05, 0.2, 1.0))
GA = RationalTF((-6400.0, 1600.0), (1.0, 5.0, 408.0, 416.0, 1600.0))
GB = RationalTF(tuple(27.0 / 20.0 * v for v in (-2000.0, -3600.0, -2095.0, -396.0)),
                (1350.0, 7695.0, 12852.0, 7796.0, 1520.0))
GC = RationalTF((-3.025, -15.676, -32.802, -88.827), (1.0, 16.52, 65.534, 235.01, 292.948))

SWEEP_H = (1.0, 1.2, 1.5, 1.8, 2.0, 2.5)

# name: (system, h, delta, delta_u, sigma, input_std, desk duration, full duration, h_values)
PRESETS = {
    'msd': (MSD, 1.0, 0.1, 3.0, 0.05, 5.0, 15.0, 30.0, None),
    'msd_h_sweep': (MSD, 1.0, 0.1, 3.0, 0.1, 5.0, 30.0, 30.0, SWEEP_H),
    'GA': (GA, 2.5, 0.01, 3.0, 0.3, 1.0, 3.0, 10.0, None),
    'GB': (GB, 0.2, 0.03, 3.0, 0.03, 1.0, 9.0, 30.0, None),
    'GC': (GC, 0.2, 0.03, 3.0, 0.03, 1.0, 9.0, 30.0, None),
}


def preset_names():
    return list(PRESETS)


def preset(name, full=False):
    """
    Args:
        name (str): one of msd, msd_h_sweep, GA, GB, GC.
        full (bool): full scale (100 runs, M_iter = 40, full record) instead of desk scale
            (20 runs, M_iter = 15, shorter record).
    """
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}, expected one of {preset_names()}")
    system, h, delta, delta_u, sigma, input_std, desk_T, full_T, h_values = PRESETS[name]
    estimator = EstimatorConfig() if full else replace(EstimatorConfig(), m_iter_hyper=15)
    return ExperimentConfig(name=name, system=system, h=h, delta=delta, delta_u=delta_u, sigma_noise=sigma,
                            duration=full_T if full else desk_T, n_runs=100 if full else 20, seed=0,
                            input_std=input_std, h_values=h_values, estimator=estimator)
