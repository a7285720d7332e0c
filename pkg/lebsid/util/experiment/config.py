"""
Experiment and estimator configuration, loaded from and dumped to YAML.

Layout of a config file::

    name: msd
    system: {num: [1.0], den: [0.05, 0.2, 1.0]}
    sampling: {h: 1.0, delta: 0.1, delta_u: 3.0, sigma_noise: 0.05}
    experiment: {duration: 15.0, n_runs: 20, seed: 0, input_std: 5.0, methods: [lebesgue, riemann, oracle]}
    estimator: {q: 1, m_iter_hyper: 40, ...}
"""
import logging
from dataclasses import asdict, dataclass, field, fields, replace

import yaml

from lebsid.errors import ConfigurationError
from lebsid.models.hyper_em import HyperBounds, HyperParams
from lebsid.systems.lti import RationalTF, integer_ratio

__all__ = ['EstimatorConfig', 'ExperimentConfig', 'load_config', 'dump_config', 'KNOWN_METHODS']

logger = logging.getLogger(__name__)

KNOWN_METHODS = ('lebesgue', 'riemann', 'oracle', 'midpoint')


@dataclass(frozen=True)
class EstimatorConfig:
    q: int = 1
    m_iter_hyper: int = 40
    eps_hyper: float = 1e-3
    m_iter_weights: int = 40
    eps_weights: float = 1e-4
    step_growth: float = 1.5
    n_samples: int = 1000
    burn_in: int = 100
    n_chains: int = 20
    thin: int = 2
    grid_size: int = 8
    gamma_tilde_grid: tuple = (1e-6, 1e3)
    beta_grid: tuple = (1e-2, 1e2)
    bounds: HyperBounds = field(default_factory=HyperBounds)
    initial: HyperParams = None
    seed: int = 0
    laplace_fallback: bool = False
    diagnostics: bool = False

    def __post_init__(self):
        for name in ('q', 'n_samples', 'n_chains', 'thin', 'grid_size'):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ('m_iter_hyper', 'm_iter_weights', 'burn_in'):
            if int(getattr(self, name)) < 0:
                raise ConfigurationError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ('eps_hyper', 'eps_weights'):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.step_growth >= 1:
            raise ConfigurationError(f"step_growth must be >= 1, got {self.step_growth}")
        for name in ('gamma_tilde_grid', 'beta_grid'):
            lo, hi = (float(v) for v in getattr(self, name))
            if not 0 < lo < hi:
                raise ConfigurationError(f"{name} must satisfy 0 < lo < hi, got ({lo}, {hi})")
            object.__setattr__(self, name, (lo, hi))
        if isinstance(self.bounds, dict):
            object.__setattr__(self, 'bounds', HyperBounds(**self.bounds))
        if isinstance(self.initial, dict):
            object.__setattr__(self, 'initial', HyperParams(**self.initial))

    def with_seed(self, seed):
        return replace(self, seed=int(seed))

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d['gamma_tilde_grid'] = list(self.gamma_tilde_grid)
        d['beta_grid'] = list(self.beta_grid)
        d['bounds'] = {k: list(v) for k, v in asdict(self.bounds).items()}
        d['initial'] = None if self.initial is None else self.initial.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown estimator keys: {sorted(unknown)}")
        if 'bounds' in d and d['bounds'] is not None:
            d['bounds'] = HyperBounds(**{k: tuple(v) for k, v in d['bounds'].items()})
        if d.get('initial') is not None:
            d['initial'] = HyperParams(**d['initial'])
        return cls(**d)


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Args:
        name (str): preset or experiment name.
        system (RationalTF): true continuous-time system.
        h (float): threshold spacing.
        delta (float): fine grid period.
        delta_u (float): input hold period, an integer multiple of delta.
        sigma_noise (float): std of the additive output noise.
        duration (float): record length T; T / delta samples are used.
        n_runs (int): Monte Carlo repetitions.
        seed (int): base seed, run i uses seed + i.
        input_std (float): std of the white Gaussian input before the hold.
        methods (tuple): subset of KNOWN_METHODS.
        h_values (tuple or None): threshold sweep; every run is repeated for each h.
        estimator (EstimatorConfig): estimator settings.
    """
    name: str
    system: RationalTF
    h: float
    delta: float
    delta_u: float
    sigma_noise: float
    duration: float
    n_runs: int = 20
    seed: int = 0
    input_std: float = 1.0
    methods: tuple = ('lebesgue', 'riemann', 'oracle')
    h_values: tuple = None
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)

    def __post_init__(self):
        if not self.h > 0 or not self.sigma_noise >= 0 or not self.input_std >= 0:
            raise ConfigurationError("h must be positive, sigma_noise and input_std non-negative")
        integer_ratio(self.delta_u, self.delta)
        integer_ratio(self.duration, self.delta)
        if self.n_runs < 0:
            raise ConfigurationError(f"n_runs must be >= 0, got {self.n_runs}")
        methods = tuple(self.methods)
        bad = [m for m in methods if m not in KNOWN_METHODS]
        if bad or not methods:
            raise ConfigurationError(f"methods must be a non-empty subset of {KNOWN_METHODS}, got {methods}")
        object.__setattr__(self, 'methods', methods)
        if self.h_values is not None:
            h_values = tuple(float(v) for v in self.h_values)
            if not h_values or any(not v > 0 for v in h_values):
                raise ConfigurationError(f"h_values must be positive, got {self.h_values}")
            object.__setattr__(self, 'h_values', h_values)

    @property
    def n(self):
        """Number of grid samples used for identification."""
        return integer_ratio(self.duration, self.delta)

    @property
    def hold_ratio(self):
        return integer_ratio(self.delta_u, self.delta)

    def thresholds(self):
        return self.h_values if self.h_values is not None else (self.h,)

    def override(self, **kwargs):
        """Copy with the given top-level fields replaced; None values are ignored."""
        kwargs = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **kwargs)

    def to_dict(self):
        return {
            'name': self.name,
            'system': {'num': list(self.system.num), 'den': list(self.system.den)},
            'sampling': {'h': self.h, 'delta': self.delta, 'delta_u': self.delta_u,
                         'sigma_noise': self.sigma_noise},
            'experiment': {'duration': self.duration, 'n_runs': self.n_runs, 'seed': self.seed,
                           'input_std': self.input_std, 'methods': list(self.methods),
                           'h_values': None if self.h_values is None else list(self.h_values)},
            'estimator': self.estimator.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        try:
            system = RationalTF(tuple(d['system']['num']), tuple(d['system']['den']))
            sampling, experiment = d['sampling'], d.get('experiment', {})
            return cls(name=d.get('name', 'custom'), system=system,
                       h=float(sampling['h']), delta=float(sampling['delta']),
                       delta_u=float(sampling['delta_u']), sigma_noise=float(sampling['sigma_noise']),
                       duration=float(experiment['duration']),
                       n_runs=int(experiment.get('n_runs', 20)), seed=int(experiment.get('seed', 0)),
                       input_std=float(experiment.get('input_std', 1.0)),
                       methods=tuple(experiment.get('methods', ('lebesgue', 'riemann', 'oracle'))),
                       h_values=experiment.get('h_values'),
                       estimator=EstimatorConfig.from_dict(d.get('estimator')))
        except (KeyError, TypeError) as e:
            raise ConfigurationError(f"malformed experiment config: missing or invalid {e}") from e


def load_config(path):
    with open(path, 'r') as f:
        data = yaml.safe_load(f)
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path} does not contain a mapping")
    logger.debug("loaded config %s", path)
    return ExperimentConfig.from_dict(data)


def dump_config(config, path=None):
    """YAML text of config; also written to path when given."""
    text = yaml.safe_dump(config.to_dict(), sort_keys=False, default_flow_style=None)
    if path is not None:
        with open(path, 'w') as f:
            f.write(text)
    return text
