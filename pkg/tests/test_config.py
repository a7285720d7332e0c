import os

import pytest
import yaml

from lebsid.errors import ConfigurationError
from lebsid.models.hyper_em import HyperBounds, HyperParams
from lebsid.util.experiment.config import EstimatorConfig, ExperimentConfig, dump_config, load_config
from lebsid.util.experiment.presets import MSD, SWEEP_H, preset, preset_names


def test_preset_names():
    assert preset_names() == ['msd', 'msd_h_sweep', 'GA', 'GB', 'GC']
    with pytest.raises(ConfigurationError):
        preset('unknown')


def test_desk_and_full_msd_presets():
    desk = preset('msd')
    assert desk.system == MSD
    assert (desk.h, desk.delta, desk.delta_u, desk.sigma_noise, desk.input_std) == (1.0, 0.1, 3.0, 0.05, 5.0)
    assert desk.n_runs == 20
    assert desk.estimator.m_iter_hyper == 15
    assert desk.n == 150
    assert desk.hold_ratio == 30
    full = preset('msd', full=True)
    assert full.n_runs == 100
    assert full.estimator.m_iter_hyper == 40
    assert full.n == 300


def test_sweep_and_benchmark_presets():
    sweep = preset('msd_h_sweep')
    assert sweep.thresholds() == SWEEP_H
    assert sweep.sigma_noise == 0.1
    assert preset('msd').thresholds() == (1.0,)
    ga = preset('GA', full=True)
    assert (ga.h, ga.delta, ga.sigma_noise) == (2.5, 0.01, 0.3)
    assert ga.n == 1000
    gb = preset('GB')
    assert gb.hold_ratio == 100
    assert gb.system.is_stable()
    assert preset('GC').system.is_stable()


def test_estimator_defaults():
    config = EstimatorConfig()
    assert (config.q, config.m_iter_hyper, config.eps_hyper) == (1, 40, 1e-3)
    assert (config.m_iter_weights, config.eps_weights) == (40, 1e-4)
    assert (config.n_samples, config.burn_in, config.grid_size) == (1000, 100, 8)
    assert (config.n_chains, config.thin, config.step_growth) == (20, 2, 1.5)
    assert config.bounds == HyperBounds()
    assert config.with_seed(7).seed == 7


def test_estimator_validation():
    with pytest.raises(ConfigurationError):
        EstimatorConfig(n_samples=0)
    with pytest.raises(ConfigurationError):
        EstimatorConfig(eps_hyper=0.0)
    with pytest.raises(ConfigurationError):
        EstimatorConfig(beta_grid=(1.0, 0.1))
    with pytest.raises(ConfigurationError):
        EstimatorConfig(thin=0)
    with pytest.raises(ConfigurationError):
        EstimatorConfig(step_growth=0.9)
    assert EstimatorConfig(step_growth=1.0).step_growth == 1.0
    with pytest.raises(ConfigurationError):
        EstimatorConfig.from_dict({'n_sample': 10})


def test_estimator_dict_round_trip():
    config = EstimatorConfig(q=2, initial=HyperParams(1.0, 2.0, 0.5), bounds=HyperBounds(beta=(0.01, 10.0)))
    assert EstimatorConfig.from_dict(config.to_dict()) == config


def test_experiment_validation():
    base = preset('msd')
    with pytest.raises(ConfigurationError):
        base.override(delta_u=0.25)
    with pytest.raises(ConfigurationError):
        base.override(methods=('lebesgue', 'nearest'))
    with pytest.raises(ConfigurationError):
        base.override(h=0.0)
    with pytest.raises(ConfigurationError):
        base.override(h_values=(1.0, -1.0))
    assert base.override(seed=None, n_runs=3).n_runs == 3


@pytest.mark.parametrize("name", ['msd', 'msd_h_sweep', 'GB'])
def test_yaml_round_trip(tmp_path, name):
    config = preset(name).override(seed=11, methods=('lebesgue', 'midpoint'))
    path = tmp_path / f"{name}.yaml"
    text = dump_config(config, path)
    assert path.read_text() == text
    assert set(yaml.safe_load(text)) == {'name', 'system', 'sampling', 'experiment', 'estimator'}
    assert load_config(path) == config


def test_shipped_config_matches_desk_preset():
    assert load_config(os.path.join(os.path.dirname(__file__), '..', 'configs', 'msd.yaml')) == preset('msd')


def test_malformed_config_files(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("- just\n- a list\n")
    with pytest.raises(ConfigurationError):
        load_config(path)
    path.write_text("name: x\nsystem: {num: [1.0], den: [1.0, 1.0]}\n")
    with pytest.raises(ConfigurationError):
        load_config(path)


def test_config_from_dict_defaults():
    config = ExperimentConfig.from_dict({
        'system': {'num': [1.0], 'den': [1.0, 1.0]},
        'sampling': {'h': 0.5, 'delta': 0.1, 'delta_u': 0.5, 'sigma_noise': 0.0},
        'experiment': {'duration': 2.0},
    })
    assert config.name == 'custom'
    assert config.n_runs == 20
    assert config.methods == ('lebesgue', 'riemann', 'oracle')
    assert config.estimator == EstimatorConfig()
