import os

import numpy as np
import pytest

from lebsid.errors import ConfigurationError
from lebsid.util.dataset import io
from lebsid.util.experiment.config import EstimatorConfig, ExperimentConfig
from lebsid.util.experiment.montecarlo import (EVENT_TOLERANCE, MSD_EVENT_TARGETS, RunRecord, check, estimate_run,
                                               run_experiment, run_single, simulate_run, summarize, validation_fit)
from lebsid.util.experiment.presets import MSD, preset


@pytest.fixture
def tiny_config():
    return ExperimentConfig(name='tiny', system=MSD, h=0.5, delta=0.1, delta_u=0.5, sigma_noise=0.05,
                            duration=3.0, n_runs=3, seed=5, input_std=5.0, methods=('riemann', 'oracle'),
                            estimator=EstimatorConfig(m_iter_hyper=2, n_samples=100, burn_in=20,
                                                      m_iter_weights=10))


def _record(run, method, fit, h=1.0, n_events=10):
    return RunRecord(run=run, seed=run, method=method, h=h, fit=fit, n_events=n_events, gamma_tilde=1.0,
                     beta=1.0, sigma2=0.01, snr_db=20.0, wall_ms=5.0)


def _summary_row(method, h, median, mean_events=10.0):
    return {'method': method, 'h': h, 'median': median, 'mean_events': mean_events}


def test_simulated_runs_are_seeded(tiny_config):
    data = simulate_run(tiny_config, 1)
    again = simulate_run(tiny_config, 1)
    other = simulate_run(tiny_config, 2)
    assert data.seed == 6
    assert data.z_clean.shape == (tiny_config.n + 1,)
    assert data.z_clean[0] == 0.0
    assert data.ds.n == tiny_config.n
    np.testing.assert_array_equal(data.z_noisy, again.z_noisy)
    assert not np.array_equal(data.z_noisy, other.z_noisy)
    assert data.ds.events[0, 0] == 0.0


def test_threshold_changes_bands_not_signal(tiny_config):
    coarse = simulate_run(tiny_config, 0, h=2.0)
    fine = simulate_run(tiny_config, 0, h=0.25)
    np.testing.assert_array_equal(coarse.z_noisy, fine.z_noisy)
    assert coarse.ds.n_events <= fine.ds.n_events


def test_record_validation():
    with pytest.raises(ConfigurationError):
        _record(0, 'riemann', 101.0)
    with pytest.raises(ConfigurationError):
        _record(0, 'riemann', 50.0, n_events=0)
    assert 'wall_ms' not in _record(0, 'riemann', 50.0).to_row()


def test_empty_experiment(tiny_config):
    assert run_experiment(tiny_config.override(n_runs=0), progress=False) == []
    with pytest.raises(ConfigurationError):
        summarize([])


def test_records_are_ordered_and_complete(tiny_config):
    records = run_experiment(tiny_config, progress=False)
    assert [(r.run, r.method) for r in records] == [(i, m) for i in range(3) for m in ('riemann', 'oracle')]
    assert all(np.isfinite(r.fit) and r.fit <= 100.0 for r in records)
    assert all(r.seed == tiny_config.seed + r.run for r in records)


def test_parallel_matches_sequential(tiny_config, tmp_path):
    sequential = run_experiment(tiny_config, n_jobs=1, progress=False)
    parallel = run_experiment(tiny_config, n_jobs=2, progress=False)
    assert [r.to_row() for r in sequential] == [r.to_row() for r in parallel]
    a = io.write_records(sequential, str(tmp_path / "a.csv"))
    b = io.write_records(parallel, str(tmp_path / "b.csv"))
    with open(a, 'rb') as fa, open(b, 'rb') as fb:
        assert fa.read() == fb.read()


def test_run_single_writes_artifacts(tiny_config, tmp_path):
    config = tiny_config.override(methods=('riemann',),
                                  estimator=EstimatorConfig(diagnostics=True, m_iter_hyper=2))
    records = run_single(config, 0, out_dir=str(tmp_path), freq_tables=True)
    assert len(records) == 1
    assert os.path.isfile(tmp_path / 'freq' / 'run0000_h0.5_riemann.csv')
    assert os.path.isfile(tmp_path / 'trace_hyper' / 'run0000_h0.5_riemann.csv')
    table = io.read_records(str(tmp_path / 'freq' / 'run0000_h0.5_riemann.csv'))
    assert list(table.columns) == ['omega', 're', 'im']
    assert len(table) == 301


def test_threshold_sweep_repeats_runs(tiny_config):
    config = tiny_config.override(n_runs=1, methods=('riemann',), h_values=(0.5, 1.0))
    records = run_experiment(config, progress=False)
    assert [r.h for r in records] == [0.5, 1.0]


def test_summarize_rows():
    records = [_record(i, m, fit) for i, (m, fit) in enumerate(
        [('lebesgue', 80.0), ('lebesgue', 90.0), ('lebesgue', 70.0)])]
    records += [_record(i, 'midpoint', 75.0) for i in range(3)]
    records += [_record(0, 'riemann', 40.0, h=2.0)]
    rows = summarize(records)
    by_key = {(row['method'], row['h']): row for row in rows}
    leb = by_key[('lebesgue', 1.0)]
    assert (leb['min'], leb['median'], leb['max']) == (70.0, 80.0, 90.0)
    assert leb['n_runs'] == 3
    assert leb['mean_wall_ms'] == pytest.approx(5.0)
    assert leb['em_win_rate'] == pytest.approx(2 / 3)
    assert np.isnan(by_key[('midpoint', 1.0)]['em_win_rate'])
    assert np.isnan(by_key[('riemann', 2.0)]['em_win_rate'])
    assert [row['h'] for row in rows] == [1.0, 1.0, 2.0]


def test_check_ordering_and_events():
    config = preset('msd', full=True)
    rows = [_summary_row('lebesgue', 1.0, 78.0, 69.0), _summary_row('riemann', 1.0, 40.0, 69.0),
            _summary_row('oracle', 1.0, 85.0, 69.0)]
    results = check(config, rows)
    assert {r.name for r in results} == {"lebesgue > riemann (h=1)", "oracle >= lebesgue (h=1)",
                                         "lebesgue median fit >= 70", "mean events (h=1)"}
    assert all(r.passed for r in results)

    rows = [_summary_row('lebesgue', 1.0, 30.0, 40.0), _summary_row('riemann', 1.0, 40.0, 40.0)]
    failed = {r.name for r in check(config, rows) if not r.passed}
    assert failed == {"lebesgue > riemann (h=1)", "lebesgue median fit >= 70", "mean events (h=1)"}


def test_event_window_only_for_full_records():
    rows = [_summary_row('lebesgue', 1.0, 78.0, 40.0)]
    names = {r.name for r in check(preset('msd'), rows)}
    assert "mean events (h=1)" not in names


def test_check_threshold_sweep():
    config = preset('msd_h_sweep')
    rows = [_summary_row('riemann', h, m) for h, m in ((1.0, 80.0), (1.5, 60.0), (2.5, 30.0))]
    rows.append(_summary_row('lebesgue', 2.5, 55.0))
    results = {r.name: r.passed for r in check(config, rows)}
    assert results["riemann fit non-increasing in h"]
    assert results["lebesgue beats riemann by 10 at h=2.5"]

    rows[1] = _summary_row('riemann', 1.5, 85.0)
    results = {r.name: r.passed for r in check(config, rows)}
    assert not results["riemann fit non-increasing in h"]


def test_records_carry_iteration_counts(tiny_config):
    config = tiny_config.override(n_runs=1, methods=('midpoint', 'lebesgue', 'riemann'))
    records = {r.method: r for r in run_single(config, 0)}
    leb, mid = records['lebesgue'], records['midpoint']
    assert 1 <= leb.hyper_iters <= config.estimator.m_iter_hyper
    assert 1 <= leb.weight_iters <= config.estimator.m_iter_weights
    assert mid.weight_iters == 0
    assert (mid.hyper_iters, mid.gamma_tilde, mid.beta, mid.sigma2) == \
        (leb.hyper_iters, leb.gamma_tilde, leb.beta, leb.sigma2)


def test_midpoint_shares_lebesgue_hyperparameters(tiny_config):
    data = simulate_run(tiny_config, 0)
    est = tiny_config.estimator.with_seed(data.seed)
    leb = estimate_run('lebesgue', data, est, tiny_config.delta)
    shared = estimate_run('midpoint', data, est, tiny_config.delta, fitted=leb)
    fresh = estimate_run('midpoint', data, est, tiny_config.delta)
    assert shared.rho == fresh.rho
    np.testing.assert_allclose(shared.c, fresh.c, rtol=1e-10, atol=1e-12)
    with pytest.raises(ConfigurationError):
        estimate_run('midpoint', data, est, tiny_config.delta, fitted=fresh)


def test_validation_fit_uses_fresh_input(tiny_config):
    data = simulate_run(tiny_config, 0)
    res = estimate_run('oracle', data, tiny_config.estimator.with_seed(data.seed), tiny_config.delta)
    fit = validation_fit(tiny_config, data, res)
    assert np.isfinite(fit) and fit <= 100.0
    assert fit == validation_fit(tiny_config, data, res)


@pytest.mark.parametrize('name,h', [('msd', 1.0), ('msd_h_sweep', 1.0), ('msd_h_sweep', 2.5)])
def test_mean_event_counts_match_targets(name, h):
    config = preset(name, full=True)
    target = MSD_EVENT_TARGETS[name][h]
    counts = [simulate_run(config, i, h).ds.n_events for i in range(20)]
    assert abs(np.mean(counts) - target) <= EVENT_TOLERANCE * target


@pytest.fixture(scope='module')
def desk_msd():
    config = preset('msd').override(methods=('lebesgue', 'midpoint', 'riemann', 'oracle'))
    records = run_experiment(config, n_jobs=-1, progress=False)
    return config, records, summarize(records)


@pytest.mark.slow
def test_desk_msd_fit_ordering(desk_msd):
    config, records, rows = desk_msd
    assert {(r.run, r.method) for r in records} == {(i, m) for i in range(config.n_runs) for m in config.methods}
    medians = {row['method']: row['median'] for row in rows}
    assert medians['oracle'] >= medians['lebesgue'] > medians['riemann']
    assert medians['lebesgue'] >= 70.0


@pytest.mark.slow
def test_desk_msd_weight_em_beats_initializer(desk_msd):
    _, _, rows = desk_msd
    leb = next(row for row in rows if row['method'] == 'lebesgue')
    assert leb['em_win_rate'] >= 0.8


@pytest.mark.slow
def test_desk_msd_noise_level_and_convergence(desk_msd):
    config, records, _ = desk_msd
    leb = [r for r in records if r.method == 'lebesgue']
    sigma_hat = np.median([np.sqrt(r.sigma2) for r in leb])
    assert 0.5 * config.sigma_noise <= sigma_hat <= 2.0 * config.sigma_noise
    converged = [r.weight_iters < config.estimator.m_iter_weights for r in leb]
    assert np.mean(converged) >= 0.9


@pytest.mark.slow
def test_threshold_sweep_separates_methods():
    config = preset('msd_h_sweep').override(methods=('lebesgue', 'riemann'), h_values=(1.0, 1.5, 2.5))
    rows = summarize(run_experiment(config, n_jobs=-1, progress=False))
    medians = {(row['method'], row['h']): row['median'] for row in rows}
    riemann = [medians[('riemann', h)] for h in (1.0, 1.5, 2.5)]
    assert all(np.diff(riemann) <= 0)
    assert medians[('lebesgue', 2.5)] - medians[('riemann', 2.5)] >= 10.0
