import logging
from dataclasses import replace

import numpy as np
import pytest

from lebsid.errors import ConfigurationError, EstimationError
from lebsid.models.hyper_em import (HyperBounds, HyperParams, em_objective, fit_hyperparams_direct,
                                    full_objective, hyper_em_step, m_step, optimize_hyperparams,
                                    prior_covariance, sigma2_update, stacked_qr)
from lebsid.models.kernel import InputMatrix, KernelSpec, integrated_kernel_matrix
from lebsid.util.experiment.config import EstimatorConfig


def _dense_terms(rho, C, phi, spec):
    """N log tr(S1^-1 C C^T) + log det S1 with S1 = K / gamma_tilde + I, by dense linear algebra."""
    gamma_tilde, beta = rho
    O = integrated_kernel_matrix(spec.with_beta(beta), phi.delta, phi.n)
    S1 = phi.phi @ O @ phi.phi.T / gamma_tilde + np.eye(phi.n)
    residual = np.trace(np.linalg.solve(S1, C @ C.T))
    return phi.n * np.log(residual) + np.linalg.slogdet(S1)[1], residual, S1


def _within(rho, bounds):
    return all(lo * (1 - 1e-12) <= value <= hi * (1 + 1e-12)
               for value, (lo, hi) in zip(rho.as_vector(), (bounds.gamma_tilde, bounds.beta, bounds.sigma2)))


def _random_phi(rng, n, delta):
    return InputMatrix.from_samples(rng.standard_normal(n), delta)


def test_hyper_params_validation_and_helpers():
    rho = HyperParams.default(1.0)
    assert rho.sigma2 == pytest.approx(1 / 12)
    assert HyperParams(2.0, 1.0, 0.5).gamma == pytest.approx(4.0)
    with pytest.raises(ConfigurationError):
        HyperParams(0.0, 1.0, 1.0)
    with pytest.raises(ConfigurationError):
        HyperBounds(beta=(1.0, 0.5))
    clamped = HyperParams(1e9, 1e-6, 1.0).clamp(HyperBounds())
    assert clamped.gamma_tilde == 1e6 and clamped.beta == 1e-3


def test_stacked_qr_with_zero_prior():
    C = np.arange(6.0).reshape(3, 2)
    blocks = stacked_qr(np.zeros((3, 3)), C)
    np.testing.assert_allclose(blocks.R1, np.eye(3), atol=1e-14)
    np.testing.assert_allclose(blocks.R2, 0.0, atol=1e-14)
    assert blocks.logdet_r1 == pytest.approx(0.0, abs=1e-14)


def test_stacked_qr_identities(rng):
    for _ in range(100):
        A = rng.normal(size=(8, 8))
        C = rng.normal(size=(8, 8))
        blocks = stacked_qr(A, C)
        R1, R2 = blocks.R1, blocks.R2
        assert np.all(np.diag(R1) > 0)
        np.testing.assert_allclose(R1.T @ R1, A.T @ A + np.eye(8), rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(R1.T @ R2, A.T @ C, rtol=1e-10, atol=1e-10)
        residual = np.sum(C ** 2) - np.sum(R2 ** 2)
        expected = np.trace(C.T @ np.linalg.solve(A @ A.T + np.eye(8), C))
        assert residual == pytest.approx(expected, rel=1e-8)


def test_stacked_qr_rejects_non_square():
    with pytest.raises(ConfigurationError):
        stacked_qr(np.ones((2, 3)), np.ones((2, 1)))


@pytest.mark.parametrize("beta", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("gamma_tilde", [0.1, 1.0, 30.0])
def test_objective_matches_dense_criterion(rng, beta, gamma_tilde):
    spec = KernelSpec(1)
    phi = _random_phi(rng, 6, 0.2)
    C = np.linalg.cholesky(np.cov(rng.normal(size=(6, 40))) + 1e-3 * np.eye(6))
    dense, residual, S1 = _dense_terms((gamma_tilde, beta), C, phi, spec)
    assert em_objective((gamma_tilde, beta), C, phi, spec) == pytest.approx(dense, rel=1e-8)

    rho = HyperParams(gamma_tilde, beta, 0.3)
    S = rho.sigma2 * S1
    full = np.linalg.slogdet(S)[1] + np.trace(np.linalg.solve(S, C @ C.T))
    assert full_objective(rho, C, phi, spec) == pytest.approx(full, rel=1e-8)
    assert sigma2_update(rho, C, phi, spec) == pytest.approx(residual / 6, rel=1e-8)
    np.testing.assert_allclose(prior_covariance(rho, spec, phi), S, rtol=1e-12, atol=1e-14)


def test_sigma2_update_minimizes_full_objective(rng):
    spec = KernelSpec(1)
    phi = _random_phi(rng, 8, 0.1)
    C = rng.normal(size=(8, 8))
    s2 = sigma2_update((2.0, 1.0), C, phi, spec)
    best = full_objective(HyperParams(2.0, 1.0, s2), C, phi, spec)
    for factor in (0.5, 0.9, 1.1, 2.0):
        assert full_objective(HyperParams(2.0, 1.0, factor * s2), C, phi, spec) > best


def test_objective_scaling_in_second_moment(rng):
    spec = KernelSpec(1)
    phi = _random_phi(rng, 7, 0.1)
    C = rng.normal(size=(7, 7))
    base = em_objective((1.0, 1.0), C, phi, spec)
    assert em_objective((1.0, 1.0), 3.0 * C, phi, spec) == pytest.approx(base + 2 * 7 * np.log(3.0), rel=1e-10)


def test_objective_with_zero_input_ignores_prior(rng):
    spec = KernelSpec(1)
    phi = InputMatrix(np.zeros((5, 5)), 0.1)
    C = rng.normal(size=(5, 5))
    assert em_objective((0.3, 2.0), C, phi, spec) == pytest.approx(5 * np.log(np.sum(C ** 2)), rel=1e-12)
    assert em_objective((0.3, 2.0), np.zeros((5, 5)), phi, spec) == np.inf


def test_m_step_does_not_increase_criterion(rng):
    spec = KernelSpec(1)
    config = EstimatorConfig()
    phi = _random_phi(rng, 10, 0.2)
    C = np.linalg.cholesky(np.cov(rng.normal(size=(10, 50))) + 1e-2 * np.eye(10))
    start = HyperParams(5.0, 0.3, 1.0)
    rho, value = m_step(C, phi, spec, start, config)
    assert value <= em_objective(start, C, phi, spec) + 1e-12
    assert value == pytest.approx(em_objective(rho, C, phi, spec), rel=1e-10)
    _, seeded = m_step(C, phi, spec, start, config, seed_grid=True)
    assert seeded <= em_objective(start, C, phi, spec) + 1e-12


def test_m_step_recovers_exact_second_moment(rng):
    spec = KernelSpec(1)
    config = EstimatorConfig()
    phi = _random_phi(rng, 12, 0.5)
    truth = HyperParams(0.5, 1.0, 0.1)
    C = np.linalg.cholesky(prior_covariance(truth, spec, phi))
    rho, _ = m_step(C, phi, spec, HyperParams(1.0, 2.0, 0.1), config)
    assert rho.gamma_tilde == pytest.approx(truth.gamma_tilde, rel=2e-2)
    assert rho.beta == pytest.approx(truth.beta, rel=2e-2)
    assert rho.sigma2 == pytest.approx(truth.sigma2, rel=2e-2)


def test_zero_iterations_return_initial_point(toy_record):
    u, _, ds = toy_record
    phi = InputMatrix.from_signal(u, ds.delta, ds.n)
    config = EstimatorConfig(m_iter_hyper=0, initial=HyperParams(2.0, 0.5, 0.01))
    rho, trace = optimize_hyperparams(ds, phi, KernelSpec(1), config)
    assert rho == HyperParams(2.0, 0.5, 0.01)
    assert trace == []


def test_em_trace_and_determinism(toy_record, fast_config):
    u, _, ds = toy_record
    phi = InputMatrix.from_signal(u, ds.delta, ds.n)
    rho, trace = optimize_hyperparams(ds, phi, KernelSpec(1), fast_config)
    again, trace_again = optimize_hyperparams(ds, phi, KernelSpec(1), fast_config)
    assert rho == again
    assert trace == trace_again
    assert 1 <= len(trace) <= fast_config.m_iter_hyper
    assert [row['iteration'] for row in trace] == list(range(1, len(trace) + 1))
    assert set(trace[0]) == {'iteration', 'gamma_tilde', 'beta', 'sigma2', 'objective'}
    assert _within(rho, fast_config.bounds)


def test_single_em_step_stays_in_bounds(toy_record, fast_config):
    u, _, ds = toy_record
    phi = InputMatrix.from_signal(u, ds.delta, ds.n)
    rho = hyper_em_step(HyperParams.default(ds.h), ds, phi, KernelSpec(1), fast_config)
    assert _within(rho, fast_config.bounds)


def test_em_rejects_mismatched_input(toy_record, fast_config):
    u, _, ds = toy_record
    phi = InputMatrix.from_signal(u, ds.delta, ds.n - 1)
    with pytest.raises(ConfigurationError):
        optimize_hyperparams(ds, phi, KernelSpec(1), fast_config)


def test_direct_fit(rng):
    spec = KernelSpec(1)
    config = EstimatorConfig()
    phi = _random_phi(rng, 10, 0.2)
    z = rng.normal(size=10)
    rho, trace = fit_hyperparams_direct(z, phi, spec, config)
    assert len(trace) == 1
    assert trace[0]['objective'] <= em_objective(HyperParams(1.0, 1.0, 1.0), z[:, None], phi, spec) + 1e-12
    with pytest.raises(EstimationError) as info:
        fit_hyperparams_direct(np.zeros(10), phi, spec, config)
    assert info.value.stage == 'hyper'
    with pytest.raises(ConfigurationError):
        fit_hyperparams_direct(z[:5], phi, spec, config)


def test_objective_matches_dense_criterion_on_random_instances():
    rng = np.random.default_rng(2024)
    spec = KernelSpec(1)
    for _ in range(50):
        n = int(rng.integers(2, 13))
        phi = _random_phi(rng, n, rng.uniform(0.05, 0.5))
        gamma_tilde, beta = 10.0 ** rng.uniform(-2, 2), rng.uniform(0.3, 3.0)
        C = np.tril(rng.normal(size=(n, n)), -1) + np.diag(rng.uniform(0.5, 2.0, size=n))
        dense, _, _ = _dense_terms((gamma_tilde, beta), C, phi, spec)
        assert em_objective((gamma_tilde, beta), C, phi, spec) == pytest.approx(dense, rel=1e-7, abs=1e-9)


def test_stopping_vector_uses_precision_coordinates():
    rho = HyperParams(0.2, 1.5, 0.04)
    np.testing.assert_allclose(rho.stopping_vector(), [1.5, 5.0, 0.04])
    np.testing.assert_allclose(rho.as_vector(), [0.2, 1.5, 0.04])


def test_em_map_reuses_sampler_seed(toy_record, fast_config):
    u, _, ds = toy_record
    phi = InputMatrix.from_signal(u, ds.delta, ds.n)
    start = HyperParams.default(ds.h)
    first = hyper_em_step(start, ds, phi, KernelSpec(1), fast_config, iteration=1)
    later = hyper_em_step(start, ds, phi, KernelSpec(1), fast_config, iteration=5)
    assert first == later
    reseeded = hyper_em_step(start, ds, phi, KernelSpec(1), fast_config.with_seed(fast_config.seed + 1), iteration=1)
    assert reseeded != first


def test_diagnostics_log_relative_changes(toy_record, fast_config, caplog):
    u, _, ds = toy_record
    phi = InputMatrix.from_signal(u, ds.delta, ds.n)
    with caplog.at_level(logging.DEBUG, logger='lebsid.util.training.early_stopping'):
        optimize_hyperparams(ds, phi, KernelSpec(1), fast_config)
    assert not any("relative change" in r.getMessage() for r in caplog.records)
    with caplog.at_level(logging.DEBUG, logger='lebsid.util.training.early_stopping'):
        optimize_hyperparams(ds, phi, KernelSpec(1), replace(fast_config, diagnostics=True))
    assert any(r.getMessage().startswith("hyper EM iteration 1/") for r in caplog.records)
