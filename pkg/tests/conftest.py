import numpy as np
import pytest

from lebsid.sampling.lebesgue import sample_events
from lebsid.systems.lti import RationalTF, ZohSignal, simulate_zoh, tf_to_ss
from lebsid.util.experiment.config import EstimatorConfig

MSD = RationalTF((1.0,), (0.05, 0.2, 1.0))


def make_record(n=12, delta=0.1, hold=0.5, h=0.5, sigma=0.05, input_std=5.0, seed=0):
    """Small mass-spring-damper record: (u, z_noisy over grid 0..n, LebesgueDataset)."""
    rng = np.random.default_rng(seed)
    n_holds = int(np.ceil((n + 1) * delta / hold)) + 1
    u = ZohSignal(input_std * rng.standard_normal(n_holds), hold)
    z = np.concatenate(([0.0], simulate_zoh(tf_to_ss(MSD), u, delta, n)))
    z_noisy = z + sigma * rng.standard_normal(z.shape)
    return u, z_noisy, sample_events(z_noisy, h, delta)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def fast_config():
    return EstimatorConfig(m_iter_hyper=2, n_samples=100, burn_in=20, m_iter_weights=10, seed=3)


@pytest.fixture
def toy_record():
    return make_record()
