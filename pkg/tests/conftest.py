import numpy as np
import pytest

import cellfree_fl

SMALL_OVERRIDES = {
    "network": {"M": 4, "N": 2, "K": 4, "tau_p": 2},
    "training": {
        "n_samples": 200,
        "n_test": 60,
        "n_features": 5,
        "n_classes": 3,
        "rounds": 3,
        "batch_size": 16,
    },
    "seed": 3,
}


@pytest.fixture
def small_network():
    return cellfree_fl.NetworkConfig(M=4, N=2, K=6, tau_p=3, seed=1)


@pytest.fixture
def small_channel(small_network):
    return cellfree_fl.draw_channel(small_network)


@pytest.fixture
def small_config():
    return cellfree_fl.SimConfig.from_dict(
        {key: dict(value) if isinstance(value, dict) else value for key, value in SMALL_OVERRIDES.items()}
    )


@pytest.fixture
def small_config_dict():
    return {key: dict(value) if isinstance(value, dict) else value for key, value in SMALL_OVERRIDES.items()}


@pytest.fixture
def single_user():
    """K=1 coefficients with SINR 1 at full power."""
    return cellfree_fl.SinrCoefficients([2.0], [1.0], [[0.0]], [1.0], B_tau=19e6)


@pytest.fixture
def random_coeffs():
    """Factory for coefficient blocks of real small networks."""

    def make(seed, K, N=2, M=4):
        config = cellfree_fl.NetworkConfig(M=M, N=N, K=K, tau_p=K, seed=seed)
        return cellfree_fl.draw_channel(config).coeffs

    return make
