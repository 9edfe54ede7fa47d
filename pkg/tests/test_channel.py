import numpy as np
import pytest

import cellfree_fl
from cellfree_fl._utils import db_to_linear, wraparound_distance


def test_grid_placement():
    geometry = cellfree_fl.generate_geometry(cellfree_fl.NetworkConfig(M=16, area_side=1000.0, seed=0))
    xs = np.unique(geometry.ap_positions[:, 0])
    ys = np.unique(geometry.ap_positions[:, 1])
    assert np.array_equal(xs, [125.0, 375.0, 625.0, 875.0])
    assert np.array_equal(ys, xs)
    assert np.all(np.diff(xs) == 250.0)


def test_random_placement_when_not_square():
    config = cellfree_fl.NetworkConfig(M=5, K=7, seed=2)
    geometry = cellfree_fl.generate_geometry(config)
    assert geometry.ap_positions.shape == (5, 2)
    assert geometry.distances.shape == (5, 7)


def test_positions_in_area():
    config = cellfree_fl.NetworkConfig(M=7, K=50, area_side=300.0, seed=4)
    geometry = cellfree_fl.generate_geometry(config)
    for positions in (geometry.ap_positions, geometry.user_positions):
        assert np.all(positions >= 0)
        assert np.all(positions < 300.0)


def test_distance_floor():
    config = cellfree_fl.NetworkConfig(M=1, K=3, area_side=1e-3, min_distance=1.0, seed=0)
    geometry = cellfree_fl.generate_geometry(config)
    assert np.all(geometry.distances == 1.0)


def test_distances_wrap_around(allclose):
    assert allclose([[1.0]], wraparound_distance([[0.0, 0.0]], [[999.0, 0.0]], 1000.0))
    assert allclose([[5.0]], wraparound_distance([[998.0, 997.0]], [[1.0, 1.0]], 1000.0))


def test_geometry_deterministic():
    config = cellfree_fl.NetworkConfig(M=6, K=9, seed=11)
    first = cellfree_fl.generate_geometry(config)
    second = cellfree_fl.generate_geometry(config)
    assert np.array_equal(first.user_positions, second.user_positions)
    assert np.array_equal(first.distances, second.distances)
    other = cellfree_fl.generate_geometry(config, seed=12)
    assert not np.array_equal(first.user_positions, other.user_positions)


def test_pathloss_reference_distance(allclose):
    config = cellfree_fl.NetworkConfig()
    pl0 = db_to_linear(config.pathloss_intercept_db)
    fading = cellfree_fl.large_scale_fading(np.array([[1.0, 2.0, 4.0]]), config)
    assert allclose(pl0, fading.beta[0, 0])
    assert allclose(pl0 * 2 ** -3.67, fading.beta[0, 1])
    assert fading.beta[0, 1] / pl0 == pytest.approx(0.0786, abs=1e-4)


@pytest.mark.parametrize("exponent", [2.0, 3.67, 4.5])
def test_pathloss_doubling(exponent, allclose):
    config = cellfree_fl.NetworkConfig(pathloss_exponent=exponent)
    fading = cellfree_fl.large_scale_fading(np.array([[10.0, 20.0], [35.0, 70.0]]), config)
    assert allclose(fading.beta[:, 1] / fading.beta[:, 0], 2.0 ** -exponent)


def test_pathloss_positive_and_decreasing(small_channel):
    beta = small_channel.fading.beta
    distances = small_channel.geometry.distances
    assert np.all(beta > 0)
    order = np.argsort(distances.ravel())
    assert np.all(np.diff(beta.ravel()[order]) <= 0)


def test_distinct_pilots_when_enough():
    rng = np.random.default_rng(0)
    pilots = cellfree_fl.assign_pilots(rng.uniform(size=(4, 10)), tau_p=10)
    assert sorted(pilots.pilot_of) == list(range(10))
    assert all(len(copilots) == 0 for copilots in pilots.copilot_sets)
    assert np.array_equal(pilots.overlap, np.eye(10))


def test_pilots_reused_twice():
    rng = np.random.default_rng(1)
    pilots = cellfree_fl.assign_pilots(rng.uniform(size=(16, 20)), tau_p=10)
    assert np.array_equal(np.bincount(pilots.pilot_of, minlength=10), [2] * 10)
    for j, copilots in enumerate(pilots.copilot_sets):
        assert len(copilots) == 1
        (other,) = copilots
        assert pilots.pilot_of[other] == pilots.pilot_of[j]
        assert j in pilots.copilot_sets[other]


def test_single_user_pilot():
    pilots = cellfree_fl.assign_pilots(np.ones((3, 1)), tau_p=4)
    assert pilots.pilot_of.tolist() == [0]
    assert pilots.copilot_sets == (frozenset(),)


def test_greedy_pilot_avoids_strong_contamination():
    # users 0 and 1 are both strong at AP 0; they must not share a pilot
    beta = np.array([[1.0, 0.9, 1e-3, 1e-3], [1e-3, 1e-3, 0.8, 0.7]])
    pilots = cellfree_fl.assign_pilots(beta, tau_p=2)
    assert pilots.pilot_of[0] != pilots.pilot_of[1]
    assert pilots.pilot_of[2] != pilots.pilot_of[3]


def test_single_ap_single_user(allclose):
    config = cellfree_fl.NetworkConfig(M=1, N=1, K=1, tau_p=1)
    beta = np.array([[2e-9]])
    pilots = cellfree_fl.assign_pilots(beta, 1)
    coeffs = cellfree_fl.channel_statistics(beta, pilots, config)
    p_p = config.tau_p * config.p_u
    expected = p_p * beta[0, 0] ** 2 / (p_p * beta[0, 0] + config.sigma2)
    assert allclose(expected, coeffs.gamma[0, 0])
    assert allclose(coeffs.gamma[0, 0] ** 2, coeffs.A_bar[0])
    assert allclose(config.sigma2 * coeffs.gamma[0, 0] / config.p_u, coeffs.I_M[0])


def test_no_contamination_cross_terms(allclose):
    rng = np.random.default_rng(2)
    config = cellfree_fl.NetworkConfig(M=3, N=2, K=4, tau_p=4)
    beta = rng.uniform(1e-10, 1e-8, size=(3, 4))
    coeffs = cellfree_fl.channel_statistics(beta, cellfree_fl.assign_pilots(beta, 4), config)
    expected = config.N * coeffs.gamma.T @ beta
    np.fill_diagonal(expected, 0.0)
    assert allclose(expected, coeffs.B_tilde)


def test_contamination_adds_coherent_term():
    rng = np.random.default_rng(3)
    config = cellfree_fl.NetworkConfig(M=3, N=2, K=4, tau_p=2)
    beta = rng.uniform(1e-10, 1e-8, size=(3, 4))
    pilots = cellfree_fl.assign_pilots(beta, 2)
    coeffs = cellfree_fl.channel_statistics(beta, pilots, config)
    incoherent = config.N * coeffs.gamma.T @ beta
    for j, copilots in enumerate(pilots.copilot_sets):
        for other in range(4):
            if other in copilots:
                assert coeffs.B_tilde[j, other] > incoherent[j, other]
            elif other != j:
                assert coeffs.B_tilde[j, other] == pytest.approx(incoherent[j, other])


def test_strong_pilot_limit(allclose):
    rng = np.random.default_rng(4)
    config = cellfree_fl.NetworkConfig(M=3, N=1, K=4, tau_p=2, sigma2=1e-40)
    beta = rng.uniform(1e-10, 1e-8, size=(3, 4))
    pilots = cellfree_fl.assign_pilots(beta, 2)
    coeffs = cellfree_fl.channel_statistics(beta, pilots, config)
    assert allclose(beta ** 2 / (beta @ pilots.overlap), coeffs.gamma, rtol=1e-9)


@pytest.mark.timeout(10)
def test_estimate_never_exceeds_gain():
    rng = np.random.default_rng(5)
    for seed in range(1000):
        K = int(rng.integers(1, 12))
        config = cellfree_fl.NetworkConfig(M=int(rng.integers(1, 10)), K=K, tau_p=int(rng.integers(1, 6)), seed=seed)
        channel = cellfree_fl.draw_channel(config)
        assert np.all(channel.coeffs.gamma <= channel.fading.beta)
        assert np.all(channel.coeffs.A_bar > 0)


def test_channel_deterministic(small_network):
    first = cellfree_fl.draw_channel(small_network)
    second = cellfree_fl.draw_channel(small_network)
    assert np.array_equal(first.fading.beta, second.fading.beta)
    assert np.array_equal(first.pilots.pilot_of, second.pilots.pilot_of)
    assert np.array_equal(first.coeffs.B_tilde, second.coeffs.B_tilde)


def test_b_tau():
    config = cellfree_fl.NetworkConfig(bandwidth_B=20e6, tau_p=10, tau_c=200, M=1, K=1)
    coeffs = cellfree_fl.draw_channel(config).coeffs
    assert coeffs.B_tau == 20e6 * (1 - 10 / 200)


def test_sinr_examples(single_user, small_channel, allclose):
    assert cellfree_fl.sinr(single_user, [0.0], 0) == 0.0
    assert allclose(2.0 / (1.0 + 1.0), cellfree_fl.sinr(single_user, [1.0], 0))

    coeffs = small_channel.coeffs
    assert cellfree_fl.sinr(coeffs, np.zeros(coeffs.K), 2) == 0.0


def test_sinr_monotone(small_channel):
    coeffs = small_channel.coeffs
    rng = np.random.default_rng(6)
    for _ in range(50):
        p = rng.uniform(0.1, 0.9, coeffs.K)
        j, other = rng.choice(coeffs.K, size=2, replace=False)
        base = cellfree_fl.sinr(coeffs, p)
        up = p.copy()
        up[j] += 0.05
        raised = cellfree_fl.sinr(coeffs, up)
        assert raised[j] > base[j]
        assert raised[other] < base[other]
        assert cellfree_fl.rate(coeffs, up, j) >= cellfree_fl.rate(coeffs, p, j)
        assert cellfree_fl.rate(coeffs, up, other) <= cellfree_fl.rate(coeffs, p, other)


def test_sinr_rejects_out_of_range(single_user):
    with pytest.raises(ValueError):
        cellfree_fl.sinr(single_user, [1.5])


def test_rate_examples(single_user, allclose):
    assert allclose(19e6, cellfree_fl.rate(single_user, [1.0], 0))
    assert cellfree_fl.rate(single_user, [0.0], 0) == 0.0
    sinr_three = cellfree_fl.SinrCoefficients([3.0], [0.0], [[0.0]], [1.0], B_tau=19e6)
    assert allclose(2 * 19e6, cellfree_fl.rate(sinr_three, [1.0], 0))


def test_interferer_lowers_rate():
    coeffs = cellfree_fl.SinrCoefficients([4.0, 4.0], [0.1, 0.1], [[0.0, 0.5], [0.5, 0.0]], [1.0, 1.0], B_tau=1.0)
    alone = cellfree_fl.rate(coeffs, [1.0, 0.0], 0)
    shared = cellfree_fl.rate(coeffs, [1.0, 1.0], 0)
    assert shared < alone


def test_export_coefficients(tmp_path, small_channel):
    paths = cellfree_fl.export_coefficients(tmp_path, small_channel)
    assert sorted(p.name for p in paths) == ["A_bar.csv", "B_bar.csv", "B_tilde.csv", "I_M.csv", "beta.csv"]
    assert np.loadtxt(tmp_path / "beta.csv", delimiter=",").shape == (4, 6)
    assert np.loadtxt(tmp_path / "B_tilde.csv", delimiter=",").shape == (6, 6)
    assert np.loadtxt(tmp_path / "A_bar.csv", delimiter=",").shape == (6,)
