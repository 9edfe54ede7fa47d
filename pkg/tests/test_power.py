import itertools
import logging
import math

import numpy as np
import pytest

import cellfree_fl
from cellfree_fl import PowerProblem, SinrCoefficients


def coupled_pair(noise=0.1):
    """Two users whose fixed point ``p = 0.5 p + noise`` converges slowly."""
    return SinrCoefficients([1.0, 1.0], [0.0, 0.0], [[0.0, 0.5], [0.5, 0.0]], [noise, noise], B_tau=1.0)


def _min_rate_per_bit(coeffs, P, bits):
    signal = coeffs.A_bar * P
    interference = coeffs.B_bar * P + P @ coeffs.B_tilde.T + coeffs.I_M
    return np.min(coeffs.B_tau * np.log2(1.0 + signal / interference) / bits, axis=1)


def _grid(coeffs, bits, full, axes):
    others = [j for j in range(coeffs.K) if j != full]
    mesh = np.meshgrid(*axes, indexing="ij")
    P = np.ones((mesh[0].size, coeffs.K))
    for j, values in zip(others, mesh):
        P[:, j] = values.ravel()
    return _min_rate_per_bit(coeffs, P, bits).reshape(mesh[0].shape)


def grid_optimum(coeffs, bits, step=0.005, fine=1e-4):
    """Best min rate-per-bit over power vectors with one entry at full power.

    For every choice of the full-power user the coarse grid is refined around
    its best point. Returns the best value and the largest change of the
    objective between the refined best point and its grid neighbours.
    """
    coarse = np.arange(0.0, 1.0 + step / 2, step)
    best, spread = -np.inf, 0.0
    for full in range(coeffs.K):
        values = _grid(coeffs, bits, full, [coarse] * (coeffs.K - 1))
        index = np.unravel_index(np.argmax(values), values.shape)
        axes = [np.clip(np.arange(coarse[i] - step, coarse[i] + step + fine / 2, fine), 0.0, 1.0) for i in index]
        values = _grid(coeffs, bits, full, axes)
        index = np.unravel_index(np.argmax(values), values.shape)
        if values[index] <= best:
            continue
        best, spread = float(values[index]), 0.0
        for axis in range(values.ndim):
            for shift in (-1, 1):
                neighbour = list(index)
                neighbour[axis] += shift
                if 0 <= neighbour[axis] < values.shape[axis]:
                    spread = max(spread, abs(values[tuple(neighbour)] - values[index]))
    return best, spread


def test_theta_examples(allclose):
    assert np.array_equal(cellfree_fl.theta(0.0, [5.0, 7.0], B_tau=3.0), [0.0, 0.0])
    assert allclose([1.0, 3.0], cellfree_fl.theta(2.0, [1.0, 2.0], B_tau=2.0))


def test_theta_overflow():
    with pytest.raises(cellfree_fl.ThetaOverflow):
        cellfree_fl.theta(2000.0, [1.0], B_tau=1.0)
    with pytest.raises(cellfree_fl.NumericalError):
        cellfree_fl.theta(50.0, [1.0], B_tau=1.0, exponent_cap=10.0)


def test_theta_rejects_negative_eta():
    with pytest.raises(ValueError):
        cellfree_fl.theta(-1.0, [1.0], B_tau=1.0)


def test_single_user_feasibility(allclose):
    coeffs = SinrCoefficients([4.0], [1.0], [[0.0]], [1.0], B_tau=1.0)
    assert allclose([1 / 3], cellfree_fl.feasible(coeffs, [1.0]))
    assert allclose([1.0], cellfree_fl.feasible(coeffs, [2.0]))
    assert cellfree_fl.feasible(coeffs, [2.5]) is None
    # A_bar - theta B_bar <= 0 can never be met
    assert cellfree_fl.feasible(coeffs, [4.0]) is None
    assert cellfree_fl.feasible(coeffs, [9.0]) is None


def test_zero_targets_need_no_power():
    coeffs = coupled_pair()
    assert np.array_equal(cellfree_fl.feasible(coeffs, [0.0, 0.0]), [0.0, 0.0])


def test_feasible_rejects_negative_theta():
    with pytest.raises(ValueError):
        cellfree_fl.feasible(coupled_pair(), [-1.0, 1.0])


def test_fixed_point_monotone():
    iterates = list(cellfree_fl.InterferenceFixedPoint.iterates(coupled_pair(), [1.0, 1.0]))
    steps = np.diff(np.array(iterates), axis=0)
    assert np.all(steps >= 0)
    assert np.allclose(iterates[-1], [0.2, 0.2])


def test_fixed_point_stops_when_exceeding_one():
    iteration = cellfree_fl.InterferenceFixedPoint(coupled_pair(noise=1.0), [1.0, 1.0])
    for _ in iteration:
        pass
    assert iteration.status == "exceeded"
    assert cellfree_fl.feasible(coupled_pair(noise=1.0), [1.0, 1.0]) is None


def test_iteration_cap(caplog):
    coeffs = coupled_pair()
    with pytest.raises(cellfree_fl.IterationCapExceeded):
        cellfree_fl.feasible(coeffs, [1.0, 1.0], maxiter=3, raise_on_cap=True)
    with caplog.at_level(logging.WARNING, logger="cellfree_fl"):
        assert cellfree_fl.feasible(coeffs, [1.0, 1.0], maxiter=3) is None
    assert "did not converge" in caplog.text


def feasible_targets(coeffs, seed):
    rng = np.random.default_rng(seed)
    reference = rng.uniform(0.2, 1.0, coeffs.K)
    return 0.9 * cellfree_fl.sinr(coeffs, reference)


@pytest.mark.parametrize("seed", range(5))
def test_witness_meets_targets(seed, random_coeffs):
    coeffs = random_coeffs(seed, K=5)
    targets = feasible_targets(coeffs, seed)
    p = cellfree_fl.feasible(coeffs, targets)
    assert p is not None
    assert np.all((p >= 0) & (p <= 1))
    assert np.all(cellfree_fl.sinr(coeffs, p) >= targets * (1 - 1e-9))


@pytest.mark.parametrize("seed", range(5))
def test_warm_start_matches_cold_start(seed, random_coeffs, allclose):
    coeffs = random_coeffs(seed, K=5)
    targets = feasible_targets(coeffs, seed)
    smaller = cellfree_fl.feasible(coeffs, 0.5 * targets)

    cold = cellfree_fl.InterferenceFixedPoint(coeffs, targets)
    warm = cellfree_fl.InterferenceFixedPoint(coeffs, targets, p0=smaller)
    for _ in cold:
        pass
    for _ in warm:
        pass
    assert allclose(cold.xk, warm.xk, atol=1e-10)
    assert warm.k <= cold.k


@pytest.mark.parametrize("seed", range(5))
def test_linprog_agrees_with_fixed_point(seed, random_coeffs, allclose):
    coeffs = random_coeffs(seed, K=5)
    targets = feasible_targets(coeffs, seed)
    assert allclose(cellfree_fl.feasible(coeffs, targets), cellfree_fl.linprog_feasible(coeffs, targets), atol=1e-6)
    assert cellfree_fl.linprog_feasible(coeffs, 1e6 * targets) is None


def test_single_user_solution(single_user, allclose):
    solution = cellfree_fl.solve(PowerProblem(single_user, [1.0]))
    assert solution.feasible
    assert np.array_equal(solution.powers, [1.0])
    assert allclose(19e6, solution.eta_star)
    assert allclose(19e6 * np.log2(3.0), solution.eta_max_init)
    assert solution.eta_lower <= solution.eta_star <= solution.eta_upper + solution.eps_b


def test_bisection_steps(single_user):
    solution = cellfree_fl.solve(PowerProblem(single_user, [1.0]), rel_eps=1e-3)
    assert solution.iterations == 10
    assert solution.eta_upper - solution.eta_lower <= solution.eps_b
    assert solution.eps_b == pytest.approx(1e-3 * solution.eta_max_init)


@pytest.mark.timeout(120)
@pytest.mark.parametrize("K", [2, 3])
@pytest.mark.parametrize("seed", range(25))
def test_small_networks_match_grid_search(seed, K, random_coeffs):
    rng = np.random.default_rng(100 + seed)
    coeffs = random_coeffs(seed, K=K)
    bits = rng.integers(500, 5000, K)
    solution = cellfree_fl.solve(PowerProblem(coeffs, bits))
    achieved = cellfree_fl.rate_per_bit(coeffs, solution.powers, bits).min()
    best, spread = grid_optimum(coeffs, bits)

    assert solution.eta_star >= best - solution.eps_b
    assert solution.eta_star <= best + max(solution.eps_b, 2 * spread)
    assert achieved >= solution.eta_star * (1 - 1e-6)
    assert solution.powers.max() == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(20))
def test_single_user_closed_form(seed):
    rng = np.random.default_rng(seed)
    A_bar, B_bar, I_M = rng.uniform(0.1, 10.0, 3)
    bits = int(rng.integers(100, 10000))
    B_tau = float(rng.uniform(1e5, 2e7))
    coeffs = SinrCoefficients([A_bar], [B_bar], [[0.0]], [I_M], B_tau=B_tau)
    solution = cellfree_fl.solve(PowerProblem(coeffs, [bits]))
    expected = B_tau * np.log2(1.0 + A_bar / (B_bar + I_M)) / bits
    assert abs(solution.eta_star - expected) <= solution.eps_b
    assert np.array_equal(solution.powers, [1.0])


@pytest.mark.parametrize("seed", range(10))
def test_bracket_is_certified(seed, random_coeffs):
    rng = np.random.default_rng(seed)
    coeffs = random_coeffs(seed, K=5)
    bits = rng.integers(500, 5000, 5)
    solution = cellfree_fl.solve(PowerProblem(coeffs, bits), rel_eps=1e-3)

    above = cellfree_fl.theta(solution.eta_upper + solution.eps_b, bits, coeffs.B_tau)
    assert cellfree_fl.feasible(coeffs, above) is None
    assert solution.iterations <= math.ceil(np.log2(solution.eta_max_init / solution.eps_b))
    assert solution.eta_upper - solution.eta_lower <= solution.eps_b
    assert solution.eta_lower <= solution.eta_star <= solution.eta_upper + solution.eps_b


@pytest.mark.parametrize("seed", range(10))
def test_returned_powers_meet_targets(seed, random_coeffs):
    rng = np.random.default_rng(seed)
    coeffs = random_coeffs(seed, K=6)
    bits = rng.integers(500, 5000, 6)
    solution = cellfree_fl.solve(PowerProblem(coeffs, bits))
    p = solution.powers
    assert np.all((p >= 0) & (p <= 1))

    targets = cellfree_fl.theta(solution.eta_star, bits, coeffs.B_tau)
    gain = targets / (coeffs.A_bar - targets * coeffs.B_bar)
    assert np.all(p - gain * (coeffs.B_tilde @ p + coeffs.I_M) >= -1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_more_bits_never_raise_eta(seed, random_coeffs):
    rng = np.random.default_rng(seed)
    coeffs = random_coeffs(seed, K=4)
    bits = rng.integers(500, 5000, 4)
    previous = cellfree_fl.solve(PowerProblem(coeffs, bits))
    for scale in (1.5, 2.0, 4.0):
        current = cellfree_fl.solve(PowerProblem(coeffs, np.ceil(scale * bits)))
        assert current.eta_star <= previous.eta_star + previous.eps_b
        previous = current


@pytest.mark.parametrize("seed", range(5))
def test_linprog_solution_agrees(seed, random_coeffs):
    coeffs = random_coeffs(seed, K=4)
    problem = PowerProblem(coeffs, [800.0, 1200.0, 1000.0, 900.0])
    fixed = cellfree_fl.solve(problem)
    lp = cellfree_fl.solve(problem, feasibility="linprog")
    assert abs(fixed.eta_star - lp.eta_star) <= fixed.eps_b * (1 + 1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_never_worse_than_full_power(seed, random_coeffs):
    rng = np.random.default_rng(seed)
    coeffs = random_coeffs(seed, K=6)
    problem = PowerProblem(coeffs, rng.integers(500, 5000, 6))
    solution = cellfree_fl.solve(problem)
    baseline = cellfree_fl.solve_full_power(problem)
    assert solution.eta_star >= baseline.eta_star
    assert solution.eta_star <= solution.eta_max_init
    assert np.array_equal(baseline.powers, np.ones(6))


def test_equal_bits_give_identical_users(allclose):
    coeffs = SinrCoefficients([3.0, 3.0], [0.5, 0.5], [[0.0, 0.2], [0.2, 0.0]], [1.0, 1.0], B_tau=1.0)
    solution = cellfree_fl.solve(PowerProblem(coeffs, [10.0, 10.0]), rel_eps=1e-6)
    assert allclose(solution.powers[0], solution.powers[1])


def test_exponent_cap_falls_back_to_full_power():
    coeffs = SinrCoefficients([2.0 ** 20 - 1], [0.0], [[0.0]], [1.0], B_tau=1.0)
    solution = cellfree_fl.solve(PowerProblem(coeffs, [1.0]), exponent_cap=5.0)
    assert solution.eta_lower <= 5.0
    assert solution.eta_star == pytest.approx(20.0)
    assert np.array_equal(solution.powers, [1.0])


@pytest.mark.parametrize("A_bar, I_M", [([0.0], [1.0]), ([1.0], [0.0])])
def test_degenerate_problem(A_bar, I_M):
    coeffs = SinrCoefficients(A_bar, [0.0], [[0.0]], I_M, B_tau=1.0)
    with pytest.raises(cellfree_fl.DegenerateProblem):
        cellfree_fl.solve(PowerProblem(coeffs, [1.0]))


def test_invalid_eps_b(single_user):
    with pytest.raises(ValueError):
        cellfree_fl.solve(PowerProblem(single_user, [1.0]), eps_b=0.0)


def test_problem_validation(single_user):
    with pytest.raises(ValueError):
        PowerProblem(single_user, [0.0])
    with pytest.raises(cellfree_fl.DimensionMismatch):
        PowerProblem(single_user, [1.0, 2.0])
    with pytest.raises(ValueError, match="B_tau"):
        PowerProblem.from_dict({"A_bar": [1.0], "B_bar": [0.0], "B_tilde": [[0.0]], "I_M": [1.0], "bits": [1]})


def test_problem_from_dict(allclose):
    data = {"A_bar": [4.0], "B_bar": [1.0], "B_tilde": [[0.0]], "I_M": [1.0], "bits": [2], "B_tau": 2.0}
    solution = cellfree_fl.solve(PowerProblem.from_dict(data))
    record = solution.to_dict()
    assert set(record) == {
        "eta_star",
        "powers",
        "iterations",
        "feasible",
        "eta_lower",
        "eta_upper",
        "eta_max_init",
        "eps_b",
    }
    assert allclose(2.0 * np.log2(1 + 4.0 / 2.0) / 2, record["eta_star"])


def test_sinr_symmetric_cases_solve_fast():
    for K in (2, 3):
        B_tilde = np.full((K, K), 0.1)
        coeffs = SinrCoefficients(np.ones(K), np.zeros(K), B_tilde, np.ones(K), B_tau=1.0)
        solution = cellfree_fl.solve(PowerProblem(coeffs, np.ones(K)))
        for a, b in itertools.combinations(solution.powers, 2):
            assert a == pytest.approx(b)
