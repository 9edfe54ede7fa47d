"""Cell-free network geometry, large-scale fading and closed-form uplink rates."""

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._normalize import as_vector, normalize_coefficients
from ._utils import db_to_linear, wraparound_distance

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Geometry:
    """AP and user placement on the wrap-around square.

    Attributes
    ----------
    ap_positions : (M, 2) array
    user_positions : (K, 2) array
    distances : (M, K) array
        Wrap-around distances, floored at the configured minimum distance.
    """

    ap_positions: np.ndarray
    user_positions: np.ndarray
    distances: np.ndarray


@dataclass(frozen=True)
class LargeScaleFading:
    """Large-scale fading coefficients ``beta[m, j]`` between AP ``m`` and user ``j``."""

    beta: np.ndarray


@dataclass(frozen=True)
class PilotAssignment:
    """Pilot index of every user and the users sharing it."""

    pilot_of: np.ndarray
    copilot_sets: tuple

    @property
    def overlap(self):
        """(K, K) array: ``|phi_j^H phi_j'|^2``, one iff the two users share a pilot."""
        return (self.pilot_of[:, None] == self.pilot_of[None, :]).astype("float64")


@dataclass(frozen=True)
class SinrCoefficients:
    """Per-user coefficient block of the closed-form uplink SINR.

    Attributes
    ----------
    A_bar, B_bar, I_M : (K,) array
    B_tilde : (K, K) array
        Cross-user interference weights; the diagonal is zero.
    B_tau : float
        Pre-log factor in Hz, the bandwidth left after pilot overhead.
    gamma : (M, K) array or None
        Channel-estimate quality, kept for inspection.
    """

    A_bar: np.ndarray
    B_bar: np.ndarray
    B_tilde: np.ndarray
    I_M: np.ndarray
    B_tau: float
    gamma: np.ndarray = None

    def __post_init__(self):
        A_bar, B_bar, B_tilde, I_M = normalize_coefficients(self.A_bar, self.B_bar, self.B_tilde, self.I_M)
        object.__setattr__(self, "A_bar", A_bar)
        object.__setattr__(self, "B_bar", B_bar)
        object.__setattr__(self, "B_tilde", B_tilde)
        object.__setattr__(self, "I_M", I_M)
        object.__setattr__(self, "B_tau", float(self.B_tau))
        if not self.B_tau > 0:
            raise ValueError("B_tau must be > 0")

    @property
    def K(self):
        return self.A_bar.size


@dataclass(frozen=True)
class Channel:
    """Everything drawn for one network realization."""

    geometry: Geometry
    fading: LargeScaleFading
    pilots: PilotAssignment
    coeffs: SinrCoefficients


def generate_geometry(config, seed=None):
    """Place APs and users on the square.

    APs sit at the cell centres of a regular grid when ``M`` is a perfect
    square and are drawn uniformly otherwise. Users are always uniform.

    Parameters
    ----------
    config : NetworkConfig
    seed : int, optional
        Falls back to ``config.seed``.

    Returns
    -------
    geometry : Geometry
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    side = float(config.area_side)

    root = math.isqrt(config.M)
    if root * root == config.M:
        centres = (np.arange(root) + 0.5) * side / root
        xx, yy = np.meshgrid(centres, centres, indexing="ij")
        ap_positions = np.column_stack([xx.ravel(), yy.ravel()])
    else:
        ap_positions = rng.uniform(0.0, side, size=(config.M, 2))
    user_positions = rng.uniform(0.0, side, size=(config.K, 2))

    distances = wraparound_distance(ap_positions, user_positions, side)
    distances = np.maximum(distances, config.min_distance)
    return Geometry(ap_positions, user_positions, distances)


def large_scale_fading(geometry, config):
    """Power-law pathloss ``PL0 * (d / d0) ** -alpha`` on every AP-user link.

    Returns
    -------
    fading : LargeScaleFading
    """
    distances = getattr(geometry, "distances", geometry)
    pl0 = db_to_linear(config.pathloss_intercept_db)
    beta = pl0 * (np.asarray(distances, dtype="float64") / config.reference_distance) ** (-config.pathloss_exponent)
    return LargeScaleFading(beta)


def assign_pilots(beta, tau_p):
    """Assign one of ``tau_p`` orthogonal pilots to every user.

    With no more users than pilots each user gets its own pilot. Otherwise
    users are visited in decreasing order of total gain, and each picks,
    among the least-used pilots, the one whose current holders contaminate it
    least, measured by ``max_m beta[m, j] * beta[m, j']``. Ties go to the lowest
    pilot index. Reuse counts therefore differ by at most one.

    Parameters
    ----------
    beta : (M, K) array_like or LargeScaleFading
    tau_p : int

    Returns
    -------
    pilots : PilotAssignment
    """
    if tau_p < 1:
        raise ValueError("tau_p must be >= 1")
    beta = np.asarray(getattr(beta, "beta", beta), dtype="float64")
    n_users = beta.shape[1]

    if n_users <= tau_p:
        pilot_of = np.arange(n_users)
    else:
        contamination = np.max(beta[:, :, None] * beta[:, None, :], axis=0)
        order = np.argsort(-beta.sum(axis=0), kind="stable")
        pilot_of = np.full(n_users, -1)
        load = np.zeros(tau_p, dtype=int)
        for j in order:
            candidates = np.flatnonzero(load == load.min())
            costs = [contamination[j, pilot_of == pilot].sum() for pilot in candidates]
            pilot = candidates[int(np.argmin(costs))]
            pilot_of[j] = pilot
            load[pilot] += 1
        logger.debug("pilot reuse counts: %s", load.tolist())

    copilot_sets = tuple(
        frozenset(int(i) for i in np.flatnonzero(pilot_of == pilot_of[j]) if i != j) for j in range(n_users)
    )
    return PilotAssignment(pilot_of, copilot_sets)


def channel_statistics(beta, pilots, config):
    """Compute channel-estimate quality and the SINR coefficient block.

    Parameters
    ----------
    beta : (M, K) array_like or LargeScaleFading
    pilots : PilotAssignment
    config : NetworkConfig

    Returns
    -------
    coeffs : SinrCoefficients
    """
    beta = np.asarray(getattr(beta, "beta", beta), dtype="float64")
    overlap = pilots.overlap
    if overlap.shape[0] != beta.shape[1]:
        raise ValueError(f"pilot assignment covers {overlap.shape[0]} users, beta has {beta.shape[1]}")

    N = config.N
    p_p = config.tau_p * config.p_u
    gamma = p_p * beta ** 2 / (p_p * (beta @ overlap) + config.sigma2)

    gain = N * gamma.sum(axis=0)
    A_bar = gain ** 2
    B_bar = N * np.sum(gamma * beta, axis=0)
    I_M = N * config.sigma2 * gamma.sum(axis=0) / config.p_u

    # [j, j'] = N sum_m gamma[m, j] beta[m, j'] (+ coherent term for copilot users)
    B_tilde = N * gamma.T @ beta
    B_tilde += overlap * (N * (gamma / beta).T @ beta) ** 2
    np.fill_diagonal(B_tilde, 0.0)

    B_tau = config.bandwidth_B * (1.0 - config.tau_p / config.tau_c)
    return SinrCoefficients(A_bar, B_bar, B_tilde, I_M, B_tau, gamma=gamma)


def draw_channel(config, seed=None):
    """Draw geometry, fading and pilots, and compute the coefficients.

    Returns
    -------
    channel : Channel
    """
    geometry = generate_geometry(config, seed)
    fading = large_scale_fading(geometry, config)
    pilots = assign_pilots(fading, config.tau_p)
    coeffs = channel_statistics(fading, pilots, config)
    return Channel(geometry, fading, pilots, coeffs)


def sinr(coeffs, powers, j=None):
    """Closed-form uplink SINR.

    Parameters
    ----------
    coeffs : SinrCoefficients
    powers : (K,) array_like
        Power coefficients in ``[0, 1]``.
    j : int, optional
        User index. All users are returned when omitted.

    Returns
    -------
    sinr : float or (K,) array
    """
    p = as_vector(powers, "powers", coeffs.K)
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("powers must lie in [0, 1]")
    signal = coeffs.A_bar * p
    denominator = coeffs.B_bar * p + coeffs.B_tilde @ p + coeffs.I_M
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.where(denominator > 0, signal / denominator, 0.0)
    return values if j is None else float(values[j])


def rate(coeffs, powers, j=None):
    """Achievable uplink rate ``B_tau * log2(1 + SINR)`` in bit/s."""
    return coeffs.B_tau * np.log2(1.0 + sinr(coeffs, powers, j))


def export_coefficients(directory, channel):
    """Write ``beta``, ``A_bar``, ``B_bar``, ``I_M`` and ``B_tilde`` as CSV files.

    Returns
    -------
    paths : list of Path
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tables = {
        "beta": channel.fading.beta,
        "A_bar": channel.coeffs.A_bar,
        "B_bar": channel.coeffs.B_bar,
        "I_M": channel.coeffs.I_M,
        "B_tilde": channel.coeffs.B_tilde,
    }
    paths = []
    for name, table in tables.items():
        path = directory / f"{name}.csv"
        np.savetxt(path, table, delimiter=",", fmt="%.17g")
        paths.append(path)
    return paths
