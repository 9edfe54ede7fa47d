"""Min-max rate-per-bit uplink power control."""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import optimize, sparse

from ._abc import Base
from ._channel import SinrCoefficients, rate
from ._exceptions import DegenerateProblem, IterationCapExceeded, NumericalError, ThetaOverflow
from ._normalize import as_vector, normalize_bits
from ._utils import scale_rows

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PowerProblem:
    """Coefficient block plus the payload size of every user."""

    coeffs: SinrCoefficients
    bits: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bits", normalize_bits(self.bits, self.coeffs.K))

    @property
    def K(self):
        return self.coeffs.K

    @property
    def B_tau(self):
        return self.coeffs.B_tau

    @classmethod
    def from_dict(cls, data):
        """Build a problem from ``{A_bar, B_bar, B_tilde, I_M, bits, B_tau}``."""
        missing = [key for key in ("A_bar", "B_bar", "B_tilde", "I_M", "bits", "B_tau") if key not in data]
        if missing:
            raise ValueError(f"power-control problem is missing {', '.join(missing)}")
        coeffs = SinrCoefficients(data["A_bar"], data["B_bar"], data["B_tilde"], data["I_M"], data["B_tau"])
        return cls(coeffs, data["bits"])


@dataclass(frozen=True)
class PowerSolution:
    """Result of :func:`solve`.

    Attributes
    ----------
    powers : (K,) array
        Power coefficients in ``[0, 1]``.
    eta_star : float
        Certified rate-per-bit, in 1/s. Every user achieves at least this.
    iterations : int
        Bisection steps taken.
    feasible : bool
        Whether a positive rate-per-bit was certified.
    eta_lower, eta_upper : float
        Final bisection bracket.
    eta_max_init : float
        Initial upper bound of the bracket.
    eps_b : float
        Bracket width at which bisection stopped.
    """

    powers: np.ndarray
    eta_star: float
    iterations: int
    feasible: bool
    eta_lower: float = 0.0
    eta_upper: float = 0.0
    eta_max_init: float = 0.0
    eps_b: float = 0.0

    def to_dict(self):
        return {
            "eta_star": self.eta_star,
            "powers": self.powers.tolist(),
            "iterations": self.iterations,
            "feasible": self.feasible,
            "eta_lower": self.eta_lower,
            "eta_upper": self.eta_upper,
            "eta_max_init": self.eta_max_init,
            "eps_b": self.eps_b,
        }


def theta(eta, bits, B_tau, exponent_cap=1000.0):
    """SINR target ``2**(eta * b / B_tau) - 1`` for every user.

    Raises
    ------
    ThetaOverflow
        If some exponent exceeds ``exponent_cap``.

    Examples
    --------
    >>> theta(2.0, [1.0, 2.0], B_tau=2.0)
    array([1., 3.])
    """
    if eta < 0:
        raise ValueError("eta must be >= 0")
    exponent = eta * np.asarray(bits, dtype="float64") / B_tau
    if np.any(exponent > exponent_cap):
        raise ThetaOverflow(f"theta exponent {exponent.max():.4g} exceeds cap {exponent_cap:.4g}")
    return np.exp2(exponent) - 1.0


def rate_per_bit(coeffs, powers, bits):
    """(K,) array of ``R_j / b_j`` in 1/s."""
    return rate(coeffs, powers) / np.asarray(bits, dtype="float64")


class InterferenceFixedPoint(Base):
    """Monotone fixed-point iteration for the SINR-target constraints.

    Iterates ``p_j <- theta_j (sum_j' B_tilde[j, j'] p_j' + I_M_j) / (A_bar_j - theta_j B_bar_j)``.
    Started at or below the minimal feasible power vector, the iterates are
    componentwise non-decreasing and converge to it whenever it exists.

    Parameters
    ----------
    coeffs : SinrCoefficients
    theta : (K,) array_like
        Non-negative SINR targets with ``A_bar - theta * B_bar > 0`` wherever ``theta > 0``.
    p0 : (K,) array_like, optional
        Warm start; zeros when omitted.
    slack : float, optional
        Iteration stops once some component exceeds ``1 + slack``.

    Notes
    -----
    The remaining parameters are those of :class:`cellfree_fl.Base`.
    """

    def __init__(self, coeffs, theta, p0=None, tol=1e-12, maxiter=100000, slack=1e-9, callback=None):
        theta = as_vector(theta, "theta", coeffs.K)
        margin = coeffs.A_bar - theta * coeffs.B_bar
        self._gain = np.divide(theta, margin, out=np.zeros_like(theta), where=theta > 0)
        self._cross = coeffs.B_tilde
        self._noise = coeffs.I_M
        self._ceiling = 1.0 + slack

        x0 = np.zeros(coeffs.K) if p0 is None else as_vector(p0, "p0", coeffs.K)
        super().__init__(x0, tol=tol, maxiter=maxiter, callback=callback)

    @property
    def exceeded(self):
        """bool: Some component passed ``1 + slack``, which certifies infeasibility."""
        return self._xk is not None and bool(np.any(self._xk > self._ceiling))

    @property
    def status(self):
        """str: ``"exceeded"``, ``"converged"`` or ``"cap"``."""
        if self.exceeded:
            return "exceeded"
        if self._tol is not None and self._step <= self._tol:
            return "converged"
        return "cap"

    def _update_iterate(self, xk):
        return self._gain * (self._cross @ xk + self._noise)

    def _stopping_criterion(self, k, xk):
        if np.any(xk > self._ceiling):
            return True
        return super()._stopping_criterion(k, xk)


def _targets_reachable(coeffs, theta):
    margin = coeffs.A_bar - theta * coeffs.B_bar
    return not np.any((margin <= 0) & (theta > 0))


def feasible(coeffs, theta, p0=None, tol=1e-12, maxiter=100000, slack=1e-9, raise_on_cap=False):
    """Find powers in ``[0, 1]`` meeting every SINR target, if any exist.

    Parameters
    ----------
    coeffs : SinrCoefficients
    theta : (K,) array_like
        Non-negative SINR targets.
    p0 : (K,) array_like, optional
        Warm start for the fixed point. Must not exceed the minimal feasible
        powers, e.g. the witness of a smaller ``theta``.
    tol, maxiter, slack : optional
        See :class:`InterferenceFixedPoint`.
    raise_on_cap : bool, optional
        Raise :class:`IterationCapExceeded` instead of reporting infeasible
        when the iteration cap is hit.

    Returns
    -------
    p : (K,) array or None
        The minimal feasible powers, or ``None`` when the targets cannot be met.

    Examples
    --------
    >>> coeffs = SinrCoefficients([4.0], [1.0], [[0.0]], [1.0], B_tau=1.0)
    >>> feasible(coeffs, [1.0])
    array([0.33333333])
    """
    theta = as_vector(theta, "theta", coeffs.K)
    if np.any(theta < 0):
        raise ValueError("theta must be non-negative")
    if not _targets_reachable(coeffs, theta):
        return None

    iteration = InterferenceFixedPoint(coeffs, theta, p0=p0, tol=tol, maxiter=maxiter, slack=slack)
    for p in iteration:
        pass

    status = iteration.status
    if status == "exceeded":
        return None
    if status == "cap":
        message = f"fixed point did not converge in {iteration.k} iterations"
        if raise_on_cap:
            raise IterationCapExceeded(message)
        logger.warning("%s; treating the targets as infeasible", message)
        return None
    logger.debug("fixed point converged in %d iterations", iteration.k)
    return np.minimum(p, 1.0)


def linprog_feasible(coeffs, theta, p0=None, slack=1e-9, **kwargs):
    """Phase-1 linear program for the same constraints as :func:`feasible`.

    Minimizes the total power, which selects the same minimal witness. Row
    ``j`` is divided by ``A_bar_j - theta_j B_bar_j`` so that the constraints
    are on the scale of the powers rather than of the channel gains.
    ``p0`` and extra keyword arguments are accepted for interface
    compatibility and ignored.
    """
    theta = as_vector(theta, "theta", coeffs.K)
    if np.any(theta < 0):
        raise ValueError("theta must be non-negative")
    if not _targets_reachable(coeffs, theta):
        return None

    margin = coeffs.A_bar - theta * coeffs.B_bar
    gain = np.divide(theta, margin, out=np.zeros_like(theta), where=theta > 0)
    A_ub = scale_rows(sparse.csr_matrix(coeffs.B_tilde), gain) - sparse.identity(coeffs.K)
    b_ub = -gain * coeffs.I_M
    result = optimize.linprog(np.ones(coeffs.K), A_ub=A_ub, b_ub=b_ub, bounds=(0.0, 1.0 + slack), method="highs")
    if result.status == 2:
        return None
    if result.status != 0:
        raise NumericalError(f"linprog failed: {result.message}")
    return np.clip(result.x, 0.0, 1.0)


FEASIBILITY_METHODS = {"fixed-point": feasible, "linprog": linprog_feasible}


def eta_upper_bound(problem):
    """Interference-free single-user bound ``B_tau log2(1 + max A_bar/I_M) / min b``."""
    coeffs = problem.coeffs
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.max(coeffs.A_bar / coeffs.I_M)
    return float(problem.B_tau * np.log2(1.0 + ratio) / problem.bits.min())


def solve(
    problem,
    eps_b=None,
    rel_eps=1e-3,
    feasibility="fixed-point",
    tol=1e-12,
    maxiter=100000,
    slack=1e-9,
    exponent_cap=1000.0,
):
    """Maximize the minimum rate-per-bit over power coefficients in ``[0, 1]``.

    Bisection over ``eta`` on ``[0, eta_upper_bound(problem)]``; each midpoint
    is checked by the selected feasibility method, warm started from the
    previous witness. The returned powers are the better of the last witness
    scaled so its largest entry is one, and full power.

    Parameters
    ----------
    problem : PowerProblem
    eps_b : float, optional
        Bracket width at which bisection stops, in 1/s. Defaults to
        ``rel_eps`` times the initial upper bound.
    rel_eps : float, optional
    feasibility : {"fixed-point", "linprog"}, optional
    tol, maxiter, slack : optional
        Passed to the feasibility method.
    exponent_cap : float, optional
        Midpoints whose SINR target exponent exceeds this count as infeasible.

    Returns
    -------
    solution : PowerSolution

    Raises
    ------
    DegenerateProblem
        If the initial bracket is empty or not finite.
    """
    coeffs, bits = problem.coeffs, problem.bits
    eta_max_init = eta_upper_bound(problem)
    if not np.isfinite(eta_max_init) or eta_max_init <= 0:
        raise DegenerateProblem(f"initial rate-per-bit bound is {eta_max_init}")
    if eps_b is None:
        eps_b = rel_eps * eta_max_init
    if not eps_b > 0:
        raise ValueError("eps_b must be > 0")
    check = FEASIBILITY_METHODS[feasibility]

    lower, upper = 0.0, eta_max_init
    witness = np.zeros(problem.K)
    iterations = 0
    while upper - lower > eps_b:
        iterations += 1
        mid = 0.5 * (lower + upper)
        try:
            targets = theta(mid, bits, problem.B_tau, exponent_cap)
        except ThetaOverflow:
            p = None
        else:
            p = check(coeffs, targets, p0=witness, tol=tol, maxiter=maxiter, slack=slack)
        if p is None:
            upper = mid
        else:
            lower, witness = mid, p
        logger.debug("bisection %d: eta in [%.6g, %.6g]", iterations, lower, upper)

    candidates = [np.ones(problem.K)]
    if witness.max() > 0:
        candidates.insert(0, witness / witness.max())
    objectives = [rate_per_bit(coeffs, p, bits).min() for p in candidates]
    best = int(np.argmax(objectives))
    eta_star = max(lower, float(objectives[best]))

    return PowerSolution(
        powers=candidates[best],
        eta_star=eta_star,
        iterations=iterations,
        feasible=eta_star > 0,
        eta_lower=lower,
        eta_upper=upper,
        eta_max_init=eta_max_init,
        eps_b=float(eps_b),
    )


def full_power_baseline(K):
    """Every user at full power.

    Examples
    --------
    >>> full_power_baseline(3)
    array([1., 1., 1.])
    """
    return np.ones(K)


def solve_full_power(problem):
    """Evaluate the full-power baseline as a :class:`PowerSolution`."""
    powers = full_power_baseline(problem.K)
    eta = float(rate_per_bit(problem.coeffs, powers, problem.bits).min())
    return PowerSolution(powers=powers, eta_star=eta, iterations=0, feasible=eta > 0)
