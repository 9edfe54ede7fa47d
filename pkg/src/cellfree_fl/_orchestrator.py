"""End-to-end federated rounds over the cell-free uplink.

Every round trains all users locally from the broadcast global model, encodes
their updates, allocates uplink power for the resulting payload sizes,
charges the slowest user's uplink latency plus the computation latency, and
aggregates the decoded updates.
"""

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ._channel import draw_channel, rate
from ._config import MATCH_S, parse_arm
from ._exceptions import NumericalError, RoundError, ZeroRate
from ._fl import (
    Dataset,
    ModelState,
    aggregate,
    evaluate,
    load_csv,
    local_train_adagrad,
    make_blobs,
    make_model,
    make_topics,
    partition,
    train_test_split,
)
from ._power import PowerProblem, solve, solve_full_power
from ._quantizers import MixedResolution, TopQ, Uniform, measured_overhead_reduction, overhead_reduction
from ._utils import ceil_log2

logger = logging.getLogger(__name__)

METRICS_COLUMNS = ["t", "j", "b_t_j", "s_t_j", "rate_bps", "power", "latency_s", "eta_star"]

# spawn-key tags separating the random streams derived from the run seed
_INIT_STREAM, _TRAIN_STREAM, _DATA_STREAM, _CHANNEL_STREAM = range(4)


@dataclass
class IterationMetrics:
    """Record of one global round.

    Per-user arrays have length ``K``. ``uplink_latency`` is the slowest
    user's latency and ``cumulative_latency`` adds uplink and computation
    latency over all rounds so far.
    """

    t: int
    bits: np.ndarray
    high_fraction: np.ndarray
    rates: np.ndarray
    powers: np.ndarray
    latencies: np.ndarray
    signaling_bits: np.ndarray
    eta_star: float
    uplink_latency: float
    compute_latency: float
    cumulative_latency: float
    train_loss: float
    test_loss: float
    test_accuracy: float

    def rows(self):
        """Per-user rows in ``METRICS_COLUMNS`` order."""
        for j in range(self.bits.size):
            yield [
                self.t,
                j,
                int(self.bits[j]),
                repr(float(self.high_fraction[j])),
                repr(float(self.rates[j])),
                repr(float(self.powers[j])),
                repr(float(self.latencies[j])),
                repr(float(self.eta_star)),
            ]


@dataclass
class RunReport:
    """Rounds, summary statistics and the configuration that produced them."""

    rounds: list
    summary: dict
    config: object
    seed: int
    arm: str = None

    @property
    def T_max(self):
        return self.summary["T_max"]


@dataclass
class CompareReport:
    """Reports of several arms run on identical data and seeds.

    ``dominance`` maps each quantizer with both power arms to whether the
    optimized arm's slowest-user latency never exceeded full power's.
    """

    reports: dict
    dominance: dict = field(default_factory=dict)

    @property
    def dominance_holds(self):
        return all(self.dominance.values())

    def matrix(self):
        """``{power: {quantizer: (T_max, final_accuracy)}}``."""
        table = {}
        for arm, report in self.reports.items():
            quantizer, _, power = arm.rpartition(":")
            table.setdefault(power, {})[quantizer] = (report.summary["T_max"], report.summary["final_accuracy"])
        return table


def uplink_latency(bits, rate_bps):
    """Seconds to send ``bits`` at ``rate_bps``.

    Examples
    --------
    >>> round(uplink_latency(162, 19e6) * 1e6, 3)
    8.526
    """
    if not rate_bps > 0:
        raise ZeroRate(f"cannot send {bits} bits at rate {rate_bps}")
    return bits / rate_bps


def computation_latency(config, n_samples=None):
    """Per-round computation latency ``L |D| a / (K nu)`` in seconds.

    Parameters
    ----------
    config : SimConfig
    n_samples : int, optional
        Training-set size ``|D|``; ``config.training.n_samples`` when omitted.
    """
    training, latency = config.training, config.latency
    n_samples = training.n_samples if n_samples is None else n_samples
    return (
        training.local_iterations
        * n_samples
        * latency.cycles_per_sample
        / (config.network.K * latency.effective_cycles_per_second)
    )


def load_datasets(config):
    """Training and test sets for a run."""
    training = config.training
    if training.dataset == "csv":
        train = load_csv(training.train_csv)
        if training.test_csv is None:
            return train_test_split(train, training.n_test)
        test = load_csv(training.test_csv)
        num_classes = max(train.num_classes, test.num_classes)
        return (
            Dataset(train.features, train.labels, train.name, num_classes),
            Dataset(test.features, test.labels, test.name, num_classes),
        )
    generate = make_topics if training.dataset == "topics" else make_blobs
    data = generate(
        training.n_samples + training.n_test,
        training.n_features,
        training.n_classes,
        training.class_separation,
        seed=_stream(config.seed, _DATA_STREAM),
    )
    return train_test_split(data, training.n_test)


def build_quantizers(config, quantizer="mixed", bits=None):
    """One codec per user for the named quantizer arm."""
    quant, K = config.quant, config.network.K
    widths = [bits] * K if bits is not None else quant.widths(K)
    if quantizer == "mixed":
        return [MixedResolution(lam, b) for lam, b in zip(quant.lambdas(K), widths)]
    if quantizer == "uniform":
        return [Uniform(b) for b in widths]
    if quantizer == "topq":
        baselines = config.baselines
        if baselines.topq_fraction == MATCH_S:
            raise ValueError("topq_fraction 'match-s' must be resolved with match_topq_fraction first")
        return [TopQ(baselines.topq_fraction, b, baselines.topq_charge_indices) for b in widths]
    raise ValueError(f"unknown quantizer {quantizer!r}")


def match_topq_fraction(config, reference):
    """Copy of ``config`` whose Top-q fraction equals the High share of ``reference``.

    ``reference`` is a mixed-resolution :class:`RunReport`; its mean High
    share ``s`` is clamped to ``[1/d, 1]``.
    """
    s, d = reference.summary["s"], reference.summary["d"]
    if s is None:
        raise ValueError(f"reference arm {reference.arm!r} completed no rounds")
    q = min(1.0, max(1.0 / d, s / 100.0))
    logger.info("topq fraction matched to %s: q = %.6g", reference.arm, q)
    return replace(config, baselines=replace(config.baselines, topq_fraction=q))


def _stream(seed, *key):
    return np.random.SeedSequence(seed, spawn_key=key)


class RunState:
    """Mutable state of one run: channel, data shards, global model and metrics.

    Parameters
    ----------
    config : SimConfig
        Validated configuration.
    arm : str, optional
        ``"<quantizer>:<power>"``; taken from ``quant.scheme`` and
        ``solver.power`` when omitted.
    """

    def __init__(self, config, arm=None):
        self.config = config
        if arm is None:
            arm = f"{config.quant.scheme}:{config.solver.power}"
        self.arm = arm
        self.quantizer, quantizer_bits, self.power = parse_arm(arm)

        self.channel = draw_channel(config.network, config.network_seed)
        self.train, self.test = load_datasets(config)
        shards = partition(self.train, config.network.K, config.training.partition, _stream(config.seed, _DATA_STREAM, 1))
        self.shards = [self.train.subset(indices, f"{self.train.name}-user{j}") for j, indices in enumerate(shards.indices)]
        self.rho = shards.rho

        architecture = make_model(
            config.training.model, self.train.n_features, self.train.num_classes, config.training.hidden
        )
        w0 = architecture.init(np.random.default_rng(_stream(config.seed, _INIT_STREAM)))
        self.model = ModelState(w0, architecture)
        self.quantizers = build_quantizers(config, self.quantizer, quantizer_bits)

        self.compute_latency = computation_latency(config, len(self.train))
        self.cumulative_latency = 0.0
        self.initial = evaluate(self.model, self.test)
        self.rounds = []

    @property
    def K(self):
        return self.config.network.K

    def local_updates(self, t):
        """``delta_w`` of every user for round ``t``."""
        training = self.config.training

        def train(j):
            rng = np.random.default_rng(_stream(self.config.seed, _TRAIN_STREAM, t, j))
            return local_train_adagrad(
                self.model,
                self.shards[j],
                L=training.local_iterations,
                batch_size=training.batch_size,
                alpha=training.alpha,
                eps_a=training.eps_a,
                order=training.adagrad_order,
                rng=rng,
            )

        if training.workers > 1:
            with ThreadPoolExecutor(max_workers=training.workers) as pool:
                return list(pool.map(train, range(self.K)))
        return [train(j) for j in range(self.K)]

    def allocate_power(self, bits):
        problem = PowerProblem(self.channel.coeffs, bits)
        if self.power == "full":
            return solve_full_power(problem)
        solver = self.config.solver
        return solve(
            problem,
            eps_b=solver.eps_b,
            rel_eps=solver.rel_eps_b,
            feasibility=solver.feasibility,
            tol=solver.tol,
            maxiter=solver.maxiter,
            slack=solver.slack,
            exponent_cap=solver.exponent_cap,
        )


def run_round(state, t):
    """Execute global round ``t`` and append its metrics to ``state.rounds``.

    Raises
    ------
    RoundError
        Wrapping any numerical failure, with the round index attached.
    """
    config = state.config
    try:
        if config.network.redraw_per_round:
            state.channel = draw_channel(config.network, _stream(config.network_seed, _CHANNEL_STREAM, t))

        deltas = state.local_updates(t)
        payloads = [quantizer.encode(delta) for quantizer, delta in zip(state.quantizers, deltas)]
        bits = np.array([payload.payload_bits for payload in payloads], dtype=np.int64)
        high_fraction = np.array([payload.high_fraction for payload in payloads])

        # sent at full power ahead of the payload; not charged to the uplink latency
        signaling_bits = np.array([ceil_log2(b) for b in bits], dtype=np.int64)
        logger.debug("round %d signaling bits: %s", t, signaling_bits.tolist())

        solution = state.allocate_power(bits)
        rates = rate(state.channel.coeffs, solution.powers)
        latencies = np.array([uplink_latency(b, r) for b, r in zip(bits, rates)])

        decoded = [payload.decode() for payload in payloads]
        w = aggregate(state.model.w, decoded, state.rho)
        state.model = ModelState(w, state.model.architecture)

        train_metrics = evaluate(state.model, state.train)
        test_metrics = evaluate(state.model, state.test)
    except RoundError:
        raise
    except NumericalError as exc:
        raise RoundError(t, str(exc)) from exc

    uplink = float(latencies.max())
    state.cumulative_latency += uplink + state.compute_latency
    metrics = IterationMetrics(
        t=t,
        bits=bits,
        high_fraction=high_fraction,
        rates=rates,
        powers=solution.powers,
        latencies=latencies,
        signaling_bits=signaling_bits,
        eta_star=solution.eta_star,
        uplink_latency=uplink,
        compute_latency=state.compute_latency,
        cumulative_latency=state.cumulative_latency,
        train_loss=train_metrics["loss"],
        test_loss=test_metrics["loss"],
        test_accuracy=test_metrics["accuracy"],
    )
    state.rounds.append(metrics)
    logger.info(
        "%s round %d: slowest uplink %.4g s, eta* %.4g 1/s, accuracy %.4f",
        state.arm,
        t,
        uplink,
        solution.eta_star,
        metrics.test_accuracy,
    )
    return metrics


def summarize(state):
    """Summary statistics of the rounds completed so far."""
    config = state.config
    rounds = state.rounds
    b1 = config.baselines.b1
    budget = config.latency.budget

    summary = {
        "arm": state.arm,
        "rounds": len(rounds),
        "d": state.model.d,
        "s": None,
        "r_bar": None,
        "r_bar_measured": None,
        "T_max": len(rounds) if budget is not None else None,
        "budget": budget,
        "initial_accuracy": state.initial["accuracy"],
        "final_accuracy": rounds[-1].test_accuracy if rounds else state.initial["accuracy"],
        "final_test_loss": rounds[-1].test_loss if rounds else state.initial["loss"],
        "cumulative_latency": rounds[-1].cumulative_latency if rounds else 0.0,
        "compute_latency": state.compute_latency,
        "compute_profile": config.latency.compute_profile,
        "divergence": None,
        "topq_fraction": config.baselines.topq_fraction if state.quantizer == "topq" else None,
    }
    if rounds:
        fractions = np.concatenate([metrics.high_fraction for metrics in rounds])
        bits = np.concatenate([metrics.bits for metrics in rounds])
        summary["s"] = 100.0 * float(np.mean(fractions))
        summary["r_bar_measured"] = float(measured_overhead_reduction(bits, state.model.d, b1))
        if state.quantizer == "mixed":
            widths = np.tile([quantizer.bits for quantizer in state.quantizers], len(rounds))
            summary["r_bar"] = float(np.mean(overhead_reduction(100.0 * fractions, widths, b1)))
    if config.latency.compute_profile == "literal":
        summary["divergence"] = (
            f"literal compute profile: {config.latency.effective_cycles_per_second:g} cycles/s, "
            "computation latency dominates every round"
        )
    return summary


def run(config, arm=None, reference=None):
    """Run up to ``training.rounds`` rounds.

    With ``latency.budget`` set, stops before the first round whose
    completion would push the cumulative latency past the budget; that round
    is discarded and ``T_max`` is the number of rounds kept.

    A Top-q arm under ``baselines.topq_fraction = "match-s"`` takes its
    fraction from ``reference``, the report of the mixed arm with the same
    power control, which is run first when not given.

    Returns
    -------
    report : RunReport
    """
    if arm is None:
        arm = f"{config.quant.scheme}:{config.solver.power}"
    quantizer, _, power = parse_arm(arm)
    if quantizer == "topq" and config.baselines.topq_fraction == MATCH_S:
        if reference is None:
            reference = run(config, f"mixed:{power}")
        config = match_topq_fraction(config, reference)

    state = RunState(config, arm)
    budget = config.latency.budget
    for t in range(1, config.training.rounds + 1):
        metrics = run_round(state, t)
        if budget is not None and metrics.cumulative_latency > budget:
            state.rounds.pop()
            logger.info("%s: budget %.4g s exhausted after %d rounds", state.arm, budget, len(state.rounds))
            break
    return RunReport(state.rounds, summarize(state), config, config.seed, state.arm)


def check_dominance(optimized, full, rtol=1e-9):
    """Whether every common round's slowest uplink is no slower under optimized power."""
    for solved, baseline in zip(optimized.rounds, full.rounds):
        if solved.uplink_latency > baseline.uplink_latency * (1 + rtol):
            logger.warning(
                "round %d: optimized power slower than full power (%.6g s > %.6g s)",
                solved.t,
                solved.uplink_latency,
                baseline.uplink_latency,
            )
            return False
    if optimized.T_max is not None and full.T_max is not None and optimized.T_max < full.T_max:
        logger.warning("T_max under optimized power %d < full power %d", optimized.T_max, full.T_max)
        return False
    return True


def compare(config, arms=None):
    """Run several ``"<quantizer>:<power>"`` arms on identical data and seeds.

    Returns
    -------
    report : CompareReport
    """
    arms = list(config.baselines.arms if arms is None else arms)
    reports = {}
    # topq arms last so that "match-s" can reuse the mixed reports
    for arm in sorted(arms, key=lambda a: parse_arm(a)[0] == "topq"):
        power = parse_arm(arm)[2]
        reports[arm] = run(config, arm, reference=reports.get(f"mixed:{power}"))
    reports = {arm: reports[arm] for arm in arms}

    dominance = {}
    for arm in arms:
        quantizer, _, power = arm.rpartition(":")
        full_arm = f"{quantizer}:full"
        if power == "solve" and full_arm in reports:
            dominance[quantizer] = check_dominance(reports[arm], reports[full_arm])
    return CompareReport(reports, dominance)


def write_metrics_csv(report, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for metrics in report.rounds:
            writer.writerows(metrics.rows())


def write_summary_json(report, path):
    document = dict(report.summary, seed=report.seed, config=report.config.to_dict())
    with open(path, "w") as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write("\n")


def write_plot_data(report, directory):
    """Write ``accuracy_vs_round.csv`` and ``accuracy_vs_latency.csv``."""
    by_round = directory / "accuracy_vs_round.csv"
    by_latency = directory / "accuracy_vs_latency.csv"
    with open(by_round, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["t", "test_accuracy", "test_loss", "train_loss"])
        for m in report.rounds:
            writer.writerow([m.t, repr(m.test_accuracy), repr(m.test_loss), repr(m.train_loss)])
    with open(by_latency, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["cumulative_latency_s", "test_accuracy"])
        for m in report.rounds:
            writer.writerow([repr(m.cumulative_latency), repr(m.test_accuracy)])
    return [by_round, by_latency]


def write_comparison_csv(report, path):
    """One row per power arm, a ``T_max`` and an accuracy column per quantizer arm."""
    matrix = report.matrix()
    quantizers = sorted({q for row in matrix.values() for q in row})
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["power"] + [f"{q}:{cell}" for q in quantizers for cell in ("T_max", "final_accuracy")])
        for power in sorted(matrix):
            row = [power]
            for q in quantizers:
                T_max, accuracy = matrix[power].get(q, ("", ""))
                row += ["" if T_max is None else T_max, accuracy]
            writer.writerow(row)
