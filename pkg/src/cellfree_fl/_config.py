"""Configuration dataclasses, file loading and validation.

Every parameter of the simulated network has a named key whose default is
its reference value. Files may be TOML or JSON with one section per
dataclass below and a top-level ``seed``.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ._exceptions import ConfigError
from ._utils import dbm_to_watt

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger(__name__)

QUANTIZER_ARMS = ("mixed", "uniform", "topq")
DATASETS = ("synthetic", "topics", "csv")
MATCH_S = "match-s"
POWER_ARMS = ("solve", "full")


@dataclass
class NetworkConfig:
    """Cell-free network description.

    Powers are in watts, distances in meters and bandwidth in Hz.
    ``sigma2`` is the noise power after the receiver noise figure.
    """

    M: int = 16
    N: int = 4
    K: int = 20
    area_side: float = 1000.0
    pathloss_exponent: float = 3.67
    pathloss_intercept_db: float = -30.5
    reference_distance: float = 1.0
    min_distance: float = 1.0
    bandwidth_B: float = 20e6
    tau_c: int = 200
    tau_p: int = 10
    p_u: float = 0.1
    sigma2: float = float(dbm_to_watt(-94.0))
    seed: int = None
    redraw_per_round: bool = False

    _optional = {"seed": int}

    def validate(self, prefix="network"):
        errors = []
        for name in ("M", "N", "K"):
            if getattr(self, name) < 1:
                errors.append(f"{prefix}.{name} must be >= 1")
        if self.tau_p < 1:
            errors.append(f"{prefix}.tau_p must be >= 1")
        if self.tau_p >= self.tau_c:
            errors.append(f"{prefix}.tau_p: tau_p < tau_c required")
        for name in ("area_side", "bandwidth_B", "p_u", "sigma2", "pathloss_exponent", "reference_distance", "min_distance"):
            if not getattr(self, name) > 0:
                errors.append(f"{prefix}.{name} must be > 0")
        if self.seed is not None and self.seed < 0:
            errors.append(f"{prefix}.seed must be >= 0")
        return errors


@dataclass
class QuantConfig:
    """Quantizer settings; per-user lists override the scalar values."""

    scheme: str = "mixed"
    lam: float = 0.05
    bits: int = 10
    lambda_per_user: list = None
    bits_per_user: list = None

    _optional = {"lambda_per_user": list, "bits_per_user": list}

    def validate(self, n_users, prefix="quant"):
        errors = []
        if self.scheme not in QUANTIZER_ARMS:
            errors.append(f"{prefix}.scheme must be one of {', '.join(QUANTIZER_ARMS)}")
        if not 0 < self.lam < 1:
            errors.append(f"{prefix}.lambda must lie in (0,1)")
        if self.bits < 2:
            errors.append(f"{prefix}.bits must be >= 2")
        if self.lambda_per_user is not None:
            if len(self.lambda_per_user) != n_users:
                errors.append(f"{prefix}.lambda_per_user must have K={n_users} entries")
            if not all(_is_real(x) and 0 < x < 1 for x in self.lambda_per_user):
                errors.append(f"{prefix}.lambda_per_user entries must lie in (0,1)")
        if self.bits_per_user is not None:
            if len(self.bits_per_user) != n_users:
                errors.append(f"{prefix}.bits_per_user must have K={n_users} entries")
            if not all(_is_int(x) and x >= 2 for x in self.bits_per_user):
                errors.append(f"{prefix}.bits_per_user entries must be integers >= 2")
        return errors

    def lambdas(self, n_users):
        if self.lambda_per_user is not None:
            return [float(x) for x in self.lambda_per_user]
        return [self.lam] * n_users

    def widths(self, n_users):
        if self.bits_per_user is not None:
            return [int(x) for x in self.bits_per_user]
        return [self.bits] * n_users


@dataclass
class TrainingConfig:
    """Federated training settings."""

    model: str = "logreg"
    hidden: int = 16
    dataset: str = "synthetic"
    train_csv: str = None
    test_csv: str = None
    n_samples: int = 2000
    n_test: int = 500
    n_features: int = 20
    n_classes: int = 4
    class_separation: float = 0.5
    partition: str = "noniid"
    local_iterations: int = 5
    alpha: float = 0.05
    eps_a: float = 1e-2
    batch_size: int = 32
    adagrad_order: str = "standard"
    rounds: int = 50
    workers: int = 1

    _optional = {"train_csv": str, "test_csv": str}

    def validate(self, n_users, prefix="training"):
        errors = []
        if self.model not in ("logreg", "mlp"):
            errors.append(f"{prefix}.model must be 'logreg' or 'mlp'")
        if self.dataset not in DATASETS:
            errors.append(f"{prefix}.dataset must be one of {', '.join(DATASETS)}")
        if self.dataset == "csv" and self.train_csv is None:
            errors.append(f"{prefix}.train_csv is required when dataset = 'csv'")
        if self.partition not in ("iid", "noniid"):
            errors.append(f"{prefix}.partition must be 'iid' or 'noniid'")
        if self.adagrad_order not in ("standard", "lagged"):
            errors.append(f"{prefix}.adagrad_order must be 'standard' or 'lagged'")
        if self.dataset != "csv":
            minimum = 2 * n_users if self.partition == "noniid" else n_users
            if self.n_samples < minimum:
                errors.append(f"{prefix}.n_samples must be >= {minimum} for {n_users} users with partition '{self.partition}'")
        if self.dataset == "topics" and self.n_features < self.n_classes:
            errors.append(f"{prefix}.n_features must be >= n_classes for the topics dataset")
        for name in ("hidden", "n_test", "n_features", "local_iterations", "batch_size", "rounds", "workers"):
            if getattr(self, name) < 1:
                errors.append(f"{prefix}.{name} must be >= 1")
        if self.n_classes < 2:
            errors.append(f"{prefix}.n_classes must be >= 2")
        if self.alpha < 0:
            errors.append(f"{prefix}.alpha must be >= 0")
        if not self.eps_a > 0:
            errors.append(f"{prefix}.eps_a must be > 0")
        if not self.class_separation > 0:
            errors.append(f"{prefix}.class_separation must be > 0")
        return errors


@dataclass
class SolverConfig:
    """Power-control settings.

    ``eps_b`` is absolute in 1/s; when unset it is ``rel_eps_b`` times the
    initial bisection upper bound.
    """

    power: str = "solve"
    feasibility: str = "fixed-point"
    eps_b: float = None
    rel_eps_b: float = 1e-3
    tol: float = 1e-12
    maxiter: int = 100000
    slack: float = 1e-9
    exponent_cap: float = 1000.0

    _optional = {"eps_b": float}

    def validate(self, prefix="solver"):
        errors = []
        if self.power not in POWER_ARMS:
            errors.append(f"{prefix}.power must be one of {', '.join(POWER_ARMS)}")
        if self.feasibility not in ("fixed-point", "linprog"):
            errors.append(f"{prefix}.feasibility must be 'fixed-point' or 'linprog'")
        if self.eps_b is not None and not self.eps_b > 0:
            errors.append(f"{prefix}.eps_b must be > 0")
        if not 0 < self.rel_eps_b < 1:
            errors.append(f"{prefix}.rel_eps_b must lie in (0,1)")
        if not self.tol > 0:
            errors.append(f"{prefix}.tol must be > 0")
        if self.maxiter < 1:
            errors.append(f"{prefix}.maxiter must be >= 1")
        if self.slack < 0:
            errors.append(f"{prefix}.slack must be >= 0")
        if not self.exponent_cap > 0:
            errors.append(f"{prefix}.exponent_cap must be > 0")
        return errors


@dataclass
class LatencyConfig:
    """Latency accounting.

    ``compute_profile = "literal"`` uses 20 cycles/s regardless of
    ``cycles_per_second``.
    """

    budget: float = None
    cycles_per_second: float = 1e9
    cycles_per_sample: float = 1e6
    compute_profile: str = "desk"

    _optional = {"budget": float}

    LITERAL_CYCLES_PER_SECOND = 20.0

    def validate(self, prefix="latency"):
        errors = []
        if self.budget is not None and not self.budget > 0:
            errors.append(f"{prefix}.budget must be > 0")
        if not self.cycles_per_second > 0:
            errors.append(f"{prefix}.cycles_per_second must be > 0")
        if self.cycles_per_sample < 0:
            errors.append(f"{prefix}.cycles_per_sample must be >= 0")
        if self.compute_profile not in ("desk", "literal"):
            errors.append(f"{prefix}.compute_profile must be 'desk' or 'literal'")
        return errors

    @property
    def effective_cycles_per_second(self):
        if self.compute_profile == "literal":
            return self.LITERAL_CYCLES_PER_SECOND
        return self.cycles_per_second


@dataclass
class BaselineConfig:
    """Comparator arms, written ``"<quantizer>:<power>"``.

    Quantizer arms are ``mixed``, ``uniform``, ``uniform-<bits>`` and ``topq``;
    power arms are ``solve`` and ``full``. ``topq_fraction = "match-s"`` sets
    the Top-q fraction to the mean High share measured on the mixed arm with
    the same power control.
    """

    arms: list = field(default_factory=lambda: ["mixed:solve", "mixed:full"])
    b1: int = 32
    topq_fraction: float = 0.05
    topq_charge_indices: bool = False

    _keywords = {"topq_fraction": (MATCH_S,)}

    def validate(self, prefix="baselines"):
        errors = []
        if not self.arms:
            errors.append(f"{prefix}.arms must not be empty")
        for arm in self.arms:
            try:
                parse_arm(arm)
            except ValueError as exc:
                errors.append(f"{prefix}.arms: {exc}")
        if self.b1 < 1:
            errors.append(f"{prefix}.b1 must be >= 1")
        if self.topq_fraction != MATCH_S and not 0 < self.topq_fraction <= 1:
            errors.append(f"{prefix}.topq_fraction must lie in (0,1]")
        return errors


SECTIONS = {
    "network": NetworkConfig,
    "quant": QuantConfig,
    "training": TrainingConfig,
    "solver": SolverConfig,
    "latency": LatencyConfig,
    "baselines": BaselineConfig,
}

# file key -> attribute name
KEY_ALIASES = {"quant": {"lambda": "lam"}}


@dataclass
class SimConfig:
    """Full experiment description."""

    network: NetworkConfig = field(default_factory=NetworkConfig)
    quant: QuantConfig = field(default_factory=QuantConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    latency: LatencyConfig = field(default_factory=LatencyConfig)
    baselines: BaselineConfig = field(default_factory=BaselineConfig)
    seed: int = 0

    @property
    def network_seed(self):
        return self.seed if self.network.seed is None else self.network.seed

    def errors(self):
        """Return the list of validation diagnostics, empty when valid."""
        n_users = self.network.K
        errors = []
        if not _is_int(self.seed) or self.seed < 0:
            errors.append("seed must be a non-negative integer")
        errors += self.network.validate()
        errors += self.quant.validate(n_users)
        errors += self.training.validate(n_users)
        errors += self.solver.validate()
        errors += self.latency.validate()
        errors += self.baselines.validate()
        return errors

    def validate(self):
        """Raise :class:`ConfigError` listing every violated rule."""
        errors = self.errors()
        if errors:
            raise ConfigError(errors)
        if self.latency.compute_profile == "literal":
            logger.warning(
                "literal compute profile: %s cycles/s makes the computation latency dominate every round",
                self.latency.LITERAL_CYCLES_PER_SECOND,
            )
        return self

    def to_dict(self):
        """Plain nested dict using file key names."""
        out = {}
        for name in SECTIONS:
            section = asdict(getattr(self, name))
            reverse = {attr: key for key, attr in KEY_ALIASES.get(name, {}).items()}
            out[name] = {reverse.get(attr, attr): value for attr, value in section.items()}
        out["seed"] = self.seed
        return out

    @classmethod
    def from_dict(cls, data):
        """Build and validate a configuration from a nested dict.

        Missing keys take their defaults; unknown keys and ill-typed values are
        reported together with the domain rules.
        """
        if not isinstance(data, dict):
            raise ConfigError(["configuration root must be a table"])

        errors = []
        kwargs = {}
        for key, value in data.items():
            if key == "seed":
                if not _is_int(value):
                    errors.append("seed must be an integer")
                else:
                    kwargs["seed"] = value
            elif key in SECTIONS:
                if not isinstance(value, dict):
                    errors.append(f"{key} must be a table")
                    continue
                kwargs[key] = _build_section(key, SECTIONS[key], value, errors)
            else:
                errors.append(f"{key}: unknown section")

        if errors:
            raise ConfigError(errors)
        return cls(**kwargs).validate()


def _build_section(section, klass, values, errors):
    aliases = KEY_ALIASES.get(section, {})
    defaults = klass()
    optional = getattr(klass, "_optional", {})
    keywords = getattr(klass, "_keywords", {})
    kwargs = {}
    attrs = {f.name for f in fields(klass)}
    for key, value in values.items():
        attr = aliases.get(key, key)
        if attr not in attrs:
            errors.append(f"{section}.{key}: unknown key")
            continue
        dotted = f"{section}.{key}"
        if isinstance(value, str) and value in keywords.get(attr, ()):
            kwargs[attr] = value
            continue
        coerced = _coerce(dotted, value, getattr(defaults, attr), optional.get(attr), errors)
        if coerced is not _INVALID:
            kwargs[attr] = coerced
    return klass(**kwargs)


_INVALID = object()


def _coerce(dotted, value, default, optional_type, errors):
    expected = optional_type or type(default)
    if value is None:
        if optional_type is not None:
            return None
        errors.append(f"{dotted} must not be null")
        return _INVALID
    if expected is float:
        if _is_real(value):
            return float(value)
        errors.append(f"{dotted} must be a number")
    elif expected is int:
        if _is_int(value):
            return int(value)
        errors.append(f"{dotted} must be an integer")
    elif expected is bool:
        if isinstance(value, bool):
            return value
        errors.append(f"{dotted} must be a boolean")
    elif expected is str:
        if isinstance(value, str):
            return value
        errors.append(f"{dotted} must be a string")
    elif expected is list:
        if isinstance(value, list):
            return list(value)
        errors.append(f"{dotted} must be a list")
    return _INVALID


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _is_real(x):
    return (isinstance(x, (int, float)) and not isinstance(x, bool)) and math.isfinite(x)


def parse_arm(arm):
    """Split ``"<quantizer>:<power>"`` into its two parts.

    Returns
    -------
    quantizer : str
    bits : int or None
        Explicit bit width for ``uniform-<bits>``.
    power : str
    """
    if not isinstance(arm, str):
        raise ValueError(f"arm {arm!r} must be a string '<quantizer>:<power>'")
    quantizer, sep, power = arm.partition(":")
    if not sep:
        raise ValueError(f"arm {arm!r} must be written '<quantizer>:<power>'")
    bits = None
    if quantizer.startswith("uniform-"):
        width = quantizer[len("uniform-"):]
        if not width.isdigit() or int(width) < 1:
            raise ValueError(f"arm {arm!r} has an invalid bit width")
        quantizer, bits = "uniform", int(width)
    if quantizer not in QUANTIZER_ARMS:
        raise ValueError(f"arm {arm!r} names unknown quantizer {quantizer!r}")
    if power not in POWER_ARMS:
        raise ValueError(f"arm {arm!r} names unknown power control {power!r}")
    return quantizer, bits, power


def load_config_file(path):
    """Read a TOML or JSON configuration file into a nested dict."""
    path = Path(path)
    text = path.read_text()
    if not text.strip():
        return {}
    if path.suffix == ".toml":
        try:
            return tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError([f"{path}: {exc}"]) from exc
    if path.suffix == ".json":
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"{path}: {exc}"]) from exc
    raise ConfigError([f"{path}: configuration files must end in .toml or .json"])


def parse_override_value(raw):
    """Interpret the right-hand side of ``key=value`` as a TOML literal, else a string."""
    try:
        return tomllib.loads(f"value = {raw}")["value"]
    except tomllib.TOMLDecodeError:
        return raw


def apply_overrides(data, overrides):
    """Apply dotted ``section.key=value`` overrides to a nested dict in place.

    Returns
    -------
    data : dict
    """
    errors = []
    for item in overrides:
        key, sep, raw = item.partition("=")
        key = key.strip()
        if not sep or not key:
            errors.append(f"override {item!r} must be written key=value")
            continue
        *parents, leaf = key.split(".")
        node = data
        for part in parents:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                errors.append(f"override {item!r}: {part} is not a table")
                break
        else:
            node[leaf] = parse_override_value(raw.strip())
    if errors:
        raise ConfigError(errors)
    return data


def load_config(path=None, overrides=(), seed=None):
    """Load, override and validate a configuration.

    Parameters
    ----------
    path : str or Path, optional
        TOML or JSON file. Defaults apply when omitted.
    overrides : sequence of str
        Dotted ``section.key=value`` assignments.
    seed : int, optional
        Replaces the top-level seed.

    Returns
    -------
    config : SimConfig
    """
    data = {} if path is None else load_config_file(path)
    apply_overrides(data, overrides)
    if seed is not None:
        data["seed"] = seed
    return SimConfig.from_dict(data)
