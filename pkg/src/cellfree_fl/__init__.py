"""Top-level package for cellfree-fl."""

# Do not edit this string manually, always use bumpversion
# Details in CONTRIBUTING.md
__version__ = "0.1.0"

__license__ = "MIT"


from ._abc import Base
from ._channel import (
    Channel,
    Geometry,
    LargeScaleFading,
    PilotAssignment,
    SinrCoefficients,
    assign_pilots,
    channel_statistics,
    draw_channel,
    export_coefficients,
    generate_geometry,
    large_scale_fading,
    rate,
    sinr,
)
from ._config import (
    BaselineConfig,
    LatencyConfig,
    NetworkConfig,
    QuantConfig,
    SimConfig,
    SolverConfig,
    TrainingConfig,
    load_config,
    parse_arm,
)
from ._exceptions import (
    CellFreeFLError,
    ConfigError,
    DegenerateProblem,
    DimensionMismatch,
    IterationCapExceeded,
    MalformedPayload,
    NonFiniteGradient,
    NumericalError,
    RoundError,
    ThetaOverflow,
    TooFewSamples,
    ZeroRate,
)
from ._fl import (
    MLP,
    Dataset,
    LocalAdaGrad,
    LogisticRegression,
    ModelState,
    Shards,
    aggregate,
    evaluate,
    load_csv,
    local_train_adagrad,
    make_blobs,
    make_model,
    make_topics,
    partition,
    save_csv,
    train_test_split,
)
from ._orchestrator import (
    METRICS_COLUMNS,
    CompareReport,
    IterationMetrics,
    RunReport,
    RunState,
    build_quantizers,
    check_dominance,
    compare,
    computation_latency,
    load_datasets,
    match_topq_fraction,
    run,
    run_round,
    summarize,
    uplink_latency,
    write_comparison_csv,
    write_metrics_csv,
    write_plot_data,
    write_summary_json,
)
from ._power import (
    InterferenceFixedPoint,
    PowerProblem,
    PowerSolution,
    eta_upper_bound,
    feasible,
    full_power_baseline,
    linprog_feasible,
    rate_per_bit,
    solve,
    solve_full_power,
    theta,
)
from ._quantizers import (
    ElementClass,
    ErrorBound,
    MixedResolution,
    QuantizedUpdate,
    QuantSpec,
    SparseUpdate,
    TopQ,
    Uniform,
    UniformUpdate,
    decode_mixed,
    encode_mixed,
    encode_topq,
    encode_uniform,
    error_bound,
    measured_overhead_reduction,
    overhead_reduction,
)
