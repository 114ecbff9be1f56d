"""Per-unit power estimation from on-chip temperature traces.

Pipeline: simulate or import a thermal trace, identify the linear
state-space model, invert it for a physics-based power estimate, then
train a small residual network that corrects what the linear model
misses. A multi-objective search trades estimator accuracy against
arithmetic cost.
"""

from .errors import (
    ConfigError,
    DimensionMismatch,
    DivergenceDetected,
    LengthMismatch,
    MalformedHeader,
    MissingGroundTruth,
    NonFiniteLoss,
    NonFiniteValue,
    NonMonotonicTime,
    PowerIdError,
    RankDeficient,
    SingularB,
    TooFewSamples,
    UnevaluatedIndividual,
    UnstableModel,
)
from .core import (
    AMBIENT_K,
    DT_S,
    ThermalModel,
    TraceDataset,
    TraceSample,
    load_model_json,
    load_trace_csv,
    save_model_json,
    save_trace_csv,
    spectral_radius,
    split_chronological,
    split_k_fold,
)
from .cpinn import (
    Batch,
    Gradients,
    LossParts,
    NetworkConfig,
    TrainedModel,
    backward,
    dataset_sha256,
    estimate_dataset,
    forward,
    init_weights,
    load_checkpoint,
    loss,
    mac_count,
    make_batch,
    physics_power,
    predict_dataset,
    save_checkpoint,
    train,
)
from .evaluation import (
    BenchResult,
    ComponentMetrics,
    CvReport,
    bench_inference,
    cross_validate,
    metrics,
    series_metrics,
)
from .nsga2 import (
    Genome,
    Individual,
    ParetoFront,
    SearchResult,
    SearchSettings,
    crowding_distance,
    hypervolume_2d,
    non_dominated_sort,
    run_search,
)
from .plots import line_chart, scatter_chart
from .thermal import (
    BlindResult,
    MisspecSpec,
    PowerSchedule,
    generate_powers,
    identify_blind,
    identify_supervised,
    schedule_from_dict,
    simulate,
    steady_state,
)

__version__ = "0.1.0"
