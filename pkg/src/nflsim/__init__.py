"""Deterministic simulator of federated averaging with run-time detection of
negative federated learning and per-client adapted-model recovery."""

from .adversary import BehaviorAssignment, FabricationPolicy, assign_behaviors, flip_labels
from .config import SimConfig, load_config, preset
from .data import LabeledDataset, PartitionPlan, gen_synthetic, load_delimited, partition
from .detection import (
    ClientDetector,
    DetectorState,
    GainRecord,
    client_local_policy,
    detector_step,
    estimate_client_gain,
    round_median,
    true_beta,
    windowed_gain,
)
from .engine import RoundMetrics, RunResult, run_round, run_simulation
from .errors import ConfigError, LayoutError, PartitionError, ProtocolError
from .model import (
    Batch,
    ModelSpec,
    ParamVector,
    accuracy,
    grad,
    init_params,
    loss,
    sgd_step,
    train_private,
)
from .protocol import (
    ClientReport,
    ClientState,
    ServerState,
    aggregate_dp,
    aggregate_fedavg,
    clip_update,
    sample_active,
)
from .recovery import (
    AdaptationConfig,
    LambdaDiagnostics,
    adapt_step,
    adapted_loss,
    compute_lambda,
    inference_model,
)
from .robust import AggregatorChoice, agg_k_norm, agg_median, agg_multi_krum, agg_trimmed_mean

__version__ = "0.1.0"
