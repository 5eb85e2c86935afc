"""Per-utterance routing between a cheap and an expensive ASR model.

The package decides, from precomputed corpus artifacts, which of two
speech recognition models should transcribe each utterance, trains that
decision network from scratch, and quantifies the resulting accuracy
versus compute trade-off (mean sentence WER against total MACs).
"""

from .corpus import (
    Corpus,
    FeatureTensor,
    HypothesisRecord,
    LogitSequence,
    UtteranceRecord,
    load_features,
    load_logits,
    load_manifest,
    save_features,
    save_logits,
    validate_corpus,
)
from .costmodel import (
    Conv1dSpec,
    MacReport,
    ModelCostConfig,
    beam_decode_macs,
    conv1d_macs,
    decider_macs,
    default_cheap_config,
    default_expensive_config,
    encoder_macs,
    pipeline_macs,
)
from .decider import (
    DeciderConfig,
    DeciderModel,
    backward,
    bce_loss,
    forward,
    init_model,
    load_model,
    save_model,
    weighted_layer_sum,
)
from .errors import CascadeError
from .evaluation import EvalReport, evaluate
from .metrics import (
    WerBreakdown,
    decision_accuracy,
    edit_distance,
    pearson,
    relative_perf_matrix,
    route_label,
    spearman,
    tokenize,
    wer,
)
from .routing import (
    EvalResources,
    RoutingPolicy,
    ScoredSample,
    accent_rule,
    apply_policy,
    calibrate_eer,
    calibrate_no_false_negative,
    entropy_from_logits,
    sweep_thresholds,
)
from .synthetic import SyntheticSpec, make_synthetic_corpus
from .training import TrainConfig, adam_step, cosine_lr, train

__version__ = "0.1.0"
