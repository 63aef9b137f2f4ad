from .context import (
    CONTEXT_SCHEMES,
    ContextVector,
    context_method1,
    context_method2,
    context_method3,
)
from .policies import (
    POLICY_KINDS,
    BanditModel,
    BanditRegistry,
    LinearArm,
    PolicyConfig,
    popularity_suggest,
    rank_by_score,
)
from .predictor import (
    PredictorConfig,
    PredictorExample,
    SlotPredictorModel,
    examples_from_interaction_log,
    top1_recall,
    train_slot_predictor,
)

__all__ = [
    "CONTEXT_SCHEMES",
    "ContextVector",
    "context_method1",
    "context_method2",
    "context_method3",
    "POLICY_KINDS",
    "BanditModel",
    "BanditRegistry",
    "LinearArm",
    "PolicyConfig",
    "popularity_suggest",
    "rank_by_score",
    "PredictorConfig",
    "PredictorExample",
    "SlotPredictorModel",
    "examples_from_interaction_log",
    "top1_recall",
    "train_slot_predictor",
]
