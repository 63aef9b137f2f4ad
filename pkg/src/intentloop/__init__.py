"""Interactive intent refinement: frame parsing, slot elicitation, retrieval.

The loop: parse a complex request into a semantic frame, elicit missing
slots with contextual bandit suggestions until the intent completion score
passes its stopping threshold, then retrieve and rank results through
sub-queries. Query performance prediction and off-policy evaluation close
the measurement loop.
"""

from .errors import (
    IntentLoopError,
    StateError,
    TransportError,
    UndefinedEstimateError,
    UnknownIntentError,
    UnknownReferenceError,
    ValidationError,
)
from .ontology import (
    AspectValue,
    Intent,
    IntentOntology,
    IntentProfile,
    SemanticFrame,
    Slot,
    Topic,
    intent_completion_score,
    load_ontology,
    load_profile,
    save_ontology,
    save_profile,
    should_continue,
)
from .nlu import ComplexRequest, FewShotExample, parse_frame, rule_based_frame
from .bandit import (
    BanditModel,
    BanditRegistry,
    ContextVector,
    PolicyConfig,
    PredictorConfig,
    SlotPredictorModel,
    train_slot_predictor,
)
from .session import (
    Engine,
    EngineConfig,
    InteractionRecord,
    Session,
    read_interaction_log,
    replay_interaction_log,
    write_interaction_log,
)

__version__ = "0.1.0"

__all__ = [
    "IntentLoopError",
    "StateError",
    "TransportError",
    "UndefinedEstimateError",
    "UnknownIntentError",
    "UnknownReferenceError",
    "ValidationError",
    "AspectValue",
    "Intent",
    "IntentOntology",
    "IntentProfile",
    "SemanticFrame",
    "Slot",
    "Topic",
    "intent_completion_score",
    "load_ontology",
    "load_profile",
    "save_ontology",
    "save_profile",
    "should_continue",
    "ComplexRequest",
    "FewShotExample",
    "parse_frame",
    "rule_based_frame",
    "BanditModel",
    "BanditRegistry",
    "ContextVector",
    "PolicyConfig",
    "PredictorConfig",
    "SlotPredictorModel",
    "train_slot_predictor",
    "Engine",
    "EngineConfig",
    "InteractionRecord",
    "Session",
    "read_interaction_log",
    "replay_interaction_log",
    "write_interaction_log",
    "__version__",
]
