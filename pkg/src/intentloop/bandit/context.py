"""Context vectors fed to the slot elicitation policies.

Three encodings, from cheapest to richest: a one-hot of active slots, the
one-hot concatenated with a request embedding, and a max-pool over learned
slot embeddings concatenated with the request embedding. Active means
mentioned in the frame or selected so far this session.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ..errors import StateError, ValidationError
from ..ontology import SemanticFrame

CONTEXT_SCHEMES = ("method1", "method2", "method3")


@dataclass
class ContextVector:
    values: np.ndarray
    scheme: str
    step: int = 0

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise ValidationError("context values must be one-dimensional")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("context values must be finite")

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


def _active_ids(frame: SemanticFrame, selected_slot_ids: Iterable[str]) -> list[str]:
    return list(dict.fromkeys(list(frame.mentioned_slot_ids) + list(selected_slot_ids)))


def _one_hot(active: Sequence[str], slot_universe: Sequence[str]) -> np.ndarray:
    pos = {s: i for i, s in enumerate(slot_universe)}
    unknown = [s for s in active if s not in pos]
    if unknown:
        raise ValidationError(f"active slots outside the universe: {unknown}")
    bits = np.zeros(len(slot_universe))
    for s in active:
        bits[pos[s]] = 1.0
    return bits


def context_method1(
    frame: SemanticFrame,
    selected_slot_ids: Iterable[str],
    slot_universe: Sequence[str],
    step: int = 0,
) -> ContextVector:
    """One-hot of mentioned plus selected slots over the intent's universe."""
    if not slot_universe:
        raise ValidationError("slot universe must be non-empty")
    bits = _one_hot(_active_ids(frame, selected_slot_ids), slot_universe)
    return ContextVector(bits, "method1", step)


def context_method2(
    frame: SemanticFrame,
    selected_slot_ids: Iterable[str],
    slot_universe: Sequence[str],
    provider,
    request_text: str,
    step: int = 0,
) -> ContextVector:
    """Slot one-hot concatenated with an embedding of the raw request."""
    if not slot_universe:
        raise ValidationError("slot universe must be non-empty")
    bits = _one_hot(_active_ids(frame, selected_slot_ids), slot_universe)
    emb = np.asarray(provider.embed(request_text), dtype=float)
    return ContextVector(np.concatenate([bits, emb]), "method2", step)


def context_method3(
    frame: SemanticFrame,
    selected_slot_ids: Iterable[str],
    predictor,
    provider,
    request_text: str,
    step: int = 0,
) -> ContextVector:
    """Max-pool over active slots' learned embeddings, plus the request.

    Requires a trained slot predictor for the embedding table. With no
    active slots the pooled part is a zero vector.
    """
    if not getattr(predictor, "trained", False):
        raise StateError("context_method3 needs a trained slot predictor")
    active = _active_ids(frame, selected_slot_ids)
    pooled = predictor.pool_slot_embeddings(active)
    emb = np.asarray(provider.embed(request_text), dtype=float)
    return ContextVector(np.concatenate([pooled, emb]), "method3", step)
