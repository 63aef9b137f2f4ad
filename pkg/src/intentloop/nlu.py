"""Request understanding: prompt construction, parsing, canonicalization.

A request is turned into a semantic frame by a single few-shot completion
that names the topic, the intent, and the stated slots with their aspect
values. Generated slot labels are snapped onto ontology slots by embedding
distance; labels too far from every known slot are kept as new candidates
instead of being forced onto the wrong slot. When no provider is
configured, or the provider fails or returns something unparseable, a
rule-based path scores intents by token overlap and finds slots by
substring match so the engine still produces a frame.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .embedding import cosine_distance, tokenize
from .errors import TransportError, UnknownIntentError, ValidationError
from .ontology import (
    AspectValue,
    IntentOntology,
    IntentProfile,
    SemanticFrame,
    Slot,
    intent_completion_score,
)
from .transport import post_json

logger = logging.getLogger(__name__)

DEFAULT_MATCH_THRESHOLD = 0.65
MAX_FEW_SHOT_EXAMPLES = 16


@dataclass
class ComplexRequest:
    """A raw user request, optionally tagged with a location."""

    text: str
    location: str | None = None
    received_at: float | None = None

    def __post_init__(self) -> None:
        if not self.text or not self.text.strip():
            raise ValidationError("request text must be non-empty")


@dataclass(frozen=True)
class FewShotExample:
    request_text: str
    topic: str
    intent: str
    slots: tuple[tuple[str, str | None], ...] = ()


@dataclass(frozen=True)
class NewCandidate:
    """A generated slot label that matched nothing in the ontology."""

    label: str
    topic_id: str
    intent_id: str


def validate_few_shot_examples(
    examples: Sequence[FewShotExample], ontology: IntentOntology
) -> None:
    for ex in examples:
        ontology.intent(ex.topic, ex.intent)


def select_few_shot_pool(
    examples: Sequence[FewShotExample], limit: int = MAX_FEW_SHOT_EXAMPLES
) -> list[FewShotExample]:
    """Cap the pool, preferring intent diversity over order of arrival."""
    if limit < 1:
        raise ValidationError("limit must be at least 1")
    by_intent: dict[tuple[str, str], list[FewShotExample]] = {}
    for ex in examples:
        by_intent.setdefault((ex.topic, ex.intent), []).append(ex)
    pool: list[FewShotExample] = []
    buckets = list(by_intent.values())
    depth = 0
    while len(pool) < limit:
        added = False
        for bucket in buckets:
            if depth < len(bucket) and len(pool) < limit:
                pool.append(bucket[depth])
                added = True
        if not added:
            break
        depth += 1
    return pool


def _frame_block(topic: str, intent: str, slots: Sequence[tuple[str, str | None]]) -> str:
    return json.dumps(
        {
            "topic": topic,
            "intent": intent,
            "slots": [{"label": label, "aspect": aspect} for label, aspect in slots],
        }
    )


def build_few_shot_prompt(examples: Sequence[FewShotExample], request: ComplexRequest) -> str:
    """Deterministic REQUEST/FRAME blocks ending with the unsolved request."""
    if not examples:
        raise ValidationError("at least one few-shot example is required")
    blocks = []
    for ex in examples:
        blocks.append(
            f"REQUEST: {ex.request_text}\nFRAME: {_frame_block(ex.topic, ex.intent, ex.slots)}"
        )
    blocks.append(f"REQUEST: {request.text}\nFRAME:")
    return "\n\n".join(blocks)


def _target_request_text(prompt: str) -> str:
    tail = prompt.rsplit("REQUEST: ", 1)[-1]
    return tail.split("\nFRAME:", 1)[0]


class HttpCompletionProvider:
    """Client for a service answering POST /complete."""

    def __init__(self, endpoint: str, timeout: float = 30.0, max_retries: int = 3):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.max_retries = max_retries

    def complete(self, prompt: str, temperature: float = 0.0, max_tokens: int = 256) -> str:
        payload = post_json(
            self.endpoint + "/complete",
            {"prompt": prompt, "temperature": temperature, "max_tokens": max_tokens},
            timeout=self.timeout,
            max_retries=self.max_retries,
        )
        text = payload.get("text")
        if not isinstance(text, str):
            raise TransportError("completion service returned no text field")
        return text


class FixtureCompletionProvider:
    """Completions looked up by the sha256 of the target request text.

    The fixture file maps hex digests to completion strings. A miss is a
    transport failure, which callers treat like a provider outage.
    """

    def __init__(self, mapping: dict[str, str] | None = None, path: str | Path | None = None):
        if mapping is None and path is None:
            raise ValidationError("fixture provider needs a mapping or a path")
        if mapping is None:
            mapping = json.loads(Path(path).read_text(encoding="utf-8"))
        self._mapping = dict(mapping)

    @staticmethod
    def key_for(request_text: str) -> str:
        return hashlib.sha256(request_text.encode("utf-8")).hexdigest()

    def complete(self, prompt: str, temperature: float = 0.0, max_tokens: int = 256) -> str:
        key = self.key_for(_target_request_text(prompt))
        if key not in self._mapping:
            raise TransportError(f"no fixture completion for request hash {key[:12]}")
        return self._mapping[key]


def canonicalize_slot(
    label: str,
    topic_id: str,
    intent_id: str,
    ontology: IntentOntology,
    embedder,
    threshold: float = DEFAULT_MATCH_THRESHOLD,
) -> Slot | NewCandidate:
    """Snap a generated label onto the nearest ontology slot by embedding.

    Accepts the match when the cosine distance is at or below the threshold
    and returns a NewCandidate otherwise. A label identical to a slot label
    short-circuits to that slot.
    """
    if not label:
        raise ValidationError("slot label must be non-empty")
    slots = ontology.slots(topic_id, intent_id)
    if not slots:
        return NewCandidate(label, topic_id, intent_id)
    lowered = label.lower()
    for slot in slots:
        if slot.label.lower() == lowered:
            return slot
    query_vec = embedder.embed(label)
    best: tuple[float, str, Slot] | None = None
    for slot in slots:
        dist = cosine_distance(query_vec, embedder.embed(slot.label))
        if best is None or (dist, slot.id) < (best[0], best[1]):
            best = (dist, slot.id, slot)
    if best[0] <= threshold:
        return best[2]
    return NewCandidate(label, topic_id, intent_id)


def rule_based_frame(
    request: ComplexRequest,
    ontology: IntentOntology,
    profile: IntentProfile,
    distribution: dict[str, float] | None = None,
) -> SemanticFrame:
    """Intent by token overlap with intent labels, slots by substring."""
    request_tokens = set(tokenize(request.text))
    best: tuple[int, str, str] | None = None
    for intent in ontology.intents():
        overlap = len(set(tokenize(intent.label)) & request_tokens)
        if overlap == 0:
            continue
        key = (-overlap, intent.topic_id, intent.id)
        if best is None or key < best:
            best = key
    if best is None:
        raise UnknownIntentError(
            f"no intent label overlaps request {request.text!r}", raw_completion=None
        )
    _, topic_id, intent_id = best
    lowered = request.text.lower()
    mentioned: list[tuple[Slot, AspectValue | None]] = []
    seen: set[str] = set()
    for slot in ontology.slots(topic_id, intent_id):
        if slot.label.lower() in lowered and slot.id not in seen:
            seen.add(slot.id)
            mentioned.append((slot, None))
    frame = SemanticFrame(
        topic_id=topic_id,
        intent_id=intent_id,
        mentioned_slots=mentioned,
        location=request.location,
        provenance="fallback",
    )
    frame.ics = intent_completion_score(profile, frame, [], distribution=distribution)
    return frame


def _resolve_intent(
    ontology: IntentOntology, topic_value: str, intent_value: str
) -> tuple[str, str] | None:
    topic_value = topic_value.strip().lower()
    intent_value = intent_value.strip().lower()
    for topic in ontology.topics():
        if topic.id.lower() == topic_value or topic.label.lower() == topic_value:
            for intent in ontology.intents(topic.id):
                if intent.id.lower() == intent_value or intent.label.lower() == intent_value:
                    return topic.id, intent.id
    return None


def parse_frame(
    request: ComplexRequest,
    provider,
    ontology: IntentOntology,
    profile: IntentProfile,
    embedder,
    examples: Sequence[FewShotExample] = (),
    match_threshold: float = DEFAULT_MATCH_THRESHOLD,
    temperature: float = 0.0,
    max_tokens: int = 256,
    distribution: dict[str, float] | None = None,
) -> SemanticFrame:
    """Parse a request into a frame via the provider, or fall back to rules.

    The completion must be one JSON object with topic, intent, and slots.
    Transport failures and unparseable output fall back to the rule-based
    path; a parseable completion naming an unknown topic or intent raises
    UnknownIntentError with the raw completion attached.
    """
    if provider is None or not examples:
        return rule_based_frame(request, ontology, profile, distribution=distribution)
    prompt = build_few_shot_prompt(select_few_shot_pool(examples), request)
    try:
        completion = provider.complete(prompt, temperature=temperature, max_tokens=max_tokens)
    except TransportError as exc:
        logger.warning("completion provider failed, using rule-based fallback: %s", exc)
        return rule_based_frame(request, ontology, profile, distribution=distribution)
    try:
        payload = json.loads(completion.strip())
        if not isinstance(payload, dict):
            raise ValueError("completion is not a JSON object")
        topic_value = str(payload["topic"])
        intent_value = str(payload["intent"])
        raw_slots = payload.get("slots", [])
        if not isinstance(raw_slots, list):
            raise ValueError("slots must be a list")
    except (ValueError, KeyError) as exc:
        logger.warning("unparseable completion (%s), using rule-based fallback", exc)
        return rule_based_frame(request, ontology, profile, distribution=distribution)
    resolved = _resolve_intent(ontology, topic_value, intent_value)
    if resolved is None:
        raise UnknownIntentError(
            f"completion names unknown intent {topic_value!r}/{intent_value!r}",
            raw_completion=completion,
        )
    topic_id, intent_id = resolved
    mentioned: list[tuple[Slot, AspectValue | None]] = []
    new_candidates: list[str] = []
    seen: set[str] = set()
    for entry in raw_slots:
        if not isinstance(entry, dict) or "label" not in entry:
            continue
        label = str(entry["label"])
        aspect_raw = entry.get("aspect")
        match = canonicalize_slot(
            label, topic_id, intent_id, ontology, embedder, threshold=match_threshold
        )
        if isinstance(match, NewCandidate):
            new_candidates.append(match.label)
            continue
        if match.id in seen:
            continue
        seen.add(match.id)
        aspect = None
        if aspect_raw:
            aspect = AspectValue(slot_id=match.id, raw_span=str(aspect_raw), normalized=label)
        mentioned.append((match, aspect))
    location = payload.get("location") or request.location
    frame = SemanticFrame(
        topic_id=topic_id,
        intent_id=intent_id,
        mentioned_slots=mentioned,
        location=location,
        provenance="provider",
        new_candidates=new_candidates,
    )
    frame.ics = intent_completion_score(profile, frame, [], distribution=distribution)
    return frame
