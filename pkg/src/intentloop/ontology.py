"""Intent ontology, interaction profile, and the completion score.

The ontology is a static three level graph (topics, intents under a topic,
slots under an intent). Interaction frequencies live in a separate profile
so the graph itself never changes during serving. Slot probabilities are
relative frequencies, Laplace smoothed with alpha=1 while any slot of the
pair still has a zero count, so a cold pair starts uniform. The intent
completion score for a frame is the summed probability mass of the slots
the user has stated plus the slots they accepted during refinement, and
the refinement loop keeps going while that score stays at or below
mean + population standard deviation of the pair's slot distribution.
"""

from __future__ import annotations

import json
import logging
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import UnknownReferenceError, ValidationError

logger = logging.getLogger(__name__)

SMOOTHING_ALPHA = 1
DEFAULT_MAX_STEPS = 6


@dataclass(frozen=True)
class Topic:
    id: str
    label: str


@dataclass(frozen=True)
class Intent:
    id: str
    topic_id: str
    label: str


@dataclass(frozen=True)
class Slot:
    id: str
    topic_id: str
    intent_id: str
    label: str
    curated: bool = False


@dataclass(frozen=True)
class AspectValue:
    """A value restricting a slot, e.g. span "under $20" for a price slot."""

    slot_id: str
    raw_span: str
    normalized: str = ""

    def __post_init__(self) -> None:
        if not self.raw_span:
            raise ValidationError("aspect raw_span must be non-empty")


class IntentOntology:
    """Three level intent graph with an explicit versioned mutation API.

    Instances are only mutated through add_topic/add_intent/add_slot, each
    of which bumps ``version``. All read accessors return stable insertion
    order so downstream vector layouts are reproducible.
    """

    def __init__(self) -> None:
        self._topics: dict[str, Topic] = {}
        self._intents: dict[tuple[str, str], Intent] = {}
        self._slots: dict[tuple[str, str, str], Slot] = {}
        self._slot_labels: set[tuple[str, str, str]] = set()
        self.version = 0

    def add_topic(self, topic_id: str, label: str) -> Topic:
        if not topic_id or not label:
            raise ValidationError("topic id and label must be non-empty")
        if topic_id in self._topics:
            raise ValidationError(f"duplicate topic id {topic_id!r}")
        topic = Topic(topic_id, label)
        self._topics[topic_id] = topic
        self.version += 1
        return topic

    def add_intent(self, topic_id: str, intent_id: str, label: str) -> Intent:
        if not intent_id or not label:
            raise ValidationError("intent id and label must be non-empty")
        if topic_id not in self._topics:
            raise UnknownReferenceError(f"unknown topic {topic_id!r}")
        key = (topic_id, intent_id)
        if key in self._intents:
            raise ValidationError(f"duplicate intent {intent_id!r} under topic {topic_id!r}")
        intent = Intent(intent_id, topic_id, label)
        self._intents[key] = intent
        self.version += 1
        return intent

    def add_slot(
        self,
        topic_id: str,
        intent_id: str,
        slot_id: str,
        label: str,
        curated: bool = False,
    ) -> Slot:
        if not slot_id or not label:
            raise ValidationError("slot id and label must be non-empty")
        if (topic_id, intent_id) not in self._intents:
            raise UnknownReferenceError(f"unknown intent {topic_id!r}/{intent_id!r}")
        key = (topic_id, intent_id, slot_id)
        if key in self._slots:
            raise ValidationError(f"duplicate slot id {slot_id!r} under {topic_id!r}/{intent_id!r}")
        label_key = (topic_id, intent_id, label.lower())
        if label_key in self._slot_labels:
            raise ValidationError(f"duplicate slot label {label!r} under {topic_id!r}/{intent_id!r}")
        slot = Slot(slot_id, topic_id, intent_id, label, curated)
        self._slots[key] = slot
        self._slot_labels.add(label_key)
        self.version += 1
        return slot

    def topic(self, topic_id: str) -> Topic:
        try:
            return self._topics[topic_id]
        except KeyError:
            raise UnknownReferenceError(f"unknown topic {topic_id!r}") from None

    def intent(self, topic_id: str, intent_id: str) -> Intent:
        try:
            return self._intents[(topic_id, intent_id)]
        except KeyError:
            raise UnknownReferenceError(f"unknown intent {topic_id!r}/{intent_id!r}") from None

    def slot(self, topic_id: str, intent_id: str, slot_id: str) -> Slot:
        try:
            return self._slots[(topic_id, intent_id, slot_id)]
        except KeyError:
            raise UnknownReferenceError(
                f"unknown slot {slot_id!r} under {topic_id!r}/{intent_id!r}"
            ) from None

    def has_slot(self, topic_id: str, intent_id: str, slot_id: str) -> bool:
        return (topic_id, intent_id, slot_id) in self._slots

    def topics(self) -> list[Topic]:
        return list(self._topics.values())

    def intents(self, topic_id: str | None = None) -> list[Intent]:
        if topic_id is None:
            return list(self._intents.values())
        if topic_id not in self._topics:
            raise UnknownReferenceError(f"unknown topic {topic_id!r}")
        return [i for i in self._intents.values() if i.topic_id == topic_id]

    def slots(self, topic_id: str, intent_id: str) -> list[Slot]:
        self.intent(topic_id, intent_id)
        return [s for s in self._slots.values() if s.topic_id == topic_id and s.intent_id == intent_id]

    def slot_ids(self, topic_id: str, intent_id: str) -> list[str]:
        return [s.id for s in self.slots(topic_id, intent_id)]


def save_ontology(ontology: IntentOntology, path: str | Path) -> None:
    payload = {
        "topics": [{"id": t.id, "label": t.label} for t in ontology.topics()],
        "intents": [
            {"id": i.id, "topic_id": i.topic_id, "label": i.label} for i in ontology.intents()
        ],
        "slots": [
            {
                "id": s.id,
                "topic_id": s.topic_id,
                "intent_id": s.intent_id,
                "label": s.label,
                "curated": s.curated,
            }
            for t in ontology.topics()
            for i in ontology.intents(t.id)
            for s in ontology.slots(t.id, i.id)
        ],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def load_ontology(path: str | Path) -> IntentOntology:
    """Load the JSON ontology file, raising ValidationError with context."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"ontology parse error at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(payload, dict):
        raise ValidationError("ontology file must contain a JSON object")
    ontology = IntentOntology()
    try:
        for idx, entry in enumerate(payload.get("topics", [])):
            ontology.add_topic(entry["id"], entry["label"])
        for idx, entry in enumerate(payload.get("intents", [])):
            ontology.add_intent(entry["topic_id"], entry["id"], entry["label"])
        for idx, entry in enumerate(payload.get("slots", [])):
            ontology.add_slot(
                entry["topic_id"],
                entry["intent_id"],
                entry["id"],
                entry["label"],
                bool(entry.get("curated", False)),
            )
    except KeyError as exc:
        raise ValidationError(f"ontology entry {idx} missing key {exc}") from exc
    return ontology


@dataclass
class SemanticFrame:
    """Structured reading of one request: topic, intent, stated slots.

    mentioned_slots pairs each slot with the aspect value that restricted
    it, or None when the request named the slot without a value. Slots are
    distinct by id. new_candidates keeps generated labels that matched
    nothing in the ontology, for later curation.
    """

    topic_id: str
    intent_id: str
    mentioned_slots: list[tuple[Slot, AspectValue | None]] = field(default_factory=list)
    ics: float = 0.0
    location: str | None = None
    provenance: str = "provider"
    new_candidates: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        ids = [slot.id for slot, _ in self.mentioned_slots]
        if len(ids) != len(set(ids)):
            raise ValidationError("mentioned slots must be distinct")
        if not 0.0 <= self.ics <= 1.0:
            raise ValidationError("ics must lie in [0, 1]")

    @property
    def mentioned_slot_ids(self) -> list[str]:
        return [slot.id for slot, _ in self.mentioned_slots]


class IntentProfile:
    """Dynamic per-(topic, intent) slot interaction counts.

    Writers are serialized with a lock; readers take a snapshot under the
    same lock, so a distribution always reflects one consistent state.
    """

    def __init__(self, ontology: IntentOntology) -> None:
        self._ontology = ontology
        self._counts: dict[tuple[str, str, str], int] = {}
        self._lock = threading.Lock()

    @property
    def ontology(self) -> IntentOntology:
        return self._ontology

    def count(self, topic_id: str, intent_id: str, slot_id: str) -> int:
        self._ontology.slot(topic_id, intent_id, slot_id)
        with self._lock:
            return self._counts.get((topic_id, intent_id, slot_id), 0)

    def record_interaction(
        self, topic_id: str, intent_id: str, slot_ids: Iterable[str]
    ) -> "IntentProfile":
        slot_ids = list(slot_ids)
        for slot_id in slot_ids:
            self._ontology.slot(topic_id, intent_id, slot_id)
        with self._lock:
            for slot_id in slot_ids:
                key = (topic_id, intent_id, slot_id)
                self._counts[key] = self._counts.get(key, 0) + 1
        return self

    def distribution(self, topic_id: str, intent_id: str) -> dict[str, float]:
        """Smoothed or raw slot probabilities for the pair; sums to one."""
        slot_ids = self._ontology.slot_ids(topic_id, intent_id)
        if not slot_ids:
            raise UnknownReferenceError(f"{topic_id!r}/{intent_id!r} has no slots")
        with self._lock:
            counts = [self._counts.get((topic_id, intent_id, s), 0) for s in slot_ids]
        total = sum(counts)
        if any(c == 0 for c in counts):
            denom = total + SMOOTHING_ALPHA * len(counts)
            return {s: (c + SMOOTHING_ALPHA) / denom for s, c in zip(slot_ids, counts)}
        return {s: c / total for s, c in zip(slot_ids, counts)}

    def slot_probability(self, topic_id: str, intent_id: str, slot_id: str) -> float:
        dist = self.distribution(topic_id, intent_id)
        if slot_id not in dist:
            raise UnknownReferenceError(
                f"unknown slot {slot_id!r} under {topic_id!r}/{intent_id!r}"
            )
        return dist[slot_id]

    def stopping_threshold(self, topic_id: str, intent_id: str) -> float:
        """mean + population standard deviation of the pair's distribution."""
        values = list(self.distribution(topic_id, intent_id).values())
        mean, sd = _mean_population_sd(values)
        return mean + sd

    def reset(self, topic_id: str | None = None, intent_id: str | None = None) -> None:
        with self._lock:
            if topic_id is None:
                self._counts.clear()
                return
            keys = [
                k
                for k in self._counts
                if k[0] == topic_id and (intent_id is None or k[1] == intent_id)
            ]
            for k in keys:
                del self._counts[k]

    def snapshot_counts(self) -> dict[tuple[str, str, str], int]:
        with self._lock:
            return dict(self._counts)


def _mean_population_sd(values: Sequence[float]) -> tuple[float, float]:
    # Exact degenerate handling keeps uniform profiles at sd == 0.0.
    first = values[0]
    if all(v == first for v in values):
        return first, 0.0
    n = len(values)
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / n
    return mean, math.sqrt(var)


def intent_completion_score(
    profile: IntentProfile,
    frame: SemanticFrame,
    selected_slot_ids: Iterable[str],
    distribution: dict[str, float] | None = None,
) -> float:
    """Summed probability mass of mentioned plus selected slots, in [0, 1].

    The two sets must be disjoint. Pass ``distribution`` to score against a
    fixed snapshot instead of the live profile; sessions do this so their
    score sequence cannot move backwards when counts change mid-session.
    """
    selected = list(dict.fromkeys(selected_slot_ids))
    mentioned = list(dict.fromkeys(frame.mentioned_slot_ids))
    overlap = set(mentioned) & set(selected)
    if overlap:
        raise ValidationError(f"mentioned and selected slots overlap: {sorted(overlap)}")
    if distribution is None:
        distribution = profile.distribution(frame.topic_id, frame.intent_id)
    for slot_id in mentioned + selected:
        if slot_id not in distribution:
            raise UnknownReferenceError(
                f"unknown slot {slot_id!r} under {frame.topic_id!r}/{frame.intent_id!r}"
            )
    score = math.fsum(distribution[s] for s in mentioned + selected)
    if score > 1.0:
        if score > 1.0 + 1e-9:
            logger.warning("completion score %.17g above 1, clamping", score)
        score = 1.0
    return max(score, 0.0)


def should_continue(ics: float, threshold: float, step: int, max_steps: int = DEFAULT_MAX_STEPS) -> bool:
    """True while the score has not beaten the threshold and steps remain."""
    if step < 0:
        raise ValidationError("step must be non-negative")
    if max_steps < 0:
        raise ValidationError("max_steps must be non-negative")
    return ics <= threshold and step < max_steps


def save_profile(profile: IntentProfile, path: str | Path) -> None:
    counts = profile.snapshot_counts()
    payload = {f"{t}/{i}/{s}": c for (t, i, s), c in sorted(counts.items())}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def load_profile(path: str | Path, ontology: IntentOntology) -> IntentProfile:
    text = Path(path).read_text(encoding="utf-8")
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"profile parse error at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(payload, dict):
        raise ValidationError("profile file must contain a JSON object")
    profile = IntentProfile(ontology)
    for key, value in payload.items():
        parts = key.split("/")
        if len(parts) != 3:
            raise ValidationError(f"profile key {key!r} is not topic/intent/slot")
        if not isinstance(value, int) or value < 0:
            raise ValidationError(f"profile count for {key!r} must be a non-negative integer")
        topic_id, intent_id, slot_id = parts
        ontology.slot(topic_id, intent_id, slot_id)
        profile._counts[(topic_id, intent_id, slot_id)] = value
    return profile
