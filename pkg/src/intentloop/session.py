"""Refinement sessions: the loop from request to retrieval-ready state.

A session parses the request into a frame, snapshots the slot distribution
and stopping threshold for its (topic, intent) pair, and then alternates
suggestion and feedback steps until the completion score beats the
threshold, the step budget runs out, or the arms are exhausted. The
snapshot keeps the score sequence monotone even while the live profile is
updated by this and other sessions. Each feedback step appends one
interaction record; the records are the durable log and are sufficient to
replay the policy updates for the one-hot context scheme.
"""

from __future__ import annotations

import json
import logging
import time
import uuid
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .bandit import (
    BanditRegistry,
    ContextVector,
    PolicyConfig,
    context_method1,
    context_method2,
    context_method3,
)
from .errors import StateError, UnknownIntentError, ValidationError
from .nlu import ComplexRequest, FewShotExample, parse_frame
from .ontology import (
    DEFAULT_MAX_STEPS,
    IntentOntology,
    IntentProfile,
    SemanticFrame,
    intent_completion_score,
    should_continue,
)

logger = logging.getLogger(__name__)

SESSION_STATES = ("refining", "ready", "retrieved", "abandoned")

RECORD_FIELDS = (
    "session_id",
    "step",
    "topic_id",
    "intent_id",
    "context_scheme",
    "input_slot_ids",
    "shown_slot_ids",
    "selected_slot_ids",
    "rejected_slot_ids",
    "ics_before",
    "ics_after",
    "timestamp",
)


@dataclass(frozen=True)
class InteractionRecord:
    session_id: str
    step: int
    topic_id: str
    intent_id: str
    context_scheme: str
    input_slot_ids: tuple[str, ...]
    shown_slot_ids: tuple[str, ...]
    selected_slot_ids: tuple[str, ...]
    rejected_slot_ids: tuple[str, ...]
    ics_before: float
    ics_after: float
    timestamp: float

    def __post_init__(self) -> None:
        shown = set(self.shown_slot_ids)
        if not set(self.selected_slot_ids) <= shown:
            raise ValidationError("selected slots must be a subset of shown")
        if not set(self.rejected_slot_ids) <= shown:
            raise ValidationError("rejected slots must be a subset of shown")
        if set(self.selected_slot_ids) & set(self.rejected_slot_ids):
            raise ValidationError("selected and rejected slots must be disjoint")
        if self.ics_after + 1e-12 < self.ics_before:
            raise ValidationError("ics_after must not fall below ics_before")

    def to_json_dict(self) -> dict:
        data = asdict(self)
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in
                ((name, data[name]) for name in RECORD_FIELDS)}


@dataclass
class Session:
    id: str
    request: ComplexRequest
    frame: SemanticFrame
    state: str
    threshold: float
    distribution: dict[str, float]
    context: ContextVector | None = None
    step: int = 0
    selected: list[str] = field(default_factory=list)
    rejected: list[str] = field(default_factory=list)
    shown_all: list[str] = field(default_factory=list)
    last_shown: list[str] = field(default_factory=list)
    records: list[InteractionRecord] = field(default_factory=list)
    created_at: float = 0.0
    updated_at: float = 0.0
    diagnostic: str | None = None

    @property
    def ics(self) -> float:
        return self.frame.ics


@dataclass
class EngineConfig:
    context_scheme: str = "method1"
    max_steps: int = DEFAULT_MAX_STEPS
    slate_size: int = 3
    match_threshold: float = 0.65
    temperature: float = 0.0
    max_tokens: int = 256
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    session_ttl: float | None = None

    def __post_init__(self) -> None:
        if self.context_scheme not in ("method1", "method2", "method3"):
            raise ValidationError(f"unknown context scheme {self.context_scheme!r}")
        if self.slate_size < 1:
            raise ValidationError("slate_size must be at least 1")
        if self.max_steps < 0:
            raise ValidationError("max_steps must be non-negative")


class Engine:
    """Bundles ontology, profile, policies, and providers behind sessions."""

    def __init__(
        self,
        ontology: IntentOntology,
        profile: IntentProfile | None = None,
        config: EngineConfig | None = None,
        completion_provider=None,
        embedder=None,
        search_provider=None,
        ranker_provider=None,
        predictor=None,
        few_shot_examples: Sequence[FewShotExample] = (),
        clock: Callable[[], float] | None = None,
        id_factory: Callable[[], str] | None = None,
    ):
        self.ontology = ontology
        self.profile = profile if profile is not None else IntentProfile(ontology)
        self.config = config if config is not None else EngineConfig()
        self.completion_provider = completion_provider
        self.embedder = embedder
        self.search_provider = search_provider
        self.ranker_provider = ranker_provider
        self.predictor = predictor
        self.few_shot_examples = list(few_shot_examples)
        self.registry = BanditRegistry(self.config.policy)
        self.sessions: dict[str, Session] = {}
        self._clock = clock if clock is not None else time.time
        self._ids = id_factory if id_factory is not None else (lambda: uuid.uuid4().hex)

    # -- context -----------------------------------------------------------

    def _build_context(self, session: Session) -> ContextVector:
        scheme = self.config.context_scheme
        universe = self.ontology.slot_ids(session.frame.topic_id, session.frame.intent_id)
        if scheme == "method1":
            return context_method1(session.frame, session.selected, universe, session.step)
        if scheme == "method2":
            return context_method2(
                session.frame, session.selected, universe, self.embedder,
                session.request.text, session.step,
            )
        return context_method3(
            session.frame, session.selected, self.predictor, self.embedder,
            session.request.text, session.step,
        )

    def _model(self, session: Session):
        universe = self.ontology.slot_ids(session.frame.topic_id, session.frame.intent_id)
        dim = session.context.dim if session.context is not None else len(universe)
        return self.registry.get_or_create(
            session.frame.topic_id, session.frame.intent_id, universe, dim
        )

    def _exclusions(self, session: Session) -> set[str]:
        # Shown slots never reappear, whether or not they drew feedback.
        return set(session.frame.mentioned_slot_ids) | set(session.selected) | set(
            session.rejected
        ) | set(session.shown_all)

    def _refresh_suggestions(self, session: Session) -> None:
        model = self._model(session)
        slate = model.suggest(session.context, self.config.slate_size, self._exclusions(session))
        session.last_shown = slate
        if slate:
            session.shown_all.extend(slate)
        else:
            session.state = "ready"

    # -- lifecycle -----------------------------------------------------------

    def start_session(self, request: ComplexRequest, frame: SemanticFrame | None = None) -> Session:
        """Parse, score, and either open refinement or mark the session ready.

        A pre-built frame skips parsing; the simulator uses this to drive
        sessions straight from sampled frames.
        """
        now = self._clock()
        session_id = self._ids()
        if frame is None:
            try:
                frame = parse_frame(
                    request,
                    self.completion_provider,
                    self.ontology,
                    self.profile,
                    self.embedder,
                    examples=self.few_shot_examples,
                    match_threshold=self.config.match_threshold,
                    temperature=self.config.temperature,
                    max_tokens=self.config.max_tokens,
                )
            except UnknownIntentError as exc:
                session = Session(
                    id=session_id,
                    request=request,
                    frame=SemanticFrame(topic_id="", intent_id="", provenance="fallback"),
                    state="abandoned",
                    threshold=0.0,
                    distribution={},
                    created_at=now,
                    updated_at=now,
                    diagnostic=str(exc),
                )
                self.sessions[session_id] = session
                raise
        distribution = self.profile.distribution(frame.topic_id, frame.intent_id)
        threshold = self.profile.stopping_threshold(frame.topic_id, frame.intent_id)
        frame.ics = intent_completion_score(self.profile, frame, [], distribution=distribution)
        session = Session(
            id=session_id,
            request=request,
            frame=frame,
            state="refining",
            threshold=threshold,
            distribution=distribution,
            created_at=now,
            updated_at=now,
        )
        session.context = self._build_context(session)
        if should_continue(frame.ics, threshold, 0, self.config.max_steps):
            self._refresh_suggestions(session)
        else:
            session.state = "ready"
        self.sessions[session_id] = session
        return session

    def apply_feedback(
        self,
        session: Session,
        selected: Iterable[str],
        rejected: Iterable[str] = (),
    ) -> Session:
        """One loop step: retrain the policy, rebuild context, rescore."""
        if session.state != "refining":
            raise StateError(f"session {session.id} is {session.state}, not refining")
        selected = list(dict.fromkeys(selected))
        rejected = list(dict.fromkeys(rejected))
        shown = set(session.last_shown)
        bad = [s for s in list(selected) + list(rejected) if s not in shown]
        if bad:
            raise ValidationError(f"feedback on slots that were not shown: {bad}")
        if set(selected) & set(rejected):
            raise ValidationError("selected and rejected must be disjoint")
        input_slots = list(
            dict.fromkeys(list(session.frame.mentioned_slot_ids) + list(session.selected))
        )
        ics_before = session.frame.ics
        model = self._model(session)
        model.update(session.context, session.last_shown, selected)
        if selected:
            self.profile.record_interaction(
                session.frame.topic_id, session.frame.intent_id, selected
            )
        session.selected.extend(s for s in selected if s not in session.selected)
        session.rejected.extend(r for r in rejected if r not in session.rejected)
        session.step += 1
        session.context = self._build_context(session)
        ics_after = intent_completion_score(
            self.profile, session.frame, session.selected, distribution=session.distribution
        )
        session.frame.ics = ics_after
        now = self._clock()
        record = InteractionRecord(
            session_id=session.id,
            step=session.step - 1,
            topic_id=session.frame.topic_id,
            intent_id=session.frame.intent_id,
            context_scheme=self.config.context_scheme,
            input_slot_ids=tuple(input_slots),
            shown_slot_ids=tuple(session.last_shown),
            selected_slot_ids=tuple(selected),
            rejected_slot_ids=tuple(rejected),
            ics_before=ics_before,
            ics_after=ics_after,
            timestamp=now,
        )
        session.records.append(record)
        session.updated_at = now
        if should_continue(ics_after, session.threshold, session.step, self.config.max_steps):
            self._refresh_suggestions(session)
        else:
            session.state = "ready"
            session.last_shown = []
        return session

    def retrieve(self, session: Session):
        """Run sub-query retrieval for a session that finished refining."""
        from .retrieval import rank_suggestions, retrieve_for_frame

        if session.state == "refining":
            raise StateError(f"session {session.id} is still refining")
        if session.state == "abandoned":
            raise StateError(f"session {session.id} was abandoned")
        if self.search_provider is None:
            raise ValidationError("no search provider configured")
        docs = retrieve_for_frame(
            session.frame, session.selected, self.ontology, self.search_provider
        )
        ranked = rank_suggestions(
            docs, session.frame, session.selected, self.ontology,
            provider=self.ranker_provider,
        )
        session.state = "retrieved"
        session.updated_at = self._clock()
        return ranked

    def sweep_idle(self, ttl_seconds: float | None = None) -> list[str]:
        """Abandon refining sessions idle past the TTL; returns their ids."""
        ttl = ttl_seconds if ttl_seconds is not None else self.config.session_ttl
        if ttl is None:
            return []
        now = self._clock()
        swept = []
        for session in self.sessions.values():
            if session.state == "refining" and now - session.updated_at > ttl:
                session.state = "abandoned"
                session.diagnostic = "idle past ttl"
                swept.append(session.id)
        return swept

    def all_records(self) -> list[InteractionRecord]:
        records: list[InteractionRecord] = []
        for session in self.sessions.values():
            records.extend(session.records)
        return records


# -- log persistence ----------------------------------------------------------


def write_interaction_log(records: Iterable[InteractionRecord], path: str | Path) -> int:
    """Append-only JSONL with a fixed field order; returns the line count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_json_dict(), sort_keys=False) + "\n")
            n += 1
    return n


def session_log_path(base_dir: str | Path, session: Session) -> Path:
    day = time.strftime("%Y-%m-%d", time.gmtime(session.created_at))
    return Path(base_dir) / day / f"{session.id}.jsonl"


def read_interaction_log(path: str | Path) -> list[InteractionRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"log line {lineno}: {exc.msg}") from exc
            missing = [k for k in RECORD_FIELDS if k not in data]
            if missing:
                raise ValidationError(f"log line {lineno} missing fields {missing}")
            records.append(
                InteractionRecord(
                    session_id=data["session_id"],
                    step=int(data["step"]),
                    topic_id=data["topic_id"],
                    intent_id=data["intent_id"],
                    context_scheme=data["context_scheme"],
                    input_slot_ids=tuple(data["input_slot_ids"]),
                    shown_slot_ids=tuple(data["shown_slot_ids"]),
                    selected_slot_ids=tuple(data["selected_slot_ids"]),
                    rejected_slot_ids=tuple(data["rejected_slot_ids"]),
                    ics_before=float(data["ics_before"]),
                    ics_after=float(data["ics_after"]),
                    timestamp=float(data["timestamp"]),
                )
            )
    return records


def replay_interaction_log(
    records: Sequence[InteractionRecord],
    ontology: IntentOntology,
    policy: PolicyConfig,
) -> BanditRegistry:
    """Rebuild bandit models by replaying the logged update stream.

    Supports the one-hot context scheme, whose vectors are fully determined
    by the logged slot sets. Schemes that embed the raw request cannot be
    replayed from records alone.
    """
    registry = BanditRegistry(policy)
    for record in records:
        if record.context_scheme != "method1":
            raise ValidationError(
                f"cannot replay context scheme {record.context_scheme!r} from records"
            )
        universe = ontology.slot_ids(record.topic_id, record.intent_id)
        pos = {s: i for i, s in enumerate(universe)}
        unknown = [s for s in record.input_slot_ids if s not in pos]
        if unknown:
            raise ValidationError(f"record references unknown slots {unknown}")
        bits = np.zeros(len(universe))
        for s in record.input_slot_ids:
            bits[pos[s]] = 1.0
        context = ContextVector(bits, "method1", record.step)
        model = registry.get_or_create(
            record.topic_id, record.intent_id, universe, len(universe)
        )
        model.update(context, list(record.shown_slot_ids), list(record.selected_slot_ids))
    return registry
