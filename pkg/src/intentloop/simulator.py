"""Synthetic-user environment for training and evaluating the loop offline.

Everything here is deterministic from a seed: the generated ontology, the
user population, the request stream, and every selection draw. Users hold
a Dirichlet preference distribution over each intent's slots plus a
pairwise coupling matrix that shifts those preferences given the slots
already active, so context-aware policies have signal to find exactly when
the coupling strength is nonzero.
"""

from __future__ import annotations

import hashlib
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bandit import BanditModel, ContextVector, PolicyConfig, popularity_suggest
from .embedding import cooccurrence_index
from .errors import ValidationError
from .nlu import ComplexRequest
from .ontology import (
    AspectValue,
    IntentOntology,
    IntentProfile,
    SemanticFrame,
)
from .qpp import BROAD_SLOT_LIMIT, QppReport, compare_requests, index_texts
from .retrieval import Document, corpus_queries
from .session import Engine, EngineConfig, InteractionRecord
from .ope import LoggedDecision

SIM_EPOCH = 1700000000.0

TOPIC_LABELS = ("outdoors", "dining")

INTENT_POOLS = {
    "outdoors": (
        "hiking", "camping", "cycling", "fishing", "climbing",
        "kayaking", "skiing", "rafting", "caving", "birding",
    ),
    "dining": (
        "restaurants", "cafes", "bars", "bakeries", "brunch",
        "pizza", "sushi", "ramen", "tacos", "noodles",
    ),
}

# Single words, none a substring of another across pools, so substring
# slot matching in the fallback parser stays unambiguous.
ATTRIBUTE_POOL = (
    "parking", "waterfall", "shade", "views", "dogs",
    "toilets", "campfire", "showers", "wifi", "vegan",
    "patio", "takeout", "delivery", "booking", "budget",
    "luxury", "quiet", "music", "garden", "rooftop",
    "terrace", "fireplace", "sunset", "swimming", "benches",
    "gravel", "paved", "steep", "flat", "forest",
    "meadow", "river", "lake", "cliffs", "wildlife",
    "cocktails", "desserts", "seafood", "gluten", "reservations",
)

LOCATION_POOL = ("astoria", "brimfield", "copperhill", "duskvale", "eastport")

FILLER_WORDS = (
    "looking", "for", "somewhere", "good", "weekend", "plan",
    "friends", "family", "visit", "ideas", "options", "nearby",
)

REQUEST_TEMPLATES = (
    "looking for {intent} near {location} with {slots}",
    "plan a {intent} weekend around {location} with {slots}",
    "any good {intent} options close to {location} with {slots}",
)


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    n_topics: int = 2
    n_intents: int = 14
    n_slots_per_intent: int = 20
    n_requests: int = 100
    coupling_strength: float = 3.0
    noise_rate: float = 0.1
    slate_size: int = 3
    concentration: float = 0.3
    mention_low: int = 1
    mention_high: int = 4
    warmup_interactions: int = 300
    max_steps: int = 6

    def __post_init__(self) -> None:
        for name in ("n_topics", "n_intents", "n_slots_per_intent", "n_requests", "slate_size"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be at least 1")
        if self.n_topics > len(TOPIC_LABELS):
            raise ValidationError(f"at most {len(TOPIC_LABELS)} topics are supported")
        if not 0.0 <= self.noise_rate < 1.0:
            raise ValidationError("noise_rate must lie in [0, 1)")
        if self.coupling_strength < 0.0:
            raise ValidationError("coupling_strength must be non-negative")
        if self.concentration <= 0.0:
            raise ValidationError("concentration must be positive")
        if not 1 <= self.mention_low <= self.mention_high:
            raise ValidationError("mention bounds must satisfy 1 <= low <= high")
        if self.warmup_interactions < 0:
            raise ValidationError("warmup_interactions must be non-negative")
        if self.max_steps < 1:
            raise ValidationError("max_steps must be at least 1")


def _stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])


def _intent_marker(ordinal: int) -> str:
    letters = "abcdefghijklmnopqrstuvwxyz"
    out = ""
    ordinal += 1
    while ordinal:
        ordinal, rem = divmod(ordinal - 1, len(letters))
        out = letters[rem] + out
    return out


def generate_ontology(config: SimConfig) -> IntentOntology:
    """Deterministic topic/intent/slot graph built from the word pools.

    Slot labels pair an attribute word with a per-intent marker letter, so
    every slot label is a single token unique across the whole ontology and
    corpus co-occurrence statistics stay intent-specific.
    """
    rng = _stream(config.seed, "ontology")
    ontology = IntentOntology()
    topics = TOPIC_LABELS[: config.n_topics]
    for label in topics:
        ontology.add_topic(label, label)
    for i in range(config.n_intents):
        topic = topics[i % len(topics)]
        pool = INTENT_POOLS[topic]
        label = pool[(i // len(topics)) % len(pool)]
        suffix = i // (len(topics) * len(INTENT_POOLS[topic]))
        intent_id = label if suffix == 0 else f"{label}{suffix}"
        ontology.add_intent(topic, intent_id, intent_id)
        n = config.n_slots_per_intent
        if n <= len(ATTRIBUTE_POOL):
            picks = rng.choice(len(ATTRIBUTE_POOL), size=n, replace=False)
            words = [ATTRIBUTE_POOL[j] for j in picks]
        else:
            words = list(ATTRIBUTE_POOL) + [
                f"feature{j}" for j in range(n - len(ATTRIBUTE_POOL))
            ]
        marker = _intent_marker(i)
        for word in words:
            slot_label = f"{word}{marker}"
            ontology.add_slot(topic, intent_id, f"{intent_id}.{slot_label}", slot_label)
    return ontology


class SyntheticUserModel:
    """Preference-driven chooser over an ontology's slots.

    For each (topic, intent) the user holds a Dirichlet preference vector
    and a symmetric coupling matrix. Given active slots A, the effective
    preference is pref(s) * exp(strength * mean coupling(a, s) for a in A),
    renormalized; a shown slot is selected with probability
    (1 - noise) * eff(s | A) + noise * 0.5.
    """

    def __init__(self, config: SimConfig, ontology: IntentOntology) -> None:
        self.config = config
        self.ontology = ontology
        self._prefs: dict[tuple[str, str], np.ndarray] = {}
        self._coupling: dict[tuple[str, str], np.ndarray] = {}
        self._index: dict[tuple[str, str], dict[str, int]] = {}
        rng = _stream(config.seed, "user")
        for topic in ontology.topics():
            for intent in ontology.intents(topic.id):
                key = (topic.id, intent.id)
                slot_ids = ontology.slot_ids(topic.id, intent.id)
                n = len(slot_ids)
                self._index[key] = {s: i for i, s in enumerate(slot_ids)}
                self._prefs[key] = rng.dirichlet(np.full(n, config.concentration))
                g = rng.standard_normal((n, n))
                g = (g + g.T) / 2.0
                np.fill_diagonal(g, 0.0)
                self._coupling[key] = g

    def slot_ids(self, topic_id: str, intent_id: str) -> list[str]:
        return list(self._index[(topic_id, intent_id)])

    def effective_preferences(
        self, topic_id: str, intent_id: str, active_slot_ids: Sequence[str]
    ) -> np.ndarray:
        key = (topic_id, intent_id)
        pref = self._prefs[key]
        index = self._index[key]
        active = [index[s] for s in active_slot_ids if s in index]
        if not active or self.config.coupling_strength == 0.0:
            return pref
        shift = self._coupling[key][active, :].mean(axis=0)
        w = pref * np.exp(self.config.coupling_strength * shift)
        return w / w.sum()

    def selection_probability(
        self, topic_id: str, intent_id: str, slot_id: str, active_slot_ids: Sequence[str]
    ) -> float:
        eff = self.effective_preferences(topic_id, intent_id, active_slot_ids)
        i = self._index[(topic_id, intent_id)][slot_id]
        nu = self.config.noise_rate
        return float((1.0 - nu) * eff[i] + nu * 0.5)

    def sample_mentioned(
        self,
        topic_id: str,
        intent_id: str,
        count: int,
        rng: np.random.Generator,
        mode: str = "mixed",
    ) -> list[str]:
        """Distinct slots a request states, under a choice of weighting.

        "preference" follows the population taste and suits history
        generation; "rare" leans toward unpopular slots and suits stated
        constraints, since users spell out their idiosyncratic needs while
        the common ones are elicited (preference weighting here would push
        the initial completion score past the stopping threshold and skip
        refinement); "uniform" and "mixed" suit plain context sampling.
        """
        key = (topic_id, intent_id)
        slot_ids = list(self._index[key])
        count = min(count, len(slot_ids))
        n = len(slot_ids)
        if mode == "preference":
            weights = self._prefs[key]
        elif mode == "uniform":
            weights = np.full(n, 1.0 / n)
        elif mode == "mixed":
            weights = 0.5 * self._prefs[key] + 0.5 / n
        elif mode == "rare":
            inv = 1.0 / (self._prefs[key] + 1.0 / n)
            weights = inv / inv.sum()
        else:
            raise ValidationError(f"unknown mention weighting {mode!r}")
        picks = rng.choice(n, size=count, replace=False, p=weights)
        return [slot_ids[i] for i in picks]

    def decide(
        self,
        topic_id: str,
        intent_id: str,
        shown_slot_ids: Sequence[str],
        active_slot_ids: Sequence[str],
        rng: np.random.Generator,
    ) -> list[str]:
        """Independent Bernoulli accept/reject over one suggestion slate."""
        selected = []
        for slot_id in shown_slot_ids:
            p = self.selection_probability(topic_id, intent_id, slot_id, active_slot_ids)
            if rng.random() < p:
                selected.append(slot_id)
        return selected


# -- request stream -------------------------------------------------------------


@dataclass(frozen=True)
class SimRequest:
    topic_id: str
    intent_id: str
    mentioned_slot_ids: tuple[str, ...]
    location: str
    text: str


def _intent_pairs(ontology: IntentOntology) -> list[tuple[str, str]]:
    return [
        (topic.id, intent.id)
        for topic in ontology.topics()
        for intent in ontology.intents(topic.id)
    ]


def sample_request(
    config: SimConfig,
    ontology: IntentOntology,
    user: SyntheticUserModel,
    rng: np.random.Generator,
) -> SimRequest:
    pairs = _intent_pairs(ontology)
    topic_id, intent_id = pairs[int(rng.integers(len(pairs)))]
    count = int(rng.integers(config.mention_low, config.mention_high + 1))
    mentioned = user.sample_mentioned(topic_id, intent_id, count, rng, mode="rare")
    location = LOCATION_POOL[int(rng.integers(len(LOCATION_POOL)))]
    template = REQUEST_TEMPLATES[int(rng.integers(len(REQUEST_TEMPLATES)))]
    labels = [ontology.slot(topic_id, intent_id, s).label for s in mentioned]
    text = template.format(
        intent=ontology.intent(topic_id, intent_id).label,
        location=location,
        slots=" and ".join(labels),
    )
    return SimRequest(topic_id, intent_id, tuple(mentioned), location, text)


def frame_for_request(sim_request: SimRequest, ontology: IntentOntology) -> SemanticFrame:
    slots = [
        (ontology.slot(sim_request.topic_id, sim_request.intent_id, s), None)
        for s in sim_request.mentioned_slot_ids
    ]
    return SemanticFrame(
        topic_id=sim_request.topic_id,
        intent_id=sim_request.intent_id,
        mentioned_slots=slots,
        location=sim_request.location,
        provenance="fallback",
    )


def seed_profile(
    config: SimConfig,
    ontology: IntentOntology,
    user: SyntheticUserModel,
    profile: IntentProfile,
) -> None:
    """Warm the frequency profile with preference-weighted history.

    A cold profile is exactly uniform, which makes the stopping threshold
    1/n and ends every session before the first suggestion; warmup gives
    the threshold the spread real logs would have.
    """
    rng = _stream(config.seed, "warmup")
    pairs = _intent_pairs(ontology)
    for _ in range(config.warmup_interactions):
        topic_id, intent_id = pairs[int(rng.integers(len(pairs)))]
        picks = user.sample_mentioned(
            topic_id, intent_id, int(rng.integers(1, 4)), rng, mode="preference"
        )
        profile.record_interaction(topic_id, intent_id, picks)


# -- full sessions through the engine -------------------------------------------


@dataclass
class SessionTrace:
    session_id: str
    request_text: str
    topic_id: str
    intent_id: str
    mentioned_slot_ids: tuple[str, ...]
    selected_labels: tuple[str, ...]
    n_steps: int
    breadth: str


@dataclass
class SimRun:
    records: list[InteractionRecord]
    step_rewards: list[float]
    traces: list[SessionTrace]
    engine: Engine


def build_engine(
    config: SimConfig,
    ontology: IntentOntology,
    policy_kind: str = "adaptive_active_greedy",
    context_scheme: str = "method1",
    search_provider=None,
) -> Engine:
    """Engine wired for simulation: virtual clock, counted session ids."""
    counter = {"n": 0}
    clock = {"t": SIM_EPOCH}

    def next_id() -> str:
        counter["n"] += 1
        return f"sim-{config.seed}-{counter['n']:06d}"

    def tick() -> float:
        clock["t"] += 1.0
        return clock["t"]

    engine_config = EngineConfig(
        context_scheme=context_scheme,
        max_steps=config.max_steps,
        slate_size=config.slate_size,
        policy=PolicyConfig(kind=policy_kind, seed=config.seed),
    )
    return Engine(
        ontology,
        config=engine_config,
        search_provider=search_provider,
        clock=tick,
        id_factory=next_id,
    )


def simulate_sessions(
    config: SimConfig,
    engine: Engine | None = None,
    policy_kind: str = "adaptive_active_greedy",
    context_scheme: str = "method1",
) -> SimRun:
    """Drive n_requests full sessions; returns logs, rewards, and traces."""
    ontology = engine.ontology if engine is not None else generate_ontology(config)
    user = SyntheticUserModel(config, ontology)
    if engine is None:
        engine = build_engine(config, ontology, policy_kind, context_scheme)
    seed_profile(config, ontology, user, engine.profile)
    rng_requests = _stream(config.seed, "requests")
    rng_choices = _stream(config.seed, "choices")
    step_rewards: list[float] = []
    traces: list[SessionTrace] = []
    for _ in range(config.n_requests):
        sim_request = sample_request(config, ontology, user, rng_requests)
        request = ComplexRequest(text=sim_request.text, location=sim_request.location)
        frame = frame_for_request(sim_request, ontology)
        session = engine.start_session(request, frame=frame)
        selected_labels: list[str] = []
        while session.state == "refining" and session.last_shown:
            active = list(sim_request.mentioned_slot_ids) + list(session.selected)
            shown = list(session.last_shown)
            selected = user.decide(
                sim_request.topic_id, sim_request.intent_id, shown, active, rng_choices
            )
            rejected = [s for s in shown if s not in selected]
            engine.apply_feedback(session, selected, rejected)
            step_rewards.append(len(selected) / len(shown))
            selected_labels.extend(
                ontology.slot(sim_request.topic_id, sim_request.intent_id, s).label
                for s in selected
            )
        breadth = "broad" if len(sim_request.mentioned_slot_ids) <= BROAD_SLOT_LIMIT else "specific"
        traces.append(
            SessionTrace(
                session_id=session.id,
                request_text=sim_request.text,
                topic_id=sim_request.topic_id,
                intent_id=sim_request.intent_id,
                mentioned_slot_ids=sim_request.mentioned_slot_ids,
                selected_labels=tuple(selected_labels),
                n_steps=session.step,
                breadth=breadth,
            )
        )
    return SimRun(
        records=engine.all_records(),
        step_rewards=step_rewards,
        traces=traces,
        engine=engine,
    )


# -- flat interaction stream for policy comparison ------------------------------


class _OraclePolicy:
    """Reads the user model directly; upper bound for any learned policy."""

    def __init__(self, user: SyntheticUserModel) -> None:
        self.user = user

    def suggest(
        self,
        topic_id: str,
        intent_id: str,
        active: Sequence[str],
        k: int,
    ) -> list[str]:
        eff = self.user.effective_preferences(topic_id, intent_id, active)
        index = self.user._index[(topic_id, intent_id)]
        blocked = set(active)
        ranked = sorted(
            (s for s in index if s not in blocked),
            key=lambda s: (-eff[index[s]], s),
        )
        return ranked[:k]


def compare_policies(
    config: SimConfig,
    kinds: Sequence[str],
    n_interactions: int,
    ontology: IntentOntology | None = None,
) -> dict[str, np.ndarray]:
    """Per-step reward traces for several policies on one request stream.

    Each interaction is a single elicitation step: sample an intent and an
    active slot set, let the policy fill a slate, draw the user's accepts,
    update the policy. The request stream is materialized once so every
    policy faces the identical sequence. The pseudo-kind "oracle" ranks by
    the true effective preferences.
    """
    if n_interactions < 1:
        raise ValidationError("n_interactions must be at least 1")
    if not kinds:
        raise ValidationError("at least one policy kind is required")
    if ontology is None:
        ontology = generate_ontology(config)
    user = SyntheticUserModel(config, ontology)
    rng_requests = _stream(config.seed, "stream-requests")
    pairs = _intent_pairs(ontology)
    stream = []
    for _ in range(n_interactions):
        topic_id, intent_id = pairs[int(rng_requests.integers(len(pairs)))]
        count = int(rng_requests.integers(config.mention_low, config.mention_high + 1))
        active = tuple(user.sample_mentioned(topic_id, intent_id, count, rng_requests))
        stream.append((topic_id, intent_id, active))

    universes = {
        (t, i): ontology.slot_ids(t, i) for t, i in pairs
    }
    positions = {
        key: {s: j for j, s in enumerate(ids)} for key, ids in universes.items()
    }

    out: dict[str, np.ndarray] = {}
    for kind in kinds:
        rng_draws = _stream(config.seed, f"draws-{kind}")
        rewards = np.zeros(n_interactions)
        oracle = _OraclePolicy(user) if kind == "oracle" else None
        profile = IntentProfile(ontology) if kind == "popularity_baseline" else None
        models: dict[tuple[str, str], BanditModel] = {}
        if oracle is None and profile is None:
            policy_config = PolicyConfig(kind=kind, seed=config.seed)
            for key, ids in universes.items():
                models[key] = BanditModel(
                    key[0], key[1], ids, dim=len(ids), config=policy_config
                )
        for step, (topic_id, intent_id, active) in enumerate(stream):
            key = (topic_id, intent_id)
            ids = universes[key]
            bits = np.zeros(len(ids))
            for s in active:
                bits[positions[key][s]] = 1.0
            context = ContextVector(bits, "method1", step=0)
            if oracle is not None:
                shown = oracle.suggest(topic_id, intent_id, active, config.slate_size)
            elif profile is not None:
                shown = popularity_suggest(
                    profile, topic_id, intent_id, active, config.slate_size
                )
            else:
                shown = models[key].suggest(context, config.slate_size, exclude=active)
            if not shown:
                continue
            selected = user.decide(topic_id, intent_id, shown, active, rng_draws)
            rewards[step] = len(selected) / len(shown)
            if profile is not None:
                # Overall-frequency baseline: the log records every slot the
                # request stated plus every accepted suggestion.
                profile.record_interaction(
                    topic_id, intent_id, list(active) + list(selected)
                )
            elif oracle is None:
                models[key].update(context, shown, selected)
        out[kind] = rewards
    return out


def final_fraction_mean(rewards: np.ndarray, fraction: float = 0.1) -> float:
    if not 0.0 < fraction <= 1.0:
        raise ValidationError("fraction must lie in (0, 1]")
    n = max(1, int(len(rewards) * fraction))
    return float(np.mean(rewards[-n:]))


# -- uniform-logged decisions for off-policy evaluation -------------------------


def simulate_decisions(
    config: SimConfig,
    n_decisions: int,
    ontology: IntentOntology | None = None,
    topic_id: str | None = None,
    intent_id: str | None = None,
) -> list[LoggedDecision]:
    """Single-step decisions under a uniform-random logging policy.

    One (topic, intent) pair keeps every row's candidate set inside one
    slot universe, so any single policy can be evaluated on the log. The
    logging propensity is exactly 1/|eligible|.
    """
    if n_decisions < 1:
        raise ValidationError("n_decisions must be at least 1")
    if ontology is None:
        ontology = generate_ontology(config)
    user = SyntheticUserModel(config, ontology)
    if topic_id is None or intent_id is None:
        topic_id, intent_id = _intent_pairs(ontology)[0]
    universe = ontology.slot_ids(topic_id, intent_id)
    pos = {s: j for j, s in enumerate(universe)}
    rng = _stream(config.seed, "decisions")
    decisions = []
    high = min(config.mention_high, max(1, len(universe) - 2))
    low = min(config.mention_low, high)
    for _ in range(n_decisions):
        count = int(rng.integers(low, high + 1))
        active = user.sample_mentioned(topic_id, intent_id, count, rng)
        eligible = [s for s in universe if s not in set(active)]
        action = eligible[int(rng.integers(len(eligible)))]
        p = user.selection_probability(topic_id, intent_id, action, active)
        reward = 1.0 if rng.random() < p else 0.0
        bits = [0.0] * len(universe)
        for s in active:
            bits[pos[s]] = 1.0
        decisions.append(
            LoggedDecision(
                context=tuple(bits),
                action=action,
                reward=reward,
                propensity=1.0 / len(eligible),
                candidates=tuple(eligible),
            )
        )
    return decisions


class SimEnvironment:
    """Fresh-interaction reward oracle for a frozen policy.

    rollout() samples the policy's best-arm distribution on each context
    rather than calling its internal RNG, so evaluation does not advance
    or depend on policy state.
    """

    def __init__(
        self,
        config: SimConfig,
        ontology: IntentOntology | None = None,
        topic_id: str | None = None,
        intent_id: str | None = None,
        stream_name: str = "env",
    ) -> None:
        self.config = config
        self.ontology = ontology if ontology is not None else generate_ontology(config)
        self.user = SyntheticUserModel(config, self.ontology)
        if topic_id is None or intent_id is None:
            topic_id, intent_id = _intent_pairs(self.ontology)[0]
        self.topic_id = topic_id
        self.intent_id = intent_id
        self._stream_name = stream_name

    def rollout(self, policy, n: int) -> list[float]:
        if n < 1:
            raise ValidationError("n must be at least 1")
        universe = self.ontology.slot_ids(self.topic_id, self.intent_id)
        pos = {s: j for j, s in enumerate(universe)}
        rng = _stream(self.config.seed, self._stream_name)
        high = min(self.config.mention_high, max(1, len(universe) - 2))
        low = min(self.config.mention_low, high)
        rewards = []
        for _ in range(n):
            count = int(rng.integers(low, high + 1))
            active = self.user.sample_mentioned(self.topic_id, self.intent_id, count, rng)
            eligible = [s for s in universe if s not in set(active)]
            bits = np.zeros(len(universe))
            for s in active:
                bits[pos[s]] = 1.0
            context = ContextVector(bits, "method1")
            probs = policy.action_probabilities(context, eligible)
            arms = list(probs)
            weights = np.array([probs[a] for a in arms])
            weights = weights / weights.sum()
            action = arms[int(rng.choice(len(arms), p=weights))]
            p = self.user.selection_probability(self.topic_id, self.intent_id, action, active)
            rewards.append(1.0 if rng.random() < p else 0.0)
        return rewards


# -- refinement corpus for the QPP comparison -----------------------------------


@dataclass(frozen=True)
class RefinementPair:
    session_id: str
    original: str
    refined: str
    breadth: str


def refine_request_corpus(traces: Sequence[SessionTrace]) -> list[RefinementPair]:
    """Original and refined request texts, aligned per session.

    The refined form appends the labels of every slot the user accepted
    during refinement; sessions with no selections refine to themselves.
    """
    pairs = []
    for trace in traces:
        refined = trace.request_text
        if trace.selected_labels:
            refined = refined + " " + " ".join(trace.selected_labels)
        pairs.append(
            RefinementPair(
                session_id=trace.session_id,
                original=trace.request_text,
                refined=refined,
                breadth=trace.breadth,
            )
        )
    return pairs


class SyntheticSearchProvider:
    """Deterministic document generator standing in for a web search API.

    Documents for a query mention the query's intent, location, and slot
    words plus same-intent companions and a filler word, so corpus
    statistics reflect the ontology's topical structure. When a user model
    is supplied, companions follow its effective preferences given the
    matched slots, so slots that tend to be accepted together also co-occur
    in the documents.
    """

    def __init__(
        self,
        ontology: IntentOntology,
        seed: int = 0,
        locations: Sequence[str] = LOCATION_POOL,
        user: "SyntheticUserModel | None" = None,
    ):
        self.ontology = ontology
        self.seed = seed
        self.locations = list(locations)
        self.user = user
        self._intent_terms: dict[str, tuple[str, str]] = {}
        self._intent_slots: dict[tuple[str, str], list[tuple[str, str]]] = {}
        for topic in ontology.topics():
            for intent in ontology.intents(topic.id):
                self._intent_terms[intent.label.lower()] = (topic.id, intent.id)
                self._intent_slots[(topic.id, intent.id)] = [
                    (slot.id, slot.label) for slot in ontology.slots(topic.id, intent.id)
                ]

    def search(self, query: str, k: int) -> list[Document]:
        tokens = [t for t in query.lower().split() if t]
        intent_key = next((t for t in tokens if t in self._intent_terms), None)
        location = next((t for t in tokens if t in self.locations), self.locations[0])
        if intent_key is None:
            pair = None
            pool: list[tuple[str, str]] = []
            intent_label = "places"
        else:
            pair = self._intent_terms[intent_key]
            pool = self._intent_slots[pair]
            intent_label = intent_key
        pool_labels = {label for _, label in pool}
        matched = [t for t in tokens if t in pool_labels]
        matched_ids = [sid for sid, label in pool if label in matched]
        digest = hashlib.sha256(f"{self.seed}:{query}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        docs = []
        for i in range(k):
            companions: list[str] = []
            if pool:
                others = [(sid, label) for sid, label in pool if label not in matched]
                n_extra = int(rng.integers(2, 5))
                if others:
                    size = min(n_extra, len(others))
                    if self.user is not None and pair is not None:
                        eff = self.user.effective_preferences(pair[0], pair[1], matched_ids)
                        order = {sid: j for j, sid in enumerate(self.user.slot_ids(*pair))}
                        w = np.array([eff[order[sid]] for sid, _ in others])
                        w = w / w.sum()
                        picks = rng.choice(len(others), size=size, replace=False, p=w)
                    else:
                        picks = rng.choice(len(others), size=size, replace=False)
                    companions = [others[j][1] for j in picks]
            filler = FILLER_WORDS[int(rng.integers(len(FILLER_WORDS)))]
            body_terms = matched + companions
            snippet = (
                f"{intent_label} near {location} with "
                + " and ".join(body_terms)
                + " "
                + filler
            )
            docs.append(
                Document(
                    title=f"{intent_label} in {location} pick {i + 1}",
                    url=f"https://docs.example/{digest[:6].hex()}/{i}",
                    snippet=snippet,
                )
            )
        return docs


def synthetic_corpus_texts(
    ontology: IntentOntology,
    provider: SyntheticSearchProvider,
    locations: Sequence[str] = LOCATION_POOL,
    per_query: int = 5,
) -> list[str]:
    texts = []
    for query in corpus_queries(ontology, locations):
        for doc in provider.search(query, per_query):
            texts.append(doc.title + " " + doc.snippet)
    return texts


def refinement_report(
    config: SimConfig,
    embed_dim: int = 48,
    sim_threshold: float = 0.35,
    per_query: int = 5,
    corpus_locations: Sequence[str] | None = None,
) -> tuple[QppReport, list[RefinementPair]]:
    """Run sessions, build the synthetic corpus, and score the refinement.

    Returns the metric report comparing refined requests against their
    originals plus the aligned text pairs it was computed from.
    """
    run = simulate_sessions(config)
    pairs = refine_request_corpus(run.traces)
    user = SyntheticUserModel(config, run.engine.ontology)
    provider = SyntheticSearchProvider(run.engine.ontology, seed=config.seed, user=user)
    locations = list(corpus_locations) if corpus_locations is not None else [LOCATION_POOL[0]]
    texts = synthetic_corpus_texts(run.engine.ontology, provider, locations, per_query)
    stats = index_texts(texts)
    index = cooccurrence_index(texts, dim=embed_dim)
    report = compare_requests(
        [p.original for p in pairs],
        [p.refined for p in pairs],
        stats,
        index,
        groups=[p.breadth for p in pairs],
        sim_threshold=sim_threshold,
    )
    return report, pairs
