"""Shared fixtures: a small hand-built ontology, fixture providers, and a
frozen 20-document corpus for metric verification."""

from __future__ import annotations

import json

import numpy as np
import pytest

from intentloop.embedding import HashEmbeddingProvider, cooccurrence_index
from intentloop.nlu import FewShotExample, FixtureCompletionProvider
from intentloop.ontology import IntentOntology, IntentProfile
from intentloop.retrieval import FixtureSearchProvider
from intentloop.session import Engine, EngineConfig

HIKING_REQUEST = (
    "find hiking trails around astoria that are accessible with toddlers "
    "and have beautiful scenery"
)

HIKING_COMPLETION = json.dumps(
    {
        "topic": "activity",
        "intent": "hike",
        "slots": [
            {"label": "toddler friendly", "aspect": "accessible with toddlers"},
            {"label": "beautiful scenery", "aspect": "beautiful scenery"},
        ],
        "location": "astoria",
    }
)


def make_mapping_examples(n: int = 400, seed: int = 6) -> list:
    """Noise-free training pairs where the inputs determine the target slot.

    Twelve slots and a fixed pool of thirty input combinations; the target
    of each combination is the free slot indexed by the sum of the active
    indices. Rows are drawn from the pool with repetition, so a correct
    learner can reach perfect recall on any split.
    """
    from intentloop.bandit import PredictorExample

    slot_ids = [f"s{j:02d}" for j in range(12)]
    rng = np.random.default_rng(seed)
    pool = []
    while len(pool) < 30:
        k = int(rng.integers(2, 4))
        chosen = tuple(sorted(rng.choice(len(slot_ids), size=k, replace=False).tolist()))
        if chosen not in pool:
            pool.append(chosen)
    examples = []
    for _ in range(n):
        chosen = pool[int(rng.integers(len(pool)))]
        free = [j for j in range(len(slot_ids)) if j not in chosen]
        target = free[sum(chosen) % len(free)]
        examples.append(
            PredictorExample(
                input_slot_ids=tuple(slot_ids[j] for j in chosen),
                target_slot_ids=(slot_ids[target],),
            )
        )
    return examples


def build_hiking_ontology() -> IntentOntology:
    onto = IntentOntology()
    onto.add_topic("activity", "outdoor activities")
    onto.add_intent("activity", "hike", "hiking trails")
    onto.add_slot("activity", "hike", "parking", "access to parking")
    onto.add_slot("activity", "hike", "scenery", "scenery")
    onto.add_slot("activity", "hike", "toddler", "toddler friendly")
    onto.add_slot("activity", "hike", "length", "trail length")
    onto.add_intent("activity", "camp", "campgrounds")
    onto.add_slot("activity", "camp", "firepit", "firepit")
    onto.add_topic("dining", "dining out")
    onto.add_intent("dining", "restaurant", "restaurant")
    onto.add_slot("dining", "restaurant", "seating", "outdoor seating")
    onto.add_slot("dining", "restaurant", "vegan", "vegan options")
    return onto


@pytest.fixture
def ontology() -> IntentOntology:
    return build_hiking_ontology()


@pytest.fixture
def profile(ontology) -> IntentProfile:
    return IntentProfile(ontology)


@pytest.fixture
def skewed_profile(ontology) -> IntentProfile:
    # hike: P(parking)=0.4, P(scenery)=0.3, P(toddler)=0.2, P(length)=0.1
    prof = IntentProfile(ontology)
    for slot_id, count in (("parking", 4), ("scenery", 3), ("toddler", 2), ("length", 1)):
        prof.record_interaction("activity", "hike", [slot_id] * count)
    return prof


@pytest.fixture
def elicit_profile(ontology) -> IntentProfile:
    # hike is dominated by parking, so a request naming only the two rare
    # slots starts well below the stopping threshold and opens refinement.
    prof = IntentProfile(ontology)
    for slot_id, count in (("parking", 8), ("scenery", 1), ("toddler", 1), ("length", 2)):
        prof.record_interaction("activity", "hike", [slot_id] * count)
    return prof


@pytest.fixture
def embedder() -> HashEmbeddingProvider:
    return HashEmbeddingProvider(dim=64, seed=0)


@pytest.fixture
def completion_provider() -> FixtureCompletionProvider:
    mapping = {FixtureCompletionProvider.key_for(HIKING_REQUEST): HIKING_COMPLETION}
    return FixtureCompletionProvider(mapping=mapping)


@pytest.fixture
def few_shot_examples() -> list[FewShotExample]:
    return [
        FewShotExample(
            request_text="easy hiking trails with good parking",
            topic="activity",
            intent="hike",
            slots=(("access to parking", None),),
        ),
        FewShotExample(
            request_text="restaurant with a patio",
            topic="dining",
            intent="restaurant",
            slots=(("outdoor seating", None),),
        ),
    ]


def _docs(*rows: tuple[str, str, str]) -> list[dict]:
    return [{"title": t, "url": u, "snippet": s} for t, u, s in rows]


@pytest.fixture
def search_provider() -> FixtureSearchProvider:
    mapping = {
        "hiking trails with toddler friendly in astoria": _docs(
            ("Gentle loop", "https://ex.test/a", "toddler friendly boardwalk with scenery"),
            ("Creek walk", "https://ex.test/b", "flat path, toddler friendly"),
        ),
        "hiking trails with scenery in astoria": _docs(
            ("Ridge view", "https://ex.test/c", "sweeping scenery at the summit"),
            ("Gentle loop", "https://ex.test/a", "toddler friendly boardwalk with scenery"),
        ),
        "hiking trails with access to parking in astoria": _docs(
            ("Trailhead lot", "https://ex.test/d", "access to parking at the gate"),
        ),
    }
    return FixtureSearchProvider(mapping=mapping)


@pytest.fixture
def engine(ontology, elicit_profile, embedder, completion_provider,
           few_shot_examples, search_provider) -> Engine:
    clock = {"t": 1_700_000_000.0}
    counter = {"n": 0}

    def tick() -> float:
        clock["t"] += 1.0
        return clock["t"]

    def next_id() -> str:
        counter["n"] += 1
        return f"test-{counter['n']:04d}"

    return Engine(
        ontology,
        profile=elicit_profile,
        config=EngineConfig(),
        completion_provider=completion_provider,
        embedder=embedder,
        search_provider=search_provider,
        few_shot_examples=few_shot_examples,
        clock=tick,
        id_factory=next_id,
    )


# -- frozen qpp corpus ---------------------------------------------------------

CORPUS_VOCAB = (
    "trail", "summit", "creek", "meadow", "forest", "granite", "switchback",
    "waterfall", "parking", "shade", "dogs", "mileage", "vista", "lake",
    "ridge", "loop", "marsh", "boulder",
)


def make_corpus_texts(n_docs: int = 20, seed: int = 12) -> list[str]:
    rng = np.random.default_rng(seed)
    weights = rng.dirichlet(np.full(len(CORPUS_VOCAB), 0.6))
    texts = []
    for _ in range(n_docs):
        length = int(rng.integers(6, 14))
        words = rng.choice(len(CORPUS_VOCAB), size=length, p=weights)
        texts.append(" ".join(CORPUS_VOCAB[w] for w in words))
    return texts


@pytest.fixture(scope="session")
def corpus_texts() -> list[str]:
    return make_corpus_texts()


@pytest.fixture(scope="session")
def corpus_file(tmp_path_factory, corpus_texts):
    path = tmp_path_factory.mktemp("corpus") / "corpus.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for i, text in enumerate(corpus_texts):
            head, _, tail = text.partition(" ")
            fh.write(json.dumps({
                "query": "fixture",
                "title": head,
                "url": f"https://corpus.test/{i}",
                "snippet": tail,
            }) + "\n")
    return path


@pytest.fixture(scope="session")
def corpus_index(corpus_texts):
    return cooccurrence_index(corpus_texts, dim=16)
