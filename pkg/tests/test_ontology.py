"""Profile counting, completion scoring, stopping rule, and persistence."""

from __future__ import annotations

import math
import random

import pytest

from intentloop.errors import UnknownReferenceError, ValidationError
from intentloop.ontology import (
    IntentOntology,
    IntentProfile,
    SemanticFrame,
    intent_completion_score,
    load_ontology,
    load_profile,
    save_ontology,
    save_profile,
    should_continue,
)


def two_slot_ontology() -> IntentOntology:
    onto = IntentOntology()
    onto.add_topic("activity", "outdoor activities")
    onto.add_intent("activity", "hike", "hiking trails")
    onto.add_slot("activity", "hike", "parking", "access to parking")
    onto.add_slot("activity", "hike", "scenery", "scenery")
    return onto


def frame_with(onto: IntentOntology, topic: str, intent: str, slot_ids) -> SemanticFrame:
    slots = [(onto.slot(topic, intent, s), None) for s in slot_ids]
    return SemanticFrame(topic_id=topic, intent_id=intent, mentioned_slots=slots)


class TestRecordInteraction:
    def test_single_increment(self, ontology, profile):
        profile.record_interaction("activity", "hike", ["parking"])
        assert profile.count("activity", "hike", "parking") == 1

    def test_additivity(self, ontology, profile):
        profile.record_interaction("activity", "hike", ["parking", "parking", "scenery"])
        profile.record_interaction("activity", "hike", ["parking", "scenery"])
        assert profile.count("activity", "hike", "parking") == 3
        assert profile.count("activity", "hike", "scenery") == 2

    def test_unknown_slot_rejected(self, profile):
        with pytest.raises(UnknownReferenceError):
            profile.record_interaction("activity", "hike", ["no-such-slot"])

    def test_order_commutes(self, ontology):
        ids = ["parking", "scenery", "toddler", "length"]
        rng = random.Random(5)
        batches = [[rng.choice(ids)] for _ in range(40)]
        forward = IntentProfile(ontology)
        backward = IntentProfile(ontology)
        for batch in batches:
            forward.record_interaction("activity", "hike", batch)
        for batch in reversed(batches):
            backward.record_interaction("activity", "hike", batch)
        assert forward.snapshot_counts() == backward.snapshot_counts()


class TestSlotProbability:
    def test_symmetric_counts(self, ontology):
        profile = IntentProfile(ontology)
        profile.record_interaction("activity", "hike", ["parking"] * 2 + ["scenery"] * 2)
        # toddler and length sit at zero, so smoothing spreads mass evenly
        dist = profile.distribution("activity", "hike")
        assert dist["parking"] == dist["scenery"]

    def test_hand_evaluated_frequency(self):
        onto = two_slot_ontology()
        profile = IntentProfile(onto)
        profile.record_interaction("activity", "hike", ["parking"] * 3 + ["scenery"])
        assert profile.slot_probability("activity", "hike", "parking") == pytest.approx(0.75)

    def test_cold_start_uniform(self, ontology, profile):
        for slot_id in ("parking", "scenery", "toddler", "length"):
            assert profile.slot_probability("activity", "hike", slot_id) == pytest.approx(0.25)

    def test_unknown_slot(self, profile):
        with pytest.raises(UnknownReferenceError):
            profile.slot_probability("activity", "hike", "missing")

    def test_normalization_invariant(self, ontology, profile):
        rng = random.Random(7)
        pairs = [("activity", "hike"), ("activity", "camp"), ("dining", "restaurant")]
        for _ in range(200):
            topic, intent = rng.choice(pairs)
            ids = ontology.slot_ids(topic, intent)
            batch = [rng.choice(ids) for _ in range(rng.randint(1, 3))]
            profile.record_interaction(topic, intent, batch)
            total = sum(profile.distribution(topic, intent).values())
            assert total == pytest.approx(1.0, abs=1e-9)


class TestIntentCompletionScore:
    def test_empty_sets(self, ontology, profile):
        frame = frame_with(ontology, "activity", "hike", [])
        assert intent_completion_score(profile, frame, []) == 0.0

    def test_mentioned_only(self):
        onto = two_slot_ontology()
        profile = IntentProfile(onto)
        profile.record_interaction("activity", "hike", ["parking"] * 3 + ["scenery"])
        frame = frame_with(onto, "activity", "hike", ["parking"])
        assert intent_completion_score(profile, frame, []) == pytest.approx(0.75)

    def test_mentioned_plus_selected(self):
        onto = two_slot_ontology()
        profile = IntentProfile(onto)
        profile.record_interaction("activity", "hike", ["parking"] * 3 + ["scenery"])
        frame = frame_with(onto, "activity", "hike", ["parking"])
        assert intent_completion_score(profile, frame, ["scenery"]) == pytest.approx(1.0)

    def test_overlap_rejected(self, ontology, profile):
        frame = frame_with(ontology, "activity", "hike", ["parking"])
        with pytest.raises(ValidationError):
            intent_completion_score(profile, frame, ["parking"])

    def test_monotone_in_selected(self, ontology):
        profile = IntentProfile(ontology)
        rng = random.Random(3)
        for _ in range(50):
            ids = ontology.slot_ids("activity", "hike")
            profile.record_interaction("activity", "hike", [rng.choice(ids)])
        frame = frame_with(ontology, "activity", "hike", ["parking"])
        remaining = ["scenery", "toddler", "length"]
        prev = intent_completion_score(profile, frame, [])
        for i in range(1, len(remaining) + 1):
            cur = intent_completion_score(profile, frame, remaining[:i])
            assert cur >= prev - 1e-12
            prev = cur

    def test_bounded_by_one(self, ontology):
        profile = IntentProfile(ontology)
        rng = random.Random(11)
        ids = ontology.slot_ids("activity", "hike")
        for _ in range(30):
            profile.record_interaction("activity", "hike", [rng.choice(ids)])
        frame = frame_with(ontology, "activity", "hike", ids[:2])
        score = intent_completion_score(profile, frame, ids[2:])
        assert score <= 1.0 + 1e-9

    def test_duplicate_selections_deduplicated(self):
        onto = two_slot_ontology()
        profile = IntentProfile(onto)
        profile.record_interaction("activity", "hike", ["parking"] * 3 + ["scenery"])
        frame = frame_with(onto, "activity", "hike", [])
        once = intent_completion_score(profile, frame, ["scenery"])
        twice = intent_completion_score(profile, frame, ["scenery", "scenery"])
        assert twice == pytest.approx(once)


class TestStoppingThreshold:
    def test_uniform_is_inverse_count(self, ontology, profile):
        assert profile.stopping_threshold("activity", "hike") == pytest.approx(0.25)
        assert profile.stopping_threshold("activity", "hike") == 1 / 4

    def test_skewed_hand_value(self):
        onto = two_slot_ontology()
        profile = IntentProfile(onto)
        profile.record_interaction("activity", "hike", ["parking"] * 3 + ["scenery"])
        # mean 0.5, population sd 0.25
        assert profile.stopping_threshold("activity", "hike") == pytest.approx(0.75)

    def test_single_slot(self, ontology, profile):
        assert profile.stopping_threshold("activity", "camp") == pytest.approx(1.0)

    def test_within_unit_interval(self, ontology):
        profile = IntentProfile(ontology)
        rng = random.Random(2)
        for _ in range(100):
            ids = ontology.slot_ids("activity", "hike")
            profile.record_interaction("activity", "hike", [rng.choice(ids)])
            threshold = profile.stopping_threshold("activity", "hike")
            assert 0.0 < threshold <= 1.0 + 1e-9

    def test_no_slots_rejected(self, profile):
        with pytest.raises(UnknownReferenceError):
            profile.stopping_threshold("activity", "unknown-intent")


class TestShouldContinue:
    def test_below_threshold_continues(self):
        assert should_continue(0.3, 0.75, step=1, max_steps=6) is True

    def test_above_threshold_stops(self):
        assert should_continue(0.8, 0.75, step=1, max_steps=6) is False

    def test_step_cap_stops(self):
        assert should_continue(0.3, 0.75, step=6, max_steps=6) is False

    def test_negative_step_rejected(self):
        with pytest.raises(ValidationError):
            should_continue(0.3, 0.75, step=-1, max_steps=6)


class TestPersistence:
    def test_ontology_round_trip(self, ontology, tmp_path):
        path = tmp_path / "onto.json"
        save_ontology(ontology, path)
        loaded = load_ontology(path)
        assert [t.id for t in loaded.topics()] == [t.id for t in ontology.topics()]
        assert loaded.slot_ids("activity", "hike") == ontology.slot_ids("activity", "hike")
        assert loaded.slot("activity", "hike", "parking").label == "access to parking"

    def test_malformed_file(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ValidationError):
            load_ontology(path)

    def test_empty_ontology_valid(self, tmp_path):
        path = tmp_path / "empty.json"
        save_ontology(IntentOntology(), path)
        assert load_ontology(path).topics() == []

    def test_profile_round_trip(self, ontology, tmp_path):
        profile = IntentProfile(ontology)
        profile.record_interaction("activity", "hike", ["parking", "scenery", "parking"])
        path = tmp_path / "profile.json"
        save_profile(profile, path)
        loaded = load_profile(path, ontology)
        assert loaded.snapshot_counts() == profile.snapshot_counts()


class TestOntologyStructure:
    def test_duplicate_ids_rejected(self):
        onto = IntentOntology()
        onto.add_topic("a", "a")
        with pytest.raises(ValidationError):
            onto.add_topic("a", "again")
        onto.add_intent("a", "i", "intent")
        with pytest.raises(ValidationError):
            onto.add_intent("a", "i", "again")
        onto.add_slot("a", "i", "s", "slot label")
        with pytest.raises(ValidationError):
            onto.add_slot("a", "i", "s", "other label")
        with pytest.raises(ValidationError):
            onto.add_slot("a", "i", "s2", "Slot Label")

    def test_references_must_resolve(self):
        onto = IntentOntology()
        with pytest.raises(UnknownReferenceError):
            onto.add_intent("ghost", "i", "intent")
        onto.add_topic("a", "a")
        with pytest.raises(UnknownReferenceError):
            onto.add_slot("a", "ghost", "s", "slot")

    def test_version_bumps_on_mutation(self):
        onto = IntentOntology()
        v0 = onto.version
        onto.add_topic("a", "a")
        onto.add_intent("a", "i", "intent")
        onto.add_slot("a", "i", "s", "slot")
        assert onto.version == v0 + 3
