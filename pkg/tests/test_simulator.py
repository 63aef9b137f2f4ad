"""Synthetic environment: generated ontologies, users, sessions, streams."""

from __future__ import annotations

import numpy as np
import pytest

from intentloop.errors import ValidationError
from intentloop.simulator import (
    SessionTrace,
    SimConfig,
    SyntheticUserModel,
    compare_policies,
    final_fraction_mean,
    generate_ontology,
    refine_request_corpus,
    simulate_decisions,
    simulate_sessions,
)


def ontology_signature(ontology) -> list[tuple[str, str, tuple[str, ...]]]:
    return [
        (topic.id, intent.id, tuple(ontology.slot_ids(topic.id, intent.id)))
        for topic in ontology.topics()
        for intent in ontology.intents(topic.id)
    ]


def make_trace(selected_labels=(), text="looking for hiking near astoria with parking",
               mentioned=("hiking.parkinga",), breadth="broad") -> SessionTrace:
    return SessionTrace(
        session_id="sim-0-000001",
        request_text=text,
        topic_id="outdoors",
        intent_id="hiking",
        mentioned_slot_ids=tuple(mentioned),
        selected_labels=tuple(selected_labels),
        n_steps=len(selected_labels),
        breadth=breadth,
    )


# -- generated ontology ------------------------------------------------------


def test_default_ontology_has_fourteen_intents_over_two_topics():
    ontology = generate_ontology(SimConfig())
    topics = ontology.topics()
    assert len(topics) == 2
    intents = [i for t in topics for i in ontology.intents(t.id)]
    assert len(intents) == 14
    for topic in topics:
        for intent in ontology.intents(topic.id):
            assert len(ontology.slot_ids(topic.id, intent.id)) == 20


def test_ontology_generation_is_seed_deterministic():
    a = generate_ontology(SimConfig(seed=4))
    b = generate_ontology(SimConfig(seed=4))
    assert ontology_signature(a) == ontology_signature(b)
    c = generate_ontology(SimConfig(seed=5))
    assert ontology_signature(a) != ontology_signature(c)


def test_single_slot_ontology_is_valid():
    ontology = generate_ontology(SimConfig(n_slots_per_intent=1))
    for topic in ontology.topics():
        for intent in ontology.intents(topic.id):
            assert len(ontology.slot_ids(topic.id, intent.id)) == 1


def test_slot_labels_are_unique_single_tokens():
    ontology = generate_ontology(SimConfig())
    labels = [
        ontology.slot(t.id, i.id, s).label
        for t in ontology.topics()
        for i in ontology.intents(t.id)
        for s in ontology.slot_ids(t.id, i.id)
    ]
    assert len(set(labels)) == len(labels)
    assert all(" " not in label for label in labels)


def test_config_bounds_are_enforced():
    bad = [
        {"n_topics": 0},
        {"n_topics": 3},
        {"n_intents": 0},
        {"noise_rate": 1.0},
        {"coupling_strength": -0.5},
        {"concentration": 0.0},
        {"mention_low": 0},
        {"mention_low": 5, "mention_high": 4},
        {"warmup_interactions": -1},
        {"max_steps": 0},
    ]
    for overrides in bad:
        with pytest.raises(ValidationError):
            SimConfig(**overrides)


# -- synthetic users -----------------------------------------------------------


def test_effective_preferences_stay_normalized():
    config = SimConfig(seed=2)
    ontology = generate_ontology(config)
    user = SyntheticUserModel(config, ontology)
    topic = ontology.topics()[0]
    intent = ontology.intents(topic.id)[0]
    universe = ontology.slot_ids(topic.id, intent.id)
    base = user.effective_preferences(topic.id, intent.id, [])
    assert base.sum() == pytest.approx(1.0)
    shifted = user.effective_preferences(topic.id, intent.id, universe[:3])
    assert shifted.sum() == pytest.approx(1.0)
    assert np.all(shifted > 0.0)
    assert not np.allclose(base, shifted)


def test_zero_coupling_ignores_the_active_set():
    config = SimConfig(seed=2, coupling_strength=0.0)
    ontology = generate_ontology(config)
    user = SyntheticUserModel(config, ontology)
    topic = ontology.topics()[0]
    intent = ontology.intents(topic.id)[0]
    universe = ontology.slot_ids(topic.id, intent.id)
    base = user.effective_preferences(topic.id, intent.id, [])
    shifted = user.effective_preferences(topic.id, intent.id, universe[:3])
    assert np.array_equal(base, shifted)


def test_single_slot_user_with_no_noise_always_accepts():
    config = SimConfig(seed=3, n_slots_per_intent=1, noise_rate=0.0)
    ontology = generate_ontology(config)
    user = SyntheticUserModel(config, ontology)
    rng = np.random.default_rng(0)
    for topic in ontology.topics():
        for intent in ontology.intents(topic.id):
            slot = ontology.slot_ids(topic.id, intent.id)[0]
            p = user.selection_probability(topic.id, intent.id, slot, [])
            assert p == pytest.approx(1.0, abs=1e-12)
            for _ in range(20):
                assert user.decide(topic.id, intent.id, [slot], [], rng) == [slot]


def test_unknown_mention_weighting_is_rejected():
    config = SimConfig(seed=1)
    ontology = generate_ontology(config)
    user = SyntheticUserModel(config, ontology)
    topic = ontology.topics()[0]
    intent = ontology.intents(topic.id)[0]
    with pytest.raises(ValidationError):
        user.sample_mentioned(topic.id, intent.id, 2, np.random.default_rng(0), mode="alphabetical")


# -- full sessions ---------------------------------------------------------------


def test_same_seed_runs_produce_identical_logs():
    config = SimConfig(seed=4, n_requests=25)
    first = simulate_sessions(config)
    second = simulate_sessions(config)
    assert [r.to_json_dict() for r in first.records] == [r.to_json_dict() for r in second.records]
    assert first.step_rewards == second.step_rewards
    assert first.traces == second.traces


def test_session_traces_are_consistent_with_the_logs():
    run = simulate_sessions(SimConfig(seed=9, n_requests=30))
    assert len(run.traces) == 30
    assert len(run.step_rewards) == sum(t.n_steps for t in run.traces)
    for trace in run.traces:
        assert trace.session_id.startswith("sim-9-")
        assert trace.n_steps <= SimConfig().max_steps
        expected = "broad" if len(trace.mentioned_slot_ids) <= 3 else "specific"
        assert trace.breadth == expected
    assert all(0.0 <= r <= 1.0 for r in run.step_rewards)


# -- refinement pairs -----------------------------------------------------------


def test_sessions_without_selections_refine_to_themselves():
    pairs = refine_request_corpus([make_trace()])
    assert pairs[0].original == pairs[0].refined


def test_selected_labels_are_appended_in_order():
    trace = make_trace(selected_labels=("viewsa", "shadea"))
    pairs = refine_request_corpus([trace])
    assert pairs[0].refined == trace.request_text + " viewsa shadea"
    assert pairs[0].original == trace.request_text
    assert pairs[0].breadth == "broad"


def test_refinement_pairs_are_deterministic():
    traces = [make_trace(), make_trace(selected_labels=("viewsa",))]
    assert refine_request_corpus(traces) == refine_request_corpus(traces)


# -- policy comparison streams ----------------------------------------------------


def test_oracle_upper_bounds_every_learned_policy():
    kinds = ["oracle", "adaptive_active_greedy", "epsilon_greedy",
             "popularity_baseline", "uniform_random"]
    out = compare_policies(SimConfig(seed=7), kinds, 5000)
    oracle_mean = out["oracle"].mean()
    for kind in kinds[1:]:
        assert oracle_mean >= out[kind].mean()
    assert oracle_mean > out["uniform_random"].mean() + 0.05


def test_uncoupled_users_erase_the_contextual_advantage():
    config = SimConfig(seed=23, coupling_strength=0.0)
    kinds = ["popularity_baseline", "adaptive_active_greedy", "epsilon_greedy"]
    out = compare_policies(config, kinds, 12000)
    pop = final_fraction_mean(out["popularity_baseline"])
    for kind in kinds[1:]:
        advantage = (final_fraction_mean(out[kind]) - pop) / pop
        assert advantage < 0.05


def test_comparison_validates_its_arguments():
    with pytest.raises(ValidationError):
        compare_policies(SimConfig(), ["uniform_random"], 0)
    with pytest.raises(ValidationError):
        compare_policies(SimConfig(), [], 10)


def test_final_fraction_mean_hand_check():
    rewards = np.array([0.0, 0.0, 1.0, 1.0])
    assert final_fraction_mean(rewards, fraction=0.5) == pytest.approx(1.0)
    assert final_fraction_mean(rewards, fraction=1.0) == pytest.approx(0.5)
    with pytest.raises(ValidationError):
        final_fraction_mean(rewards, fraction=0.0)
    with pytest.raises(ValidationError):
        final_fraction_mean(rewards, fraction=1.5)


# -- uniform decision logs --------------------------------------------------------


def test_decision_logs_are_seed_deterministic_and_uniform():
    config = SimConfig(seed=6)
    rows = simulate_decisions(config, 200)
    again = simulate_decisions(config, 200)
    assert rows == again
    for d in rows:
        assert d.propensity == pytest.approx(1.0 / len(d.candidates))
        assert d.action in d.candidates
        assert d.reward in (0.0, 1.0)
    with pytest.raises(ValidationError):
        simulate_decisions(config, 0)
