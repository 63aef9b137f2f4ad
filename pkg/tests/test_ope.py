"""Offline estimator behavior on logged decisions: RS and NCIS."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from conftest import build_hiking_ontology
from intentloop.bandit import BanditModel, PolicyConfig
from intentloop.errors import UndefinedEstimateError, ValidationError
from intentloop.ope import (
    LoggedDecision,
    evaluate_policy,
    expand_interaction_log,
    ncis_evaluate,
    online_ground_truth,
    read_decisions,
    rs_evaluate,
    write_decisions,
)
from intentloop.session import InteractionRecord
from intentloop.simulator import SimConfig, SimEnvironment, generate_ontology, simulate_decisions

ARMS = ("a", "b", "c", "d")


def one_hot(i: int, n: int = 4) -> tuple[float, ...]:
    return tuple(1.0 if j == i else 0.0 for j in range(n))


def decision(ctx, action: str, reward: float, propensity: float = 0.25,
             candidates=ARMS) -> LoggedDecision:
    return LoggedDecision(tuple(ctx), action, reward, propensity, candidates)


class ScriptedPolicy:
    """Deterministic greedy stub replaying a context-to-action table."""

    def __init__(self, table: dict[tuple[float, ...], str], default: str = "a"):
        self.table = table
        self.default = default

    def greedy_action(self, context, candidates=None) -> str:
        return self.table.get(tuple(float(v) for v in context.values), self.default)


class TabledProbabilities:
    """Probability stub keyed on the context vector."""

    def __init__(self, table: dict[tuple[float, ...], dict[str, float]]):
        self.table = table

    def action_probabilities(self, context, candidates=None) -> dict[str, float]:
        return dict(self.table[tuple(float(v) for v in context.values)])


def uniform_model(arms=ARMS, seed: int = 0) -> BanditModel:
    config = PolicyConfig(kind="uniform_random", seed=seed)
    return BanditModel("t", "i", arms, dim=len(arms), config=config)


# -- rejection sampling ------------------------------------------------------


def test_full_acceptance_recovers_the_empirical_mean():
    rewards = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0]
    rows = []
    table = {}
    for i, r in enumerate(rewards):
        ctx = tuple(float(i == j) for j in range(6))
        action = ARMS[i % len(ARMS)]
        rows.append(decision(ctx, action, r))
        table[ctx] = action
    result = rs_evaluate(rows, ScriptedPolicy(table))
    assert result.estimate == pytest.approx(np.mean(rewards))
    assert result.accepted == len(rows)
    assert result.n == len(rows)


def test_two_of_four_matches_average_to_one_half():
    rows = [
        decision(one_hot(0), "a", 1.0),
        decision(one_hot(1), "b", 1.0),
        decision(one_hot(2), "c", 0.0),
        decision(one_hot(3), "d", 0.0),
    ]
    table = {one_hot(0): "a", one_hot(1): "d", one_hot(2): "c", one_hot(3): "a"}
    result = rs_evaluate(rows, ScriptedPolicy(table))
    assert result.estimate == pytest.approx(0.5)
    assert result.accepted == 2
    assert result.n == 4


def test_zero_accepted_rows_is_an_undefined_estimate():
    rows = [decision(one_hot(0), "a", 1.0), decision(one_hot(1), "b", 0.0)]
    policy = ScriptedPolicy({}, default="c")
    with pytest.raises(UndefinedEstimateError):
        rs_evaluate(rows, policy)


def test_non_uniform_propensities_are_refused():
    with_cands = decision(one_hot(0), "a", 1.0, propensity=0.3)
    with pytest.raises(ValidationError, match="importance sampling"):
        rs_evaluate([with_cands], ScriptedPolicy({one_hot(0): "a"}))
    bare = LoggedDecision(one_hot(1), "b", 0.0, propensity=0.3, candidates=None)
    with pytest.raises(ValidationError, match="importance sampling"):
        rs_evaluate([bare], ScriptedPolicy({one_hot(1): "b"}))
    # slate fractions k/m pass the same check
    slate = decision(one_hot(2), "c", 1.0, propensity=0.5)
    assert rs_evaluate([slate], ScriptedPolicy({one_hot(2): "c"})).accepted == 1


def test_empty_logs_are_rejected_by_both_estimators():
    policy = uniform_model()
    with pytest.raises(ValidationError):
        rs_evaluate([], policy)
    with pytest.raises(ValidationError):
        ncis_evaluate([], policy)


def test_logged_decision_field_validation():
    with pytest.raises(ValidationError):
        LoggedDecision(one_hot(0), "a", 1.0, propensity=0.0)
    with pytest.raises(ValidationError):
        LoggedDecision(one_hot(0), "a", 1.0, propensity=1.5)
    with pytest.raises(ValidationError):
        LoggedDecision(one_hot(0), "a", 0.5, propensity=0.25)
    with pytest.raises(ValidationError):
        LoggedDecision(one_hot(0), "z", 1.0, propensity=0.25, candidates=ARMS)


def test_acceptance_rate_tracks_the_candidate_count():
    config = SimConfig(seed=3, mention_low=2, mention_high=2)
    ontology = generate_ontology(config)
    topic = ontology.topics()[0]
    intent = ontology.intents(topic.id)[0]
    rows = simulate_decisions(config, 4000, ontology, topic.id, intent.id)
    assert all(len(d.candidates) == 18 for d in rows)
    universe = ontology.slot_ids(topic.id, intent.id)
    policy = uniform_model(arms=universe, seed=9)
    result = rs_evaluate(rows, policy)
    assert abs(result.accepted / result.n - 1.0 / 18.0) < 0.02


# -- importance sampling -----------------------------------------------------


def test_matching_policy_weights_collapse_to_the_empirical_mean():
    rewards = [1.0, 0.0, 0.0, 1.0, 1.0]
    rows = [decision(one_hot(i % 4), ARMS[i % 4], r) for i, r in enumerate(rewards)]
    result = ncis_evaluate(rows, uniform_model())
    assert result.estimate == pytest.approx(np.mean(rewards), abs=1e-12)
    assert result.weight_sum == pytest.approx(len(rows))
    assert result.cap == 10.0


def test_hand_weighted_two_row_estimate():
    rows = [
        decision(one_hot(0), "a", 1.0, propensity=0.25),
        decision(one_hot(1), "b", 0.0, propensity=0.5),
    ]
    table = {
        one_hot(0): {"a": 0.5, "b": 0.5, "c": 0.0, "d": 0.0},
        one_hot(1): {"a": 0.75, "b": 0.25, "c": 0.0, "d": 0.0},
    }
    result = ncis_evaluate(rows, TabledProbabilities(table))
    # w = (0.5/0.25, 0.25/0.5) = (2, 0.5); (2*1 + 0.5*0) / 2.5
    assert result.estimate == pytest.approx(0.8)
    assert result.weight_sum == pytest.approx(2.5)
    assert result.n == 2


def test_the_cap_binds_large_weights():
    rows = [
        decision(one_hot(0), "a", 1.0, propensity=0.25),
        decision(one_hot(1), "b", 0.0, propensity=0.5),
    ]
    table = {
        one_hot(0): {"a": 0.5},
        one_hot(1): {"b": 0.25},
    }
    result = ncis_evaluate(rows, TabledProbabilities(table), cap=1.0)
    assert result.estimate == pytest.approx(1.0 / 1.5)
    assert result.cap == 1.0


def test_infinite_cap_with_a_matching_policy_is_exact():
    rewards = [1.0, 1.0, 0.0]
    rows = [decision(one_hot(i), ARMS[i], r) for i, r in enumerate(rewards)]
    result = ncis_evaluate(rows, uniform_model(), cap=math.inf)
    assert result.estimate == pytest.approx(np.mean(rewards), abs=1e-12)


def test_all_zero_weights_are_an_undefined_estimate():
    rows = [decision(one_hot(0), "a", 1.0)]
    table = {one_hot(0): {"a": 0.0, "b": 1.0}}
    with pytest.raises(UndefinedEstimateError):
        ncis_evaluate(rows, TabledProbabilities(table))


def test_cap_must_be_positive():
    rows = [decision(one_hot(0), "a", 1.0)]
    for cap in (0.0, -2.0):
        with pytest.raises(ValidationError):
            ncis_evaluate(rows, uniform_model(), cap=cap)


def test_estimates_stay_inside_the_logged_reward_range():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        rows = []
        table = {}
        for i in range(30):
            ctx = tuple(float(v) for v in rng.integers(0, 2, size=4))
            ctx = ctx[:i % 4] + (float(i),) + ctx[i % 4 + 1:]
            action = ARMS[int(rng.integers(len(ARMS)))]
            reward = float(rng.integers(0, 2))
            rows.append(decision(ctx, action, reward))
            probs = rng.dirichlet(np.ones(len(ARMS)))
            table[ctx] = {arm: float(p) for arm, p in zip(ARMS, probs)}
        result = ncis_evaluate(rows, TabledProbabilities(table), cap=5.0)
        lo = min(d.reward for d in rows)
        hi = max(d.reward for d in rows)
        assert lo - 1e-12 <= result.estimate <= hi + 1e-12


# -- online ground truth -----------------------------------------------------


class ConstantRewardEnv:
    def __init__(self, reward: float, short: bool = False):
        self.reward = reward
        self.short = short

    def rollout(self, policy, n: int) -> list[float]:
        return [self.reward] * (n - 1 if self.short else n)


def test_always_rewarding_environment_scores_one():
    assert online_ground_truth(uniform_model(), ConstantRewardEnv(1.0), 50) == 1.0


def test_ground_truth_requires_at_least_one_interaction():
    with pytest.raises(ValidationError):
        online_ground_truth(uniform_model(), ConstantRewardEnv(1.0), 0)


def test_short_environment_rollouts_are_rejected():
    with pytest.raises(ValidationError):
        online_ground_truth(uniform_model(), ConstantRewardEnv(1.0, short=True), 10)


def test_same_seed_rollouts_agree():
    config = SimConfig(seed=5)
    ontology = generate_ontology(config)
    topic = ontology.topics()[0]
    intent = ontology.intents(topic.id)[0]
    universe = ontology.slot_ids(topic.id, intent.id)
    policy = uniform_model(arms=universe, seed=2)
    first = online_ground_truth(policy, SimEnvironment(config, ontology, topic.id, intent.id), 300)
    second = online_ground_truth(policy, SimEnvironment(config, ontology, topic.id, intent.id), 300)
    assert first == second
    assert 0.0 <= first <= 1.0


# -- combined report ---------------------------------------------------------


def test_report_carries_both_estimates_and_metadata():
    rewards = [1.0, 0.0, 1.0, 0.0]
    rows = [decision(one_hot(i), ARMS[i], r) for i, r in enumerate(rewards)]
    report = evaluate_policy(rows, uniform_model(), "uniform_random")
    assert set(report) == {"policy", "rs", "ncis", "acceptance", "n", "cap"}
    assert report["policy"] == "uniform_random"
    assert report["n"] == 4
    assert report["cap"] == 10.0
    assert report["ncis"] == pytest.approx(0.5)
    assert report["acceptance"] >= 1


def test_report_flags_assumed_propensities():
    rows = [decision(one_hot(0), "a", 1.0)]
    report = evaluate_policy(rows, uniform_model(), "u", assumed_uniform=True)
    assert report["propensities"] == "assumed uniform over shown arms"


def test_report_degrades_to_ncis_on_non_uniform_logs():
    rows = [decision(one_hot(0), "a", 1.0, propensity=0.3)]
    report = evaluate_policy(rows, uniform_model(), "u")
    assert report["rs"] is None
    assert "importance sampling" in report["rs_error"]
    assert report["ncis"] == pytest.approx(1.0)


# -- decision log IO ---------------------------------------------------------


def test_decision_log_round_trip(tmp_path):
    rows = [
        decision(one_hot(0), "a", 1.0, propensity=0.25),
        LoggedDecision((0.5, 0.5), "b", 0.0, propensity=0.5, candidates=None),
    ]
    path = tmp_path / "decisions.jsonl"
    assert write_decisions(rows, path) == 2
    assert read_decisions(path) == rows


def test_malformed_decision_lines_are_reported(tmp_path):
    bad_json = tmp_path / "bad.jsonl"
    bad_json.write_text('{"context": [1.0], "action"\n', encoding="utf-8")
    with pytest.raises(ValidationError, match="line 1"):
        read_decisions(bad_json)
    missing = tmp_path / "missing.jsonl"
    missing.write_text(json.dumps({"context": [1.0], "reward": 1.0, "propensity": 0.5}) + "\n",
                       encoding="utf-8")
    with pytest.raises(ValidationError, match="line 1"):
        read_decisions(missing)


# -- session log expansion ---------------------------------------------------


def test_session_records_expand_one_row_per_shown_arm():
    ontology = build_hiking_ontology()
    universe = ontology.slot_ids("activity", "hike")
    first = InteractionRecord(
        session_id="s1", step=0, topic_id="activity", intent_id="hike",
        context_scheme="method1", input_slot_ids=("scenery",),
        shown_slot_ids=("parking", "length"), selected_slot_ids=("parking",),
        rejected_slot_ids=("length",), ics_before=0.1, ics_after=0.6, timestamp=1.0,
    )
    second = InteractionRecord(
        session_id="s1", step=1, topic_id="activity", intent_id="hike",
        context_scheme="method1", input_slot_ids=("scenery", "parking"),
        shown_slot_ids=("toddler",), selected_slot_ids=(),
        rejected_slot_ids=("toddler",), ics_before=0.6, ics_after=0.6, timestamp=2.0,
    )
    empty = InteractionRecord(
        session_id="s2", step=0, topic_id="activity", intent_id="hike",
        context_scheme="method1", input_slot_ids=("scenery",),
        shown_slot_ids=(), selected_slot_ids=(), rejected_slot_ids=(),
        ics_before=0.1, ics_after=0.1, timestamp=3.0,
    )
    decisions, assumed = expand_interaction_log([first, second, empty], ontology)
    assert assumed is True
    assert [d.action for d in decisions] == ["parking", "length", "toddler"]
    assert [d.reward for d in decisions] == [1.0, 0.0, 0.0]

    eligible_first = tuple(s for s in universe if s != "scenery")
    assert decisions[0].candidates == eligible_first
    assert decisions[0].propensity == pytest.approx(2.0 / len(eligible_first))
    # the second step excludes the mention plus everything already shown
    assert decisions[2].candidates == ("toddler",)
    assert decisions[2].propensity == 1.0

    bits = decisions[0].context
    assert bits[universe.index("scenery")] == 1.0
    assert sum(bits) == 1.0
    bits2 = decisions[2].context
    assert {universe[i] for i, v in enumerate(bits2) if v == 1.0} == {"scenery", "parking"}

    table = {decisions[0].context: "parking", decisions[2].context: "toddler"}
    result = rs_evaluate(decisions, ScriptedPolicy(table, default="zz"))
    assert result.accepted == 2
    assert result.estimate == pytest.approx(0.5)
