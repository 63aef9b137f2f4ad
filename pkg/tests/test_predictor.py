"""Slot predictor training: generalization, loss trend, persistence."""

from __future__ import annotations

from types import SimpleNamespace

import numpy as np
import pytest

from conftest import make_mapping_examples
from intentloop.bandit import (
    PredictorConfig,
    PredictorExample,
    SlotPredictorModel,
    examples_from_interaction_log,
    top1_recall,
    train_slot_predictor,
)
from intentloop.errors import StateError, ValidationError

UNIVERSE = [f"s{j:02d}" for j in range(12)]


@pytest.fixture(scope="module")
def mapping_model():
    """One training run shared by the generalization and trend tests."""
    examples = make_mapping_examples(n=400, seed=6)
    config = PredictorConfig(epochs=50, embed_dim=24, hidden_dim=32, seed=0)
    model = train_slot_predictor(examples[:320], config, slot_ids=UNIVERSE)
    return model, examples


def test_learned_rule_generalizes_to_held_out_rows(mapping_model):
    model, examples = mapping_model
    assert top1_recall(model, examples[320:]) >= 0.9


def test_training_loss_non_increasing_on_average(mapping_model):
    model, _ = mapping_model
    losses = model.loss_history
    assert len(losses) == 50
    deltas = np.diff(losses)
    assert float(deltas.mean()) <= 0.0
    assert losses[-1] < losses[0]


def test_single_row_overfits_to_near_zero_loss():
    example = PredictorExample(("s00", "s01"), ("s02",))
    config = PredictorConfig(
        epochs=600, embed_dim=8, hidden_dim=8, dropout=0.0, seed=0
    )
    model = train_slot_predictor([example], config, slot_ids=["s00", "s01", "s02"])
    assert model.loss_history[-1] < 0.1
    assert model.top_slot(("s00", "s01")) == "s02"


def test_all_zero_targets_drive_probabilities_below_half():
    rng = np.random.default_rng(0)
    slots = ["a", "b", "c", "d"]
    examples = []
    for _ in range(24):
        k = int(rng.integers(1, 3))
        chosen = rng.choice(slots, size=k, replace=False).tolist()
        examples.append(PredictorExample(tuple(chosen), ()))
    config = PredictorConfig(epochs=200, embed_dim=8, hidden_dim=8, dropout=0.0, seed=1)
    model = train_slot_predictor(examples, config, slot_ids=slots)
    probs = model.predict(("a",))
    assert np.all(probs < 0.5)


def test_input_target_overlap_is_rejected():
    with pytest.raises(ValidationError):
        PredictorExample(("a", "b"), ("b",))


def test_empty_training_set_is_rejected():
    with pytest.raises(ValidationError):
        train_slot_predictor([])


def test_config_validation():
    with pytest.raises(ValidationError):
        PredictorConfig(epochs=0)
    with pytest.raises(ValidationError):
        PredictorConfig(dropout=1.0)
    with pytest.raises(ValidationError):
        PredictorConfig(batch_size=0)
    with pytest.raises(ValidationError):
        SlotPredictorModel([], {}, PredictorConfig())


def test_untrained_model_refuses_to_predict():
    model = SlotPredictorModel(["a", "b"], {}, PredictorConfig())
    with pytest.raises(StateError):
        model.predict(("a",))


def test_save_load_round_trip(tmp_path):
    example = PredictorExample(("s00",), ("s01",), request_text="quiet morning walk")
    config = PredictorConfig(epochs=3, embed_dim=6, hidden_dim=4, seed=0)
    model = train_slot_predictor([example], config, slot_ids=["s00", "s01"])
    path = tmp_path / "predictor.json"
    model.save(path)
    loaded = SlotPredictorModel.load(path)
    assert loaded.trained
    assert loaded.slot_ids == model.slot_ids
    assert loaded.loss_history == model.loss_history
    np.testing.assert_allclose(
        loaded.predict(("s00",), "quiet morning walk"),
        model.predict(("s00",), "quiet morning walk"),
    )


def test_top_slot_breaks_probability_ties_lexicographically():
    example = PredictorExample(("s00",), ("s01",))
    config = PredictorConfig(epochs=1, embed_dim=4, hidden_dim=4, seed=0)
    model = train_slot_predictor([example], config, slot_ids=["s01", "s00", "s02"])
    model.params["w2"][:] = 0.0
    model.params["b2"][:] = 0.0
    # Every slot now sits at probability 0.5.
    assert model.top_slot(("s00",)) == "s00"


def test_pooled_embedding_is_elementwise_max():
    example = PredictorExample(("s00",), ("s01",))
    config = PredictorConfig(epochs=1, embed_dim=5, hidden_dim=4, seed=2)
    model = train_slot_predictor([example], config, slot_ids=["s00", "s01"])
    emb = model.params["slot_emb"]
    expected = np.maximum(emb[model.slot_pos["s00"]], emb[model.slot_pos["s01"]])
    np.testing.assert_allclose(model.pool_slot_embeddings(["s00", "s01"]), expected)
    with pytest.raises(ValidationError):
        model.pool_slot_embeddings(["nope"])


def test_examples_built_from_interaction_records():
    records = [
        SimpleNamespace(input_slot_ids=("a",), selected_slot_ids=("b", "c")),
        SimpleNamespace(input_slot_ids=("b",), selected_slot_ids=()),
    ]
    examples = examples_from_interaction_log(records)
    assert examples[0] == PredictorExample(("a",), ("b", "c"))
    assert examples[1].target_slot_ids == ()


def test_recall_requires_rows_with_targets(mapping_model):
    model, _ = mapping_model
    with pytest.raises(ValidationError):
        top1_recall(model, [])
    with pytest.raises(ValidationError):
        top1_recall(model, [PredictorExample(("s00",), ())])
