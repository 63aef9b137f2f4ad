"""Multi-label slot predictor trained on interaction pairs.

Each training pair maps the slots active at the start of a step (plus the
request words when available) to the slots the user went on to accept.
The network embeds words and slots in 100 dimensions, averages the word
vectors, max-pools the slot vectors, passes the concatenation through one
ReLU layer with dropout, and emits an independent sigmoid per slot. Adam
with learning rate 0.001 and mini-batches of 8, dropout 0.5.

The learned slot embedding table doubles as the pooled slot part of the
richest bandit context encoding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..embedding import tokenize
from ..errors import StateError, ValidationError


@dataclass(frozen=True)
class PredictorExample:
    input_slot_ids: tuple[str, ...]
    target_slot_ids: tuple[str, ...]
    request_text: str = ""

    def __post_init__(self) -> None:
        overlap = set(self.input_slot_ids) & set(self.target_slot_ids)
        if overlap:
            raise ValidationError(f"input and target slots overlap: {sorted(overlap)}")


@dataclass(frozen=True)
class PredictorConfig:
    epochs: int = 40
    hidden_dim: int = 64
    embed_dim: int = 100
    learning_rate: float = 0.001
    batch_size: int = 8
    dropout: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValidationError("epochs must be at least 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError("dropout must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be at least 1")


def examples_from_interaction_log(records: Iterable) -> list[PredictorExample]:
    """Training pairs from session records: active slots to accepted slots."""
    examples = []
    for rec in records:
        examples.append(
            PredictorExample(
                input_slot_ids=tuple(rec.input_slot_ids),
                target_slot_ids=tuple(rec.selected_slot_ids),
            )
        )
    return examples


class _Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float):
        self.lr = lr
        self.beta1 = 0.9
        self.beta2 = 0.999
        self.eps = 1e-8
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            m_hat = self.m[k] / (1 - self.beta1**self.t)
            v_hat = self.v[k] / (1 - self.beta2**self.t)
            params[k] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class SlotPredictorModel:
    def __init__(
        self,
        slot_ids: Sequence[str],
        word_vocab: dict[str, int],
        config: PredictorConfig,
    ):
        if not slot_ids:
            raise ValidationError("the predictor needs at least one slot")
        self.slot_ids = list(slot_ids)
        self.slot_pos = {s: i for i, s in enumerate(self.slot_ids)}
        self.word_vocab = dict(word_vocab)
        self.config = config
        self.trained = False
        self.loss_history: list[float] = []
        d = config.embed_dim
        h = config.hidden_dim
        n = len(self.slot_ids)
        rng = np.random.default_rng(config.seed)
        self.params: dict[str, np.ndarray] = {
            "slot_emb": rng.normal(0.0, 0.1, (n, d)),
            "word_emb": rng.normal(0.0, 0.1, (max(len(word_vocab), 1), d)),
            "w1": rng.normal(0.0, np.sqrt(2.0 / (2 * d)), (2 * d, h)),
            "b1": np.zeros(h),
            "w2": rng.normal(0.0, np.sqrt(2.0 / h), (h, n)),
            "b2": np.zeros(n),
        }

    # -- feature assembly --------------------------------------------------

    def _word_vector(self, text: str) -> tuple[np.ndarray, list[int]]:
        ids = [self.word_vocab[t] for t in tokenize(text) if t in self.word_vocab]
        if not ids:
            return np.zeros(self.config.embed_dim), []
        return self.params["word_emb"][ids].mean(axis=0), ids

    def _slot_pool(self, slot_ids: Sequence[str]) -> tuple[np.ndarray, np.ndarray | None]:
        rows = [self.slot_pos[s] for s in slot_ids if s in self.slot_pos]
        if not rows:
            return np.zeros(self.config.embed_dim), None
        block = self.params["slot_emb"][rows]
        argmax = np.argmax(block, axis=0)
        pooled = block[argmax, np.arange(block.shape[1])]
        return pooled, np.asarray(rows)[argmax]

    def pool_slot_embeddings(self, slot_ids: Sequence[str]) -> np.ndarray:
        """Elementwise max over the slots' learned embeddings."""
        unknown = [s for s in slot_ids if s not in self.slot_pos]
        if unknown:
            raise ValidationError(f"unknown slots: {unknown}")
        pooled, _ = self._slot_pool(slot_ids)
        return pooled

    # -- forward / backward -------------------------------------------------

    def _forward(
        self,
        batch: Sequence[PredictorExample],
        rng: np.random.Generator | None,
    ) -> dict:
        d = self.config.embed_dim
        h_in = np.zeros((len(batch), 2 * d))
        pool_rows = []
        word_rows = []
        for i, ex in enumerate(batch):
            pooled, rows = self._slot_pool(ex.input_slot_ids)
            wvec, wids = self._word_vector(ex.request_text)
            h_in[i, :d] = pooled
            h_in[i, d:] = wvec
            pool_rows.append(rows)
            word_rows.append(wids)
        z1 = h_in @ self.params["w1"] + self.params["b1"]
        a1 = np.maximum(z1, 0.0)
        if rng is not None and self.config.dropout > 0.0:
            keep = 1.0 - self.config.dropout
            mask = (rng.random(a1.shape) < keep) / keep
        else:
            mask = np.ones_like(a1)
        a1d = a1 * mask
        logits = a1d @ self.params["w2"] + self.params["b2"]
        probs = 1.0 / (1.0 + np.exp(-logits))
        return {
            "h_in": h_in,
            "z1": z1,
            "a1d": a1d,
            "mask": mask,
            "probs": probs,
            "pool_rows": pool_rows,
            "word_rows": word_rows,
        }

    def _loss(self, probs: np.ndarray, targets: np.ndarray) -> float:
        eps = 1e-12
        per = -(targets * np.log(probs + eps) + (1 - targets) * np.log(1 - probs + eps))
        return float(per.mean())

    def _backward(self, batch, targets: np.ndarray, cache: dict) -> dict[str, np.ndarray]:
        d = self.config.embed_dim
        bsz, n_out = targets.shape
        dlogits = (cache["probs"] - targets) / (bsz * n_out)
        grads = {
            "w2": cache["a1d"].T @ dlogits,
            "b2": dlogits.sum(axis=0),
        }
        da1 = (dlogits @ self.params["w2"].T) * cache["mask"]
        dz1 = da1 * (cache["z1"] > 0.0)
        grads["w1"] = cache["h_in"].T @ dz1
        grads["b1"] = dz1.sum(axis=0)
        dh_in = dz1 @ self.params["w1"].T
        g_slot = np.zeros_like(self.params["slot_emb"])
        g_word = np.zeros_like(self.params["word_emb"])
        for i in range(bsz):
            rows = cache["pool_rows"][i]
            if rows is not None:
                # Max-pool routes each dimension's gradient to its source row.
                np.add.at(g_slot, (rows, np.arange(d)), dh_in[i, :d])
            wids = cache["word_rows"][i]
            if wids:
                for wid in wids:
                    g_word[wid] += dh_in[i, d:] / len(wids)
        grads["slot_emb"] = g_slot
        grads["word_emb"] = g_word
        return grads

    def _targets(self, batch: Sequence[PredictorExample]) -> np.ndarray:
        y = np.zeros((len(batch), len(self.slot_ids)))
        for i, ex in enumerate(batch):
            for s in ex.target_slot_ids:
                if s in self.slot_pos:
                    y[i, self.slot_pos[s]] = 1.0
        return y

    # -- public API ----------------------------------------------------------

    def predict(self, input_slot_ids: Sequence[str], request_text: str = "") -> np.ndarray:
        """Per-slot selection probabilities, aligned with ``slot_ids``."""
        if not self.trained:
            raise StateError("predictor has not been trained")
        ex = PredictorExample(tuple(input_slot_ids), (), request_text)
        cache = self._forward([ex], rng=None)
        return cache["probs"][0]

    def top_slot(self, input_slot_ids: Sequence[str], request_text: str = "") -> str:
        probs = self.predict(input_slot_ids, request_text)
        order = sorted(range(len(probs)), key=lambda i: (-probs[i], self.slot_ids[i]))
        return self.slot_ids[order[0]]

    def to_json(self) -> dict:
        return {
            "slot_ids": self.slot_ids,
            "word_vocab": self.word_vocab,
            "config": {
                "epochs": self.config.epochs,
                "hidden_dim": self.config.hidden_dim,
                "embed_dim": self.config.embed_dim,
                "learning_rate": self.config.learning_rate,
                "batch_size": self.config.batch_size,
                "dropout": self.config.dropout,
                "seed": self.config.seed,
            },
            "trained": self.trained,
            "loss_history": self.loss_history,
            "params": {k: v.tolist() for k, v in self.params.items()},
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, data: dict) -> "SlotPredictorModel":
        config = PredictorConfig(**data["config"])
        model = cls(data["slot_ids"], data["word_vocab"], config)
        model.params = {k: np.asarray(v, dtype=float) for k, v in data["params"].items()}
        model.trained = bool(data["trained"])
        model.loss_history = list(data["loss_history"])
        return model

    @classmethod
    def load(cls, path: str | Path) -> "SlotPredictorModel":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def train_slot_predictor(
    examples: Sequence[PredictorExample],
    config: PredictorConfig = PredictorConfig(),
    slot_ids: Sequence[str] | None = None,
) -> SlotPredictorModel:
    """Fit the predictor on interaction pairs; returns the trained model.

    The slot universe defaults to the union of slots seen in the examples.
    Epoch losses are recorded on the model for trend monitoring.
    """
    if not examples:
        raise ValidationError("training requires at least one example")
    if slot_ids is None:
        universe: set[str] = set()
        for ex in examples:
            universe.update(ex.input_slot_ids)
            universe.update(ex.target_slot_ids)
        slot_ids = sorted(universe)
    vocab_terms: set[str] = set()
    for ex in examples:
        vocab_terms.update(tokenize(ex.request_text))
    word_vocab = {t: i for i, t in enumerate(sorted(vocab_terms))}
    model = SlotPredictorModel(slot_ids, word_vocab, config)
    rng = np.random.default_rng(config.seed)
    adam = _Adam(model.params, config.learning_rate)
    indices = np.arange(len(examples))
    for _ in range(config.epochs):
        rng.shuffle(indices)
        epoch_losses = []
        for start in range(0, len(indices), config.batch_size):
            batch = [examples[i] for i in indices[start : start + config.batch_size]]
            targets = model._targets(batch)
            cache = model._forward(batch, rng)
            epoch_losses.append(model._loss(cache["probs"], targets))
            grads = model._backward(batch, targets, cache)
            adam.step(model.params, grads)
        model.loss_history.append(float(np.mean(epoch_losses)))
    model.trained = True
    return model


def top1_recall(model: SlotPredictorModel, examples: Sequence[PredictorExample]) -> float:
    """Fraction of examples whose highest-probability slot is a target."""
    if not examples:
        raise ValidationError("recall needs at least one example")
    hits = 0
    for ex in examples:
        if not ex.target_slot_ids:
            continue
        if model.top_slot(ex.input_slot_ids, ex.request_text) in ex.target_slot_ids:
            hits += 1
    denom = sum(1 for ex in examples if ex.target_slot_ids)
    if denom == 0:
        raise ValidationError("recall needs at least one example with targets")
    return hits / denom
