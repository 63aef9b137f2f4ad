"""Slot elicitation policies over per-arm online ridge models.

One model serves one (topic, intent) pair; its arms are that pair's slots.
Every score-based policy shares the same base learner, a ridge regression
per arm updated in closed form with rank-1 inverse updates, so policies
differ only in how they turn scores into an ordering:

  epsilon_greedy        decaying chance of a uniform shuffle, else greedy
  adaptive_greedy       explore when the best score sits below a moving
                        percentile of recent best scores (threshold decays)
  adaptive_active_greedy same gate, but exploration puts the least-observed
                        arm first and fills the rest greedily
  softmax_explorer      Gumbel-perturbed scores, temperature 1.0
  bootstrapped_ucb      percentile over bootstrap resamples of each arm
  bootstrapped_ts       one sampled resample per arm per decision
  popularity_baseline   frequency ranking, ignores the context entirely
  uniform_random        pure shuffle, used as a logging/reference policy

Contexts are augmented with a constant bias feature so each arm learns its
base selection rate directly. A pseudo-count prior on that feature makes
fresh arms predict an optimistic value that decays with real observations,
so cold or unlucky arms are revisited rather than starved by greedy
exploitation.

Two independent RNG streams keep replay honest: suggestions draw from one
stream, updates from the other, so replaying the update log reproduces the
learned state exactly without re-running the suggestion draws.
"""

from __future__ import annotations

import hashlib
import json
import zlib
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..errors import StateError, ValidationError
from .context import ContextVector

POLICY_KINDS = (
    "epsilon_greedy",
    "adaptive_greedy",
    "adaptive_active_greedy",
    "softmax_explorer",
    "bootstrapped_ucb",
    "bootstrapped_ts",
    "popularity_baseline",
    "uniform_random",
)

_SCORELESS_KINDS = ("popularity_baseline", "uniform_random")
_BOOTSTRAP_KINDS = ("bootstrapped_ucb", "bootstrapped_ts")
_ADAPTIVE_KINDS = ("adaptive_greedy", "adaptive_active_greedy")

CHECKPOINT_VERSION = 1
MIN_WINDOW_FILL = 10

# Pseudo-observation budget behind the optimism prior; kept independent of
# ridge_lambda so shrinkage strength and optimism half-life tune separately.
OPTIMISM_STRENGTH = 10.0


@dataclass(frozen=True)
class PolicyConfig:
    kind: str = "adaptive_active_greedy"
    epsilon: float = 0.1
    epsilon_decay: float = 0.9997
    softmax_temperature: float = 1.0
    percentile: float = 80.0
    threshold_decay: float = 0.9997
    window: int = 100
    n_bootstrap: int = 10
    # One-hot context bits carry little signal per coordinate next to the
    # arm's base rate, so context weights get strong shrinkage.
    ridge_lambda: float = 200.0
    optimism: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in POLICY_KINDS:
            raise ValidationError(f"unknown policy kind {self.kind!r}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValidationError("epsilon must lie in [0, 1]")
        if self.softmax_temperature <= 0.0:
            raise ValidationError("softmax temperature must be positive")
        if self.n_bootstrap < 1:
            raise ValidationError("n_bootstrap must be at least 1")
        if self.ridge_lambda <= 0.0:
            raise ValidationError("ridge_lambda must be positive")
        if not 0.0 <= self.optimism < 1.0:
            raise ValidationError("optimism must lie in [0, 1)")
        if self.window < 1:
            raise ValidationError("window must be at least 1")


def rank_by_score(scores: dict[str, float]) -> list[str]:
    """Descending score order with lexicographic tie breaks."""
    return sorted(scores, key=lambda s: (-scores[s], s))


def _with_bias(x: np.ndarray) -> np.ndarray:
    """Append a constant feature so each arm learns its base rate directly."""
    return np.append(x, 1.0)


class LinearArm:
    """Online ridge regression, optionally replicated for bootstrapping.

    Keeps the inverse of A = lambda*I + sum(w x x^T) directly; an update
    with example weight w is a rank-1 correction, O(d^2).

    bias_prior_weight > 0 replaces the ridge penalty on the final (bias)
    coordinate with that many pseudo-observations of the pure bias context
    at reward bias_prior_mean. A fresh arm then predicts bias_prior_mean
    exactly and converges to its empirical rate as real observations
    arrive, at a pace independent of the context-weight shrinkage. Greedy
    policies revisit under-observed arms instead of abandoning them after
    one bad draw.
    """

    def __init__(
        self,
        dim: int,
        ridge_lambda: float,
        n_models: int = 1,
        bias_prior_weight: float = 0.0,
        bias_prior_mean: float = 0.0,
    ):
        self.dim = dim
        self.n_models = n_models
        self.a_inv = [np.eye(dim) / ridge_lambda for _ in range(n_models)]
        self.b = [np.zeros(dim) for _ in range(n_models)]
        self.theta = [np.zeros(dim) for _ in range(n_models)]
        self.count = 0
        if bias_prior_weight > 0.0:
            e = np.zeros(dim)
            e[-1] = 1.0
            for j in range(n_models):
                self.a_inv[j][-1, -1] = 1.0 / bias_prior_weight
                self.b[j] = (bias_prior_weight * bias_prior_mean) * e
                self.theta[j] = self.a_inv[j] @ self.b[j]

    def predict(self, x: np.ndarray, model: int = 0) -> float:
        return float(self.theta[model] @ x)

    def predict_all(self, x: np.ndarray) -> np.ndarray:
        return np.array([t @ x for t in self.theta])

    def update(self, x: np.ndarray, reward: float, weights: Sequence[float]) -> None:
        if len(weights) != self.n_models:
            raise ValidationError("one weight per bootstrap model is required")
        for j, w in enumerate(weights):
            if w == 0:
                continue
            a_inv = self.a_inv[j]
            ax = a_inv @ x
            denom = 1.0 + w * float(x @ ax)
            self.a_inv[j] = a_inv - np.outer(ax, ax) * (w / denom)
            self.b[j] = self.b[j] + (w * reward) * x
            self.theta[j] = self.a_inv[j] @ self.b[j]
        self.count += 1


def _stream_rng(seed: int, topic_id: str, intent_id: str, stream: int) -> np.random.Generator:
    key = zlib.crc32(f"{topic_id}/{intent_id}".encode("utf-8"))
    return np.random.default_rng([seed, key, stream])


class BanditModel:
    """Policy state for one (topic, intent) pair."""

    def __init__(
        self,
        topic_id: str,
        intent_id: str,
        slot_ids: Sequence[str],
        dim: int,
        config: PolicyConfig,
    ):
        if not slot_ids:
            raise ValidationError("a bandit model needs at least one arm")
        if len(set(slot_ids)) != len(slot_ids):
            raise ValidationError("arm slot ids must be distinct")
        if dim < 1:
            raise ValidationError("context dim must be positive")
        self.topic_id = topic_id
        self.intent_id = intent_id
        self.slot_ids = list(slot_ids)
        self.dim = dim
        self.config = config
        self.updates = 0
        n_models = config.n_bootstrap if config.kind in _BOOTSTRAP_KINDS else 1
        self._arms: dict[str, LinearArm] = {}
        if config.kind not in _SCORELESS_KINDS:
            # One extra weight holds the bias feature appended to every
            # context. The pseudo-count prior makes a fresh arm predict
            # config.optimism, fading over tens of observations.
            weight = OPTIMISM_STRENGTH if config.optimism > 0.0 else 0.0
            self._arms = {
                s: LinearArm(
                    dim + 1, config.ridge_lambda, n_models, weight, config.optimism
                )
                for s in self.slot_ids
            }
        self._obs: dict[str, int] = {s: 0 for s in self.slot_ids}
        self._pop: dict[str, int] = {s: 0 for s in self.slot_ids}
        self._window: deque[float] = deque(maxlen=config.window)
        self._rng_suggest = _stream_rng(config.seed, topic_id, intent_id, 1)
        self._rng_update = _stream_rng(config.seed, topic_id, intent_id, 2)

    # -- scoring ---------------------------------------------------------

    def scores(self, context: ContextVector, slot_ids: Sequence[str] | None = None) -> dict[str, float]:
        if context.dim != self.dim:
            raise ValidationError(f"context dim {context.dim} does not match model dim {self.dim}")
        if self.config.kind in _SCORELESS_KINDS:
            raise StateError(f"{self.config.kind} has no score model")
        ids = self.slot_ids if slot_ids is None else list(slot_ids)
        x = _with_bias(context.values)
        return {s: self._arms[s].predict(x) for s in ids}

    def _ordering(self, context: ContextVector, eligible: list[str]) -> list[str]:
        kind = self.config.kind
        rng = self._rng_suggest
        if kind == "uniform_random":
            return [eligible[i] for i in rng.permutation(len(eligible))]
        if kind == "popularity_baseline":
            return sorted(eligible, key=lambda s: (-self._pop[s], s))
        x = _with_bias(context.values)
        if kind == "epsilon_greedy":
            eps = self.config.epsilon * self.config.epsilon_decay**self.updates
            draw = rng.random()
            if draw < eps:
                return [eligible[i] for i in rng.permutation(len(eligible))]
            scores = self.scores(context, eligible)
            return rank_by_score(scores)
        if kind == "softmax_explorer":
            scores = self.scores(context, eligible)
            gumbel = rng.gumbel(size=len(eligible))
            keyed = {
                s: scores[s] / self.config.softmax_temperature + g
                for s, g in zip(eligible, gumbel)
            }
            return rank_by_score(keyed)
        if kind in _ADAPTIVE_KINDS:
            scores = self.scores(context, eligible)
            best = max(scores.values())
            explore = True
            if len(self._window) >= MIN_WINDOW_FILL:
                threshold = float(np.percentile(list(self._window), self.config.percentile))
                threshold *= self.config.threshold_decay**self.updates
                explore = best < threshold
            if not explore:
                return rank_by_score(scores)
            if kind == "adaptive_active_greedy":
                # Spend one slate position on the least-observed arm and
                # keep earning with the greedy rest.
                least = min(eligible, key=lambda s: (self._obs[s], s))
                rest = [s for s in rank_by_score(scores) if s != least]
                return [least] + rest
            return [eligible[i] for i in rng.permutation(len(eligible))]
        if kind == "bootstrapped_ucb":
            keyed = {}
            for s in eligible:
                preds = self._arms[s].predict_all(x)
                keyed[s] = float(np.percentile(preds, self.config.percentile))
            return rank_by_score(keyed)
        if kind == "bootstrapped_ts":
            keyed = {}
            for s in eligible:
                idx = int(rng.integers(self.config.n_bootstrap))
                keyed[s] = self._arms[s].predict(x, idx)
            return rank_by_score(keyed)
        raise ValidationError(f"unknown policy kind {kind!r}")

    def suggest(
        self, context: ContextVector, k: int, exclude: Iterable[str] = ()
    ) -> list[str]:
        """Up to k distinct eligible arms in policy order."""
        if k < 1:
            raise ValidationError("k must be at least 1")
        excluded = set(exclude)
        eligible = [s for s in self.slot_ids if s not in excluded]
        if not eligible:
            return []
        return self._ordering(context, eligible)[: min(k, len(eligible))]

    def update(
        self, context: ContextVector, shown: Sequence[str], selected: Iterable[str]
    ) -> None:
        """Apply one step of feedback: binary reward per shown arm."""
        selected_set = set(selected)
        shown = list(shown)
        if not shown:
            raise ValidationError("shown must be non-empty")
        if len(set(shown)) != len(shown):
            raise ValidationError("shown arms must be distinct")
        unknown = [s for s in shown if s not in self._obs]
        if unknown:
            raise ValidationError(f"unknown arms in shown: {unknown}")
        stray = selected_set - set(shown)
        if stray:
            raise ValidationError(f"selected arms not shown: {sorted(stray)}")
        kind = self.config.kind
        if kind in _ADAPTIVE_KINDS:
            # Pre-update predictions feed the adaptive threshold window.
            preds = self.scores(context, shown)
            self._window.append(max(preds.values()))
        x = _with_bias(context.values)
        for s in shown:
            reward = 1.0 if s in selected_set else 0.0
            self._obs[s] += 1
            if kind == "popularity_baseline":
                self._pop[s] += int(reward)
                continue
            if kind == "uniform_random":
                continue
            if kind in _BOOTSTRAP_KINDS:
                weights = self._rng_update.poisson(1.0, self.config.n_bootstrap)
            else:
                weights = [1.0]
            self._arms[s].update(x, reward, weights)
        self.updates += 1

    # -- evaluation interface -------------------------------------------

    def greedy_action(self, context: ContextVector, candidates: Sequence[str] | None = None) -> str:
        """Highest-scoring candidate; popularity ranks by frequency."""
        cands = list(candidates) if candidates is not None else list(self.slot_ids)
        if not cands:
            raise ValidationError("no candidate arms")
        if self.config.kind == "popularity_baseline":
            return sorted(cands, key=lambda s: (-self._pop[s], s))[0]
        if self.config.kind == "uniform_random":
            return cands[int(self._rng_suggest.integers(len(cands)))]
        return rank_by_score(self.scores(context, cands))[0]

    def action_probabilities(
        self, context: ContextVector, candidates: Sequence[str] | None = None
    ) -> dict[str, float]:
        """The probability the policy plays each candidate as its top arm.

        Exact for the uniform, epsilon-greedy, and softmax families; the
        remaining kinds are treated as their greedy argmax.
        """
        cands = list(candidates) if candidates is not None else list(self.slot_ids)
        if not cands:
            raise ValidationError("no candidate arms")
        kind = self.config.kind
        m = len(cands)
        if kind == "uniform_random":
            return {s: 1.0 / m for s in cands}
        if kind == "popularity_baseline":
            top = sorted(cands, key=lambda s: (-self._pop[s], s))[0]
            return {s: 1.0 if s == top else 0.0 for s in cands}
        scores = self.scores(context, cands)
        if kind == "epsilon_greedy":
            eps = self.config.epsilon * self.config.epsilon_decay**self.updates
            top = rank_by_score(scores)[0]
            return {s: eps / m + (1.0 - eps) * (1.0 if s == top else 0.0) for s in cands}
        if kind == "softmax_explorer":
            vals = np.array([scores[s] for s in cands]) / self.config.softmax_temperature
            vals -= vals.max()
            exp = np.exp(vals)
            probs = exp / exp.sum()
            return {s: float(p) for s, p in zip(cands, probs)}
        top = rank_by_score(scores)[0]
        return {s: 1.0 if s == top else 0.0 for s in cands}

    # -- persistence ------------------------------------------------------

    def state_fingerprint(self) -> str:
        """Hash of the learned state, excluding the suggestion RNG."""
        payload = {
            "slot_ids": self.slot_ids,
            "updates": self.updates,
            "obs": self._obs,
            "pop": self._pop,
            "window": [round(v, 12) for v in self._window],
            "arms": {
                s: {
                    "count": arm.count,
                    "b": [[round(float(v), 10) for v in b] for b in arm.b],
                    "theta": [[round(float(v), 10) for v in t] for t in arm.theta],
                }
                for s, arm in self._arms.items()
            },
        }
        blob = json.dumps(payload, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def to_checkpoint(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "topic_id": self.topic_id,
            "intent_id": self.intent_id,
            "slot_ids": self.slot_ids,
            "dim": self.dim,
            "config": asdict(self.config),
            "updates": self.updates,
            "obs": self._obs,
            "pop": self._pop,
            "window": list(self._window),
            "arms": {
                s: {
                    "count": arm.count,
                    "a_inv": [m.tolist() for m in arm.a_inv],
                    "b": [v.tolist() for v in arm.b],
                }
                for s, arm in self._arms.items()
            },
            "rng_suggest": self._rng_suggest.bit_generator.state,
            "rng_update": self._rng_update.bit_generator.state,
        }

    @classmethod
    def from_checkpoint(cls, data: dict) -> "BanditModel":
        if data.get("version") != CHECKPOINT_VERSION:
            raise ValidationError(f"unsupported checkpoint version {data.get('version')!r}")
        config = PolicyConfig(**data["config"])
        model = cls(data["topic_id"], data["intent_id"], data["slot_ids"], data["dim"], config)
        model.updates = int(data["updates"])
        model._obs = {s: int(v) for s, v in data["obs"].items()}
        model._pop = {s: int(v) for s, v in data["pop"].items()}
        model._window = deque(data["window"], maxlen=config.window)
        for s, arm_data in data["arms"].items():
            arm = model._arms[s]
            arm.count = int(arm_data["count"])
            arm.a_inv = [np.asarray(m, dtype=float) for m in arm_data["a_inv"]]
            arm.b = [np.asarray(v, dtype=float) for v in arm_data["b"]]
            arm.theta = [ai @ b for ai, b in zip(arm.a_inv, arm.b)]
        model._rng_suggest.bit_generator.state = data["rng_suggest"]
        model._rng_update.bit_generator.state = data["rng_update"]
        return model


class BanditRegistry:
    """Lazily creates one model per (topic, intent) pair."""

    def __init__(self, config: PolicyConfig):
        self.config = config
        self._models: dict[tuple[str, str], BanditModel] = {}

    def get(self, topic_id: str, intent_id: str) -> BanditModel | None:
        return self._models.get((topic_id, intent_id))

    def get_or_create(
        self, topic_id: str, intent_id: str, slot_ids: Sequence[str], dim: int
    ) -> BanditModel:
        key = (topic_id, intent_id)
        model = self._models.get(key)
        if model is None:
            model = BanditModel(topic_id, intent_id, slot_ids, dim, self.config)
            self._models[key] = model
        return model

    def items(self) -> list[tuple[tuple[str, str], BanditModel]]:
        return list(self._models.items())

    def fingerprints(self) -> dict[str, str]:
        return {f"{t}/{i}": m.state_fingerprint() for (t, i), m in self._models.items()}

    def save(self, directory) -> None:
        from pathlib import Path

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for (topic_id, intent_id), model in self._models.items():
            path = directory / f"{topic_id}__{intent_id}.json"
            path.write_text(json.dumps(model.to_checkpoint()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, directory, config: PolicyConfig | None = None) -> "BanditRegistry":
        from pathlib import Path

        directory = Path(directory)
        registry = None
        for path in sorted(directory.glob("*.json")):
            data = json.loads(path.read_text(encoding="utf-8"))
            model = BanditModel.from_checkpoint(data)
            if registry is None:
                registry = cls(config or model.config)
            registry._models[(model.topic_id, model.intent_id)] = model
        if registry is None:
            registry = cls(config or PolicyConfig())
        return registry


def popularity_suggest(
    profile,
    topic_id: str,
    intent_id: str,
    exclusions: Iterable[str] = (),
    k: int = 3,
) -> list[str]:
    """Rank the pair's slots by profile probability, skipping exclusions."""
    if k < 1:
        raise ValidationError("k must be at least 1")
    dist = profile.distribution(topic_id, intent_id)
    excluded = set(exclusions)
    eligible = {s: p for s, p in dist.items() if s not in excluded}
    return rank_by_score(eligible)[:k]
