"""Off-policy evaluation of elicitation policies from decision logs.

Two estimators over logged (context, action, reward, propensity) rows:

  rejection sampling   keep rows where the target policy would play the
                       logged action; the mean reward over kept rows is the
                       estimate. Requires uniform logging propensities.
  normalized capped importance sampling
                       weight each row by target probability over propensity,
                       cap the weights, and divide the weighted reward sum
                       by the weight sum. Works for any logged propensities.

A simulator environment provides the online ground truth for comparison.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .bandit import ContextVector
from .errors import UndefinedEstimateError, ValidationError
from .ontology import IntentOntology
from .session import InteractionRecord

DEFAULT_WEIGHT_CAP = 10.0


@dataclass(frozen=True)
class LoggedDecision:
    context: tuple[float, ...]
    action: str
    reward: float
    propensity: float
    candidates: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.propensity <= 1.0:
            raise ValidationError("propensity must lie in (0, 1]")
        if self.reward not in (0.0, 1.0):
            raise ValidationError("reward must be 0 or 1")
        if self.candidates is not None and self.action not in self.candidates:
            raise ValidationError("logged action missing from candidates")


@dataclass
class RsResult:
    estimate: float
    accepted: int
    n: int


@dataclass
class NcisResult:
    estimate: float
    weight_sum: float
    n: int
    cap: float


def _context_vector(decision: LoggedDecision) -> ContextVector:
    return ContextVector(np.asarray(decision.context, dtype=float), "method1")


def _check_uniform(decisions: Sequence[LoggedDecision]) -> None:
    """Every propensity must be a slate fraction k/m over eligible arms."""
    for i, d in enumerate(decisions):
        if d.candidates is not None:
            scaled = d.propensity * len(d.candidates)
            if abs(scaled - round(scaled)) > 1e-6 or round(scaled) < 1:
                raise ValidationError(
                    f"decision {i} propensity {d.propensity} is not uniform over "
                    f"{len(d.candidates)} candidates; use the importance sampling estimator"
                )
        else:
            inv = 1.0 / d.propensity
            if abs(inv - round(inv)) > 1e-6:
                raise ValidationError(
                    f"decision {i} propensity {d.propensity} does not look uniform; "
                    "use the importance sampling estimator"
                )


def rs_evaluate(decisions: Sequence[LoggedDecision], policy) -> RsResult:
    """Rejection sampling estimate of the target policy's mean reward.

    The policy decides its action on each logged context; rows where it
    matches the logged action are kept. Raises when no row is accepted.
    """
    if not decisions:
        raise ValidationError("no decisions to evaluate")
    _check_uniform(decisions)
    kept = []
    for d in decisions:
        context = _context_vector(d)
        cands = list(d.candidates) if d.candidates is not None else None
        chosen = policy.greedy_action(context, cands)
        if chosen == d.action:
            kept.append(d.reward)
    if not kept:
        raise UndefinedEstimateError("rejection sampling accepted no decisions")
    return RsResult(estimate=float(np.mean(kept)), accepted=len(kept), n=len(decisions))


def ncis_evaluate(
    decisions: Sequence[LoggedDecision],
    policy,
    cap: float = DEFAULT_WEIGHT_CAP,
) -> NcisResult:
    """Normalized capped importance sampling estimate.

    weight_i = min(pi(a_i | c_i) / propensity_i, cap); the estimate is
    sum(w r) / sum(w). Raises when every capped weight is zero.
    """
    if not decisions:
        raise ValidationError("no decisions to evaluate")
    if cap <= 0.0:
        raise ValidationError("cap must be positive")
    num = 0.0
    den = 0.0
    for d in decisions:
        context = _context_vector(d)
        cands = list(d.candidates) if d.candidates is not None else None
        probs = policy.action_probabilities(context, cands)
        pi = probs.get(d.action, 0.0)
        w = min(pi / d.propensity, cap)
        num += w * d.reward
        den += w
    if den == 0.0:
        raise UndefinedEstimateError("all importance weights are zero")
    return NcisResult(estimate=num / den, weight_sum=den, n=len(decisions), cap=cap)


def online_ground_truth(policy, env, n: int) -> float:
    """Mean reward over n fresh interactions in a seeded environment."""
    if n < 1:
        raise ValidationError("n must be at least 1")
    rewards = env.rollout(policy, n)
    if len(rewards) != n:
        raise ValidationError("environment returned the wrong number of rewards")
    return float(np.mean(rewards))


def evaluate_policy(
    decisions: Sequence[LoggedDecision],
    policy,
    policy_name: str,
    cap: float = DEFAULT_WEIGHT_CAP,
    assumed_uniform: bool = False,
) -> dict:
    """Both estimators in one JSON-ready report."""
    report: dict = {
        "policy": policy_name,
        "rs": None,
        "ncis": None,
        "acceptance": None,
        "n": len(decisions),
        "cap": cap,
    }
    if assumed_uniform:
        report["propensities"] = "assumed uniform over shown arms"
    try:
        rs = rs_evaluate(decisions, policy)
        report["rs"] = rs.estimate
        report["acceptance"] = rs.accepted
    except (ValidationError, UndefinedEstimateError) as exc:
        report["rs_error"] = str(exc)
    try:
        ncis = ncis_evaluate(decisions, policy, cap=cap)
        report["ncis"] = ncis.estimate
    except (ValidationError, UndefinedEstimateError) as exc:
        report["ncis_error"] = str(exc)
    return report


# -- log IO --------------------------------------------------------------------


def write_decisions(decisions: Iterable[LoggedDecision], path: str | Path) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for d in decisions:
            fh.write(
                json.dumps(
                    {
                        "context": list(d.context),
                        "action": d.action,
                        "reward": d.reward,
                        "propensity": d.propensity,
                        "candidates": list(d.candidates) if d.candidates is not None else None,
                    }
                )
                + "\n"
            )
            n += 1
    return n


def read_decisions(path: str | Path) -> list[LoggedDecision]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"decision line {lineno}: {exc.msg}") from exc
            try:
                out.append(
                    LoggedDecision(
                        context=tuple(float(x) for x in data["context"]),
                        action=data["action"],
                        reward=float(data["reward"]),
                        propensity=float(data["propensity"]),
                        candidates=tuple(data["candidates"]) if data.get("candidates") else None,
                    )
                )
            except KeyError as exc:
                raise ValidationError(f"decision line {lineno} missing {exc}") from exc
    return out


def expand_interaction_log(
    records: Sequence[InteractionRecord],
    ontology: IntentOntology,
) -> tuple[list[LoggedDecision], bool]:
    """One decision row per shown arm, assuming uniform logging.

    Session logs do not carry propensities, so each shown arm is assigned
    k/m where k is the slate size and m the eligible arm count at that
    step. The second return value flags that this assumption was applied.
    """
    decisions = []
    shown_so_far: dict[str, set[str]] = {}
    for record in records:
        universe = ontology.slot_ids(record.topic_id, record.intent_id)
        pos = {s: i for i, s in enumerate(universe)}
        bits = [0.0] * len(universe)
        for s in record.input_slot_ids:
            if s in pos:
                bits[pos[s]] = 1.0
        prior = shown_so_far.setdefault(record.session_id, set())
        blocked = set(record.input_slot_ids) | prior
        eligible = [s for s in universe if s not in blocked]
        m = len(eligible)
        k = len(record.shown_slot_ids)
        if m < 1 or k < 1:
            continue
        propensity = min(1.0, k / m)
        for arm in record.shown_slot_ids:
            decisions.append(
                LoggedDecision(
                    context=tuple(bits),
                    action=arm,
                    reward=1.0 if arm in record.selected_slot_ids else 0.0,
                    propensity=propensity,
                    candidates=tuple(eligible),
                )
            )
        prior.update(record.shown_slot_ids)
    return decisions, True
