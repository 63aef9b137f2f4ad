"""Operator command line: one binary, one subcommand per pipeline stage.

Exit codes: 0 success, 1 invalid input or flags, 2 provider failure.
Settings resolve as flags over environment variables over the --config
JSON file over built-in defaults. --json switches stdout to a single
machine-readable JSON document.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from .bandit import (
    BanditModel,
    PolicyConfig,
    PredictorConfig,
    examples_from_interaction_log,
    top1_recall,
    train_slot_predictor,
)
from .errors import IntentLoopError, TransportError
from .ontology import load_ontology, load_profile
from .ope import DEFAULT_WEIGHT_CAP, evaluate_policy, expand_interaction_log, read_decisions
from .session import read_interaction_log, replay_interaction_log, write_interaction_log

POLICY_CHOICES = (
    "epsilon_greedy",
    "adaptive_greedy",
    "adaptive_active_greedy",
    "softmax_explorer",
    "bootstrapped_ucb",
    "bootstrapped_ts",
    "popularity_baseline",
    "uniform_random",
)


class _Parser(argparse.ArgumentParser):
    """argparse with the documented exit code for bad usage."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError("config file must hold a JSON object")
    return data


def _resolve(flag, env_name: str, key: str, cfg: dict, default, cast=str):
    """flags > environment > config file > default."""
    if flag is not None:
        return flag
    if env_name and os.environ.get(env_name):
        return cast(os.environ[env_name])
    if key in cfg:
        return cast(cfg[key])
    return default


def _emit(args, payload: dict, text_lines: list[str]) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        for line in text_lines:
            print(line)


def _sim_config(args):
    from .simulator import SimConfig

    return SimConfig(
        seed=args.seed,
        n_topics=args.topics,
        n_intents=args.intents,
        n_slots_per_intent=args.slots,
        n_requests=args.requests,
        coupling_strength=args.coupling,
        noise_rate=args.noise,
        slate_size=args.slate,
        warmup_interactions=args.warmup,
        max_steps=args.max_steps,
    )


def _add_sim_shape_flags(parser, requests_default: int = 100) -> None:
    parser.add_argument("--seed", type=int, default=0, help="master random seed")
    parser.add_argument("--topics", type=int, default=2)
    parser.add_argument("--intents", type=int, default=14)
    parser.add_argument("--slots", type=int, default=20, help="slots per intent")
    parser.add_argument("--requests", type=int, default=requests_default)
    parser.add_argument("--coupling", type=float, default=3.0)
    parser.add_argument("--noise", type=float, default=0.1)
    parser.add_argument("--slate", type=int, default=3)
    parser.add_argument("--warmup", type=int, default=300)
    parser.add_argument("--max-steps", type=int, default=6)


# -- subcommands -----------------------------------------------------------------


def cmd_serve(args) -> int:
    import uvicorn

    from .api import AppSettings, create_app
    from .session import Engine, EngineConfig

    cfg = _load_config_file(args.config)
    port = _resolve(args.port, "INTENTLOOP_PORT", "port", cfg, 8000, int)
    store = _resolve(args.store, "INTENTLOOP_STORE", "store", cfg, "sessions")
    search_key = _resolve(args.search_key, "INTENTLOOP_SEARCH_KEY", "search_key", cfg, None)
    lm_endpoint = _resolve(args.lm_endpoint, "INTENTLOOP_LM_ENDPOINT", "lm_endpoint", cfg, None)
    cors = _resolve(args.cors, "INTENTLOOP_CORS", "cors", cfg, "")

    if args.ontology:
        ontology = load_ontology(args.ontology)
    else:
        from .simulator import SimConfig, generate_ontology

        ontology = generate_ontology(SimConfig(seed=args.seed))
    profile = load_profile(args.profile, ontology) if args.profile else None

    if args.search_endpoint:
        from .retrieval import HttpSearchProvider

        search_provider = HttpSearchProvider(args.search_endpoint, api_key=search_key)
    else:
        from .simulator import SyntheticSearchProvider

        search_provider = SyntheticSearchProvider(ontology, seed=args.seed)

    completion_provider = None
    if lm_endpoint:
        from .nlu import HttpCompletionProvider

        completion_provider = HttpCompletionProvider(lm_endpoint)

    engine = Engine(
        ontology,
        profile=profile,
        config=EngineConfig(
            context_scheme=args.context,
            policy=PolicyConfig(kind=args.policy, seed=args.seed),
        ),
        completion_provider=completion_provider,
        search_provider=search_provider,
    )
    if args.warmup and profile is None:
        from .simulator import SimConfig, SyntheticUserModel, seed_profile

        sim_config = SimConfig(seed=args.seed, warmup_interactions=args.warmup)
        try:
            user = SyntheticUserModel(sim_config, ontology)
            seed_profile(sim_config, ontology, user, engine.profile)
        except (ValueError, KeyError, IntentLoopError):
            # Custom ontologies may not support synthetic warmup; serve cold.
            pass

    settings = AppSettings(
        port=port,
        store_dir=store,
        cors_origins=tuple(o.strip() for o in cors.split(",") if o.strip()),
        search_key=search_key,
        lm_endpoint=lm_endpoint,
    )
    app = create_app(engine, settings=settings, frontend_dir=args.frontend)
    uvicorn.run(app, host=args.host, port=port, log_level="info")
    return 0


def cmd_simulate(args) -> int:
    from .ontology import save_ontology
    from .simulator import simulate_sessions

    config = _sim_config(args)
    run = simulate_sessions(
        config, policy_kind=args.policy, context_scheme=args.context
    )
    n = write_interaction_log(run.records, args.out)
    digest = hashlib.sha256(Path(args.out).read_bytes()).hexdigest()
    mean_reward = (
        sum(run.step_rewards) / len(run.step_rewards) if run.step_rewards else 0.0
    )
    payload = {
        "sessions": len(run.traces),
        "steps": n,
        "mean_step_reward": mean_reward,
        "out": str(args.out),
        "log_sha256": digest,
        "fingerprints": run.engine.registry.fingerprints(),
    }
    lines = [
        f"sessions: {payload['sessions']}",
        f"steps logged: {n}",
        f"mean step reward: {mean_reward:.4f}",
        f"log: {args.out}",
        f"log sha256: {digest}",
    ]
    if args.ontology_out:
        save_ontology(run.engine.ontology, args.ontology_out)
        payload["ontology_out"] = str(args.ontology_out)
        lines.append(f"ontology: {args.ontology_out}")
    _emit(args, payload, lines)
    return 0


def cmd_train_predictor(args) -> int:
    import numpy as np

    records = read_interaction_log(args.log)
    examples = examples_from_interaction_log(records)
    if not examples:
        print("error: the log holds no usable training examples", file=sys.stderr)
        return 1
    rng = np.random.default_rng(args.seed)
    order = rng.permutation(len(examples))
    examples = [examples[i] for i in order]
    n_eval = int(len(examples) * args.eval_fraction)
    eval_set, train_set = examples[:n_eval], examples[n_eval:]
    config = PredictorConfig(
        epochs=args.epochs,
        hidden_dim=args.hidden_dim,
        embed_dim=args.embed_dim,
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        dropout=args.dropout,
        seed=args.seed,
    )
    model = train_slot_predictor(train_set, config)
    model.save(args.out)
    payload = {
        "examples": len(examples),
        "train": len(train_set),
        "eval": len(eval_set),
        "final_loss": model.loss_history[-1] if model.loss_history else None,
        "eval_top1_recall": top1_recall(model, eval_set) if eval_set else None,
        "out": str(args.out),
    }
    _emit(
        args,
        payload,
        [
            f"trained on {len(train_set)} examples ({len(eval_set)} held out)",
            f"final loss: {payload['final_loss']}",
            f"held-out top-1 recall: {payload['eval_top1_recall']}",
            f"model: {args.out}",
        ],
    )
    return 0


def cmd_build_corpus(args) -> int:
    from .retrieval import build_corpus

    if args.ontology:
        ontology = load_ontology(args.ontology)
    else:
        from .simulator import SimConfig, generate_ontology

        ontology = generate_ontology(
            SimConfig(
                seed=args.seed,
                n_topics=args.topics,
                n_intents=args.intents,
                n_slots_per_intent=args.slots,
            )
        )
    if args.endpoint:
        from .retrieval import HttpSearchProvider

        key = args.key or os.environ.get("INTENTLOOP_SEARCH_KEY")
        provider = HttpSearchProvider(args.endpoint, api_key=key)
    else:
        from .simulator import SyntheticSearchProvider

        provider = SyntheticSearchProvider(ontology, seed=args.seed)
    locations = [loc.strip() for loc in args.locations.split(",") if loc.strip()]
    summary = build_corpus(
        ontology,
        locations,
        provider,
        args.out,
        per_query=args.per_query,
        concurrency=args.concurrency,
    )
    payload = {
        "queries": summary.n_queries,
        "documents": summary.n_documents,
        "failures": summary.n_failures,
        "out": str(args.out),
    }
    _emit(
        args,
        payload,
        [
            f"queries: {summary.n_queries}",
            f"documents: {summary.n_documents}",
            f"failures: {summary.n_failures}",
            f"corpus: {args.out}",
        ],
    )
    return 0


def cmd_qpp(args) -> int:
    if args.simulate:
        from .simulator import SimConfig, refinement_report

        config = SimConfig(seed=args.seed, n_requests=args.sessions)
        report, _ = refinement_report(
            config, sim_threshold=args.sim_threshold, embed_dim=args.embed_dim
        )
    else:
        if not args.pairs or not args.corpus:
            print("error: qpp needs --pairs and --corpus (or --simulate)", file=sys.stderr)
            return 1
        from .embedding import cooccurrence_index
        from .qpp import compare_requests, index_corpus
        from .retrieval import read_corpus

        rows = []
        with open(args.pairs, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rows.append(json.loads(line))
        originals = [r["original"] for r in rows]
        refineds = [r["refined"] for r in rows]
        groups = [r["group"] for r in rows] if all("group" in r for r in rows) else None
        stats = index_corpus(args.corpus)
        texts = [
            row["title"] + " " + row["snippet"] for row in read_corpus(args.corpus)
        ]
        index = cooccurrence_index(texts, dim=args.embed_dim)
        report = compare_requests(
            originals,
            refineds,
            stats,
            index,
            groups=groups,
            k=args.neighbors,
            sim_threshold=args.sim_threshold,
        )
    if args.json:
        print(json.dumps(report.to_json_dict(), indent=2, sort_keys=True))
    else:
        print(report.to_text())
    return 0


def cmd_ope(args) -> int:
    assumed_uniform = False
    if args.log:
        decisions = read_decisions(args.log)
    elif args.interactions and args.ontology:
        records = read_interaction_log(args.interactions)
        ontology = load_ontology(args.ontology)
        decisions, assumed_uniform = expand_interaction_log(records, ontology)
    else:
        print(
            "error: ope needs --log, or --interactions with --ontology",
            file=sys.stderr,
        )
        return 1
    if not decisions:
        print("error: no decisions to evaluate", file=sys.stderr)
        return 1
    arms = sorted({a for d in decisions for a in (d.candidates or (d.action,))})
    dim = len(decisions[0].context)
    policy = BanditModel(
        "ope", "log", arms, dim, PolicyConfig(kind=args.policy, seed=args.seed)
    )
    report = evaluate_policy(
        decisions,
        policy,
        args.policy,
        cap=args.cap,
        assumed_uniform=assumed_uniform,
    )
    _emit(
        args,
        report,
        [
            f"policy: {report['policy']}",
            f"n: {report['n']}",
            f"rs: {report['rs']}  (accepted {report['acceptance']})",
            f"ncis: {report['ncis']}  (cap {report['cap']})",
        ],
    )
    return 0


def cmd_replay_log(args) -> int:
    records = read_interaction_log(args.log)
    ontology = load_ontology(args.ontology)
    registry = replay_interaction_log(
        records, ontology, PolicyConfig(kind=args.policy, seed=args.seed)
    )
    payload = {"records": len(records), "fingerprints": registry.fingerprints()}
    lines = [f"records replayed: {len(records)}"]
    lines += [f"{name}: {fp}" for name, fp in sorted(payload["fingerprints"].items())]
    _emit(args, payload, lines)
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="intentloop", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--store", default=None, help="session store directory")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--ontology", default=None, help="ontology JSON path")
    p.add_argument("--profile", default=None, help="profile JSON path")
    p.add_argument("--frontend", default=None, help="static UI directory to mount at /ui")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--warmup", type=int, default=300)
    p.add_argument("--policy", choices=POLICY_CHOICES, default="adaptive_active_greedy")
    p.add_argument("--context", choices=("method1", "method2", "method3"), default="method1")
    p.add_argument("--search-endpoint", default=None)
    p.add_argument("--search-key", default=None)
    p.add_argument("--lm-endpoint", default=None)
    p.add_argument("--cors", default=None, help="comma-separated allowed origins")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("simulate", help="generate synthetic sessions and logs")
    _add_sim_shape_flags(p)
    p.add_argument("--policy", choices=POLICY_CHOICES, default="adaptive_active_greedy")
    p.add_argument("--context", choices=("method1", "method2", "method3"), default="method1")
    p.add_argument("--out", default="interactions.jsonl")
    p.add_argument("--ontology-out", default=None,
                   help="also write the generated ontology as JSON")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train-predictor", help="train the slot predictor from a log")
    p.add_argument("--log", required=True, help="interaction log JSONL")
    p.add_argument("--out", default="predictor.json")
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--hidden-dim", type=int, default=64)
    p.add_argument("--embed-dim", type=int, default=100)
    p.add_argument("--learning-rate", type=float, default=0.001)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eval-fraction", type=float, default=0.2)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_train_predictor)

    p = sub.add_parser("build-corpus", help="collect the query-grid document corpus")
    p.add_argument("--out", default="corpus.jsonl")
    p.add_argument("--ontology", default=None, help="ontology JSON path")
    p.add_argument("--locations", default="astoria,brimfield,copperhill")
    p.add_argument("--per-query", type=int, default=10)
    p.add_argument("--concurrency", type=int, default=4)
    p.add_argument("--endpoint", default=None, help="web search endpoint")
    p.add_argument("--key", default=None, help="web search API key")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--topics", type=int, default=2)
    p.add_argument("--intents", type=int, default=14)
    p.add_argument("--slots", type=int, default=20)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_build_corpus)

    p = sub.add_parser("qpp", help="score original vs refined requests")
    p.add_argument("--pairs", default=None, help="JSONL of {original, refined, group?}")
    p.add_argument("--corpus", default=None, help="corpus JSONL from build-corpus")
    p.add_argument("--simulate", action="store_true", help="run the simulated experiment")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sessions", type=int, default=500)
    p.add_argument("--embed-dim", type=int, default=48)
    p.add_argument("--neighbors", type=int, default=10)
    p.add_argument("--sim-threshold", type=float, default=0.35)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_qpp)

    p = sub.add_parser("ope", help="off-policy estimates from decision logs")
    p.add_argument("--log", default=None, help="decision JSONL with propensities")
    p.add_argument("--interactions", default=None, help="interaction log to expand")
    p.add_argument("--ontology", default=None, help="ontology JSON (with --interactions)")
    p.add_argument("--policy", choices=POLICY_CHOICES, default="epsilon_greedy")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cap", type=float, default=DEFAULT_WEIGHT_CAP)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_ope)

    p = sub.add_parser("replay-log", help="rebuild bandit state from a log")
    p.add_argument("--log", required=True, help="interaction log JSONL")
    p.add_argument("--ontology", required=True, help="ontology JSON path")
    p.add_argument("--policy", choices=POLICY_CHOICES, default="adaptive_active_greedy")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_replay_log)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TransportError as exc:
        print(f"error: provider failure: {exc}", file=sys.stderr)
        return 2
    except IntentLoopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
