"""Pre-retrieval query performance metrics and refinement comparison.

Three signals score a query against a corpus without running retrieval:

  clarity      KL divergence (base 2) between the query's term distribution
               and the corpus language model; out-of-vocabulary terms use a
               collection frequency of 0.5
  scq          mean over query token occurrences of
               (1 + ln cf(w)) * ln(1 + N / df(w)); unseen terms contribute 0
  neural_cc    mean Wasserman-Faust closeness centrality of the query terms
               in the graph of query terms plus their top-k embedding
               neighbors, edges above a cosine threshold

compare_requests pairs original and refined request texts, reports the
mean of each metric on both sides, percent differences, and a paired
two-sided t-test per metric. Requests are broad when they mention at most
three slots.
"""

from __future__ import annotations

import logging
import math
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from scipy import stats as scipy_stats

from .embedding import VocabularyIndex, cosine_similarity, tokenize
from .errors import ValidationError
from .ontology import SemanticFrame
from .retrieval import read_corpus

logger = logging.getLogger(__name__)

OOV_COLLECTION_FREQUENCY = 0.5
BROAD_SLOT_LIMIT = 3
DEFAULT_NEIGHBORS = 10
DEFAULT_SIM_THRESHOLD = 0.5


class CorpusStats:
    """Collection and document frequencies over a retrieval corpus."""

    def __init__(self) -> None:
        self.cf: Counter[str] = Counter()
        self.df: Counter[str] = Counter()
        self.total_tokens = 0
        self.n_documents = 0

    def add_document(self, text: str) -> None:
        tokens = tokenize(text)
        self.cf.update(tokens)
        self.df.update(set(tokens))
        self.total_tokens += len(tokens)
        self.n_documents += 1

    def validate(self) -> None:
        for term, cf in self.cf.items():
            df = self.df[term]
            if not cf >= df >= 1:
                raise ValidationError(f"inconsistent stats for {term!r}: cf={cf} df={df}")
        if sum(self.cf.values()) != self.total_tokens:
            raise ValidationError("collection frequency sum does not match token total")


def index_texts(texts: Sequence[str]) -> CorpusStats:
    if not texts:
        raise ValidationError("cannot index an empty corpus")
    stats = CorpusStats()
    for text in texts:
        stats.add_document(text)
    stats.validate()
    return stats


def index_corpus(path: str | Path) -> CorpusStats:
    """Index a collected corpus file; document text is title plus snippet."""
    rows = read_corpus(path)
    if not rows:
        raise ValidationError(f"corpus {path} is empty")
    return index_texts([row["title"] + " " + row["snippet"] for row in rows])


def clarity_score(query: str, stats: CorpusStats) -> float:
    """Simplified clarity: sum over unique query terms of
    P(w|q) * log2(P(w|q) / P(w|C))."""
    tokens = tokenize(query)
    if not tokens:
        raise ValidationError("query has no tokens")
    if stats.total_tokens == 0:
        raise ValidationError("corpus has no tokens")
    tf = Counter(tokens)
    q_len = len(tokens)
    score = 0.0
    for term, count in tf.items():
        p_q = count / q_len
        cf = stats.cf.get(term, 0)
        p_c = (cf if cf > 0 else OOV_COLLECTION_FREQUENCY) / stats.total_tokens
        score += p_q * math.log2(p_q / p_c)
    return score


def collection_query_similarity(query: str, stats: CorpusStats) -> float:
    """Mean per-token-occurrence of (1 + ln cf) * ln(1 + N / df)."""
    tokens = tokenize(query)
    if not tokens:
        raise ValidationError("query has no tokens")
    total = 0.0
    for term in tokens:
        cf = stats.cf.get(term, 0)
        if cf == 0:
            continue
        df = stats.df[term]
        total += (1.0 + math.log(cf)) * math.log(1.0 + stats.n_documents / df)
    return total / len(tokens)


def _closeness(node: str, adjacency: dict[str, set[str]], n_nodes: int) -> float:
    # Wasserman-Faust: ((r - 1) / sum_d) * ((r - 1) / (n - 1)); isolated -> 0.
    dists = {node: 0}
    queue = deque([node])
    while queue:
        cur = queue.popleft()
        for nxt in adjacency.get(cur, ()):
            if nxt not in dists:
                dists[nxt] = dists[cur] + 1
                queue.append(nxt)
    r = len(dists)
    if r <= 1 or n_nodes <= 1:
        return 0.0
    sum_d = sum(dists.values())
    return ((r - 1) / sum_d) * ((r - 1) / (n_nodes - 1))


def neural_connectedness(
    query: str,
    index: VocabularyIndex,
    provider=None,
    k: int = DEFAULT_NEIGHBORS,
    sim_threshold: float = DEFAULT_SIM_THRESHOLD,
) -> float:
    """Mean closeness centrality of the query terms in their neighborhood.

    Nodes are the unique query terms plus each term's top-k index
    neighbors; edges join any node pair with cosine similarity at or above
    the threshold. A term with no vector or no qualifying edge scores 0.
    """
    terms = list(dict.fromkeys(tokenize(query)))
    if not terms:
        raise ValidationError("query has no tokens")
    if len(index) == 0:
        logger.warning("vocabulary index is empty, connectedness is 0")
        return 0.0

    def vector_for(term: str):
        if term in index:
            return index.vector(term)
        if provider is not None:
            return provider.embed(term)
        return None

    vectors: dict[str, object] = {}
    nodes: list[str] = []
    for term in terms:
        vec = vector_for(term)
        if term not in nodes:
            nodes.append(term)
        if vec is not None:
            vectors[term] = vec
            for neighbor, _sim in index.nearest_terms(term, k, provider=provider):
                if neighbor not in vectors:
                    vectors[neighbor] = index.vector(neighbor)
                    nodes.append(neighbor)
    adjacency: dict[str, set[str]] = {n: set() for n in nodes}
    known = [n for n in nodes if n in vectors]
    for i, a in enumerate(known):
        for b in known[i + 1 :]:
            if cosine_similarity(vectors[a], vectors[b]) >= sim_threshold:
                adjacency[a].add(b)
                adjacency[b].add(a)
    n_nodes = len(nodes)
    values = [_closeness(t, adjacency, n_nodes) for t in terms]
    return sum(values) / len(values)


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Two-sided paired t-test; returns (t, p) with n-1 degrees of freedom.

    Identical samples give (0, 1); nonzero constant differences have no
    variance, so the statistic is infinite and p clamps to 0.
    """
    if len(a) != len(b):
        raise ValidationError("paired samples must have equal length")
    n = len(a)
    if n < 2:
        raise ValidationError("paired t-test needs at least two pairs")
    diffs = [x - y for x, y in zip(a, b)]
    mean = math.fsum(diffs) / n
    var = math.fsum((d - mean) ** 2 for d in diffs) / (n - 1)
    if var == 0.0:
        if mean == 0.0:
            return 0.0, 1.0
        return math.copysign(math.inf, mean), 0.0
    t = mean / math.sqrt(var / n)
    p = 2.0 * float(scipy_stats.t.sf(abs(t), n - 1))
    return t, min(p, 1.0)


def classify_breadth(frame: SemanticFrame) -> str:
    """"broad" when at most three slots are mentioned, else "specific"."""
    return "broad" if len(frame.mentioned_slots) <= BROAD_SLOT_LIMIT else "specific"


@dataclass
class MetricPair:
    original_mean: float
    refined_mean: float
    pct_diff: float | None
    t_statistic: float
    p_value: float


@dataclass
class QppReport:
    n_pairs: int
    metrics: dict[str, MetricPair]
    per_request: list[dict] = field(default_factory=list)
    groups: dict[str, dict[str, MetricPair]] = field(default_factory=dict)
    settings: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        def pair(m: MetricPair) -> dict:
            return {
                "original_mean": m.original_mean,
                "refined_mean": m.refined_mean,
                "pct_diff": m.pct_diff,
                "t_statistic": m.t_statistic,
                "p_value": m.p_value,
            }

        return {
            "n_pairs": self.n_pairs,
            "metrics": {k: pair(v) for k, v in self.metrics.items()},
            "groups": {
                g: {k: pair(v) for k, v in ms.items()} for g, ms in self.groups.items()
            },
            "settings": self.settings,
        }

    def to_text(self) -> str:
        lines = [f"pairs: {self.n_pairs}"]
        header = f"{'metric':<12} {'original':>12} {'refined':>12} {'pct_diff':>10} {'t':>10} {'p':>12}"
        lines.append(header)
        for name, m in self.metrics.items():
            pct = "n/a" if m.pct_diff is None else f"{m.pct_diff:+.2f}%"
            lines.append(
                f"{name:<12} {m.original_mean:>12.5f} {m.refined_mean:>12.5f} "
                f"{pct:>10} {m.t_statistic:>10.3f} {m.p_value:>12.3e}"
            )
        for group, metrics in self.groups.items():
            lines.append(f"-- {group}")
            for name, m in metrics.items():
                pct = "n/a" if m.pct_diff is None else f"{m.pct_diff:+.2f}%"
                lines.append(
                    f"{name:<12} {m.original_mean:>12.5f} {m.refined_mean:>12.5f} "
                    f"{pct:>10} {m.t_statistic:>10.3f} {m.p_value:>12.3e}"
                )
        return "\n".join(lines)


def _metric_pair(orig: list[float], ref: list[float]) -> MetricPair:
    n = len(orig)
    om = math.fsum(orig) / n
    rm = math.fsum(ref) / n
    pct = None if om == 0.0 else 100.0 * (rm - om) / abs(om)
    t, p = paired_t_test(ref, orig)
    return MetricPair(om, rm, pct, t, p)


def compare_requests(
    originals: Sequence[str],
    refineds: Sequence[str],
    stats: CorpusStats,
    index: VocabularyIndex,
    provider=None,
    groups: Sequence[str] | None = None,
    k: int = DEFAULT_NEIGHBORS,
    sim_threshold: float = DEFAULT_SIM_THRESHOLD,
) -> QppReport:
    """Score paired original and refined requests on all three metrics.

    ``groups`` optionally labels each pair (say broad or specific) and adds
    a per-group breakdown to the report.
    """
    if len(originals) != len(refineds):
        raise ValidationError("originals and refineds must pair up")
    if not originals:
        raise ValidationError("at least one request pair is required")
    if groups is not None and len(groups) != len(originals):
        raise ValidationError("one group label per pair is required")
    values: dict[str, dict[str, list[float]]] = {
        "clarity": {"orig": [], "ref": []},
        "scq": {"orig": [], "ref": []},
        "neural_cc": {"orig": [], "ref": []},
    }
    per_request = []
    for orig_text, ref_text in zip(originals, refineds):
        row = {
            "original": {
                "clarity": clarity_score(orig_text, stats),
                "scq": collection_query_similarity(orig_text, stats),
                "neural_cc": neural_connectedness(
                    orig_text, index, provider, k=k, sim_threshold=sim_threshold
                ),
            },
            "refined": {
                "clarity": clarity_score(ref_text, stats),
                "scq": collection_query_similarity(ref_text, stats),
                "neural_cc": neural_connectedness(
                    ref_text, index, provider, k=k, sim_threshold=sim_threshold
                ),
            },
        }
        per_request.append(row)
        for metric in values:
            values[metric]["orig"].append(row["original"][metric])
            values[metric]["ref"].append(row["refined"][metric])
    metrics = {m: _metric_pair(v["orig"], v["ref"]) for m, v in values.items()}
    report = QppReport(
        n_pairs=len(originals),
        metrics=metrics,
        per_request=per_request,
        settings={"k": k, "sim_threshold": sim_threshold},
    )
    if groups is not None:
        for label in sorted(set(groups)):
            rows = [i for i, g in enumerate(groups) if g == label]
            if len(rows) < 2:
                continue
            report.groups[label] = {
                m: _metric_pair(
                    [values[m]["orig"][i] for i in rows],
                    [values[m]["ref"][i] for i in rows],
                )
                for m in values
            }
    return report
