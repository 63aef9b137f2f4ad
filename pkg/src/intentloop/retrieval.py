"""Sub-query generation, web search providers, corpus collection, ranking.

A refined frame expands into one sub-query per constraining slot, shaped
"<intent> with <slot> in <location>". Corpus collection walks every
(location, intent, slot) combination with the query shape
"<intent> near <location> with <slot>" and appends each query's top
documents to a JSONL corpus. Ranking merges sub-query results and scores
candidates either lexically (weighted term overlap, aspect terms counting
double) or through a language model prompt when a provider is configured.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .embedding import tokenize
from .errors import TransportError, ValidationError
from .ontology import IntentOntology, SemanticFrame
from .transport import get_json

logger = logging.getLogger(__name__)

DEFAULT_TOP_DOCS = 10
DEFAULT_CORPUS_DOCS = 100
ASPECT_TERM_WEIGHT = 2.0
SLOT_TERM_WEIGHT = 1.0


@dataclass(frozen=True)
class Document:
    title: str
    url: str
    snippet: str

    def __post_init__(self) -> None:
        if not self.url:
            raise ValidationError("document url must be non-empty")


@dataclass(frozen=True)
class RankedSuggestion:
    document: Document
    score: float
    matched_slot_ids: tuple[str, ...] = ()


def generate_subqueries(
    frame: SemanticFrame,
    selected_slot_ids: Sequence[str],
    ontology: IntentOntology,
) -> list[str]:
    """One query per constraining slot, mentioned first then selections.

    With no slots at all the intent label alone (plus location) is the
    single query.
    """
    intent = ontology.intent(frame.topic_id, frame.intent_id)
    loc = f" in {frame.location}" if frame.location else ""
    slot_ids = list(dict.fromkeys(list(frame.mentioned_slot_ids) + list(selected_slot_ids)))
    if not slot_ids:
        return [f"{intent.label}{loc}"]
    queries = []
    for slot_id in slot_ids:
        slot = ontology.slot(frame.topic_id, frame.intent_id, slot_id)
        queries.append(f"{intent.label} with {slot.label}{loc}")
    return queries


class FixtureSearchProvider:
    """Search results served from a JSON mapping of query to documents.

    Unknown queries return no results. Mapping a query to null simulates a
    provider outage for that query.
    """

    def __init__(self, mapping: dict[str, list[dict] | None] | None = None, path: str | Path | None = None):
        if mapping is None and path is None:
            raise ValidationError("fixture provider needs a mapping or a path")
        if mapping is None:
            mapping = json.loads(Path(path).read_text(encoding="utf-8"))
        self._mapping = mapping

    def search(self, query: str, k: int = DEFAULT_TOP_DOCS) -> list[Document]:
        if query in self._mapping and self._mapping[query] is None:
            raise TransportError(f"simulated outage for query {query!r}")
        rows = self._mapping.get(query, [])
        return [Document(r["title"], r["url"], r.get("snippet", "")) for r in rows[:k]]


class HttpSearchProvider:
    """Client for a web search API with the webPages.value result shape."""

    def __init__(
        self,
        endpoint: str,
        api_key: str | None = None,
        timeout: float = 10.0,
        max_retries: int = 3,
    ):
        self.endpoint = endpoint
        self.api_key = api_key
        self.timeout = timeout
        self.max_retries = max_retries

    def search(self, query: str, k: int = DEFAULT_TOP_DOCS) -> list[Document]:
        headers = {}
        if self.api_key:
            headers["Ocp-Apim-Subscription-Key"] = self.api_key
        payload = get_json(
            self.endpoint,
            params={"q": query, "count": k},
            headers=headers,
            timeout=self.timeout,
            max_retries=self.max_retries,
        )
        values = payload.get("webPages", {}).get("value", [])
        docs = []
        for row in values[:k]:
            if "url" not in row:
                continue
            docs.append(Document(row.get("name", ""), row["url"], row.get("snippet", "")))
        return docs


def search(query: str, provider, k: int = DEFAULT_TOP_DOCS) -> list[Document]:
    """Provider search with per-call dedup by url, capped at k."""
    if not query or not query.strip():
        raise ValidationError("query must be non-empty")
    if k < 1:
        raise ValidationError("k must be at least 1")
    seen: set[str] = set()
    out = []
    for doc in provider.search(query, k):
        if doc.url in seen:
            continue
        seen.add(doc.url)
        out.append(doc)
        if len(out) == k:
            break
    return out


def retrieve_for_frame(
    frame: SemanticFrame,
    selected_slot_ids: Sequence[str],
    ontology: IntentOntology,
    provider,
    per_query: int = DEFAULT_TOP_DOCS,
) -> list[tuple[str, Document]]:
    """All sub-query results as (query, document) pairs, deduped by url."""
    pairs = []
    seen: set[str] = set()
    for query in generate_subqueries(frame, selected_slot_ids, ontology):
        try:
            docs = search(query, provider, per_query)
        except TransportError as exc:
            logger.warning("sub-query %r failed: %s", query, exc)
            continue
        for doc in docs:
            if doc.url in seen:
                continue
            seen.add(doc.url)
            pairs.append((query, doc))
    return pairs


@dataclass
class CorpusBuildSummary:
    n_queries: int = 0
    n_documents: int = 0
    n_failures: int = 0
    failed_queries: list[str] = field(default_factory=list)


def corpus_queries(ontology: IntentOntology, locations: Sequence[str]) -> list[str]:
    """The full (location, intent, slot) query grid in a stable order."""
    if not locations:
        raise ValidationError("at least one location is required")
    queries = []
    for location in locations:
        for topic in ontology.topics():
            for intent in ontology.intents(topic.id):
                for slot in ontology.slots(topic.id, intent.id):
                    queries.append(f"{intent.label} near {location} with {slot.label}")
    return queries


def build_corpus(
    ontology: IntentOntology,
    locations: Sequence[str],
    provider,
    out_path: str | Path,
    per_query: int = DEFAULT_CORPUS_DOCS,
    concurrency: int = 4,
) -> CorpusBuildSummary:
    """Collect the query grid into a JSONL corpus; partial failures logged.

    Results are fetched with bounded concurrency but written in query grid
    order, each query's documents sorted by url, so the output is stable.
    """
    queries = corpus_queries(ontology, locations)
    if not queries:
        logger.warning("ontology yields no corpus queries; writing an empty corpus")
    summary = CorpusBuildSummary(n_queries=len(queries))

    def fetch(query: str):
        try:
            return search(query, provider, per_query)
        except TransportError as exc:
            logger.warning("corpus query %r failed: %s", query, exc)
            return exc

    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        results = list(pool.map(fetch, queries))
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        for query, result in zip(queries, results):
            if isinstance(result, TransportError):
                summary.n_failures += 1
                summary.failed_queries.append(query)
                continue
            for doc in sorted(result, key=lambda d: d.url):
                fh.write(
                    json.dumps(
                        {"query": query, "title": doc.title, "url": doc.url, "snippet": doc.snippet}
                    )
                    + "\n"
                )
                summary.n_documents += 1
    return summary


def _slot_terms(
    frame: SemanticFrame, selected_slot_ids: Sequence[str], ontology: IntentOntology
) -> tuple[set[str], set[str], dict[str, set[str]]]:
    aspect_terms: set[str] = set()
    slot_terms: set[str] = set()
    per_slot: dict[str, set[str]] = {}
    slot_ids = list(dict.fromkeys(list(frame.mentioned_slot_ids) + list(selected_slot_ids)))
    aspects = {slot.id: aspect for slot, aspect in frame.mentioned_slots if aspect is not None}
    for slot_id in slot_ids:
        slot = ontology.slot(frame.topic_id, frame.intent_id, slot_id)
        terms = set(tokenize(slot.label))
        per_slot[slot_id] = terms
        slot_terms |= terms
        aspect = aspects.get(slot_id)
        if aspect is not None:
            aspect_terms |= set(tokenize(aspect.raw_span))
            if aspect.normalized:
                aspect_terms |= set(tokenize(aspect.normalized))
    return slot_terms, aspect_terms, per_slot


def lexical_score(
    doc: Document, slot_terms: set[str], aspect_terms: set[str]
) -> float:
    """Weighted overlap between the document text and the frame's terms.

    Each token of title+snippet earns 2.0 when it appears among aspect
    terms and 1.0 when it appears among slot label terms, normalized by
    the token count of the candidate.
    """
    tokens = tokenize(doc.title + " " + doc.snippet)
    if not tokens:
        return 0.0
    score = 0.0
    for token in tokens:
        if token in aspect_terms:
            score += ASPECT_TERM_WEIGHT
        elif token in slot_terms:
            score += SLOT_TERM_WEIGHT
    return score / len(tokens)


def _lm_scores(candidates: Sequence[Document], frame_summary: str, provider) -> list[float] | None:
    lines = [f"{i}. {doc.title} :: {doc.snippet}" for i, doc in enumerate(candidates)]
    prompt = (
        "Score each result from 0 to 10 for how well it satisfies the request "
        f"constraints: {frame_summary}\n" + "\n".join(lines) +
        '\nAnswer with JSON like {"scores": [..]}.'
    )
    try:
        text = provider.complete(prompt, temperature=0.0, max_tokens=256)
        payload = json.loads(text.strip())
        scores = payload["scores"]
        if not isinstance(scores, list) or len(scores) != len(candidates):
            raise ValueError("bad scores length")
        return [float(s) for s in scores]
    except (TransportError, ValueError, KeyError, TypeError) as exc:
        logger.warning("ranker provider failed (%s), using lexical scores", exc)
        return None


def rank_suggestions(
    candidates: Iterable[tuple[str, Document]] | Iterable[Document],
    frame: SemanticFrame,
    selected_slot_ids: Sequence[str],
    ontology: IntentOntology,
    provider=None,
    top_k: int = DEFAULT_TOP_DOCS,
) -> list[RankedSuggestion]:
    """Order merged candidates by constraint satisfaction.

    A slot counts as matched when every token of its label occurs in the
    candidate text. Ties break by url.
    """
    docs: list[Document] = []
    seen: set[str] = set()
    for item in candidates:
        doc = item[1] if isinstance(item, tuple) else item
        if doc.url in seen:
            continue
        seen.add(doc.url)
        docs.append(doc)
    if not docs:
        return []
    slot_terms, aspect_terms, per_slot = _slot_terms(frame, selected_slot_ids, ontology)
    scores: list[float] | None = None
    if provider is not None:
        intent = ontology.intent(frame.topic_id, frame.intent_id)
        summary = intent.label + ", " + ", ".join(sorted(slot_terms | aspect_terms))
        scores = _lm_scores(docs, summary, provider)
    if scores is None:
        scores = [lexical_score(d, slot_terms, aspect_terms) for d in docs]
    out = []
    for doc, score in zip(docs, scores):
        tokens = set(tokenize(doc.title + " " + doc.snippet))
        matched = tuple(
            slot_id for slot_id, terms in per_slot.items() if terms and terms <= tokens
        )
        out.append(RankedSuggestion(doc, float(score), matched))
    out.sort(key=lambda s: (-s.score, s.document.url))
    return out[:top_k]


def read_corpus(path: str | Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"corpus line {lineno}: {exc.msg}") from exc
            for key in ("query", "title", "url", "snippet"):
                if key not in row:
                    raise ValidationError(f"corpus line {lineno} missing {key!r}")
            rows.append(row)
    return rows
