"""Text embeddings, cosine geometry, and a term nearest-neighbor index.

Two providers share one interface: an HTTP client for a real embedding
service and a deterministic offline provider whose vectors are a pure
function of (seed, text). The offline provider hashes each token into a
PRNG seed, draws a gaussian vector per token, averages, and normalizes,
so tests and simulations never need the network. A vocabulary index maps
terms to vectors and answers cosine nearest-neighbor queries; a second
constructor builds corpus-trained vectors from document co-occurrence so
neighborhoods reflect topical structure rather than hash noise.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import threading
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import TransportError, ValidationError
from .transport import post_json

_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")

DEFAULT_DIM = 512


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric runs, dropping empties."""
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


class HashEmbeddingProvider:
    """Offline fallback embeddings, deterministic in (seed, text)."""

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0):
        if dim < 1:
            raise ValidationError("dim must be positive")
        self.dim = dim
        self.seed = seed
        self._token_cache: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        cached = self._token_cache.get(token)
        if cached is not None:
            return cached
        digest = hashlib.sha256(f"{self.seed}:{token}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        vec = rng.standard_normal(self.dim)
        self._token_cache[token] = vec
        return vec

    def embed(self, text: str) -> np.ndarray:
        tokens = tokenize(text)
        if not tokens:
            return np.zeros(self.dim)
        acc = np.zeros(self.dim)
        for token in tokens:
            acc += self._token_vector(token)
        acc /= len(tokens)
        norm = float(np.linalg.norm(acc))
        if norm > 0.0:
            acc = acc / norm
        return acc

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        return [self.embed(t) for t in texts]


class HttpEmbeddingProvider:
    """Client for a service answering POST /embed {texts: [...]}.

    In-flight requests are bounded by a semaphore; transport failures are
    retried with backoff and surface as TransportError with the attempt
    count attached.
    """

    def __init__(
        self,
        endpoint: str,
        dim: int = DEFAULT_DIM,
        timeout: float = 10.0,
        max_retries: int = 3,
        max_in_flight: int = 4,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.dim = dim
        self.timeout = timeout
        self.max_retries = max_retries
        self._slots = threading.Semaphore(max_in_flight)

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        with self._slots:
            payload = post_json(
                self.endpoint + "/embed",
                {"texts": list(texts)},
                timeout=self.timeout,
                max_retries=self.max_retries,
            )
        vectors = payload.get("vectors")
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise TransportError("embedding service returned a malformed vector list")
        out = []
        for vec in vectors:
            arr = np.asarray(vec, dtype=float)
            if arr.ndim != 1 or arr.shape[0] != self.dim:
                raise ValidationError(f"expected dim {self.dim}, got shape {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValidationError("embedding contains non-finite entries")
            out.append(arr)
        return out

    def embed(self, text: str) -> np.ndarray:
        return self.embed_batch([text])[0]


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValidationError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    sim = float(np.dot(a, b) / (na * nb))
    return max(-1.0, min(1.0, sim))


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1 - cosine similarity, in [0, 2]. A zero vector is at distance 1."""
    return 1.0 - cosine_similarity(a, b)


class VocabularyIndex:
    """Term to vector mapping with exact cosine nearest-neighbor search."""

    def __init__(self) -> None:
        self._terms: list[str] = []
        self._pos: dict[str, int] = {}
        self._rows: list[np.ndarray] = []
        self._matrix: np.ndarray | None = None
        self._norms: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self._terms)

    def __contains__(self, term: str) -> bool:
        return term in self._pos

    @property
    def terms(self) -> list[str]:
        return list(self._terms)

    def add(self, term: str, vector: np.ndarray) -> None:
        if not term:
            raise ValidationError("term must be non-empty")
        if term in self._pos:
            raise ValidationError(f"duplicate term {term!r}")
        vec = np.asarray(vector, dtype=float)
        if vec.ndim != 1:
            raise ValidationError("vector must be one-dimensional")
        if self._rows and vec.shape[0] != self._rows[0].shape[0]:
            raise ValidationError("vector dimension differs from the index")
        self._pos[term] = len(self._terms)
        self._terms.append(term)
        self._rows.append(vec)
        self._matrix = None

    def vector(self, term: str) -> np.ndarray:
        if term not in self._pos:
            raise ValidationError(f"term {term!r} not in index")
        return self._rows[self._pos[term]]

    def _ensure_matrix(self) -> None:
        if self._matrix is None:
            self._matrix = np.vstack(self._rows) if self._rows else np.zeros((0, 0))
            self._norms = np.linalg.norm(self._matrix, axis=1) if self._rows else np.zeros(0)

    def nearest_terms(
        self,
        query: str,
        k: int,
        provider=None,
    ) -> list[tuple[str, float]]:
        """Top-k terms by cosine similarity, excluding the query term itself.

        Ties break lexicographically. The query vector comes from the index
        when the term is present, otherwise from ``provider``.
        """
        if k < 1:
            raise ValidationError("k must be at least 1")
        if not self._terms:
            return []
        if query in self._pos:
            qv = self._rows[self._pos[query]]
        elif provider is not None:
            qv = provider.embed(query)
        else:
            raise ValidationError(f"term {query!r} not in index and no provider given")
        qv = np.asarray(qv, dtype=float)
        self._ensure_matrix()
        if qv.shape[0] != self._matrix.shape[1]:
            raise ValidationError("query vector dimension differs from the index")
        qnorm = float(np.linalg.norm(qv))
        if qnorm == 0.0:
            sims = np.zeros(len(self._terms))
        else:
            denom = self._norms * qnorm
            raw = self._matrix @ qv
            sims = np.divide(raw, denom, out=np.zeros_like(raw), where=denom > 0)
        order = sorted(
            (i for i, t in enumerate(self._terms) if t != query),
            key=lambda i: (-sims[i], self._terms[i]),
        )
        return [(self._terms[i], float(np.clip(sims[i], -1.0, 1.0))) for i in order[:k]]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for term in self._terms:
                vec = self._rows[self._pos[term]]
                fh.write(json.dumps({"term": term, "vector": [float(x) for x in vec]}) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "VocabularyIndex":
        index = cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValidationError(f"vocabulary line {lineno}: {exc.msg}") from exc
                if "term" not in record or "vector" not in record:
                    raise ValidationError(f"vocabulary line {lineno} missing term or vector")
                index.add(record["term"], np.asarray(record["vector"], dtype=float))
        return index


def build_vocabulary_index(
    terms: Iterable[str], provider, dedupe: bool = True
) -> VocabularyIndex:
    index = VocabularyIndex()
    seen: set[str] = set()
    for term in terms:
        if dedupe and term in seen:
            continue
        seen.add(term)
        index.add(term, provider.embed(term))
    return index


def cooccurrence_index(
    docs: Sequence[str],
    dim: int = 48,
    min_count: int = 2,
    max_vocab: int = 2000,
) -> VocabularyIndex:
    """Corpus-trained term vectors from a PPMI term-document factorization.

    Terms that co-occur in documents land near each other, which makes the
    nearest-neighbor graph behind the connectedness metric reflect topical
    structure. Deterministic for a fixed corpus.
    """
    if not docs:
        raise ValidationError("cooccurrence_index needs at least one document")
    doc_tokens = [tokenize(d) for d in docs]
    counts: dict[str, int] = {}
    for tokens in doc_tokens:
        for t in tokens:
            counts[t] = counts.get(t, 0) + 1
    vocab = [t for t, c in counts.items() if c >= min_count]
    vocab.sort(key=lambda t: (-counts[t], t))
    vocab = vocab[:max_vocab]
    if not vocab:
        raise ValidationError("no term reached min_count")
    pos = {t: i for i, t in enumerate(vocab)}
    mat = np.zeros((len(vocab), len(docs)))
    for j, tokens in enumerate(doc_tokens):
        for t in tokens:
            i = pos.get(t)
            if i is not None:
                mat[i, j] += 1.0
    total = mat.sum()
    row = mat.sum(axis=1, keepdims=True)
    col = mat.sum(axis=0, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        pmi = np.log((mat * total) / (row @ col))
    pmi[~np.isfinite(pmi)] = 0.0
    ppmi = np.maximum(pmi, 0.0)
    k = min(dim, min(ppmi.shape))
    u, s, _ = np.linalg.svd(ppmi, full_matrices=False)
    vectors = u[:, :k] * np.sqrt(s[:k])
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    vectors = vectors / norms
    index = VocabularyIndex()
    for term, vec in zip(vocab, vectors):
        index.add(term, vec)
    return index
