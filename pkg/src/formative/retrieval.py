"""Corpus ingestion and hybrid retrieval.

Markdown documents are chunked at heading boundaries (oversized sections are
re-split at paragraph boundaries with trailing-context overlap), indexed for
Okapi BM25 lexical scoring and for cosine search over unit-norm embeddings,
and queried through Reciprocal Rank Fusion of the two ranked lists.

BM25 uses k1 = 1.2, b = 0.75 and the non-negative idf variant
``ln(1 + (N - df + 0.5) / (df + 0.5))``; query terms are deduplicated.
Tokenization everywhere: lowercase, punctuation stripped, whitespace split.

The deterministic fake embedder hashes character trigrams into a fixed number
of buckets (BLAKE2b, platform-independent) and L2-normalizes, which keeps
every retrieval test hermetic and ingestion byte-reproducible.
"""

from __future__ import annotations

import json
import math
import re
import string
import time
from dataclasses import dataclass
from hashlib import blake2b
from pathlib import Path
from typing import Any, Mapping, Sequence

import httpx

from .domain import (
    Chunk,
    CorpusIndex,
    LexicalStats,
    ParseError,
    _check_fields,
    _int_field,
    _str_field,
    from_json,
    to_canonical_json,
)

BM25_K1 = 1.2
BM25_B = 0.75
RRF_K = 60
FUSION_CANDIDATE_FLOOR = 20

MANIFEST_KINDS = ("textbook", "syllabus", "slides", "exercises")

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


class RetrievalError(RuntimeError):
    """Base class for retrieval failures."""


class IngestError(RetrievalError):
    """A corpus directory could not be turned into an index."""


class EmbedError(RetrievalError):
    """An embedding backend failed."""


@dataclass(frozen=True)
class ChunkPolicy:
    max_chars: int = 1500
    overlap_chars: int = 200

    def __post_init__(self):
        if self.max_chars < 1:
            raise ValueError("max_chars must be positive")
        if not 0 <= self.overlap_chars < self.max_chars:
            raise ValueError("overlap_chars must be in [0, max_chars)")


@dataclass(frozen=True)
class EmbedderDescriptor:
    """Pluggable text-embedding backend; outputs are always unit-norm."""

    kind: str  # remote_embedding_endpoint | deterministic_fake
    dimension: int
    embedder_id: str
    endpoint_url: str | None = None

    def __post_init__(self):
        if self.kind not in ("remote_embedding_endpoint", "deterministic_fake"):
            raise ValueError(f"unknown embedder kind: {self.kind}")
        if self.kind == "remote_embedding_endpoint" and not self.endpoint_url:
            raise ValueError("remote_embedding_endpoint requires endpoint_url")
        if self.dimension < 0:
            raise ValueError("dimension must be non-negative")

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "dimension": self.dimension,
            "embedder_id": self.embedder_id,
            "endpoint_url": self.endpoint_url,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "EmbedderDescriptor":
        _check_fields(data, "EmbedderDescriptor", {"kind", "dimension", "embedder_id"},
                      optional={"endpoint_url"})
        endpoint_url = data.get("endpoint_url")
        if endpoint_url is not None and not isinstance(endpoint_url, str):
            raise ParseError("EmbedderDescriptor: endpoint_url must be a string")
        try:
            return cls(
                kind=_str_field(data, "kind", "EmbedderDescriptor"),
                dimension=_int_field(data, "dimension", "EmbedderDescriptor", minimum=0),
                embedder_id=_str_field(data, "embedder_id", "EmbedderDescriptor"),
                endpoint_url=endpoint_url,
            )
        except ValueError as exc:
            raise ParseError(f"EmbedderDescriptor: {exc}") from exc


def fake_embedder(dimension: int = 64) -> EmbedderDescriptor:
    return EmbedderDescriptor(kind="deterministic_fake", dimension=dimension,
                              embedder_id=f"fake-trigram-{dimension}")


@dataclass(frozen=True)
class RankedHit:
    chunk_id: str
    score: float
    rank: int
    source: str  # lexical | semantic | fused


def tokenize(text: str) -> list[str]:
    return text.lower().translate(_PUNCT_TABLE).split()


# ---------------------------------------------------------------------------
# chunking

_HEADING = re.compile(r"^(#{1,6})[ \t]+(.+?)[ \t]*$", re.MULTILINE)
_PARAGRAPH_GAP = re.compile(r"\n[ \t]*\n+")


def chunk_document(doc_id: str, markdown: str,
                   policy: ChunkPolicy = ChunkPolicy()) -> list[Chunk]:
    """Split one markdown document into retrieval chunks.

    Heading lines open a new section and are kept with their section text so
    chunk spans cover the whole document (modulo within-section overlaps).
    """
    if not markdown:
        raise ValueError("markdown must be non-empty")
    sections = _heading_sections(markdown)
    chunks: list[Chunk] = []
    for heading_path, start, end in sections:
        if not markdown[start:end].strip():
            continue
        for piece_start, piece_end in _split_span(markdown, start, end, policy):
            text = markdown[piece_start:piece_end]
            if not text.strip():
                continue
            chunks.append(Chunk(
                chunk_id=f"{doc_id}#{len(chunks):04d}",
                doc_id=doc_id,
                heading_path=heading_path,
                text=text,
                char_span=(piece_start, piece_end),
            ))
    return chunks


def _heading_sections(markdown: str) -> list[tuple[tuple[str, ...], int, int]]:
    sections: list[tuple[tuple[str, ...], int, int]] = []
    stack: list[tuple[int, str]] = []  # (level, title)
    current_path: tuple[str, ...] = ()
    current_start = 0
    for match in _HEADING.finditer(markdown):
        if match.start() > current_start:
            sections.append((current_path, current_start, match.start()))
        level = len(match.group(1))
        while stack and stack[-1][0] >= level:
            stack.pop()
        stack.append((level, match.group(2)))
        current_path = tuple(title for _, title in stack)
        current_start = match.start()
    if len(markdown) > current_start:
        sections.append((current_path, current_start, len(markdown)))
    return sections


def _split_span(markdown: str, start: int, end: int,
                policy: ChunkPolicy) -> list[tuple[int, int]]:
    if end - start <= policy.max_chars:
        return [(start, end)]
    boundaries = [start + m.end() for m in _PARAGRAPH_GAP.finditer(markdown[start:end])]
    pieces: list[tuple[int, int]] = []
    cursor = start
    while True:
        if end - cursor <= policy.max_chars:
            pieces.append((cursor, end))
            return pieces
        limit = cursor + policy.max_chars
        # largest paragraph boundary that still advances past the overlap
        candidates = [b for b in boundaries if cursor + policy.overlap_chars < b <= limit]
        cut = max(candidates) if candidates else limit
        pieces.append((cursor, cut))
        cursor = cut - policy.overlap_chars


# ---------------------------------------------------------------------------
# embedding


def embed(embedder: EmbedderDescriptor, text: str) -> tuple[float, ...]:
    """Unit-norm vector for a text; deterministic for the fake embedder."""
    if not text:
        raise ValueError("text must be non-empty")
    if embedder.dimension < 1:
        raise EmbedError("embedder has dimension 0 (semantic search disabled)")
    if embedder.kind == "deterministic_fake":
        return _fake_embedding(text, embedder.dimension)
    return _remote_embedding(embedder, text)


def _fake_embedding(text: str, dimension: int) -> tuple[float, ...]:
    lowered = text.lower()
    grams = [lowered[i:i + 3] for i in range(len(lowered) - 2)] or [lowered]
    counts = [0.0] * dimension
    for gram in grams:
        digest = blake2b(gram.encode("utf-8"), digest_size=8).digest()
        counts[int.from_bytes(digest, "big") % dimension] += 1.0
    norm = math.sqrt(sum(c * c for c in counts))
    return tuple(c / norm for c in counts)


def _remote_embedding(embedder: EmbedderDescriptor, text: str) -> tuple[float, ...]:
    last_error: Exception | None = None
    for attempt in range(3):
        try:
            response = httpx.post(embedder.endpoint_url,
                                  json={"model": embedder.embedder_id, "input": [text]},
                                  timeout=60.0)
            response.raise_for_status()
            vector = [float(x) for x in response.json()["data"][0]["embedding"]]
            if len(vector) != embedder.dimension:
                raise EmbedError(
                    f"endpoint returned dimension {len(vector)}, expected {embedder.dimension}")
            norm = math.sqrt(sum(x * x for x in vector))
            if norm == 0:
                raise EmbedError("endpoint returned a zero vector")
            return tuple(x / norm for x in vector)
        except (httpx.HTTPError, KeyError, IndexError, TypeError, ValueError) as exc:
            last_error = exc
            if attempt < 2:
                time.sleep(0.5 * (2 ** attempt))
    raise EmbedError(f"embedding endpoint {embedder.endpoint_url} failed: {last_error}")


# ---------------------------------------------------------------------------
# search


def bm25_search(index: CorpusIndex, query: str, k: int) -> list[RankedHit]:
    """Top-k chunks by Okapi BM25; ties broken by ascending chunk_id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    terms = sorted(set(tokenize(query)))
    if not terms:
        return []
    stats = index.lexical_stats
    n_chunks = len(index.chunks)
    scored: list[tuple[float, str]] = []
    for chunk in index.chunks:
        tf_map = stats.term_freqs.get(chunk.chunk_id, {})
        length = stats.lengths.get(chunk.chunk_id, 0)
        score = 0.0
        for term in terms:
            tf = tf_map.get(term, 0)
            if tf == 0:
                continue
            df = stats.doc_freqs.get(term, 0)
            idf = math.log(1.0 + (n_chunks - df + 0.5) / (df + 0.5))
            denom = tf + BM25_K1 * (1.0 - BM25_B + BM25_B * length / stats.avg_length)
            score += idf * tf * (BM25_K1 + 1.0) / denom
        if score > 0.0:
            scored.append((score, chunk.chunk_id))
    scored.sort(key=lambda pair: (-pair[0], pair[1]))
    return [RankedHit(chunk_id=cid, score=score, rank=i + 1, source="lexical")
            for i, (score, cid) in enumerate(scored[:k])]


def vector_search(index: CorpusIndex, query_vector: Sequence[float], k: int) -> list[RankedHit]:
    """Top-k chunks by cosine similarity (dot product of unit vectors)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    dims = {len(v) for v in index.vectors.values()}
    if dims and len(query_vector) not in dims:
        raise RetrievalError(
            f"query vector dimension {len(query_vector)} does not match index {dims.pop()}")
    scored = [
        (sum(a * b for a, b in zip(query_vector, vec)), cid)
        for cid, vec in index.vectors.items()
    ]
    scored.sort(key=lambda pair: (-pair[0], pair[1]))
    return [RankedHit(chunk_id=cid, score=score, rank=i + 1, source="semantic")
            for i, (score, cid) in enumerate(scored[:k])]


def hybrid_search(index: CorpusIndex, query: str, embedder: EmbedderDescriptor | None,
                  k: int, rrf_k: int = RRF_K,
                  candidate_depth: int | None = None) -> list[RankedHit]:
    """Reciprocal Rank Fusion of the lexical and semantic candidate lists.

    ``fused(d) = sum over lists of 1 / (rrf_k + rank_d)``; a chunk absent from
    a list contributes nothing for it.  With the embedder disabled (``None``
    or dimension 0) the fused ordering equals plain BM25 ordering.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not tokenize(query):  # vacuous query: nothing for either list to rank on
        return []
    depth = candidate_depth if candidate_depth is not None else max(k, FUSION_CANDIDATE_FLOOR)
    lexical = bm25_search(index, query, depth)
    semantic: list[RankedHit] = []
    if embedder is not None and embedder.dimension > 0 and index.vectors:
        semantic = vector_search(index, embed(embedder, query), depth)
    fused: dict[str, float] = {}
    for hits in (lexical, semantic):
        for hit in hits:
            fused[hit.chunk_id] = fused.get(hit.chunk_id, 0.0) + 1.0 / (rrf_k + hit.rank)
    ranked = sorted(fused.items(), key=lambda pair: (-pair[1], pair[0]))
    return [RankedHit(chunk_id=cid, score=score, rank=i + 1, source="fused")
            for i, (cid, score) in enumerate(ranked[:k])]


# ---------------------------------------------------------------------------
# ingestion


def build_lexical_stats(chunks: Sequence[Chunk]) -> LexicalStats:
    doc_freqs: dict[str, int] = {}
    term_freqs: dict[str, dict[str, int]] = {}
    lengths: dict[str, int] = {}
    for chunk in chunks:
        tokens = tokenize(chunk.text)
        lengths[chunk.chunk_id] = len(tokens)
        freqs: dict[str, int] = {}
        for token in tokens:
            freqs[token] = freqs.get(token, 0) + 1
        term_freqs[chunk.chunk_id] = dict(sorted(freqs.items()))
        for term in freqs:
            doc_freqs[term] = doc_freqs.get(term, 0) + 1
    total = sum(lengths.values())
    avg_length = total / len(chunks) if chunks else 0.0
    return LexicalStats(
        doc_freqs=dict(sorted(doc_freqs.items())),
        term_freqs=dict(sorted(term_freqs.items())),
        lengths=dict(sorted(lengths.items())),
        avg_length=avg_length,
    )


def build_index(chunks: Sequence[Chunk], embedder: EmbedderDescriptor) -> CorpusIndex:
    ordered = sorted(chunks, key=lambda c: c.chunk_id)
    vectors = {c.chunk_id: embed(embedder, c.text) for c in ordered}
    return CorpusIndex(
        chunks=tuple(ordered),
        lexical_stats=build_lexical_stats(ordered),
        vectors=vectors,
        embedder_id=embedder.embedder_id,
    )


def _load_manifest(root: Path) -> dict[str, dict[str, str]]:
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        return {}
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise IngestError(f"unreadable manifest {manifest_path}: {exc}") from exc
    if not isinstance(manifest, dict):
        raise IngestError("manifest.json must map filenames to document metadata")
    for filename, meta in manifest.items():
        if not (root / filename).is_file():
            raise IngestError(f"manifest references missing file: {filename}")
        if not isinstance(meta, dict) or meta.get("kind") not in MANIFEST_KINDS:
            raise IngestError(
                f"manifest entry for {filename} needs a kind in {MANIFEST_KINDS}")
    return manifest


def ingest_corpus(root: Path | str, embedder: EmbedderDescriptor,
                  policy: ChunkPolicy = ChunkPolicy()) -> CorpusIndex:
    """Chunk, analyse and embed every ``*.md`` document under ``root``.

    The optional ``manifest.json`` maps filenames to document kinds and is
    validated here; the resulting index is immutable and fully serializable.
    """
    root = Path(root)
    if not root.is_dir():
        raise IngestError(f"corpus directory not found: {root}")
    _load_manifest(root)
    files = sorted(p for p in root.iterdir() if p.suffix == ".md" and p.is_file())
    if not files:
        raise IngestError(f"no .md documents under {root}")
    chunks: list[Chunk] = []
    for path in files:
        try:
            text = path.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            raise IngestError(f"unreadable file {path.name}: {exc}") from exc
        if not text.strip():
            raise IngestError(f"empty document: {path.name}")
        chunks.extend(chunk_document(path.stem, text, policy))
    if embedder.dimension < 1:
        raise IngestError("ingest requires an embedder with dimension >= 1")
    return build_index(chunks, embedder)


def save_index(index: CorpusIndex, path: Path | str) -> None:
    Path(path).write_bytes(to_canonical_json(index).encode("utf-8"))


def load_index(path: Path | str) -> CorpusIndex:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise RetrievalError(f"cannot read index file {path}: {exc}") from exc
    return from_json(CorpusIndex, text)


def require_embedder_match(index: CorpusIndex, embedder: EmbedderDescriptor | None) -> None:
    """Reject pairing an index with a different embedder than built it."""
    if embedder is not None and embedder.dimension > 0 and embedder.embedder_id != index.embedder_id:
        raise RetrievalError(
            f"index was built with embedder {index.embedder_id!r}, "
            f"got {embedder.embedder_id!r}")
