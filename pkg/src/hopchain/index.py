"""Exact top-k inner-product search over precomputed passage vectors.

The index is the offline candidate store of the retrieval loop: every
passage is embedded once at build time, and each hop is answered by a full
scan over the stored matrix.  Search is exact by design; scores are raw dot
products computed in float64 over the stored float32 vectors, ties broken
by ascending passage id so rankings are deterministic.

Persistence uses a little-endian binary layout (docs/index-format.md):
magic, format version, CRC32 of the remainder, a JSON metadata block, then
the packed float32 vector matrix.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import Passage
from .embedding import (
    UNIT_NORM_TOLERANCE,
    EmbeddingProvider,
    EmbeddingRequest,
    Role,
)
from .errors import CorruptIndex, DimensionMismatch, DuplicatePassageId

MAGIC = b"HCIX"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class SearchResult:
    """Ranked (passage_id, score) pairs, best first."""

    ranked: tuple[tuple[str, float], ...]

    def ids(self) -> tuple[str, ...]:
        return tuple(pid for pid, _ in self.ranked)

    def __len__(self) -> int:
        return len(self.ranked)


@dataclass
class VectorIndex:
    dimension: int
    ids: tuple[str, ...]
    vectors: np.ndarray  # float32, shape (len(ids), dimension), unit rows
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.vectors.shape != (len(self.ids), self.dimension):
            raise ValueError(
                f"vector matrix shape {self.vectors.shape} does not match "
                f"{len(self.ids)} ids x {self.dimension} dims"
            )
        if len(set(self.ids)) != len(self.ids):
            raise DuplicatePassageId("index ids must be unique")
        norms = np.linalg.norm(self.vectors.astype(np.float64), axis=1)
        if len(norms) and np.max(np.abs(norms - 1.0)) > UNIT_NORM_TOLERANCE:
            raise ValueError("index vectors must be unit-norm")
        self._row_by_id = {pid: i for i, pid in enumerate(self.ids)}
        self._matrix64: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def matrix64(self) -> np.ndarray:
        if self._matrix64 is None:
            self._matrix64 = self.vectors.astype(np.float64)
        return self._matrix64

    def row(self, passage_id: str) -> int:
        return self._row_by_id[passage_id]

    def has(self, passage_id: str) -> bool:
        return passage_id in self._row_by_id

    def vector_for(self, passage_id: str) -> np.ndarray:
        return self.vectors[self._row_by_id[passage_id]]

    def entries(self) -> Iterable[tuple[str, np.ndarray]]:
        for i, pid in enumerate(self.ids):
            yield pid, self.vectors[i]


def passage_embedding_text(passage: Passage) -> str:
    """The text a passage is embedded from: title and body, title first."""
    if passage.title:
        return passage.title + "\n" + passage.text
    return passage.text


def build_index(
    corpus: Sequence[Passage],
    provider: EmbeddingProvider,
    instruction_document: str,
    *,
    include_actions_mode: bool = True,
    timestamp: str = "",
    extra_metadata: dict | None = None,
    batch_size: int = 512,
) -> VectorIndex:
    """Embed every passage once and assemble the searchable matrix.

    `timestamp` defaults to empty so identical corpus+provider inputs
    produce byte-identical persisted files; pass a wall-clock string to
    record build time at the cost of reproducibility.
    """
    if not corpus:
        raise ValueError("cannot build an index over an empty corpus")
    ids = [p.id for p in corpus]
    seen: set[str] = set()
    for pid in ids:
        if pid in seen:
            raise DuplicatePassageId(f"duplicate passage id: {pid!r}")
        seen.add(pid)

    rows: list[np.ndarray] = []
    for start in range(0, len(corpus), batch_size):
        chunk = corpus[start : start + batch_size]
        requests = [
            EmbeddingRequest(passage_embedding_text(p), Role.DOCUMENT, instruction_document)
            for p in chunk
        ]
        rows.extend(provider.embed_batch(requests))
    matrix = np.stack(rows).astype(np.float32)

    metadata = {
        "provider_name": provider.name,
        "instruction_document": instruction_document,
        "include_actions_mode": include_actions_mode,
        "build_timestamp": timestamp,
    }
    if extra_metadata:
        metadata.update(extra_metadata)
    return VectorIndex(
        dimension=int(matrix.shape[1]), ids=tuple(ids), vectors=matrix, metadata=metadata
    )


def search(
    index: VectorIndex,
    query: np.ndarray,
    k: int,
    exclude: frozenset[str] | set[str] = frozenset(),
) -> SearchResult:
    """Exact top-k by dot product over non-excluded entries.

    Ties are broken by ascending passage id.  Returns fewer than k results
    when the corpus (minus exclusions) is smaller than k.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    if query.shape[0] != index.dimension:
        raise DimensionMismatch(
            f"query dimension {query.shape[0]} != index dimension {index.dimension}"
        )
    scores = index.matrix64 @ query

    if exclude:
        keep = [i for i, pid in enumerate(index.ids) if pid not in exclude]
        if not keep:
            return SearchResult(ranked=())
        candidate_rows = np.asarray(keep, dtype=np.int64)
        candidate_scores = scores[candidate_rows]
    else:
        candidate_rows = np.arange(len(index.ids), dtype=np.int64)
        candidate_scores = scores

    m = len(candidate_rows)
    k_eff = min(k, m)
    if k_eff < m:
        # everything scoring at or above the k-th value, so boundary ties
        # can be resolved by id before truncating
        kth = np.partition(candidate_scores, m - k_eff)[m - k_eff]
        contenders = np.nonzero(candidate_scores >= kth)[0]
    else:
        contenders = np.arange(m)
    pairs = [
        (index.ids[candidate_rows[j]], float(candidate_scores[j])) for j in contenders
    ]
    pairs.sort(key=lambda item: (-item[1], item[0]))
    return SearchResult(ranked=tuple(pairs[:k_eff]))


def _metadata_block(index: VectorIndex) -> bytes:
    doc = {
        "dimension": index.dimension,
        "count": len(index.ids),
        "ids": list(index.ids),
        "metadata": index.metadata,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_index(index: VectorIndex, path: str | Path) -> None:
    meta = _metadata_block(index)
    payload = (
        len(meta).to_bytes(8, "little")
        + meta
        + np.ascontiguousarray(index.vectors, dtype="<f4").tobytes()
    )
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    blob = MAGIC + FORMAT_VERSION.to_bytes(4, "little") + crc.to_bytes(4, "little") + payload
    Path(path).write_bytes(blob)


def load_index(path: str | Path) -> VectorIndex:
    blob = Path(path).read_bytes()
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CorruptIndex(f"{path}: not an index file (bad magic)")
    version = int.from_bytes(blob[4:8], "little")
    if version != FORMAT_VERSION:
        raise CorruptIndex(f"{path}: unsupported format version {version}")
    crc = int.from_bytes(blob[8:12], "little")
    payload = blob[12:]
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CorruptIndex(f"{path}: checksum mismatch")
    if len(payload) < 8:
        raise CorruptIndex(f"{path}: truncated header")
    meta_len = int.from_bytes(payload[:8], "little")
    if len(payload) < 8 + meta_len:
        raise CorruptIndex(f"{path}: truncated metadata block")
    try:
        doc = json.loads(payload[8 : 8 + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptIndex(f"{path}: unreadable metadata block: {exc}") from None
    dimension = doc["dimension"]
    count = doc["count"]
    raw = payload[8 + meta_len :]
    expected = count * dimension * 4
    if len(raw) != expected:
        raise CorruptIndex(
            f"{path}: vector payload is {len(raw)} bytes, expected {expected}"
        )
    matrix = np.frombuffer(raw, dtype="<f4").reshape(count, dimension).copy()
    return VectorIndex(
        dimension=dimension,
        ids=tuple(doc["ids"]),
        vectors=matrix,
        metadata=doc["metadata"],
    )


def check_dimension(index: VectorIndex, provider: EmbeddingProvider) -> None:
    """Hard error when a provider cannot serve an existing index."""
    if provider.dimension != index.dimension:
        raise DimensionMismatch(
            f"provider dimension {provider.dimension} != index dimension {index.dimension}"
        )
