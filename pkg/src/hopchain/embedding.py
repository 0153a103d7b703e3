"""Embedding providers: a deterministic reference embedder and a remote client.

Both providers return unit-norm float32 numpy vectors of a fixed, provider-
determined dimension.  The reference provider is a hashed bag-of-tokens
embedder: deterministic, fast, and transparent enough that synthetic corpora
with provably known nearest neighbours can be constructed for tests.

The remote provider speaks the JSON protocol documented in
docs/embedding-protocol.md and is how an externally served neural model is
plugged in; no model inference happens in this package.
"""

from __future__ import annotations

import hashlib
import os
import re
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import EmptyText, ProviderUnavailable

ENDPOINT_ENV_VAR = "HOPCHAIN_EMBED_ENDPOINT"
UNIT_NORM_TOLERANCE = 1e-6

# kept short and lexically disjoint from the query-side instruction (see
# core.DEFAULT_INSTRUCTION_QUERY)
DEFAULT_INSTRUCTION_DOCUMENT = "Encode one candidate passage."


class Role(str, Enum):
    QUERY_CHAIN = "query_chain"
    DOCUMENT = "document"


@dataclass(frozen=True)
class EmbeddingRequest:
    """A text to embed plus the instruction prepended before encoding.

    Chain texts already lead with their own instruction line, so requests
    built from rendered chains carry instruction="".  Document requests
    must carry the corpus-wide document instruction used at index build
    time.
    """

    text: str
    role: Role
    instruction: str = ""


class EmbeddingProvider(Protocol):
    name: str
    dimension: int

    def embed(self, request: EmbeddingRequest) -> np.ndarray: ...

    def embed_batch(self, requests: Sequence[EmbeddingRequest]) -> list[np.ndarray]: ...


_TOKEN_RE = re.compile(r"\w+", re.UNICODE)


def _hash_token(token: str, dimension: int) -> tuple[int, float]:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    bucket = int.from_bytes(digest[:4], "little") % dimension
    sign = 1.0 if digest[4] & 1 else -1.0
    return bucket, sign


def tokenize(text: str) -> list[str]:
    """Lowercased word tokens; whitespace and punctuation are delimiters."""
    return _TOKEN_RE.findall(text.lower())


class HashedTokenEmbedder:
    """Deterministic reference embedder.

    Each token is hashed to one of `dimension` buckets with a signed
    contribution (+1/-1), the bucket counts are accumulated and the result
    is L2-normalized.  The instruction is prepended to the text before
    tokenization, so it influences the vector.  Cosine similarity between
    two texts therefore depends only on their token multisets.
    """

    name = "reference"

    def __init__(self, dimension: int = 256):
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        self.dimension = dimension

    def embed(self, request: EmbeddingRequest) -> np.ndarray:
        if not request.text.strip():
            raise EmptyText("cannot embed empty text")
        combined = (
            request.instruction + "\n" + request.text if request.instruction else request.text
        )
        tokens = tokenize(combined)
        if not tokens:
            # punctuation-only text: hash the raw text as a single token so
            # the result is still deterministic and unit-norm
            tokens = [combined.strip()]
        accum = np.zeros(self.dimension, dtype=np.float64)
        for token in tokens:
            bucket, sign = _hash_token(token, self.dimension)
            accum[bucket] += sign
        norm = float(np.linalg.norm(accum))
        if norm == 0.0:
            # signed collisions cancelled everything; fall back to one bucket
            bucket, _ = _hash_token(combined, self.dimension)
            accum[bucket] = 1.0
            norm = 1.0
        return (accum / norm).astype(np.float32)

    def embed_batch(self, requests: Sequence[EmbeddingRequest]) -> list[np.ndarray]:
        if not requests:
            raise ValueError("embed_batch requires a non-empty request list")
        return [self.embed(r) for r in requests]


def _http_post_json(url: str, payload: dict, timeout: float) -> dict:
    import httpx

    try:
        response = httpx.post(url, json=payload, timeout=timeout)
        response.raise_for_status()
        return response.json()
    except httpx.HTTPError as exc:
        raise TransportError(str(exc)) from exc


class TransportError(Exception):
    """Raised by transports on any delivery failure; triggers a retry."""


class RemoteEmbedder:
    """Client for a remote embedding service.

    Requests are grouped by (role, instruction) and posted as
    {"texts": [...], "role": ..., "instruction": ...}; the service answers
    {"vectors": [[...], ...]}.  A batch fails atomically: any transport or
    contract failure surfaces as ProviderUnavailable for the whole call.
    """

    name = "remote"

    def __init__(
        self,
        endpoint: str | None = None,
        dimension: int | None = None,
        timeout: float = 30.0,
        retries: int = 2,
        backoff: float = 0.5,
        max_concurrency: int = 4,
        transport: Callable[[str, dict, float], dict] | None = None,
    ):
        endpoint = endpoint or os.environ.get(ENDPOINT_ENV_VAR)
        if not endpoint:
            raise ValueError(
                f"remote endpoint not configured (set {ENDPOINT_ENV_VAR} or pass endpoint=)"
            )
        self.endpoint = endpoint
        self._dimension = dimension
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self._transport = transport or _http_post_json
        self._gate = threading.Semaphore(max_concurrency)

    @property
    def dimension(self) -> int:
        if self._dimension is None:
            probe = self.embed(EmbeddingRequest("dimension probe", Role.DOCUMENT))
            self._dimension = int(probe.shape[0])
        return self._dimension

    def _post(self, payload: dict) -> dict:
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                with self._gate:
                    return self._transport(self.endpoint, payload, self.timeout)
            except TransportError as exc:
                last_error = exc
                if attempt < self.retries:
                    time.sleep(self.backoff * (2**attempt))
        raise ProviderUnavailable(
            f"embedding service unreachable after {self.retries + 1} attempts: {last_error}"
        )

    def _decode(self, body: dict, expected: int) -> list[np.ndarray]:
        vectors = body.get("vectors")
        if not isinstance(vectors, list) or len(vectors) != expected:
            raise ProviderUnavailable(
                f"embedding service returned {len(vectors) if isinstance(vectors, list) else 'no'}"
                f" vectors for {expected} texts"
            )
        out = []
        for raw in vectors:
            vec = np.asarray(raw, dtype=np.float32)
            if vec.ndim != 1:
                raise ProviderUnavailable("embedding service returned a non-flat vector")
            if self._dimension is not None and vec.shape[0] != self._dimension:
                raise ProviderUnavailable(
                    f"embedding service changed dimension: {vec.shape[0]} != {self._dimension}"
                )
            norm = float(np.linalg.norm(vec))
            if abs(norm - 1.0) > UNIT_NORM_TOLERANCE:
                raise ProviderUnavailable(f"embedding service returned non-unit vector (norm={norm})")
            out.append(vec)
        if out and self._dimension is None:
            self._dimension = int(out[0].shape[0])
        return out

    def embed(self, request: EmbeddingRequest) -> np.ndarray:
        return self.embed_batch([request])[0]

    def embed_batch(self, requests: Sequence[EmbeddingRequest]) -> list[np.ndarray]:
        if not requests:
            raise ValueError("embed_batch requires a non-empty request list")
        for r in requests:
            if not r.text.strip():
                raise EmptyText("cannot embed empty text")
        results: list[np.ndarray | None] = [None] * len(requests)
        # group by (role, instruction) to match the wire schema, keep order
        groups: dict[tuple[str, str], list[int]] = {}
        for pos, r in enumerate(requests):
            groups.setdefault((r.role.value, r.instruction), []).append(pos)
        for (role, instruction), positions in groups.items():
            payload = {
                "texts": [requests[p].text for p in positions],
                "role": role,
                "instruction": instruction,
            }
            body = self._post(payload)
            vectors = self._decode(body, len(positions))
            for p, vec in zip(positions, vectors):
                results[p] = vec
        return [r for r in results if r is not None]


def make_provider(
    kind: str,
    *,
    dimension: int = 256,
    endpoint: str | None = None,
    transport: Callable[[str, dict, float], dict] | None = None,
) -> EmbeddingProvider:
    """Factory behind the CLI's --provider flag."""
    if kind == "reference":
        return HashedTokenEmbedder(dimension=dimension)
    if kind == "remote":
        return RemoteEmbedder(endpoint=endpoint, transport=transport)
    raise ValueError(f"unknown provider kind: {kind!r}")
