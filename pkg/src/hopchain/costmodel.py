"""Analytical cost model and micro-benchmark for retrieval architectures.

Compares the per-query cost structure of a cross-encoder retriever, which
must run a forward pass over every (query, passage) pair at every hop,
against a dense bi-encoder, which embeds the corpus once offline and pays
only one query encoding plus a vector search per hop.

Costs are abstract units (token passes), not seconds; wall-clock enters
only through bench_empirical, which simulates the per-candidate scoring
loop with the reference embedder and measures the dense path on a real
index.  Arithmetic is float: absurdly large workloads saturate to inf
rather than raising.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

from .core import DEFAULT_INSTRUCTION_QUERY, Chain, render_chain, Passage
from .embedding import (
    DEFAULT_INSTRUCTION_DOCUMENT,
    EmbeddingProvider,
    EmbeddingRequest,
    Role,
)
from .index import build_index, search

# Frozen acceptance threshold: fitted per-candidate-scoring slope over
# fitted dense-online slope must exceed this on the standard size sweep.
SLOPE_RATIO_THRESHOLD = 5.0
VARIANCE_WARNING_FRACTION = 0.20


@dataclass(frozen=True)
class WorkloadParams:
    queries: float
    avg_hops: float
    corpus_size: float
    query_tokens: float  # query plus previously retrieved context
    passage_tokens: float

    def __post_init__(self):
        for name in ("queries", "avg_hops", "corpus_size", "query_tokens", "passage_tokens"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class CostFunctions:
    """forward_pass_cost maps input length to cost; search_cost maps corpus size."""

    forward_pass_cost: Callable[[float], float]
    search_cost: Callable[[float], float]


def linear_cost(coefficient: float = 1.0) -> Callable[[float], float]:
    return lambda length: coefficient * length


def constant_cost(value: float) -> Callable[[float], float]:
    return lambda _size: value


def cross_encoder_cost(workload: WorkloadParams, costs: CostFunctions) -> float:
    """Every candidate passage is re-encoded with the query at every hop."""
    return (
        workload.queries
        * workload.avg_hops
        * workload.corpus_size
        * costs.forward_pass_cost(workload.query_tokens + workload.passage_tokens)
    )


@dataclass(frozen=True)
class DenseCost:
    offline: float  # encode the corpus once
    online: float  # per-workload query encodings plus vector searches


def dense_cost(workload: WorkloadParams, costs: CostFunctions) -> DenseCost:
    offline = workload.corpus_size * costs.forward_pass_cost(workload.passage_tokens)
    online = (
        workload.queries
        * workload.avg_hops
        * (costs.forward_pass_cost(workload.query_tokens) + costs.search_cost(workload.corpus_size))
    )
    return DenseCost(offline=offline, online=online)


def _fit_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    n = len(xs)
    mean_x = sum(xs) / n
    mean_y = sum(ys) / n
    num = sum((x - mean_x) * (y - mean_y) for x, y in zip(xs, ys))
    den = sum((x - mean_x) ** 2 for x in xs)
    return num / den if den else 0.0


def _synthetic_corpus(size: int) -> list[Passage]:
    return [
        Passage(
            id=f"bench-{i}",
            title="",
            text=f"entry {i} topic{i % 97} body{i % 31} filler words",
        )
        for i in range(size)
    ]


def bench_empirical(
    corpus_sizes: Sequence[int],
    provider: EmbeddingProvider,
    trials: int = 3,
    *,
    queries_per_measurement: int = 10,
    k: int = 10,
    slope_ratio_threshold: float = SLOPE_RATIO_THRESHOLD,
) -> dict:
    """Measure simulated per-candidate scoring vs the dense path.

    The cross-encoder stand-in embeds the concatenation of the chain text
    and each candidate passage (same order of work per pair as a real
    cross-encoder, no neural net needed).  The dense path builds the index
    once per size and measures query-encode-plus-search.  Returns a report
    with per-size timings, fitted per-query slopes and their ratio; a
    noisy-environment warning is attached when trial variance exceeds
    20% of the mean.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    sizes = sorted(set(int(s) for s in corpus_sizes))
    chain = Chain(
        instruction_query=DEFAULT_INSTRUCTION_QUERY,
        query="which entry links the first topic to the final body",
    )
    chain_text = render_chain(chain, include_actions=True)

    per_size: list[dict] = []
    warnings: list[str] = []
    for size in sizes:
        corpus = _synthetic_corpus(size)
        cross_trials: list[float] = []
        dense_online_trials: list[float] = []
        offline_trials: list[float] = []
        for _ in range(trials):
            started = time.perf_counter()
            for passage in corpus:
                provider.embed(
                    EmbeddingRequest(chain_text + "\n" + passage.text, Role.QUERY_CHAIN)
                )
            cross_trials.append(time.perf_counter() - started)

            started = time.perf_counter()
            index = build_index(corpus, provider, DEFAULT_INSTRUCTION_DOCUMENT)
            offline_trials.append(time.perf_counter() - started)

            started = time.perf_counter()
            for _ in range(queries_per_measurement):
                vector = provider.embed(EmbeddingRequest(chain_text, Role.QUERY_CHAIN))
                search(index, vector, k)
            dense_online_trials.append(
                (time.perf_counter() - started) / queries_per_measurement
            )

        row = {
            "corpus_size": size,
            "cross_per_query_s": sum(cross_trials) / trials,
            "dense_online_per_query_s": sum(dense_online_trials) / trials,
            "dense_offline_s": sum(offline_trials) / trials,
            "cross_trials_s": cross_trials,
            "dense_online_trials_s": dense_online_trials,
        }
        per_size.append(row)
        for label, values in (("cross", cross_trials), ("dense_online", dense_online_trials)):
            mean = sum(values) / trials
            if trials > 1 and mean > 0:
                variance = sum((v - mean) ** 2 for v in values) / (trials - 1)
                if (variance**0.5) / mean > VARIANCE_WARNING_FRACTION:
                    warnings.append(
                        f"noisy environment: {label} timings at corpus_size={size} vary "
                        f"more than {VARIANCE_WARNING_FRACTION:.0%} of the mean"
                    )

    xs = [float(row["corpus_size"]) for row in per_size]
    cross_slope = _fit_slope(xs, [row["cross_per_query_s"] for row in per_size])
    dense_slope = _fit_slope(xs, [row["dense_online_per_query_s"] for row in per_size])
    if dense_slope > 0:
        ratio = cross_slope / dense_slope
    else:
        ratio = float("inf")  # dense growth indistinguishable from flat
    return {
        "sizes": sizes,
        "trials": trials,
        "per_size": per_size,
        "cross_slope_s_per_passage": cross_slope,
        "dense_online_slope_s_per_passage": dense_slope,
        "slope_ratio": ratio,
        "slope_ratio_threshold": slope_ratio_threshold,
        "threshold_met": ratio > slope_ratio_threshold,
        "warnings": warnings,
    }
