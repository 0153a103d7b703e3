"""Per-hop retrieval quality and end-to-end stopping diagnostics.

Hits@k is computed per hop with sequential gating: hop h is credited at
level k only if the gold passage for hop h ranks within the top-k AND every
earlier hop was credited at that k.  Evaluation is teacher-forced: after a
hop the gold passage is appended to the chain regardless of rank, so each
hop isolates retrieval quality given a correct prefix.

Conventions the aggregate depends on (both are recorded in the table
metadata): the hop-h denominator counts every instance with gold length
>= h, failed predecessors included; the per-k average is the micro average
over (instance, hop) pairs, with the macro average (mean of per-hop rates)
reported alongside.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .core import ActionKind, Chain, MultiHopInstance, Passage
from .embedding import EmbeddingProvider
from .engine import HopTrace, retrieve_step
from .errors import UnknownInstanceId
from .index import VectorIndex
from .parallel import parallel_map


@dataclass(frozen=True)
class HopHits:
    hop: int
    hits: float
    successes: int
    denominator: int


@dataclass
class HitsTable:
    per_k: dict[int, list[HopHits]]
    avg_per_k: dict[int, float]
    macro_avg_per_k: dict[int, float]
    metadata: dict = field(default_factory=dict)


def _instance_hop_ranks(
    instance: MultiHopInstance,
    corpus: Mapping[str, Passage],
    index: VectorIndex,
    provider: EmbeddingProvider,
    k_max: int,
    max_hop: int,
    *,
    gold_order: str,
    instruction_query: str,
    include_actions: bool,
    exclude_retrieved: bool,
) -> list[int | None]:
    """Rank position (0-based) of the credited gold passage per hop.

    None means the hop's gold evidence was outside the top k_max; once that
    happens no further hop can be evaluated and the remaining hops are
    None as well.
    """
    hops = min(instance.hops, max_hop)
    chain = Chain(
        instruction_query=instruction_query,
        query=instance.query,
        task_kind=instance.task_kind,
    )
    positions: list[int | None] = []
    remaining = list(instance.gold_chain)
    for hop in range(hops):
        result = retrieve_step(
            chain, index, provider, k_max,
            exclude_retrieved=exclude_retrieved, include_actions=include_actions,
        )
        ranked_ids = result.ids()
        if gold_order == "unordered":
            best: tuple[int, str] | None = None
            for gold_id in remaining:
                try:
                    pos = ranked_ids.index(gold_id)
                except ValueError:
                    continue
                if best is None or pos < best[0]:
                    best = (pos, gold_id)
            if best is None:
                positions.extend([None] * (hops - hop))
                break
            positions.append(best[0])
            credited = best[1]
        else:
            credited = instance.gold_chain[hop]
            try:
                positions.append(ranked_ids.index(credited))
            except ValueError:
                positions.extend([None] * (hops - hop))
                break
        remaining.remove(credited)
        chain = chain.extend(corpus[credited], ActionKind.EVAL_RELEVANT)
    return positions


def evaluate_hits(
    instances: Sequence[MultiHopInstance],
    corpus: Mapping[str, Passage],
    index: VectorIndex,
    provider: EmbeddingProvider,
    ks: Sequence[int],
    max_hop: int,
    *,
    gold_order: str = "ordered",
    instruction_query: str,
    include_actions: bool = True,
    exclude_retrieved: bool = True,
    workers: int = 1,
) -> HitsTable:
    if not instances:
        raise ValueError("evaluate_hits requires at least one instance")
    if max_hop < 1:
        raise ValueError("max_hop must be >= 1")
    ks = sorted(set(int(k) for k in ks))
    if ks[0] < 1:
        raise ValueError("every k must be >= 1")
    k_max = ks[-1]

    def worker(instance: MultiHopInstance) -> list[int | None]:
        return _instance_hop_ranks(
            instance, corpus, index, provider, k_max, max_hop,
            gold_order=gold_order, instruction_query=instruction_query,
            include_actions=include_actions, exclude_retrieved=exclude_retrieved,
        )

    all_positions = parallel_map(worker, instances, workers)

    table_hops = min(max_hop, max(i.hops for i in instances))
    successes = {k: [0] * table_hops for k in ks}
    denominators = [0] * table_hops
    for instance, positions in zip(instances, all_positions):
        hops = min(instance.hops, max_hop)
        for h in range(hops):
            denominators[h] += 1
        for k in ks:
            alive = True
            for h in range(hops):
                pos = positions[h]
                hit = alive and pos is not None and pos < k
                if hit:
                    successes[k][h] += 1
                else:
                    alive = False

    per_k: dict[int, list[HopHits]] = {}
    avg_per_k: dict[int, float] = {}
    macro_avg_per_k: dict[int, float] = {}
    for k in ks:
        rows = [
            HopHits(
                hop=h + 1,
                hits=(successes[k][h] / denominators[h]) if denominators[h] else 0.0,
                successes=successes[k][h],
                denominator=denominators[h],
            )
            for h in range(table_hops)
        ]
        per_k[k] = rows
        total_pairs = sum(denominators)
        avg_per_k[k] = (sum(successes[k]) / total_pairs) if total_pairs else 0.0
        rates = [row.hits for row in rows if row.denominator]
        macro_avg_per_k[k] = sum(rates) / len(rates) if rates else 0.0

    return HitsTable(
        per_k=per_k,
        avg_per_k=avg_per_k,
        macro_avg_per_k=macro_avg_per_k,
        metadata={
            "denominator": "instances with gold length >= hop; failed predecessors count as failures",
            "average": "micro over (instance, hop) pairs; macro reported alongside",
            "gold_order": gold_order,
            "max_hop": max_hop,
            "instances": len(instances),
            "mode": "teacher_forced",
        },
    )


@dataclass(frozen=True)
class Diagnostics:
    traces: int
    early_stops: int
    overshoots: int
    exact_stops: int
    avg_hops: float
    avg_latency_per_hop: float
    latency_by_hop: tuple[float, ...]


def diagnose(
    traces: Sequence[HopTrace], instances: Sequence[MultiHopInstance]
) -> Diagnostics:
    """End-to-end stopping diagnostics over live (non-teacher-forced) traces."""
    gold_length = {i.id: i.hops for i in instances}
    early = overshoot = exact = 0
    total_hops = 0
    total_latency = 0.0
    by_hop_sums: list[float] = []
    by_hop_counts: list[int] = []
    for trace in traces:
        if trace.instance_id not in gold_length:
            raise UnknownInstanceId(f"trace references unknown instance {trace.instance_id!r}")
        gold = gold_length[trace.instance_id]
        if trace.hop_count < gold:
            early += 1
        elif trace.hop_count > gold:
            overshoot += 1
        else:
            exact += 1
        total_hops += trace.hop_count
        for position, hop in enumerate(trace.hops):
            total_latency += hop.latency
            if position >= len(by_hop_sums):
                by_hop_sums.append(0.0)
                by_hop_counts.append(0)
            by_hop_sums[position] += hop.latency
            by_hop_counts[position] += 1
    n = len(traces)
    return Diagnostics(
        traces=n,
        early_stops=early,
        overshoots=overshoot,
        exact_stops=exact,
        avg_hops=(total_hops / n) if n else 0.0,
        avg_latency_per_hop=(total_latency / total_hops) if total_hops else 0.0,
        latency_by_hop=tuple(
            s / c for s, c in zip(by_hop_sums, by_hop_counts)
        ),
    )


def hits_table_to_dict(table: HitsTable) -> dict:
    return {
        "per_k": {
            str(k): [
                {
                    "hop": row.hop,
                    "hits": row.hits,
                    "successes": row.successes,
                    "denominator": row.denominator,
                }
                for row in rows
            ]
            for k, rows in table.per_k.items()
        },
        "avg_per_k": {str(k): v for k, v in table.avg_per_k.items()},
        "macro_avg_per_k": {str(k): v for k, v in table.macro_avg_per_k.items()},
        "metadata": table.metadata,
    }


def render_hits_markdown(table: HitsTable, label: str = "this run") -> str:
    """One wide markdown row per system: hop columns grouped under each k."""
    ks = sorted(table.per_k)
    hops = max((len(rows) for rows in table.per_k.values()), default=0)
    header = ["Model"]
    for k in ks:
        header.extend([f"Hits@{k} h{h}" for h in range(1, hops + 1)])
        header.append(f"Hits@{k} Avg")
    row = [label]
    for k in ks:
        rows = table.per_k[k]
        for h in range(hops):
            row.append(f"{rows[h].hits * 100:.2f}" if h < len(rows) else "-")
        row.append(f"{table.avg_per_k[k] * 100:.2f}")
    lines = [
        "| " + " | ".join(header) + " |",
        "|" + "|".join(["---"] * len(header)) + "|",
        "| " + " | ".join(row) + " |",
    ]
    return "\n".join(lines)


def render_diagnostics_markdown(diagnostics: Diagnostics, label: str = "this run") -> str:
    header = "| Model | Early Stops | Overshoots | Avg. Hops | Avg. Latency / Hop (s) |"
    divider = "|---|---|---|---|---|"
    row = (
        f"| {label} | {diagnostics.early_stops} | {diagnostics.overshoots} "
        f"| {diagnostics.avg_hops:.2f} | {diagnostics.avg_latency_per_hop:.2f} |"
    )
    return "\n".join([header, divider, row])
