"""Dense hard-negative mining.

For a given instance and hop, the nearest non-gold passages to the hop's
chain embedding are collected and filtered: candidates leaking the hop's
sub-answer (when decomposition data exists) and near-duplicates of the
positive passage (cosine above the ceiling) are dropped.  The survivors,
hardest first, feed contrastive training; the single hardest one becomes
the causal negative.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .core import ActionKind, Chain, MultiHopInstance, Passage, render_chain
from .embedding import EmbeddingProvider, EmbeddingRequest, Role
from .index import VectorIndex, search


@dataclass(frozen=True)
class MiningConfig:
    negatives_per_positive: int = 10
    similarity_ceiling: float = 0.95
    pool_size: int = 100

    def __post_init__(self):
        if not 1 <= self.negatives_per_positive <= self.pool_size:
            raise ValueError("need 1 <= negatives_per_positive <= pool_size")
        if not 0.0 < self.similarity_ceiling <= 1.0:
            raise ValueError("similarity_ceiling must be in (0, 1]")


@dataclass(frozen=True)
class MinedNegatives:
    instance_id: str
    hop_index: int
    negatives: tuple[str, ...]  # descending hardness
    hardest: str | None  # negatives[0], None when nothing survived
    insufficient: bool  # fewer survivors than requested; list is short, never padded


def _normalize_ws(text: str) -> str:
    return " ".join(text.split()).casefold()


def contains_sub_answer(text: str, sub_answer: str) -> bool:
    """Case-insensitive substring match after whitespace normalization."""
    needle = _normalize_ws(sub_answer)
    return bool(needle) and needle in _normalize_ws(text)


def hop_chain(
    instance: MultiHopInstance,
    hop_index: int,
    corpus: Mapping[str, Passage],
    instruction_query: str,
) -> Chain:
    """The gold prefix chain whose embedding retrieves hop `hop_index`."""
    chain = Chain(
        instruction_query=instruction_query,
        query=instance.query,
        task_kind=instance.task_kind,
    )
    for gold_id in instance.gold_chain[:hop_index]:
        chain = chain.extend(corpus[gold_id], ActionKind.EVAL_RELEVANT)
    return chain


def mine_negatives(
    instance: MultiHopInstance,
    hop_index: int,
    corpus: Mapping[str, Passage],
    index: VectorIndex,
    provider: EmbeddingProvider,
    config: MiningConfig,
    *,
    instruction_query: str,
    include_actions: bool = True,
) -> MinedNegatives:
    """Mine hard negatives for one (instance, hop) pair.

    hop_index is 0-based and must be < the instance's gold length.  The
    sub-answer filter applies only when the instance carries decomposition
    data; the cosine ceiling compares each candidate to the positive
    passage's stored vector.
    """
    if hop_index >= len(instance.gold_chain):
        raise ValueError(
            f"hop_index {hop_index} out of range for {len(instance.gold_chain)}-hop instance"
        )
    chain = hop_chain(instance, hop_index, corpus, instruction_query)
    text = render_chain(chain, include_actions=include_actions)
    vector = provider.embed(EmbeddingRequest(text, Role.QUERY_CHAIN))
    pool = search(index, vector, config.pool_size)

    gold = set(instance.gold_chain)
    sub_answer = None
    if instance.decomposition is not None:
        sub_answer = instance.decomposition[hop_index].sub_answer
    positive64 = index.vector_for(instance.gold_chain[hop_index]).astype(np.float64)

    survivors: list[str] = []
    for pid, _score in pool.ranked:
        if pid in gold:
            continue
        if sub_answer is not None and contains_sub_answer(corpus[pid].text, sub_answer):
            continue
        cosine = float(np.dot(index.vector_for(pid).astype(np.float64), positive64))
        if cosine > config.similarity_ceiling:
            continue
        survivors.append(pid)
        if len(survivors) == config.negatives_per_positive:
            break

    return MinedNegatives(
        instance_id=instance.id,
        hop_index=hop_index,
        negatives=tuple(survivors),
        hardest=survivors[0] if survivors else None,
        insufficient=len(survivors) < config.negatives_per_positive,
    )
