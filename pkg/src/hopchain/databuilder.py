"""Training-data construction for joint contrastive/generative objectives.

Per instance, one contrastive sample is emitted per hop: the prompt is the
gold prefix chain, the positive is that hop's gold passage, the negatives
come from the miner.  On the generative side two sequences are emitted: the
full positive chain ending in the final answer, and one causal negative,
chosen uniformly among the per-hop chains that end with a mined hardest
negative judged irrelevant.  Both sides consume the same chain text, so
each contrastive prompt is a string prefix of the generative positive.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

from .core import ActionKind, Chain, MultiHopInstance, Passage, render_chain
from .embedding import EmbeddingProvider
from .index import VectorIndex
from .miner import MiningConfig, mine_negatives


class LabelKind(str, Enum):
    POSITIVE_WITH_ANSWER = "positive_with_answer"
    CAUSAL_NEGATIVE = "causal_negative"


@dataclass(frozen=True)
class ContrastiveSample:
    prompt_text: str
    positive: str
    negatives: tuple[str, ...]
    instance_id: str
    hop_index: int
    insufficient_negatives: bool = False


@dataclass(frozen=True)
class GenerativeSample:
    text: str
    label_kind: LabelKind
    instance_id: str


def derive_seed(rng_seed: int, instance_id: str) -> int:
    """Per-instance seed so outputs do not depend on worker scheduling."""
    digest = hashlib.blake2b(
        f"{rng_seed}:{instance_id}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


def build_samples(
    instance: MultiHopInstance,
    corpus: Mapping[str, Passage],
    index: VectorIndex,
    provider: EmbeddingProvider,
    miner_config: MiningConfig,
    rng_seed: int,
    *,
    instruction_query: str,
    include_actions: bool = True,
) -> tuple[list[ContrastiveSample], list[GenerativeSample]]:
    """Emit the contrastive and generative samples for one instance.

    Hops with no surviving negatives still yield a contrastive sample
    (with an empty, flagged negative list) but contribute no causal
    negative.
    """
    chain = Chain(
        instruction_query=instruction_query,
        query=instance.query,
        task_kind=instance.task_kind,
    )
    contrastive: list[ContrastiveSample] = []
    causal_negative_texts: list[str] = []

    for hop, gold_id in enumerate(instance.gold_chain):
        prompt = render_chain(chain, include_actions=include_actions)
        mined = mine_negatives(
            instance, hop, corpus, index, provider, miner_config,
            instruction_query=instruction_query, include_actions=include_actions,
        )
        contrastive.append(
            ContrastiveSample(
                prompt_text=prompt,
                positive=gold_id,
                negatives=mined.negatives,
                instance_id=instance.id,
                hop_index=hop,
                insufficient_negatives=mined.insufficient,
            )
        )
        if mined.hardest is not None:
            rejected = chain.extend(corpus[mined.hardest], ActionKind.EVAL_IRRELEVANT)
            causal_negative_texts.append(render_chain(rejected, include_actions=include_actions))
        chain = chain.extend(corpus[gold_id], ActionKind.EVAL_RELEVANT)

    positive_text = render_chain(
        chain.with_answer(instance.answer), include_actions=include_actions
    )
    generative = [
        GenerativeSample(positive_text, LabelKind.POSITIVE_WITH_ANSWER, instance.id)
    ]
    if causal_negative_texts:
        rng = random.Random(derive_seed(rng_seed, instance.id))
        generative.append(
            GenerativeSample(rng.choice(causal_negative_texts), LabelKind.CAUSAL_NEGATIVE, instance.id)
        )
    return contrastive, generative


def _jsonl_line(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n"


def export_training_files(
    contrastive: Sequence[ContrastiveSample],
    generative: Sequence[GenerativeSample],
    out_dir: str | Path,
    *,
    rng_seed: int | None = None,
    meta: dict | None = None,
) -> dict:
    """Write contrastive.jsonl, generative.jsonl and stats.json.

    Schemas are documented in docs/data-formats.md.  Output is
    deterministic: re-exporting the same samples yields byte-identical
    files.  Returns the stats document.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = _jsonl_line({"_meta": meta or {}})

    with open(out / "contrastive.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header)
        for sample in contrastive:
            fh.write(
                _jsonl_line(
                    {
                        "instance_id": sample.instance_id,
                        "hop_index": sample.hop_index,
                        "prompt_text": sample.prompt_text,
                        "positive": sample.positive,
                        "negatives": list(sample.negatives),
                        "insufficient_negatives": sample.insufficient_negatives,
                    }
                )
            )
    with open(out / "generative.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header)
        for sample in generative:
            fh.write(
                _jsonl_line(
                    {
                        "instance_id": sample.instance_id,
                        "label_kind": sample.label_kind.value,
                        "text": sample.text,
                    }
                )
            )

    hops_per_instance: dict[str, int] = {}
    for sample in contrastive:
        hops_per_instance[sample.instance_id] = max(
            hops_per_instance.get(sample.instance_id, 0), sample.hop_index + 1
        )
    depth_histogram: dict[str, int] = {}
    for depth in hops_per_instance.values():
        key = str(depth)
        depth_histogram[key] = depth_histogram.get(key, 0) + 1
    label_counts: dict[str, int] = {}
    for sample in generative:
        label_counts[sample.label_kind.value] = label_counts.get(sample.label_kind.value, 0) + 1

    stats = {
        "instances": len(hops_per_instance),
        "contrastive_samples": len(contrastive),
        "generative_samples": len(generative),
        "instances_per_hop_depth": dict(sorted(depth_histogram.items())),
        "generative_by_label": dict(sorted(label_counts.items())),
        "insufficient_negative_samples": sum(
            1 for s in contrastive if s.insufficient_negatives
        ),
        "rng_seed": rng_seed,
        "meta": meta or {},
    }
    with open(out / "stats.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(stats, fh, ensure_ascii=False, sort_keys=True, indent=2)
        fh.write("\n")
    return stats
