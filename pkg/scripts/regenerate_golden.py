#!/usr/bin/env python3
"""Regenerate tests/golden/training_samples.json.

The golden file freezes the exact rendered training texts for the standard
25-instance fixture (hop lengths 1-4, both task kinds).  Regenerate only
after an intentional chain-format change, then review the diff carefully:
every byte of these texts is contract.
"""

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

from helpers import build_solvable_suite  # noqa: E402

from hopchain.databuilder import build_samples  # noqa: E402
from hopchain.miner import MiningConfig  # noqa: E402

GOLDEN = Path(__file__).resolve().parent.parent / "tests" / "golden" / "training_samples.json"


def build_fixture():
    suite = build_solvable_suite(
        25, [1, 2, 3, 4], seed=100, fact_checking_every=3,
        with_decomposition=True, distractors_per_instance=3,
    )
    config = MiningConfig(negatives_per_positive=3, pool_size=50)
    document = {"instances": []}
    for instance in suite.instances:
        contrastive, generative = build_samples(
            instance, suite.corpus_by_id, suite.index, suite.provider, config, 42,
            instruction_query=suite.instruction_query,
        )
        document["instances"].append(
            {
                "id": instance.id,
                "hops": instance.hops,
                "task_kind": instance.task_kind.value,
                "contrastive": [
                    {
                        "hop_index": s.hop_index,
                        "prompt_text": s.prompt_text,
                        "positive": s.positive,
                        "negatives": list(s.negatives),
                    }
                    for s in contrastive
                ],
                "generative": [
                    {"label_kind": s.label_kind.value, "text": s.text}
                    for s in generative
                ],
            }
        )
    return document


if __name__ == "__main__":
    document = build_fixture()
    GOLDEN.parent.mkdir(parents=True, exist_ok=True)
    GOLDEN.write_text(
        json.dumps(document, ensure_ascii=False, sort_keys=True, indent=1) + "\n",
        encoding="utf-8",
    )
    total_c = sum(len(i["contrastive"]) for i in document["instances"])
    total_g = sum(len(i["generative"]) for i in document["instances"])
    print(f"wrote {GOLDEN} ({len(document['instances'])} instances, "
          f"{total_c} contrastive, {total_g} generative)")
