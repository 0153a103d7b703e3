"""Shared fixtures: constructed corpora with provable nearest neighbours,
plus independent brute-force oracles.

The reference embedder hashes tokens into buckets, so a corpus built from
tokens with pairwise-distinct buckets (also distinct from the buckets of
chain markers and instructions) has exactly computable similarities: a
candidate sharing no tokens with a chain scores exactly 0.0, and a
candidate sharing a token scores strictly above 0.  Suites built this way
make "the gold passage is the unique top-1 at every hop" a constructive
fact rather than an empirical accident; builders additionally verify the
property with the real embedder at construction time.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from hopchain.core import (
    ActionKind,
    Chain,
    DecompositionStep,
    MultiHopInstance,
    Passage,
    SUPPORTED,
    TaskKind,
)
from hopchain.embedding import EmbeddingRequest, HashedTokenEmbedder, Role, _hash_token
from hopchain.index import VectorIndex, build_index, search
from hopchain.engine import retrieve_step
from hopchain.miner import contains_sub_answer, hop_chain

# every token that can appear in rendered chain text besides field content
MARKER_WORDS = (
    "question claim document eval relevant irrelevant retrieve next final answer stop"
).split()

SUITE_DIM = 8192


def reserved_buckets(dim: int) -> set[int]:
    return {_hash_token(word, dim)[0] for word in MARKER_WORDS}


def distinct_bucket_tokens(count: int, dim: int, *, prefix: str = "w") -> list[str]:
    """Tokens whose hash buckets are pairwise distinct and avoid markers."""
    used = reserved_buckets(dim)
    tokens: list[str] = []
    for i in itertools.count():
        token = f"{prefix}{i}"
        bucket, _ = _hash_token(token, dim)
        if bucket in used:
            continue
        used.add(bucket)
        tokens.append(token)
        if len(tokens) == count:
            return tokens
    raise AssertionError("unreachable")


@dataclass
class Suite:
    corpus: list[Passage]
    instances: list[MultiHopInstance]
    provider: HashedTokenEmbedder
    index: VectorIndex
    instruction_query: str
    instruction_document: str

    @property
    def corpus_by_id(self) -> dict[str, Passage]:
        return {p.id: p for p in self.corpus}


def build_solvable_suite(
    n_instances: int,
    hop_lengths: list[int],
    *,
    distractors_per_instance: int = 3,
    dim: int = SUITE_DIM,
    seed: int = 0,
    fact_checking_every: int = 0,
    query_token_repeats: int = 1,
    with_decomposition: bool = False,
    verify: bool = True,
) -> Suite:
    """A corpus where each instance's gold passage is provably top-1 per hop.

    Instance i uses a private token chain L0..LH: the query carries L0,
    gold hop h is "L_h L_{h+1}", distractors use fresh tokens.  With
    query_token_repeats > 1 the query over-weights L0, which makes live
    top-1 scores strictly decrease after hop 1 (the stopping-heuristic
    stress shape).
    """
    max_hops = max(hop_lengths)
    budget = 2 + n_instances * (max_hops + 1 + 2 * distractors_per_instance + 1)
    pool = iter(distinct_bucket_tokens(budget, dim, prefix=f"w{seed}x"))
    instruction_query = next(pool)
    instruction_document = next(pool)

    corpus: list[Passage] = []
    instances: list[MultiHopInstance] = []
    for i in range(n_instances):
        hops = hop_lengths[i % len(hop_lengths)]
        links = [next(pool) for _ in range(hops + 1)]
        answer_token = next(pool)
        gold_ids = []
        decomposition = []
        for h in range(hops):
            passage = Passage(
                id=f"i{i}-g{h}", title="", text=f"{links[h]} {links[h + 1]}"
            )
            corpus.append(passage)
            gold_ids.append(passage.id)
            decomposition.append(
                DecompositionStep(
                    sub_question=f"which item follows {links[h]}",
                    sub_answer=links[h + 1],
                )
            )
        for d in range(distractors_per_instance):
            t1, t2 = next(pool), next(pool)
            corpus.append(Passage(id=f"i{i}-d{d}", title="", text=f"{t1} {t2}"))
        fact_checking = fact_checking_every and (i % fact_checking_every == 0)
        query = " ".join([links[0]] * query_token_repeats)
        instances.append(
            MultiHopInstance(
                id=f"inst-{i}",
                task_kind=TaskKind.FACT_CHECKING if fact_checking else TaskKind.QUESTION_ANSWERING,
                query=query,
                gold_chain=tuple(gold_ids),
                answer=SUPPORTED if fact_checking else f"answer {answer_token}",
                decomposition=tuple(decomposition) if with_decomposition else None,
            )
        )

    provider = HashedTokenEmbedder(dimension=dim)
    index = build_index(corpus, provider, instruction_document)
    suite = Suite(
        corpus=corpus,
        instances=instances,
        provider=provider,
        index=index,
        instruction_query=instruction_query,
        instruction_document=instruction_document,
    )
    if verify:
        _verify_solvable(suite)
    return suite


def _verify_solvable(suite: Suite) -> None:
    by_id = suite.corpus_by_id
    for instance in suite.instances:
        chain = Chain(
            instruction_query=suite.instruction_query,
            query=instance.query,
            task_kind=instance.task_kind,
        )
        for gold_id in instance.gold_chain:
            result = retrieve_step(chain, suite.index, suite.provider, k=1)
            assert result.ranked[0][0] == gold_id, (
                f"suite not solvable: {instance.id} expected {gold_id}, "
                f"got {result.ranked[0]}"
            )
            chain = chain.extend(by_id[gold_id], ActionKind.EVAL_RELEVANT)


def build_decreasing_score_suite(n_instances: int = 20, seed: int = 0) -> Suite:
    """Solvable suite whose live top-1 score strictly drops after hop 1."""
    suite = build_solvable_suite(
        n_instances,
        [2, 3],
        seed=seed,
        query_token_repeats=3,
        verify=True,
    )
    by_id = suite.corpus_by_id
    for instance in suite.instances:
        chain = Chain(
            instruction_query=suite.instruction_query,
            query=instance.query,
            task_kind=instance.task_kind,
        )
        first = retrieve_step(chain, suite.index, suite.provider, k=1).ranked[0]
        chain = chain.extend(by_id[first[0]], ActionKind.EVAL_RELEVANT)
        second = retrieve_step(chain, suite.index, suite.provider, k=1).ranked[0]
        assert second[1] < first[1], "suite must have decreasing top-1 scores"
    return suite


def brute_force_search(
    index: VectorIndex, query: np.ndarray, k: int, exclude: set[str] = frozenset()
) -> list[tuple[str, float]]:
    """Independent selection logic: score everything, filter, sort, slice.

    Shares the score definition (float64 matrix-vector product over the
    stored vectors) so equality with the production path is exact; ranking,
    exclusion and tie-breaking are reimplemented from scratch.
    """
    scores = index.matrix64 @ np.asarray(query, dtype=np.float64)
    pairs = [
        (pid, float(scores[i]))
        for i, pid in enumerate(index.ids)
        if pid not in exclude
    ]
    pairs.sort(key=lambda item: (-item[1], item[0]))
    return pairs[:k]


def rowwise_dot_search(
    index: VectorIndex, query: np.ndarray, k: int, exclude: set[str] = frozenset()
) -> list[tuple[str, float]]:
    """Fully independent scoring path (per-row dot products)."""
    q = np.asarray(query, dtype=np.float64)
    pairs = []
    for i, pid in enumerate(index.ids):
        if pid in exclude:
            continue
        pairs.append((pid, float(np.dot(index.vectors[i].astype(np.float64), q))))
    pairs.sort(key=lambda item: (-item[1], item[0]))
    return pairs[:k]


def brute_force_mine(
    instance: MultiHopInstance,
    hop_index: int,
    corpus_by_id: dict[str, Passage],
    index: VectorIndex,
    provider: HashedTokenEmbedder,
    config,
    *,
    instruction_query: str,
) -> list[str]:
    """Mining oracle: score the whole corpus, apply all three filters, sort."""
    from hopchain.core import render_chain

    chain = hop_chain(instance, hop_index, corpus_by_id, instruction_query)
    text = render_chain(chain, include_actions=True)
    query = provider.embed(EmbeddingRequest(text, Role.QUERY_CHAIN)).astype(np.float64)
    positive = index.vector_for(instance.gold_chain[hop_index]).astype(np.float64)
    sub_answer = None
    if instance.decomposition is not None:
        sub_answer = instance.decomposition[hop_index].sub_answer

    scored = []
    for pid in index.ids:
        vec = index.vector_for(pid).astype(np.float64)
        scored.append((pid, float(np.dot(vec, query))))
    scored.sort(key=lambda item: (-item[1], item[0]))

    survivors = []
    gold = set(instance.gold_chain)
    for pid, _ in scored:
        if pid in gold:
            continue
        if sub_answer is not None and contains_sub_answer(corpus_by_id[pid].text, sub_answer):
            continue
        if float(np.dot(index.vector_for(pid).astype(np.float64), positive)) > config.similarity_ceiling:
            continue
        survivors.append(pid)
        if len(survivors) == config.negatives_per_positive:
            break
    return survivors


def random_unit_index(n: int, dim: int, seed: int) -> VectorIndex:
    rng = np.random.default_rng(seed)
    matrix = rng.normal(size=(n, dim))
    matrix = matrix / np.linalg.norm(matrix, axis=1, keepdims=True)
    return VectorIndex(
        dimension=dim,
        ids=tuple(f"p{i:05d}" for i in range(n)),
        vectors=matrix.astype(np.float32),
        metadata={"provider_name": "random", "instruction_document": "",
                  "include_actions_mode": True, "build_timestamp": ""},
    )


def planted_failure_setup():
    """Three instances; instance A's hop 2 is planted to fail at k=1.

    A (2 hops): query a0, gold "a0 a1" -> "a1 a2"; the distractor "a1 a1"
    outranks A's hop-2 gold because it carries the bridging token twice.
    B (2 hops) and C (3 hops) are clean chains.

    Hand-computed Hits@1: hop1 3/3, hop2 2/3, hop3 1/1; micro avg 6/7.
    Hits@5 is 1.0 everywhere (the distractor only demotes gold to rank 2).
    """
    corpus = [
        Passage(id="A-g0", title="", text="a0 a1"),
        Passage(id="A-g1", title="", text="a1 a2"),
        Passage(id="A-dx", title="", text="a1 a1"),
        Passage(id="B-g0", title="", text="b0 b1"),
        Passage(id="B-g1", title="", text="b1 b2"),
        Passage(id="C-g0", title="", text="c0 c1"),
        Passage(id="C-g1", title="", text="c1 c2"),
        Passage(id="C-g2", title="", text="c2 c3"),
    ]
    instances = [
        MultiHopInstance(id="A", task_kind=TaskKind.QUESTION_ANSWERING, query="a0",
                         gold_chain=("A-g0", "A-g1"), answer="a2"),
        MultiHopInstance(id="B", task_kind=TaskKind.QUESTION_ANSWERING, query="b0",
                         gold_chain=("B-g0", "B-g1"), answer="b2"),
        MultiHopInstance(id="C", task_kind=TaskKind.QUESTION_ANSWERING, query="c0",
                         gold_chain=("C-g0", "C-g1", "C-g2"), answer="c3"),
    ]
    provider = HashedTokenEmbedder(dimension=4096)
    index = build_index(corpus, provider, "instd0")
    return {p.id: p for p in corpus}, instances, provider, index


def random_uniform_dataset(rng, hops: int):
    """Arbitrary (not necessarily solvable) dataset with uniform gold length."""
    vocab = [f"v{i}" for i in range(24)]
    n_passages = rng.randint(10, 20)
    corpus = [
        Passage(id=f"p{i:02d}", title="",
                text=" ".join(rng.choices(vocab, k=rng.randint(2, 6))))
        for i in range(n_passages)
    ]
    instances = []
    for i in range(rng.randint(3, 6)):
        gold = rng.sample([p.id for p in corpus], hops)
        instances.append(
            MultiHopInstance(
                id=f"q{i}", task_kind=TaskKind.QUESTION_ANSWERING,
                query=" ".join(rng.choices(vocab, k=3)),
                gold_chain=tuple(gold), answer="whatever",
            )
        )
    provider = HashedTokenEmbedder(dimension=128)
    index = build_index(corpus, provider, "instd0")
    return {p.id: p for p in corpus}, instances, provider, index
