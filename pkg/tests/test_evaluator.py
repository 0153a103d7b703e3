"""Hits@k gating semantics, hand-computed fixtures, monotonicity, diagnostics."""

import random

import numpy as np
import pytest

from hopchain.core import (
    ActionKind,
    Chain,
    MultiHopInstance,
    Passage,
    TaskKind,
    render_chain,
)
from hopchain.embedding import EmbeddingRequest, HashedTokenEmbedder, Role
from hopchain.engine import HopRecord, HopTrace, StopReason
from hopchain.errors import UnknownInstanceId
from hopchain.evaluator import (
    Diagnostics,
    diagnose,
    evaluate_hits,
    render_diagnostics_markdown,
    render_hits_markdown,
)
from hopchain.index import SearchResult, build_index

from helpers import build_solvable_suite, planted_failure_setup, random_uniform_dataset

INSTQ = "instq0"
INSTD = "instd0"


class TestHandComputedFixture:
    def test_hits_match_hand_counts(self):
        corpus, instances, provider, index = planted_failure_setup()
        table = evaluate_hits(
            instances, corpus, index, provider, ks=[1, 5], max_hop=3,
            instruction_query=INSTQ,
        )
        k1 = {row.hop: (row.successes, row.denominator) for row in table.per_k[1]}
        assert k1 == {1: (3, 3), 2: (2, 3), 3: (1, 1)}
        assert table.per_k[1][0].hits == 1.0
        assert table.per_k[1][1].hits == pytest.approx(2 / 3)
        assert table.per_k[1][2].hits == 1.0
        assert table.avg_per_k[1] == pytest.approx(6 / 7)
        k5 = {row.hop: (row.successes, row.denominator) for row in table.per_k[5]}
        assert k5 == {1: (3, 3), 2: (3, 3), 3: (1, 1)}
        assert table.avg_per_k[5] == 1.0

    def test_macro_average_reported(self):
        corpus, instances, provider, index = planted_failure_setup()
        table = evaluate_hits(
            instances, corpus, index, provider, ks=[1], max_hop=3,
            instruction_query=INSTQ,
        )
        assert table.macro_avg_per_k[1] == pytest.approx((1.0 + 2 / 3 + 1.0) / 3)


class TestTrivialBounds:
    def test_k_at_least_corpus_means_everything_hits(self):
        # with k >= |P| the gold passage cannot be excluded from the top-k
        suite = build_solvable_suite(4, [2, 3], seed=30)
        table = evaluate_hits(
            suite.instances, suite.corpus_by_id, suite.index, suite.provider,
            ks=[len(suite.corpus)], max_hop=4,
            instruction_query=suite.instruction_query,
        )
        for row in table.per_k[len(suite.corpus)]:
            assert row.hits == 1.0

    def test_solvable_suite_perfect_at_k1(self):
        suite = build_solvable_suite(6, [2, 3, 4], seed=31)
        table = evaluate_hits(
            suite.instances, suite.corpus_by_id, suite.index, suite.provider,
            ks=[1, 5], max_hop=4, instruction_query=suite.instruction_query,
        )
        for k in (1, 5):
            for row in table.per_k[k]:
                assert row.hits == 1.0
        assert table.avg_per_k[1] == 1.0


class TestMonotonicityProperties:
    def test_cascade_and_k_monotonicity_randomized(self):
        rng = random.Random(1234)
        for round_no in range(40):
            hops = rng.choice([1, 2, 3])
            corpus, instances, provider, index = random_uniform_dataset(rng, hops)
            ks = [1, 3, 5]
            table = evaluate_hits(
                instances, corpus, index, provider, ks=ks, max_hop=hops,
                instruction_query=INSTQ,
            )
            for k in ks:
                rates = [row.hits for row in table.per_k[k]]
                for earlier, later in zip(rates, rates[1:]):
                    assert later <= earlier + 1e-12, f"cascade violated in round {round_no}"
            for k_small, k_large in zip(ks, ks[1:]):
                for row_s, row_l in zip(table.per_k[k_small], table.per_k[k_large]):
                    assert row_s.hits <= row_l.hits + 1e-12


class TestSingleHopRecallOracle:
    def test_max_hop_one_equals_plain_recall(self):
        rng = random.Random(77)
        corpus, instances, provider, index = random_uniform_dataset(rng, 2)
        k = 3
        table = evaluate_hits(
            instances, corpus, index, provider, ks=[k], max_hop=1,
            instruction_query=INSTQ,
        )
        # independent recall@k: full scoring loop, no gating machinery
        hits = 0
        for instance in instances:
            chain_text = render_chain(
                Chain(instruction_query=INSTQ, query=instance.query)
            )
            query = provider.embed(
                EmbeddingRequest(chain_text, Role.QUERY_CHAIN)
            ).astype(np.float64)
            scored = sorted(
                ((pid, float(np.dot(index.vector_for(pid).astype(np.float64), query)))
                 for pid in index.ids),
                key=lambda item: (-item[1], item[0]),
            )
            top = [pid for pid, _ in scored[:k]]
            if instance.gold_chain[0] in top:
                hits += 1
        assert table.per_k[k][0].successes == hits
        assert table.per_k[k][0].denominator == len(instances)


class TestUnorderedGold:
    def test_unordered_credits_any_remaining_gold(self):
        corpus = [
            Passage(id="g-far", title="", text="u9 u8"),
            Passage(id="g-near", title="", text="u0 u9"),
            Passage(id="dz", title="", text="z1 z2"),
        ]
        instance = MultiHopInstance(
            id="U", task_kind=TaskKind.QUESTION_ANSWERING, query="u0",
            gold_chain=("g-far", "g-near"), answer="u8",
        )
        provider = HashedTokenEmbedder(dimension=1024)
        index = build_index(corpus, provider, INSTD)
        corpus_map = {p.id: p for p in corpus}
        ordered = evaluate_hits(
            [instance], corpus_map, index, provider, ks=[1], max_hop=2,
            instruction_query=INSTQ, gold_order="ordered",
        )
        unordered = evaluate_hits(
            [instance], corpus_map, index, provider, ks=[1], max_hop=2,
            instruction_query=INSTQ, gold_order="unordered",
        )
        assert ordered.per_k[1][0].hits == 0.0  # listed-first gold is not nearest
        assert unordered.per_k[1][0].hits == 1.0
        assert unordered.per_k[1][1].hits == 1.0


def trace(instance_id, n_hops, latencies=None, stop=StopReason.CONTROL_STOP):
    latencies = latencies or [0.1] * n_hops
    hops = tuple(
        HopRecord(
            chain_text_before=f"chain before hop {i}",
            ranked=SearchResult(ranked=((f"p{i}", 0.9),)),
            accepted=f"p{i}",
            latency=latencies[i],
        )
        for i in range(n_hops)
    )
    return HopTrace(instance_id=instance_id, hops=hops, stop_reason=stop)


def instance_of_length(instance_id, hops):
    return MultiHopInstance(
        id=instance_id, task_kind=TaskKind.QUESTION_ANSWERING, query="q",
        gold_chain=tuple(f"g{instance_id}{i}" for i in range(hops)), answer="a",
    )


class TestDiagnose:
    def test_exact_stops_everywhere(self):
        instances = [instance_of_length("x", 2), instance_of_length("y", 3)]
        traces = [trace("x", 2), trace("y", 3)]
        d = diagnose(traces, instances)
        assert (d.early_stops, d.overshoots, d.exact_stops) == (0, 0, 2)

    def test_hand_counted_mixture(self):
        instances = [
            instance_of_length("a", 2),
            instance_of_length("b", 2),
            instance_of_length("c", 3),
            instance_of_length("d", 4),
        ]
        traces = [trace("a", 1), trace("b", 2), trace("c", 3), trace("d", 5)]
        d = diagnose(traces, instances)
        assert d.early_stops == 1
        assert d.overshoots == 1
        assert d.exact_stops == 2
        assert d.avg_hops == pytest.approx((1 + 2 + 3 + 5) / 4)  # 2.75
        assert d.early_stops + d.overshoots + d.exact_stops == d.traces

    def test_latency_aggregation(self):
        instances = [instance_of_length("a", 2), instance_of_length("b", 2)]
        traces = [
            trace("a", 2, latencies=[0.1, 0.3]),
            trace("b", 1, latencies=[0.2]),
        ]
        d = diagnose(traces, instances)
        assert d.avg_latency_per_hop == pytest.approx((0.1 + 0.3 + 0.2) / 3)
        assert d.latency_by_hop[0] == pytest.approx((0.1 + 0.2) / 2)
        assert d.latency_by_hop[1] == pytest.approx(0.3)

    def test_unknown_instance_id(self):
        with pytest.raises(UnknownInstanceId):
            diagnose([trace("ghost", 1)], [instance_of_length("real", 1)])

    def test_empty_traces(self):
        d = diagnose([], [instance_of_length("a", 1)])
        assert d.traces == 0
        assert d.avg_hops == 0.0


class TestRendering:
    def test_diagnostics_markdown_formatting(self):
        # fixed formatting fixture: counts and column layout for the report
        d = Diagnostics(
            traces=2417, early_stops=347, overshoots=25, exact_stops=2045,
            avg_hops=2.41, avg_latency_per_hop=0.29, latency_by_hop=(0.13, 0.19, 0.31, 0.52),
        )
        text = render_diagnostics_markdown(d, label="dense end-to-end")
        assert "| dense end-to-end | 347 | 25 | 2.41 | 0.29 |" in text
        assert "Early Stops" in text and "Avg. Latency / Hop (s)" in text

    def test_hits_markdown_layout(self):
        corpus, instances, provider, index = planted_failure_setup()
        table = evaluate_hits(
            instances, corpus, index, provider, ks=[1, 5], max_hop=3,
            instruction_query=INSTQ,
        )
        text = render_hits_markdown(table)
        lines = text.split("\n")
        assert lines[0].startswith("| Model |")
        assert "Hits@1 h1" in lines[0] and "Hits@5 Avg" in lines[0]
        assert "100.00" in lines[2]


class TestValidation:
    def test_empty_instances_rejected(self):
        corpus, instances, provider, index = planted_failure_setup()
        with pytest.raises(ValueError):
            evaluate_hits([], corpus, index, provider, ks=[1], max_hop=2,
                          instruction_query=INSTQ)

    def test_bad_k_rejected(self):
        corpus, instances, provider, index = planted_failure_setup()
        with pytest.raises(ValueError):
            evaluate_hits(instances, corpus, index, provider, ks=[0], max_hop=2,
                          instruction_query=INSTQ)
