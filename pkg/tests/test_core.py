"""Chain grammar: rendering, parsing, round trips, action table."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hopchain.core import (
    ACTION_STRINGS,
    ActionKind,
    Chain,
    ChainStep,
    DecompositionStep,
    MultiHopInstance,
    Passage,
    TaskKind,
    action_from_string,
    action_to_string,
    parse_chain,
    render_chain,
)
from hopchain.errors import MalformedChain


def make_passage(title: str, text: str) -> Passage:
    return Passage.from_content(title, text)


P1 = make_passage("Alpha", "first passage body")
P2 = make_passage("Beta", "second passage body")
P3 = make_passage("", "untitled passage body")


def chain(*steps, query="who founded X?", answer=None, task=TaskKind.QUESTION_ANSWERING):
    c = Chain(instruction_query="find the next evidence", query=query, task_kind=task)
    for passage, eval_kind in steps:
        c = c.extend(passage, eval_kind)
    if answer is not None:
        c = c.with_answer(answer)
    return c


class TestActionTable:
    def test_bijection(self):
        for kind in ActionKind:
            assert action_from_string(action_to_string(kind)) is kind

    def test_all_strings_distinct(self):
        assert len(set(ACTION_STRINGS.values())) == len(ActionKind)

    def test_unknown_string_rejected(self):
        with pytest.raises(MalformedChain):
            action_from_string("Eval: Maybe")


class TestRender:
    def test_zero_hop_is_instruction_plus_query(self):
        c = chain()
        assert render_chain(c, True) == "find the next evidence\nQuestion: who founded X?"

    def test_fact_checking_uses_claim_prefix(self):
        c = chain(query="the sky is green", task=TaskKind.FACT_CHECKING)
        assert render_chain(c, True).splitlines()[1] == "Claim: the sky is green"

    def test_one_relevant_step_golden(self):
        c = chain((P1, ActionKind.EVAL_RELEVANT))
        text = render_chain(c, True)
        assert text == (
            "find the next evidence\n"
            "Question: who founded X?\n"
            "\n"
            "Document: Alpha | first passage body\n"
            "Eval: Relevant\n"
            "Retrieve next"
        )
        assert text.count("Document:") == 1
        assert text.count("Eval: Relevant") == 1

    def test_empty_title_renders_without_separator(self):
        c = chain((P3, ActionKind.EVAL_RELEVANT))
        assert "Document: untitled passage body" in render_chain(c, True)
        assert " | " not in render_chain(c, True)

    def test_final_answer_terminates_without_retrieve_marker(self):
        c = chain((P1, ActionKind.EVAL_RELEVANT), answer="Paris")
        text = render_chain(c, True)
        assert text.endswith("Eval: Relevant\nFinal Answer: Paris")
        assert "Retrieve next" not in text

    def test_irrelevant_last_step_is_terminal(self):
        c = chain((P1, ActionKind.EVAL_RELEVANT), (P2, ActionKind.EVAL_IRRELEVANT))
        text = render_chain(c, True)
        assert text.endswith("Eval: Irrelevant")
        assert text.count("Retrieve next") == 1  # only after the first hop

    def test_without_actions_only_documents(self):
        c = chain((P1, ActionKind.EVAL_RELEVANT), (P2, ActionKind.EVAL_RELEVANT), answer="x")
        text = render_chain(c, False)
        assert "Eval" not in text
        assert "Retrieve next" not in text
        assert "Final Answer" not in text
        assert text.count("Document:") == 2

    def test_monotone_growth_prefix_property(self):
        c1 = chain((P1, ActionKind.EVAL_RELEVANT))
        c2 = chain((P1, ActionKind.EVAL_RELEVANT), (P2, ActionKind.EVAL_RELEVANT))
        r1, r2 = render_chain(c1, True), render_chain(c2, True)
        assert r2.startswith(r1)
        assert len(r2) > len(r1)


class TestParse:
    def test_round_trip_fixtures(self):
        fixtures = [
            chain(),
            chain(task=TaskKind.FACT_CHECKING, answer="SUPPORTED"),
            chain((P1, ActionKind.EVAL_RELEVANT)),
            chain((P3, ActionKind.EVAL_RELEVANT), (P2, ActionKind.EVAL_IRRELEVANT)),
            chain((P1, ActionKind.EVAL_RELEVANT), (P2, ActionKind.EVAL_RELEVANT), answer="42"),
            chain(answer=""),
        ]
        for c in fixtures:
            assert parse_chain(render_chain(c, True)) == c

    def test_eval_before_document_rejected(self):
        with pytest.raises(MalformedChain):
            parse_chain("inst\nQuestion: q\nEval: Relevant")

    def test_duplicate_consecutive_retrieve_markers_rejected(self):
        text = (
            "inst\nQuestion: q\n\nDocument: body text\nEval: Relevant\n"
            "Retrieve next\nRetrieve next"
        )
        with pytest.raises(MalformedChain):
            parse_chain(text)

    def test_truncated_document_block_rejected(self):
        with pytest.raises(MalformedChain):
            parse_chain("inst\nQuestion: q\n")
        with pytest.raises(MalformedChain):
            parse_chain("inst\nQuestion: q\n\nDocument: body")  # missing eval

    def test_unknown_marker_rejected(self):
        with pytest.raises(MalformedChain):
            parse_chain("inst\nQuestion: q\nWibble: nope")

    def test_missing_query_line_rejected(self):
        with pytest.raises(MalformedChain):
            parse_chain("just one line")
        with pytest.raises(MalformedChain):
            parse_chain("inst\nNot a query line")

    def test_content_after_final_answer_rejected(self):
        base = render_chain(chain((P1, ActionKind.EVAL_RELEVANT), answer="x"), True)
        with pytest.raises(MalformedChain):
            parse_chain(base + "\ntrailing")

    def test_relevant_end_without_marker_rejected(self):
        # a relevant last hop with no pending answer must trail "Retrieve next"
        text = "inst\nQuestion: q\n\nDocument: body text\nEval: Relevant"
        with pytest.raises(MalformedChain):
            parse_chain(text)

    def test_trailing_marker_after_irrelevant_rejected(self):
        text = (
            "inst\nQuestion: q\n\nDocument: body text\nEval: Irrelevant\nRetrieve next"
        )
        with pytest.raises(MalformedChain):
            parse_chain(text)

    def test_invalid_marker_sequences_enumerated(self):
        head = "inst\nQuestion: q\n\nDocument: body text\n"
        bad_tails = [
            "Retrieve next",  # retrieve before eval
            "Eval: Relevant\nEval: Relevant",  # duplicate eval
            "Eval: Relevant\nRetrieve next\nEval: Relevant",  # eval without document
            "Eval: Relevant\nRetrieve next\n\n",  # dangling blank
            "Eval: Perhaps",  # unknown judgement
        ]
        for tail in bad_tails:
            with pytest.raises(MalformedChain):
                parse_chain(head + tail)


class TestEscaping:
    def test_fields_with_newlines_pipes_backslashes_round_trip(self):
        nasty = make_passage("ti|tle\nwith\\stuff", "body | with\npipes \\ and\rreturns")
        c = chain((nasty, ActionKind.EVAL_RELEVANT), query="q|with\npipe", answer="a\\b|c\nd")
        rendered = render_chain(c, True)
        for line in rendered.split("\n"):
            assert "\r" not in line
        assert parse_chain(rendered) == c

    def test_unknown_escape_rejected(self):
        with pytest.raises(MalformedChain):
            parse_chain("in\\qst\nQuestion: q")


# hypothesis: arbitrary unicode fields, any step shape, optional answer
_field = st.text(min_size=0, max_size=40)
_body = st.text(min_size=1, max_size=40).filter(lambda s: bool(s.strip()))
_passage = st.builds(make_passage, _field, _body)
_eval = st.sampled_from([ActionKind.EVAL_RELEVANT, ActionKind.EVAL_IRRELEVANT])


@st.composite
def chains(draw):
    passages = draw(
        st.lists(_passage, min_size=0, max_size=4, unique_by=lambda p: p.id)
    )
    steps = tuple(ChainStep(p, draw(_eval)) for p in passages)
    answer = draw(st.one_of(st.none(), _field))
    return Chain(
        instruction_query=draw(_field),
        query=draw(_field),
        task_kind=draw(st.sampled_from(list(TaskKind))),
        steps=steps,
        pending_answer=answer,
    )


class TestRoundTripProperty:
    @settings(max_examples=200, deadline=None)
    @given(chains())
    def test_parse_inverts_render(self, c):
        assert parse_chain(render_chain(c, True)) == c

    def test_100_randomized_chains_seeded(self):
        import random

        rng = random.Random(7)
        for _ in range(100):
            n = rng.randint(0, 4)
            passages = []
            seen = set()
            while len(passages) < n:
                p = make_passage(
                    f"t{rng.randint(0, 999)}", f"body {rng.randint(0, 99999)}"
                )
                if p.id not in seen:
                    seen.add(p.id)
                    passages.append(p)
            steps = tuple(
                ChainStep(p, rng.choice([ActionKind.EVAL_RELEVANT, ActionKind.EVAL_IRRELEVANT]))
                for p in passages
            )
            c = Chain(
                instruction_query=f"inst {rng.randint(0, 99)}",
                query=f"query {rng.randint(0, 99)}",
                steps=steps,
                pending_answer=f"answer {rng.randint(0, 99)}" if rng.random() < 0.5 else None,
            )
            assert parse_chain(render_chain(c, True)) == c


class TestDomainInvariants:
    def test_passage_requires_nonempty_text(self):
        with pytest.raises(ValueError):
            Passage(id="x", title="t", text="   ")

    def test_chain_rejects_duplicate_passages(self):
        with pytest.raises(ValueError):
            chain((P1, ActionKind.EVAL_RELEVANT), (P1, ActionKind.EVAL_RELEVANT))

    def test_extend_after_answer_rejected(self):
        c = chain(answer="done")
        with pytest.raises(ValueError):
            c.extend(P1, ActionKind.EVAL_RELEVANT)

    def test_instance_gold_must_be_distinct(self):
        with pytest.raises(ValueError):
            MultiHopInstance(
                id="a", task_kind=TaskKind.QUESTION_ANSWERING, query="q",
                gold_chain=("p1", "p1"), answer="x",
            )

    def test_instance_decomposition_length_must_match(self):
        with pytest.raises(ValueError):
            MultiHopInstance(
                id="a", task_kind=TaskKind.QUESTION_ANSWERING, query="q",
                gold_chain=("p1", "p2"), answer="x",
                decomposition=(DecompositionStep("sq", "sa"),),
            )

    def test_fact_checking_answer_restricted(self):
        with pytest.raises(ValueError):
            MultiHopInstance(
                id="a", task_kind=TaskKind.FACT_CHECKING, query="q",
                gold_chain=("p1",), answer="maybe",
            )
