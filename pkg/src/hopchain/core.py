"""Domain types for passages, multi-hop instances and retrieval chains.

A retrieval chain is serialized to a line-oriented plain-text format so the
same string can feed both an embedding model and a causal language model.
The full grammar lives in docs/chain-grammar.md; the essentials:

    line 1            instruction
    line 2            "Question: <query>"  or  "Claim: <query>"
    per accepted hop  blank line, "Document: <title> | <text>",
                      "Eval: Relevant" | "Eval: Irrelevant",
                      "Retrieve next" (when another retrieval follows)
    optionally        "Final Answer: <answer>" as the terminal line

"Retrieve next" trails every hop that is followed by another document, and
also trails the last hop when it was judged relevant and no final answer is
pending: that is the state of a chain which is about to be re-embedded for
the next retrieval.  A chain ending in "Eval: Irrelevant" or "Final Answer:"
is terminal and carries no trailing marker.

Field values (instruction, query, title, text, answer) are escaped so that
newlines and the title/text separator survive a bit-exact round trip:
backslash, newline, carriage return and the pipe character are written as
\\\\, \\n, \\r and \\| respectively.  Text is otherwise treated as opaque;
no unicode normalization is applied.

Parsing is the exact inverse of rendering.  Since the document line carries
no passage id, parsed passages receive a content-derived id
(see Passage.from_content); chains built from content-keyed passages
round-trip field-for-field.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from enum import Enum

from .errors import MalformedChain

SUPPORTED = "SUPPORTED"
REFUTED = "REFUTED"
VERDICTS = frozenset({SUPPORTED, REFUTED})

# intentionally shares no tokens with the document-side instruction: under
# a bag-of-tokens embedder, shared instruction tokens add a similarity
# floor that favours short documents
DEFAULT_INSTRUCTION_QUERY = "Retrieve what supports answering this multi-hop query."


class TaskKind(str, Enum):
    QUESTION_ANSWERING = "question_answering"
    FACT_CHECKING = "fact_checking"


class ActionKind(str, Enum):
    EVAL_RELEVANT = "eval_relevant"
    EVAL_IRRELEVANT = "eval_irrelevant"
    RETRIEVE_NEXT = "retrieve_next"
    FINAL_ANSWER = "final_answer"
    STOP = "stop"


# Canonical surface form of each action; rendering and parsing are exact
# inverses of this table.
ACTION_STRINGS: dict[ActionKind, str] = {
    ActionKind.EVAL_RELEVANT: "Eval: Relevant",
    ActionKind.EVAL_IRRELEVANT: "Eval: Irrelevant",
    ActionKind.RETRIEVE_NEXT: "Retrieve next",
    ActionKind.FINAL_ANSWER: "Final Answer:",
    ActionKind.STOP: "Stop",
}
ACTIONS_BY_STRING: dict[str, ActionKind] = {s: k for k, s in ACTION_STRINGS.items()}

_QUERY_PREFIXES: dict[TaskKind, str] = {
    TaskKind.QUESTION_ANSWERING: "Question: ",
    TaskKind.FACT_CHECKING: "Claim: ",
}
_DOCUMENT_PREFIX = "Document: "
_SEPARATOR = " | "
_EVAL_PREFIX = "Eval:"


def action_to_string(kind: ActionKind) -> str:
    return ACTION_STRINGS[kind]


def action_from_string(text: str) -> ActionKind:
    try:
        return ACTIONS_BY_STRING[text]
    except KeyError:
        raise MalformedChain(f"unknown action string: {text!r}") from None


def _escape(value: str) -> str:
    return (
        value.replace("\\", "\\\\")
        .replace("\n", "\\n")
        .replace("\r", "\\r")
        .replace("|", "\\|")
    )


_UNESCAPES = {"\\": "\\", "n": "\n", "r": "\r", "|": "|"}


def _unescape(value: str) -> str:
    out: list[str] = []
    i = 0
    while i < len(value):
        c = value[i]
        if c == "\\":
            if i + 1 >= len(value):
                raise MalformedChain("dangling escape at end of field")
            nxt = value[i + 1]
            if nxt not in _UNESCAPES:
                raise MalformedChain(f"unknown escape sequence: \\{nxt}")
            out.append(_UNESCAPES[nxt])
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


@dataclass(frozen=True)
class Passage:
    """One indexed evidence paragraph."""

    id: str
    title: str
    text: str

    def __post_init__(self):
        if not self.id:
            raise ValueError("passage id must be non-empty")
        if not self.text.strip():
            raise ValueError(f"passage {self.id!r} has empty text")

    @staticmethod
    def content_key(title: str, text: str) -> str:
        """Stable content-derived identifier used for deduplication."""
        digest = hashlib.sha256(
            title.encode("utf-8") + b"\x1f" + text.encode("utf-8")
        ).hexdigest()
        return f"p-{digest[:16]}"

    @classmethod
    def from_content(cls, title: str, text: str) -> "Passage":
        """Build a passage whose id is derived from its content."""
        return cls(id=cls.content_key(title, text), title=title, text=text)


@dataclass(frozen=True)
class DecompositionStep:
    sub_question: str
    sub_answer: str


@dataclass(frozen=True)
class MultiHopInstance:
    """A question or claim with its ordered gold evidence chain."""

    id: str
    task_kind: TaskKind
    query: str
    gold_chain: tuple[str, ...]
    answer: str
    decomposition: tuple[DecompositionStep, ...] | None = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("instance id must be non-empty")
        if len(self.gold_chain) < 1:
            raise ValueError(f"instance {self.id!r}: gold chain must have >= 1 hop")
        if len(set(self.gold_chain)) != len(self.gold_chain):
            raise ValueError(f"instance {self.id!r}: gold chain ids must be distinct")
        if self.decomposition is not None and len(self.decomposition) != len(self.gold_chain):
            raise ValueError(
                f"instance {self.id!r}: decomposition length {len(self.decomposition)} "
                f"!= gold chain length {len(self.gold_chain)}"
            )
        if self.task_kind is TaskKind.FACT_CHECKING and self.answer not in VERDICTS:
            raise ValueError(
                f"instance {self.id!r}: fact-checking answer must be one of "
                f"{sorted(VERDICTS)}, got {self.answer!r}"
            )

    @property
    def hops(self) -> int:
        return len(self.gold_chain)


@dataclass(frozen=True)
class ChainStep:
    passage: Passage
    eval: ActionKind

    def __post_init__(self):
        if self.eval not in (ActionKind.EVAL_RELEVANT, ActionKind.EVAL_IRRELEVANT):
            raise ValueError(f"step eval must be a relevance judgement, got {self.eval}")


@dataclass(frozen=True)
class Chain:
    """The evolving retrieval state: query plus accepted passages plus actions.

    Immutable; extend() and with_answer() return new values.
    """

    instruction_query: str
    query: str
    task_kind: TaskKind = TaskKind.QUESTION_ANSWERING
    steps: tuple[ChainStep, ...] = field(default_factory=tuple)
    pending_answer: str | None = None

    def __post_init__(self):
        ids = [s.passage.id for s in self.steps]
        if len(set(ids)) != len(ids):
            raise ValueError("chain steps must reference distinct passages")

    @property
    def accepted_ids(self) -> tuple[str, ...]:
        return tuple(s.passage.id for s in self.steps)

    def extend(self, passage: Passage, eval: ActionKind) -> "Chain":
        if self.pending_answer is not None:
            raise ValueError("cannot extend a chain that already carries a final answer")
        return replace(self, steps=self.steps + (ChainStep(passage, eval),))

    def with_answer(self, answer: str) -> "Chain":
        return replace(self, pending_answer=answer)


def _document_line(passage: Passage) -> str:
    if passage.title:
        return _DOCUMENT_PREFIX + _escape(passage.title) + _SEPARATOR + _escape(passage.text)
    return _DOCUMENT_PREFIX + _escape(passage.text)


def _trailing_retrieve(chain: Chain, step_index: int) -> bool:
    """Whether "Retrieve next" follows the step at step_index."""
    last = step_index == len(chain.steps) - 1
    if not last:
        return True
    step = chain.steps[step_index]
    if chain.pending_answer is not None:
        return False
    return step.eval is ActionKind.EVAL_RELEVANT


def render_chain(chain: Chain, include_actions: bool = True) -> str:
    """Serialize a chain to its canonical text.

    With include_actions=False only the instruction, query and document
    lines are emitted (the pure retrieval chain); action markers and any
    final answer are omitted.
    """
    lines = [
        _escape(chain.instruction_query),
        _QUERY_PREFIXES[chain.task_kind] + _escape(chain.query),
    ]
    for j, step in enumerate(chain.steps):
        lines.append("")
        lines.append(_document_line(step.passage))
        if include_actions:
            lines.append(ACTION_STRINGS[step.eval])
            if _trailing_retrieve(chain, j):
                lines.append(ACTION_STRINGS[ActionKind.RETRIEVE_NEXT])
    if include_actions and chain.pending_answer is not None:
        marker = ACTION_STRINGS[ActionKind.FINAL_ANSWER]
        if chain.pending_answer:
            lines.append(marker + " " + _escape(chain.pending_answer))
        else:
            lines.append(marker)
    return "\n".join(lines)


def _find_separator(payload: str) -> int:
    """Index of the unescaped pipe in a document payload, or -1."""
    i = 0
    while i < len(payload):
        c = payload[i]
        if c == "\\":
            i += 2
            continue
        if c == "|":
            return i
        i += 1
    return -1


def _parse_document_line(line: str) -> Passage:
    payload = line[len(_DOCUMENT_PREFIX):]
    sep = _find_separator(payload)
    if sep == -1:
        title, text = "", _unescape(payload)
    else:
        if sep == 0 or payload[sep - 1] != " " or payload[sep + 1 : sep + 2] != " ":
            raise MalformedChain(f"malformed document separator in: {line!r}")
        title = _unescape(payload[: sep - 1])
        text = _unescape(payload[sep + 2 :])
    if not text.strip():
        raise MalformedChain("document block has empty text")
    return Passage.from_content(title, text)


def _parse_final_answer(line: str) -> str:
    marker = ACTION_STRINGS[ActionKind.FINAL_ANSWER]
    rest = line[len(marker):]
    if rest == "":
        return ""
    if not rest.startswith(" "):
        raise MalformedChain(f"malformed final answer line: {line!r}")
    return _unescape(rest[1:])


def parse_chain(text: str) -> Chain:
    """Parse canonical chain text (rendered with actions) back into a Chain.

    Raises MalformedChain on unknown markers, out-of-order markers or
    truncated document blocks.
    """
    lines = text.split("\n")
    if len(lines) < 2:
        raise MalformedChain("chain text needs at least an instruction and a query line")
    instruction = _unescape(lines[0])

    query_line = lines[1]
    task_kind = None
    for kind, prefix in _QUERY_PREFIXES.items():
        if query_line.startswith(prefix):
            task_kind = kind
            query = _unescape(query_line[len(prefix):])
            break
    if task_kind is None:
        raise MalformedChain(f"expected a query line, got: {query_line!r}")

    steps: list[ChainStep] = []
    pending: str | None = None
    retrieve_marker = ACTION_STRINGS[ActionKind.RETRIEVE_NEXT]
    answer_marker = ACTION_STRINGS[ActionKind.FINAL_ANSWER]

    i = 2
    n = len(lines)
    while i < n:
        line = lines[i]
        if line == "":
            # document block: blank, Document, Eval, [Retrieve next]
            i += 1
            if i >= n or not lines[i].startswith(_DOCUMENT_PREFIX):
                raise MalformedChain("truncated document block")
            passage = _parse_document_line(lines[i])
            i += 1
            if i >= n:
                raise MalformedChain("document block missing relevance judgement")
            eval_line = lines[i]
            if not eval_line.startswith(_EVAL_PREFIX):
                raise MalformedChain(
                    f"expected a relevance judgement after document, got: {eval_line!r}"
                )
            eval_kind = action_from_string(eval_line)
            steps.append(ChainStep(passage, eval_kind))
            i += 1
            if i < n and lines[i] == retrieve_marker:
                i += 1
                if i < n and lines[i] == retrieve_marker:
                    raise MalformedChain("duplicate consecutive retrieve markers")
                if i >= n:
                    # trailing marker: only valid after a relevant judgement
                    if eval_kind is not ActionKind.EVAL_RELEVANT:
                        raise MalformedChain(
                            "retrieve marker cannot follow an irrelevant judgement "
                            "at the end of a chain"
                        )
                    break
                if lines[i] != "":
                    raise MalformedChain(
                        f"expected a document block after retrieve marker, got: {lines[i]!r}"
                    )
                # loop continues with the blank line
            else:
                # no retrieve marker: chain must terminate here
                if i < n and lines[i].startswith(answer_marker):
                    pending = _parse_final_answer(lines[i])
                    i += 1
                    if i < n:
                        raise MalformedChain("content after final answer line")
                    break
                if i < n:
                    raise MalformedChain(
                        "a completed hop must be followed by a retrieve marker, "
                        f"a final answer, or the end of the chain; got: {lines[i]!r}"
                    )
                if eval_kind is ActionKind.EVAL_RELEVANT:
                    raise MalformedChain(
                        "chain ends after a relevant judgement without a retrieve "
                        "marker or final answer"
                    )
                break
        elif line.startswith(answer_marker) and not steps:
            pending = _parse_final_answer(line)
            i += 1
            if i < n:
                raise MalformedChain("content after final answer line")
            break
        else:
            raise MalformedChain(f"unexpected line in chain: {line!r}")

    try:
        return Chain(
            instruction_query=instruction,
            query=query,
            task_kind=task_kind,
            steps=tuple(steps),
            pending_answer=pending,
        )
    except ValueError as exc:
        raise MalformedChain(str(exc)) from None
