"""The multi-hop retrieval loop.

Each hop re-embeds the rendered chain, searches the index, accepts the
top-1 candidate and consults a stopping policy: a fixed hop count, the
score-decrease heuristic (stop as soon as the top-1 score drops below the
previous hop's, without accepting the dropping hop), or a control provider
that judges the accepted passage and decides whether to continue, stop, or
answer.  A hop cap composes with every policy.

Control providers abstract the generative side of the system: the oracle
implementation replays an instance's gold chain (a test double for a
served model), and the remote implementation forwards the rendered chain
to an external service and parses the returned action lines.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Mapping, Protocol

from .core import (
    ACTION_STRINGS,
    ActionKind,
    Chain,
    MultiHopInstance,
    Passage,
    TaskKind,
    action_from_string,
    render_chain,
)
from .embedding import EmbeddingProvider, EmbeddingRequest, Role, TransportError
from .errors import HopchainError, ProviderUnavailable
from .index import SearchResult, VectorIndex, search

DEFAULT_MAX_HOPS = 8


class StopKind(str, Enum):
    FIXED_HOPS = "fixed_hops"
    SCORE_DECREASE = "score_decrease"
    CONTROL = "control_provider"
    CAP_ONLY = "max_hops_cap"


@dataclass(frozen=True)
class StopPolicy:
    kind: StopKind
    hops: int | None = None
    max_hops: int = DEFAULT_MAX_HOPS

    def __post_init__(self):
        if self.max_hops < 1:
            raise ValueError("max_hops cap must be >= 1")
        if self.kind is StopKind.FIXED_HOPS:
            if self.hops is None or self.hops < 1:
                raise ValueError("fixed_hops policy requires hops >= 1")
        elif self.hops is not None:
            raise ValueError(f"{self.kind.value} policy does not take a hop count")

    @classmethod
    def fixed_hops(cls, hops: int, max_hops: int = DEFAULT_MAX_HOPS) -> "StopPolicy":
        return cls(StopKind.FIXED_HOPS, hops=hops, max_hops=max_hops)

    @classmethod
    def score_decrease(cls, max_hops: int = DEFAULT_MAX_HOPS) -> "StopPolicy":
        return cls(StopKind.SCORE_DECREASE, max_hops=max_hops)

    @classmethod
    def control(cls, max_hops: int = DEFAULT_MAX_HOPS) -> "StopPolicy":
        return cls(StopKind.CONTROL, max_hops=max_hops)

    @classmethod
    def cap_only(cls, max_hops: int = DEFAULT_MAX_HOPS) -> "StopPolicy":
        return cls(StopKind.CAP_ONLY, max_hops=max_hops)


@dataclass(frozen=True)
class ControlDecision:
    eval: ActionKind
    next: ActionKind
    answer: str | None = None

    def __post_init__(self):
        if self.eval not in (ActionKind.EVAL_RELEVANT, ActionKind.EVAL_IRRELEVANT):
            raise ValueError("control eval must be a relevance judgement")
        if self.next not in (ActionKind.RETRIEVE_NEXT, ActionKind.FINAL_ANSWER, ActionKind.STOP):
            raise ValueError("control next must be retrieve_next, final_answer or stop")
        if (self.answer is not None) != (self.next is ActionKind.FINAL_ANSWER):
            raise ValueError("answer must be present exactly when next is final_answer")


class ControlProvider(Protocol):
    def decide(self, chain: Chain, candidate: Passage) -> ControlDecision: ...


class StopReason(str, Enum):
    POLICY_STOP = "policy_stop"
    CONTROL_STOP = "control_stop"
    CAP_REACHED = "cap_reached"
    CORPUS_EXHAUSTED = "corpus_exhausted"


@dataclass(frozen=True)
class HopRecord:
    chain_text_before: str
    ranked: SearchResult
    accepted: str
    latency: float


@dataclass(frozen=True)
class HopTrace:
    instance_id: str
    hops: tuple[HopRecord, ...]
    stop_reason: StopReason
    final_answer: str | None = None

    @property
    def hop_count(self) -> int:
        return len(self.hops)


def retrieve_step(
    chain: Chain,
    index: VectorIndex,
    provider: EmbeddingProvider,
    k: int,
    exclude_retrieved: bool = True,
    include_actions: bool = True,
) -> SearchResult:
    """Embed the rendered chain and return the top-k candidates.

    When exclude_retrieved is set (the default; without it a chain can loop
    on the same passage) the chain's accepted passages are removed from the
    candidate pool.
    """
    text = render_chain(chain, include_actions=include_actions)
    vector = provider.embed(EmbeddingRequest(text, Role.QUERY_CHAIN))
    exclude = frozenset(chain.accepted_ids) if exclude_retrieved else frozenset()
    return search(index, vector, k, exclude)


def run_chain(
    instance_query: str,
    task_kind: TaskKind,
    index: VectorIndex,
    provider: EmbeddingProvider,
    policy: StopPolicy,
    k: int,
    control: ControlProvider | None = None,
    *,
    corpus: Mapping[str, Passage],
    instruction_query: str,
    instance_id: str = "",
    include_actions: bool = True,
    exclude_retrieved: bool = True,
    clock: Callable[[], float] = time.perf_counter,
) -> HopTrace:
    """Run the retrieval loop for one query and record a full trace.

    The top-1 candidate is accepted at every hop.  Under fixed-hop and
    score-decrease policies accepted passages are judged relevant by
    default; under a control policy the judgement and the continue/stop/
    answer decision come from the control provider.
    """
    if policy.kind is StopKind.CONTROL and control is None:
        raise ValueError("control policy requires a control provider")

    chain = Chain(instruction_query=instruction_query, query=instance_query, task_kind=task_kind)
    hops: list[HopRecord] = []
    final_answer: str | None = None
    previous_top: float | None = None
    hop_limit = policy.max_hops
    if policy.kind is StopKind.FIXED_HOPS:
        hop_limit = min(policy.hops or 1, policy.max_hops)

    stop_reason: StopReason | None = None
    while stop_reason is None:
        started = clock()
        chain_text = render_chain(chain, include_actions=include_actions)
        result = retrieve_step(
            chain, index, provider, k,
            exclude_retrieved=exclude_retrieved, include_actions=include_actions,
        )
        if not result.ranked:
            stop_reason = StopReason.CORPUS_EXHAUSTED
            break
        top_id, top_score = result.ranked[0]

        if (
            policy.kind is StopKind.SCORE_DECREASE
            and previous_top is not None
            and top_score < previous_top
        ):
            # the dropping hop is observed but its passage is not accepted
            stop_reason = StopReason.POLICY_STOP
            break
        previous_top = top_score

        candidate = corpus[top_id]
        if policy.kind is StopKind.CONTROL:
            decision = control.decide(chain, candidate)  # type: ignore[union-attr]
            chain = chain.extend(candidate, decision.eval)
        else:
            decision = None
            chain = chain.extend(candidate, ActionKind.EVAL_RELEVANT)

        hops.append(
            HopRecord(
                chain_text_before=chain_text,
                ranked=result,
                accepted=top_id,
                latency=clock() - started,
            )
        )

        if decision is not None:
            if decision.next is ActionKind.FINAL_ANSWER:
                final_answer = decision.answer
                stop_reason = StopReason.CONTROL_STOP
            elif decision.next is ActionKind.STOP:
                stop_reason = StopReason.CONTROL_STOP
        if stop_reason is None and len(hops) >= hop_limit:
            if policy.kind is StopKind.FIXED_HOPS and len(hops) >= (policy.hops or 1):
                stop_reason = StopReason.POLICY_STOP
            else:
                stop_reason = StopReason.CAP_REACHED

    return HopTrace(
        instance_id=instance_id,
        hops=tuple(hops),
        stop_reason=stop_reason,
        final_answer=final_answer,
    )


class OracleControl:
    """Test double that replays an instance's gold chain.

    Judges a candidate relevant exactly when it is the next gold passage,
    asks to continue until the gold chain is complete, then answers with
    the instance's answer.  A wrong candidate is judged irrelevant and the
    search is stopped early.
    """

    def __init__(self, instance: MultiHopInstance):
        self.instance = instance

    def decide(self, chain: Chain, candidate: Passage) -> ControlDecision:
        position = len(chain.steps)
        gold = self.instance.gold_chain
        if position < len(gold) and candidate.id == gold[position]:
            if position + 1 == len(gold):
                return ControlDecision(
                    eval=ActionKind.EVAL_RELEVANT,
                    next=ActionKind.FINAL_ANSWER,
                    answer=self.instance.answer,
                )
            return ControlDecision(eval=ActionKind.EVAL_RELEVANT, next=ActionKind.RETRIEVE_NEXT)
        return ControlDecision(eval=ActionKind.EVAL_IRRELEVANT, next=ActionKind.STOP)


def oracle_control(instance: MultiHopInstance) -> OracleControl:
    return OracleControl(instance)


class RemoteControl:
    """Control provider backed by the remote service's generation mode.

    Sends {"chain": <rendered chain + candidate document>, "mode":
    "control"} and parses the returned continuation: an Eval line followed
    by "Retrieve next", "Stop", or "Final Answer: ...".  Transport policy
    (timeout, retries, backoff) matches the remote embedder.
    """

    def __init__(
        self,
        endpoint: str,
        timeout: float = 30.0,
        retries: int = 2,
        backoff: float = 0.5,
        transport=None,
    ):
        from .embedding import _http_post_json

        self.endpoint = endpoint
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self._transport = transport or _http_post_json

    def _prompt(self, chain: Chain, candidate: Passage) -> str:
        extended = chain.extend(candidate, ActionKind.EVAL_RELEVANT)
        rendered = render_chain(extended, include_actions=True)
        # strip the provisional judgement: the service generates it
        lines = rendered.split("\n")
        while lines and lines[-1] in (
            ACTION_STRINGS[ActionKind.RETRIEVE_NEXT],
            ACTION_STRINGS[ActionKind.EVAL_RELEVANT],
        ):
            lines.pop()
        return "\n".join(lines)

    def _post(self, payload: dict) -> dict:
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                return self._transport(self.endpoint, payload, self.timeout)
            except TransportError as exc:
                last_error = exc
                if attempt < self.retries:
                    time.sleep(self.backoff * (2**attempt))
        raise ProviderUnavailable(
            f"control service unreachable after {self.retries + 1} attempts: {last_error}"
        )

    def decide(self, chain: Chain, candidate: Passage) -> ControlDecision:
        body = self._post({"chain": self._prompt(chain, candidate), "mode": "control"})
        continuation = body.get("continuation")
        if not isinstance(continuation, str) or not continuation.strip():
            raise ProviderUnavailable("control service returned no continuation")
        return parse_control_continuation(continuation)


def parse_control_continuation(continuation: str) -> ControlDecision:
    """Parse the action lines a control service generates after a document."""
    lines = [line for line in continuation.strip().split("\n") if line.strip()]
    if not lines:
        raise HopchainError("empty control continuation")
    eval_kind = action_from_string(lines[0].strip())
    if eval_kind not in (ActionKind.EVAL_RELEVANT, ActionKind.EVAL_IRRELEVANT):
        raise HopchainError(f"control continuation must start with a judgement: {lines[0]!r}")
    if len(lines) < 2:
        # a lone irrelevant judgement implies stopping; relevant implies continuing
        next_kind = (
            ActionKind.STOP if eval_kind is ActionKind.EVAL_IRRELEVANT else ActionKind.RETRIEVE_NEXT
        )
        return ControlDecision(eval=eval_kind, next=next_kind)
    second = lines[1].strip()
    answer_marker = ACTION_STRINGS[ActionKind.FINAL_ANSWER]
    if second.startswith(answer_marker):
        answer = second[len(answer_marker):].strip()
        return ControlDecision(eval=eval_kind, next=ActionKind.FINAL_ANSWER, answer=answer)
    next_kind = action_from_string(second)
    if next_kind not in (ActionKind.RETRIEVE_NEXT, ActionKind.STOP):
        raise HopchainError(f"unexpected control action: {second!r}")
    return ControlDecision(eval=eval_kind, next=next_kind)
