"""Loading heterogeneous multi-hop datasets into the canonical model.

Adapters normalize several source shapes into (corpus, instances):

  canonical_jsonl  one instance per line with gold ids; passages either
                   inline under "passages" or in a shared corpus file
  musique_like     per-instance paragraph lists with decomposition steps
                   referencing paragraphs by index
  hotpot_like      [title, [sentences]] contexts with supporting-fact
                   titles; gold order is typically unannotated
  fever_like       claims with a verdict label and inline evidence

Passages are deduplicated corpus-wide by content hash (first id wins, later
references are remapped), duplicate evidence inside a gold chain is
collapsed to its first occurrence, and instances whose gold references
cannot be resolved are rejected.  Everything unusual lands in the load
report.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .core import (
    REFUTED,
    SUPPORTED,
    DecompositionStep,
    MultiHopInstance,
    Passage,
    TaskKind,
)
from .errors import DanglingGoldReference, SchemaError


class SourceFormat(str, Enum):
    CANONICAL_JSONL = "canonical_jsonl"
    MUSIQUE_LIKE = "musique_like"
    HOTPOT_LIKE = "hotpot_like"
    FEVER_LIKE = "fever_like"


class GoldOrder(str, Enum):
    ORDERED = "ordered"
    UNORDERED = "unordered"


_VERDICT_ALIASES = {
    "SUPPORTED": SUPPORTED,
    "SUPPORTS": SUPPORTED,
    "SUPPORTING": SUPPORTED,
    "REFUTED": REFUTED,
    "REFUTES": REFUTED,
    "NOT_SUPPORTED": REFUTED,
}


@dataclass(frozen=True)
class DatasetDescriptor:
    name: str
    task_kind: TaskKind
    source_format: SourceFormat
    has_decomposition: bool = False
    gold_order: GoldOrder = GoldOrder.ORDERED
    corpus_path: str | Path | None = None
    min_hops: int | None = None
    max_hops: int | None = None
    on_error: str = "raise"  # or "skip": collect rejects in the report

    def __post_init__(self):
        if self.source_format is SourceFormat.MUSIQUE_LIKE and not self.has_decomposition:
            raise ValueError("musique_like sources carry decomposition steps")
        if self.on_error not in ("raise", "skip"):
            raise ValueError("on_error must be 'raise' or 'skip'")


@dataclass
class LoadReport:
    source: str
    dataset: str
    instances_loaded: int = 0
    passages_loaded: int = 0
    duplicate_passages_merged: int = 0
    collapsed_chains: list[str] = field(default_factory=list)
    hop_filtered: int = 0
    rejected: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "dataset": self.dataset,
            "instances_loaded": self.instances_loaded,
            "passages_loaded": self.passages_loaded,
            "duplicate_passages_merged": self.duplicate_passages_merged,
            "collapsed_chains": self.collapsed_chains,
            "hop_filtered": self.hop_filtered,
            "rejected": self.rejected,
        }


@dataclass
class LoadResult:
    corpus: list[Passage]
    instances: list[MultiHopInstance]
    report: LoadReport


@dataclass
class _RawInstance:
    line: int
    id: str
    query: str
    answer: str
    gold_ids: list[str]
    decomposition: list[DecompositionStep] | None
    passages: list[Passage]
    task_kind: TaskKind | None = None  # None: use the descriptor's task kind


def _read_jsonl(path: str | Path) -> Iterable[tuple[int, dict]]:
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            stripped = line.strip()
            if not stripped:
                continue
            try:
                record = json.loads(stripped)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc.msg}", line=line_no) from None
            if not isinstance(record, dict):
                raise SchemaError("record is not a JSON object", line=line_no)
            if "_meta" in record and len(record) == 1:
                continue  # artifact header line
            yield line_no, record


def _need(record: dict, key: str, kind, line: int):
    if key not in record:
        raise SchemaError(f"missing field {key!r}", line=line)
    value = record[key]
    if not isinstance(value, kind):
        raise SchemaError(
            f"field {key!r} has type {type(value).__name__}, expected {kind.__name__}",
            line=line,
        )
    return value


def _adapt_canonical(line: int, record: dict) -> _RawInstance:
    passages = []
    for entry in record.get("passages", []) or []:
        if not isinstance(entry, dict):
            raise SchemaError("inline passage is not an object", line=line)
        passages.append(
            Passage(
                id=str(_need(entry, "id", (str, int), line)),
                title=str(entry.get("title", "")),
                text=_need(entry, "text", str, line),
            )
        )
    decomposition = None
    if record.get("decomposition") is not None:
        decomposition = [
            DecompositionStep(
                sub_question=_need(step, "sub_question", str, line),
                sub_answer=_need(step, "sub_answer", str, line),
            )
            for step in _need(record, "decomposition", list, line)
        ]
    task_kind = None
    if "task_kind" in record:
        try:
            task_kind = TaskKind(_need(record, "task_kind", str, line))
        except ValueError:
            raise SchemaError(f"unknown task_kind {record['task_kind']!r}", line=line) from None
    return _RawInstance(
        line=line,
        id=str(_need(record, "id", (str, int), line)),
        query=_need(record, "query", str, line),
        answer=str(_need(record, "answer", (str, int), line)),
        gold_ids=[str(g) for g in _need(record, "gold_chain", list, line)],
        decomposition=decomposition,
        passages=passages,
        task_kind=task_kind,
    )


def _adapt_musique(line: int, record: dict) -> _RawInstance:
    instance_id = str(_need(record, "id", (str, int), line))
    paragraphs = _need(record, "paragraphs", list, line)
    passages = []
    by_idx: dict[int, str] = {}
    for paragraph in paragraphs:
        idx = _need(paragraph, "idx", int, line)
        pid = f"{instance_id}__p{idx}"
        by_idx[idx] = pid
        passages.append(
            Passage(
                id=pid,
                title=str(paragraph.get("title", "")),
                text=_need(paragraph, "paragraph_text", str, line),
            )
        )
    gold_ids: list[str] = []
    decomposition: list[DecompositionStep] = []
    for step in _need(record, "question_decomposition", list, line):
        support = _need(step, "paragraph_support_idx", int, line)
        if support not in by_idx:
            raise SchemaError(f"paragraph_support_idx {support} not in paragraphs", line=line)
        gold_ids.append(by_idx[support])
        decomposition.append(
            DecompositionStep(
                sub_question=_need(step, "question", str, line),
                sub_answer=str(_need(step, "answer", (str, int), line)),
            )
        )
    return _RawInstance(
        line=line,
        id=instance_id,
        query=_need(record, "question", str, line),
        answer=str(_need(record, "answer", (str, int), line)),
        gold_ids=gold_ids,
        decomposition=decomposition,
        passages=passages,
    )


def _adapt_hotpot(line: int, record: dict) -> _RawInstance:
    instance_id = str(record.get("_id") or record.get("id") or "")
    if not instance_id:
        raise SchemaError("missing field '_id'", line=line)
    passages = []
    by_title: dict[str, str] = {}
    for entry in _need(record, "context", list, line):
        if not (isinstance(entry, list) and len(entry) == 2):
            raise SchemaError("context entry is not a [title, sentences] pair", line=line)
        title, sentences = entry
        if not isinstance(sentences, list):
            raise SchemaError("context sentences is not a list", line=line)
        text = " ".join(str(s) for s in sentences)
        pid = f"title::{title}"
        by_title[str(title)] = pid
        passages.append(Passage(id=pid, title=str(title), text=text))
    gold_ids: list[str] = []
    for fact in _need(record, "supporting_facts", list, line):
        if not (isinstance(fact, list) and fact):
            raise SchemaError("supporting fact is not a [title, ...] list", line=line)
        title = str(fact[0])
        if title not in by_title:
            raise SchemaError(f"supporting fact title {title!r} not in context", line=line)
        if by_title[title] not in gold_ids:
            gold_ids.append(by_title[title])
    return _RawInstance(
        line=line,
        id=instance_id,
        query=_need(record, "question", str, line),
        answer=str(_need(record, "answer", (str, int), line)),
        gold_ids=gold_ids,
        decomposition=None,
        passages=passages,
    )


def _adapt_fever(line: int, record: dict) -> _RawInstance:
    instance_id = str(_need(record, "id", (str, int), line))
    label = str(_need(record, "label", str, line)).upper().replace(" ", "_")
    if label not in _VERDICT_ALIASES:
        raise SchemaError(f"unknown verdict label {label!r}", line=line)
    passages = []
    gold_ids = []
    for entry in _need(record, "evidence", list, line):
        if not isinstance(entry, dict):
            raise SchemaError("evidence entry is not an object", line=line)
        text = _need(entry, "text", str, line)
        title = str(entry.get("title", ""))
        pid = str(entry.get("id") or Passage.content_key(title, text))
        passages.append(Passage(id=pid, title=title, text=text))
        if pid not in gold_ids:
            gold_ids.append(pid)
    return _RawInstance(
        line=line,
        id=instance_id,
        query=_need(record, "claim", str, line),
        answer=_VERDICT_ALIASES[label],
        gold_ids=gold_ids,
        decomposition=None,
        passages=passages,
    )


_ADAPTERS = {
    SourceFormat.CANONICAL_JSONL: _adapt_canonical,
    SourceFormat.MUSIQUE_LIKE: _adapt_musique,
    SourceFormat.HOTPOT_LIKE: _adapt_hotpot,
    SourceFormat.FEVER_LIKE: _adapt_fever,
}


def load_dataset(path: str | Path, descriptor: DatasetDescriptor) -> LoadResult:
    """Load and validate a dataset; see the module docstring for semantics."""
    report = LoadReport(source=str(path), dataset=descriptor.name)
    adapter = _ADAPTERS[descriptor.source_format]

    raw_instances: list[_RawInstance] = []
    shared_passages: list[Passage] = []
    if descriptor.corpus_path is not None:
        for line_no, record in _read_jsonl(descriptor.corpus_path):
            shared_passages.append(
                Passage(
                    id=str(_need(record, "id", (str, int), line_no)),
                    title=str(record.get("title", "")),
                    text=_need(record, "text", str, line_no),
                )
            )
    for line_no, record in _read_jsonl(path):
        try:
            raw_instances.append(adapter(line_no, record))
        except SchemaError:
            if descriptor.on_error == "raise":
                raise
            report.rejected.append({"line": line_no, "reason": "schema error"})
        except ValueError as exc:
            if descriptor.on_error == "raise":
                raise SchemaError(str(exc), line=line_no) from None
            report.rejected.append({"line": line_no, "reason": str(exc)})

    # corpus-wide dedup by content hash; first id wins, later ids alias to it
    corpus: list[Passage] = []
    canonical_by_content: dict[str, str] = {}
    alias: dict[str, str] = {}
    by_id: dict[str, Passage] = {}

    def register(passage: Passage, line: int):
        key = Passage.content_key(passage.title, passage.text)
        if passage.id in alias:
            existing = by_id[alias[passage.id]]
            if Passage.content_key(existing.title, existing.text) != key:
                raise SchemaError(
                    f"passage id {passage.id!r} reused with different content", line=line
                )
            return
        if key in canonical_by_content:
            alias[passage.id] = canonical_by_content[key]
            report.duplicate_passages_merged += 1
            return
        canonical_by_content[key] = passage.id
        alias[passage.id] = passage.id
        by_id[passage.id] = passage
        corpus.append(passage)

    for passage in shared_passages:
        register(passage, 0)
    for raw in raw_instances:
        for passage in raw.passages:
            register(passage, raw.line)

    instances: list[MultiHopInstance] = []
    for raw in raw_instances:
        try:
            gold: list[str] = []
            decomposition: list[DecompositionStep] = []
            for position, gold_id in enumerate(raw.gold_ids):
                if gold_id not in alias:
                    raise DanglingGoldReference(
                        f"instance {raw.id!r}: gold id {gold_id!r} does not resolve"
                    )
                resolved = alias[gold_id]
                if resolved in gold:
                    # duplicated evidence collapses to its first occurrence
                    if raw.id not in report.collapsed_chains:
                        report.collapsed_chains.append(raw.id)
                    continue
                gold.append(resolved)
                if raw.decomposition is not None:
                    decomposition.append(raw.decomposition[position])
            if not gold:
                raise SchemaError(f"instance {raw.id!r} has no gold evidence", line=raw.line)
            hops = len(gold)
            if (descriptor.min_hops is not None and hops < descriptor.min_hops) or (
                descriptor.max_hops is not None and hops > descriptor.max_hops
            ):
                report.hop_filtered += 1
                continue
            instances.append(
                MultiHopInstance(
                    id=raw.id,
                    task_kind=raw.task_kind or descriptor.task_kind,
                    query=raw.query,
                    gold_chain=tuple(gold),
                    answer=raw.answer,
                    decomposition=tuple(decomposition) if raw.decomposition is not None else None,
                )
            )
        except (DanglingGoldReference, SchemaError, ValueError) as exc:
            if descriptor.on_error == "raise":
                if isinstance(exc, (DanglingGoldReference, SchemaError)):
                    raise
                raise SchemaError(str(exc), line=raw.line) from None
            report.rejected.append({"line": raw.line, "id": raw.id, "reason": str(exc)})

    report.instances_loaded = len(instances)
    report.passages_loaded = len(corpus)
    return LoadResult(corpus=corpus, instances=instances, report=report)


def stats(instances: Sequence[MultiHopInstance]) -> dict:
    """Histogram of instances per gold-chain length, plus the total."""
    per_hop: dict[int, int] = {}
    for instance in instances:
        per_hop[instance.hops] = per_hop.get(instance.hops, 0) + 1
    return {
        "total": len(instances),
        "per_hop": {str(h): per_hop[h] for h in sorted(per_hop)},
    }


def write_canonical(
    out_dir: str | Path,
    corpus: Sequence[Passage],
    instances: Sequence[MultiHopInstance],
    *,
    meta: dict | None = None,
) -> tuple[Path, Path]:
    """Emit corpus.jsonl and instances.jsonl in the canonical schema.

    Loading the emitted pair back (canonical_jsonl with corpus_path)
    reproduces the same corpus and instances.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = json.dumps({"_meta": meta or {}}, ensure_ascii=False, sort_keys=True) + "\n"
    corpus_path = out / "corpus.jsonl"
    instances_path = out / "instances.jsonl"
    with open(corpus_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header)
        for passage in corpus:
            fh.write(
                json.dumps(
                    {"id": passage.id, "title": passage.title, "text": passage.text},
                    ensure_ascii=False,
                    sort_keys=True,
                )
                + "\n"
            )
    with open(instances_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header)
        for instance in instances:
            record = {
                "id": instance.id,
                "task_kind": instance.task_kind.value,
                "query": instance.query,
                "gold_chain": list(instance.gold_chain),
                "answer": instance.answer,
                "decomposition": (
                    [
                        {"sub_question": s.sub_question, "sub_answer": s.sub_answer}
                        for s in instance.decomposition
                    ]
                    if instance.decomposition is not None
                    else None
                ),
            }
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
    return corpus_path, instances_path


def canonical_descriptor(
    name: str,
    task_kind: TaskKind,
    corpus_path: str | Path,
    *,
    gold_order: GoldOrder = GoldOrder.ORDERED,
) -> DatasetDescriptor:
    return DatasetDescriptor(
        name=name,
        task_kind=task_kind,
        source_format=SourceFormat.CANONICAL_JSONL,
        gold_order=gold_order,
        corpus_path=corpus_path,
    )
