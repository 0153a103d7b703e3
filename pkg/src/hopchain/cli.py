"""Command-line entry point.

Subcommands map 1:1 onto the pipeline stages:

    ingest        normalize a raw dataset into the canonical corpus/instances pair
    index build   embed a corpus into a searchable index file
    index search  ad-hoc top-k query against an index
    mine          hard-negative mining over a dataset
    build-dataset construct contrastive/generative training files
    retrieve      run the multi-hop loop and write traces
    evaluate      teacher-forced Hits@k tables (plus diagnostics when traces given)
    bench         cross-encoder-vs-dense micro benchmark
    report        render a report JSON as markdown

Exit codes: 0 success, 1 domain error, 2 usage error.  Every artifact file
embeds the resolved run configuration and the tool version.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import __version__
from .core import (
    DEFAULT_INSTRUCTION_QUERY,
    MultiHopInstance,
    Passage,
    TaskKind,
)
from .costmodel import SLOPE_RATIO_THRESHOLD, bench_empirical
from .databuilder import build_samples, export_training_files
from .embedding import (
    DEFAULT_INSTRUCTION_DOCUMENT,
    EmbeddingRequest,
    Role,
    make_provider,
)
from .engine import (
    HopRecord,
    HopTrace,
    RemoteControl,
    StopPolicy,
    StopReason,
    oracle_control,
    run_chain,
)
from .errors import HopchainError
from .evaluator import (
    diagnose,
    evaluate_hits,
    hits_table_to_dict,
    render_diagnostics_markdown,
    render_hits_markdown,
)
from .index import (
    SearchResult,
    build_index,
    check_dimension,
    load_index,
    save_index,
    search,
)
from .ingestion import (
    DatasetDescriptor,
    GoldOrder,
    SourceFormat,
    canonical_descriptor,
    load_dataset,
    stats,
    write_canonical,
)
from .miner import MiningConfig, mine_negatives
from .parallel import default_workers, parallel_map


def _add_provider_args(parser: argparse.ArgumentParser):
    parser.add_argument("--provider", choices=["reference", "remote"], default="reference")
    parser.add_argument("--endpoint", default=None, help="remote service URL (or env HOPCHAIN_EMBED_ENDPOINT)")
    parser.add_argument("--dimension", type=int, default=256, help="reference embedder dimension")
    parser.add_argument("--instruction-query", default=DEFAULT_INSTRUCTION_QUERY)
    parser.add_argument("--instruction-document", default=DEFAULT_INSTRUCTION_DOCUMENT)
    parser.add_argument("--no-include-actions", dest="include_actions", action="store_false",
                        help="embed chains without action markers")
    parser.set_defaults(include_actions=True)


def _add_common_args(parser: argparse.ArgumentParser):
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=None,
                        help="parallel workers (default: available parallelism)")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hopchain", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"hopchain {__version__}")
    sub = parser.add_subparsers(dest="command")

    p_ingest = sub.add_parser("ingest", help="normalize a dataset into canonical files")
    p_ingest.add_argument("--input", required=True)
    p_ingest.add_argument("--format", required=True, choices=[f.value for f in SourceFormat])
    p_ingest.add_argument("--task-kind", default=TaskKind.QUESTION_ANSWERING.value,
                          choices=[t.value for t in TaskKind])
    p_ingest.add_argument("--name", default="dataset")
    p_ingest.add_argument("--corpus", default=None, help="shared corpus JSONL for canonical inputs")
    p_ingest.add_argument("--gold-order", default=GoldOrder.ORDERED.value,
                          choices=[g.value for g in GoldOrder])
    p_ingest.add_argument("--min-hops", type=int, default=None)
    p_ingest.add_argument("--max-hops-filter", type=int, default=None)
    p_ingest.add_argument("--on-error", default="raise", choices=["raise", "skip"])
    p_ingest.add_argument("--out-dir", required=True)
    _add_common_args(p_ingest)

    p_index = sub.add_parser("index", help="build or query a vector index")
    index_sub = p_index.add_subparsers(dest="index_command")
    p_build = index_sub.add_parser("build")
    p_build.add_argument("--corpus", required=True)
    p_build.add_argument("--out", required=True)
    p_build.add_argument("--record-timestamp", default="",
                         help="wall-clock string to store (breaks byte-reproducibility)")
    _add_provider_args(p_build)
    _add_common_args(p_build)
    p_search = index_sub.add_parser("search")
    p_search.add_argument("--idx", required=True)
    p_search.add_argument("--query", required=True)
    p_search.add_argument("--k", type=int, default=10)
    _add_provider_args(p_search)
    _add_common_args(p_search)

    p_mine = sub.add_parser("mine", help="mine hard negatives")
    p_mine.add_argument("--dataset", required=True)
    p_mine.add_argument("--corpus", default=None,
                        help="corpus JSONL; optional when passages are inline")
    p_mine.add_argument("--idx", required=True)
    p_mine.add_argument("--out", required=True)
    p_mine.add_argument("--task-kind", default=TaskKind.QUESTION_ANSWERING.value,
                        choices=[t.value for t in TaskKind])
    p_mine.add_argument("--negatives-per-positive", type=int, default=10)
    p_mine.add_argument("--similarity-ceiling", type=float, default=0.95)
    p_mine.add_argument("--pool-size", type=int, default=100)
    _add_provider_args(p_mine)
    _add_common_args(p_mine)

    p_build_ds = sub.add_parser("build-dataset", help="construct training files")
    p_build_ds.add_argument("--dataset", required=True)
    p_build_ds.add_argument("--corpus", default=None,
                            help="corpus JSONL; optional when passages are inline")
    p_build_ds.add_argument("--idx", required=True)
    p_build_ds.add_argument("--out-dir", required=True)
    p_build_ds.add_argument("--task-kind", default=TaskKind.QUESTION_ANSWERING.value,
                            choices=[t.value for t in TaskKind])
    p_build_ds.add_argument("--negatives-per-positive", type=int, default=10)
    p_build_ds.add_argument("--similarity-ceiling", type=float, default=0.95)
    p_build_ds.add_argument("--pool-size", type=int, default=100)
    _add_provider_args(p_build_ds)
    _add_common_args(p_build_ds)

    p_retrieve = sub.add_parser("retrieve", help="run the multi-hop retrieval loop")
    p_retrieve.add_argument("--idx", required=True)
    p_retrieve.add_argument("--corpus", default=None,
                            help="corpus JSONL; required with --query, optional with --dataset")
    group = p_retrieve.add_mutually_exclusive_group(required=True)
    group.add_argument("--query", help="single ad-hoc query")
    group.add_argument("--dataset", help="canonical instances file; one trace per instance")
    p_retrieve.add_argument("--task-kind", default=TaskKind.QUESTION_ANSWERING.value,
                            choices=[t.value for t in TaskKind])
    p_retrieve.add_argument("--policy", default="control",
                            choices=["fixed", "score-decrease", "control", "cap"])
    p_retrieve.add_argument("--hops", type=int, default=2, help="hop count for --policy fixed")
    p_retrieve.add_argument("--max-hops", type=int, default=8)
    p_retrieve.add_argument("--k", type=int, default=10)
    p_retrieve.add_argument("--control", default="oracle", choices=["oracle", "remote"],
                            help="control provider for --policy control")
    p_retrieve.add_argument("--control-endpoint", default=None)
    p_retrieve.add_argument("--no-timing", action="store_true",
                            help="zero hop latencies for byte-reproducible traces")
    p_retrieve.add_argument("--out", required=True)
    _add_provider_args(p_retrieve)
    _add_common_args(p_retrieve)

    p_eval = sub.add_parser("evaluate", help="teacher-forced Hits@k per hop")
    p_eval.add_argument("--dataset", required=True)
    p_eval.add_argument("--corpus", default=None,
                        help="corpus JSONL; optional when passages are inline")
    p_eval.add_argument("--idx", required=True)
    p_eval.add_argument("--ks", default="1,5,10")
    p_eval.add_argument("--max-hop", type=int, default=4)
    p_eval.add_argument("--task-kind", default=TaskKind.QUESTION_ANSWERING.value,
                        choices=[t.value for t in TaskKind])
    p_eval.add_argument("--gold-order", default=GoldOrder.ORDERED.value,
                        choices=[g.value for g in GoldOrder])
    p_eval.add_argument("--traces", default=None,
                        help="trace JSONL to fold end-to-end diagnostics into the report")
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--markdown", default=None, help="also render a markdown table here")
    _add_provider_args(p_eval)
    _add_common_args(p_eval)

    p_bench = sub.add_parser("bench", help="cross-encoder vs dense micro benchmark")
    p_bench.add_argument("--sizes", default="1000,10000")
    p_bench.add_argument("--trials", type=int, default=3)
    p_bench.add_argument("--slope-ratio-threshold", type=float, default=SLOPE_RATIO_THRESHOLD)
    p_bench.add_argument("--out", required=True)
    _add_provider_args(p_bench)
    _add_common_args(p_bench)

    p_report = sub.add_parser("report", help="render a report JSON as markdown")
    p_report.add_argument("--input", required=True)
    p_report.add_argument("--out", default=None, help="write here instead of stdout")
    _add_common_args(p_report)

    return parser


def _run_config(args: argparse.Namespace) -> dict:
    config = {
        key: value
        for key, value in sorted(vars(args).items())
        if key not in ("command", "index_command") and not callable(value)
    }
    config["version"] = __version__
    return config


def _provider_from_args(args: argparse.Namespace):
    return make_provider(
        args.provider, dimension=args.dimension, endpoint=args.endpoint
    )


def _load_corpus_and_instances(args: argparse.Namespace) -> tuple[dict[str, Passage], list[MultiHopInstance]]:
    """Corpus comes from --corpus when given, else from inline passages."""
    descriptor = canonical_descriptor(
        name="cli", task_kind=TaskKind(args.task_kind), corpus_path=args.corpus
    )
    result = load_dataset(args.dataset, descriptor)
    return {p.id: p for p in result.corpus}, result.instances


def _load_corpus_file(path: str) -> list[Passage]:
    passages = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            stripped = line.strip()
            if not stripped:
                continue
            record = json.loads(stripped)
            if "_meta" in record and len(record) == 1:
                continue
            passages.append(
                Passage(id=str(record["id"]), title=str(record.get("title", "")), text=record["text"])
            )
    return passages


def _write_jsonl(path: str | Path, records: list[dict], meta: dict):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"_meta": meta}, ensure_ascii=False, sort_keys=True) + "\n")
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def _write_json(path: str | Path, doc: dict):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, ensure_ascii=False, sort_keys=True, indent=2)
        fh.write("\n")


def _cmd_ingest(args) -> int:
    descriptor = DatasetDescriptor(
        name=args.name,
        task_kind=TaskKind(args.task_kind),
        source_format=SourceFormat(args.format),
        has_decomposition=SourceFormat(args.format) is SourceFormat.MUSIQUE_LIKE,
        gold_order=GoldOrder(args.gold_order),
        corpus_path=args.corpus,
        min_hops=args.min_hops,
        max_hops=args.max_hops_filter,
        on_error=args.on_error,
    )
    result = load_dataset(args.input, descriptor)
    meta = {"run_config": _run_config(args)}
    out = Path(args.out_dir)
    write_canonical(out, result.corpus, result.instances, meta=meta)
    _write_json(out / "load_report.json", {"report": result.report.to_dict(), "meta": meta})
    _write_json(out / "stats.json", {"stats": stats(result.instances), "meta": meta})
    print(
        f"ingested {len(result.instances)} instances / {len(result.corpus)} passages "
        f"into {out}"
    )
    return 0


def _cmd_index(args) -> int:
    if args.index_command == "build":
        corpus = _load_corpus_file(args.corpus)
        provider = _provider_from_args(args)
        index = build_index(
            corpus, provider, args.instruction_document,
            include_actions_mode=args.include_actions,
            timestamp=args.record_timestamp,
            extra_metadata={"run_config": _run_config(args)},
        )
        save_index(index, args.out)
        print(f"indexed {len(index)} passages ({index.dimension}d) into {args.out}")
        return 0
    if args.index_command == "search":
        index = load_index(args.idx)
        provider = _provider_from_args(args)
        check_dimension(index, provider)
        vector = provider.embed(
            EmbeddingRequest(args.query, Role.QUERY_CHAIN, args.instruction_query)
        )
        result = search(index, vector, args.k)
        for pid, score in result.ranked:
            print(f"{score:.6f}\t{pid}")
        return 0
    print("usage: hopchain index {build,search} ...", file=sys.stderr)
    return 2


def _cmd_mine(args) -> int:
    corpus, instances = _load_corpus_and_instances(args)
    index = load_index(args.idx)
    provider = _provider_from_args(args)
    check_dimension(index, provider)
    config = MiningConfig(
        negatives_per_positive=args.negatives_per_positive,
        similarity_ceiling=args.similarity_ceiling,
        pool_size=args.pool_size,
    )
    pairs = [(instance, hop) for instance in instances for hop in range(instance.hops)]

    def worker(pair):
        instance, hop = pair
        return mine_negatives(
            instance, hop, corpus, index, provider, config,
            instruction_query=args.instruction_query,
            include_actions=args.include_actions,
        )

    mined = parallel_map(worker, pairs, args.workers or default_workers())
    records = [
        {
            "instance_id": m.instance_id,
            "hop_index": m.hop_index,
            "negatives": list(m.negatives),
            "hardest": m.hardest,
            "insufficient": m.insufficient,
        }
        for m in mined
    ]
    _write_jsonl(args.out, records, {"run_config": _run_config(args)})
    short = sum(1 for m in mined if m.insufficient)
    print(f"mined {len(records)} (instance, hop) pairs into {args.out}" +
          (f" ({short} short)" if short else ""))
    return 0


def _cmd_build_dataset(args) -> int:
    corpus, instances = _load_corpus_and_instances(args)
    index = load_index(args.idx)
    provider = _provider_from_args(args)
    check_dimension(index, provider)
    config = MiningConfig(
        negatives_per_positive=args.negatives_per_positive,
        similarity_ceiling=args.similarity_ceiling,
        pool_size=args.pool_size,
    )

    def worker(instance):
        return build_samples(
            instance, corpus, index, provider, config, args.seed,
            instruction_query=args.instruction_query,
            include_actions=args.include_actions,
        )

    results = parallel_map(worker, instances, args.workers or default_workers())
    contrastive = [sample for pair in results for sample in pair[0]]
    generative = [sample for pair in results for sample in pair[1]]
    stats_doc = export_training_files(
        contrastive, generative, args.out_dir,
        rng_seed=args.seed, meta={"run_config": _run_config(args)},
    )
    print(
        f"built {stats_doc['contrastive_samples']} contrastive / "
        f"{stats_doc['generative_samples']} generative samples into {args.out_dir}"
    )
    return 0


def _policy_from_args(args) -> StopPolicy:
    if args.policy == "fixed":
        return StopPolicy.fixed_hops(args.hops, max_hops=args.max_hops)
    if args.policy == "score-decrease":
        return StopPolicy.score_decrease(max_hops=args.max_hops)
    if args.policy == "cap":
        return StopPolicy.cap_only(max_hops=args.max_hops)
    return StopPolicy.control(max_hops=args.max_hops)


def _trace_to_dict(trace: HopTrace, *, keep_timing: bool) -> dict:
    return {
        "instance_id": trace.instance_id,
        "stop_reason": trace.stop_reason.value,
        "final_answer": trace.final_answer,
        "hops": [
            {
                "chain_text_before": hop.chain_text_before,
                "ranked": [[pid, score] for pid, score in hop.ranked.ranked],
                "accepted": hop.accepted,
                "latency_s": hop.latency if keep_timing else 0.0,
            }
            for hop in trace.hops
        ],
    }


def _trace_from_dict(doc: dict) -> HopTrace:
    return HopTrace(
        instance_id=doc["instance_id"],
        stop_reason=StopReason(doc["stop_reason"]),
        final_answer=doc.get("final_answer"),
        hops=tuple(
            HopRecord(
                chain_text_before=hop["chain_text_before"],
                ranked=SearchResult(
                    ranked=tuple((pid, float(score)) for pid, score in hop["ranked"])
                ),
                accepted=hop["accepted"],
                latency=float(hop.get("latency_s", 0.0)),
            )
            for hop in doc["hops"]
        ),
    )


def read_traces(path: str | Path) -> list[HopTrace]:
    traces = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            stripped = line.strip()
            if not stripped:
                continue
            doc = json.loads(stripped)
            if "_meta" in doc and len(doc) == 1:
                continue
            traces.append(_trace_from_dict(doc))
    return traces


def _cmd_retrieve(args) -> int:
    index = load_index(args.idx)
    provider = _provider_from_args(args)
    check_dimension(index, provider)
    policy = _policy_from_args(args)

    traces: list[HopTrace] = []
    if args.query is not None:
        if args.policy == "control" and args.control == "oracle":
            raise HopchainError("oracle control needs --dataset (gold chains); use --control remote")
        if not args.corpus:
            raise HopchainError("--query mode requires --corpus (passage texts for the chain)")
        corpus = {p.id: p for p in _load_corpus_file(args.corpus)}
        control = None
        if args.policy == "control":
            endpoint = args.control_endpoint or args.endpoint
            if not endpoint:
                raise HopchainError("remote control requires --control-endpoint")
            control = RemoteControl(endpoint)
        traces.append(
            run_chain(
                args.query, TaskKind(args.task_kind), index, provider, policy, args.k,
                control, corpus=corpus, instruction_query=args.instruction_query,
                include_actions=args.include_actions,
            )
        )
    else:
        corpus, instances = _load_corpus_and_instances(args)

        def worker(instance):
            if args.policy == "control":
                if args.control == "remote":
                    endpoint = args.control_endpoint or args.endpoint
                    if not endpoint:
                        raise HopchainError("remote control requires --control-endpoint")
                    control = RemoteControl(endpoint)
                else:
                    control = oracle_control(instance)
            else:
                control = None
            return run_chain(
                instance.query, instance.task_kind, index, provider, policy, args.k,
                control, corpus=corpus, instruction_query=args.instruction_query,
                include_actions=args.include_actions, instance_id=instance.id,
            )

        traces = parallel_map(worker, instances, args.workers or default_workers())

    records = [_trace_to_dict(t, keep_timing=not args.no_timing) for t in traces]
    _write_jsonl(args.out, records, {"run_config": _run_config(args)})
    print(f"wrote {len(traces)} traces to {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    corpus, instances = _load_corpus_and_instances(args)
    index = load_index(args.idx)
    provider = _provider_from_args(args)
    check_dimension(index, provider)
    ks = [int(k) for k in args.ks.split(",") if k.strip()]
    table = evaluate_hits(
        instances, corpus, index, provider, ks, args.max_hop,
        gold_order=args.gold_order, instruction_query=args.instruction_query,
        include_actions=args.include_actions,
        workers=args.workers or default_workers(),
    )
    doc = {
        "hits": hits_table_to_dict(table),
        "dataset_stats": stats(instances),
        "meta": {"run_config": _run_config(args)},
    }
    if args.traces:
        diagnostics = diagnose(read_traces(args.traces), instances)
        doc["diagnostics"] = dataclasses.asdict(diagnostics)
    _write_json(args.out, doc)
    if args.markdown:
        rendered = render_hits_markdown(table)
        if args.traces:
            rendered += "\n\n" + render_diagnostics_markdown(diagnose(read_traces(args.traces), instances))
        Path(args.markdown).write_text(rendered + "\n", encoding="utf-8")
    for k in sorted(table.avg_per_k):
        print(f"Hits@{k} avg: {table.avg_per_k[k]:.4f}")
    return 0


def _cmd_bench(args) -> int:
    provider = _provider_from_args(args)
    if args.provider != "reference":
        raise HopchainError("bench requires the reference provider for stable timing")
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    report = bench_empirical(
        sizes, provider, args.trials, slope_ratio_threshold=args.slope_ratio_threshold
    )
    report["meta"] = {"run_config": _run_config(args)}
    _write_json(args.out, report)
    for warning in report["warnings"]:
        print(f"warning: {warning}", file=sys.stderr)
    print(
        f"slope ratio (cross/dense-online): {report['slope_ratio']:.1f} "
        f"(threshold {report['slope_ratio_threshold']})"
    )
    return 0


def _cmd_report(args) -> int:
    with open(args.input, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    lines = []
    if "hits" in doc:
        hits = doc["hits"]
        ks = sorted(hits["per_k"], key=int)
        hops = max(len(rows) for rows in hits["per_k"].values())
        header = ["Model"]
        for k in ks:
            header.extend([f"Hits@{k} h{h}" for h in range(1, hops + 1)])
            header.append(f"Hits@{k} Avg")
        row = ["this run"]
        for k in ks:
            rows = hits["per_k"][k]
            for h in range(hops):
                row.append(f"{rows[h]['hits'] * 100:.2f}" if h < len(rows) else "-")
            row.append(f"{hits['avg_per_k'][k] * 100:.2f}")
        lines += [
            "| " + " | ".join(header) + " |",
            "|" + "|".join(["---"] * len(header)) + "|",
            "| " + " | ".join(row) + " |",
        ]
    if "diagnostics" in doc:
        d = doc["diagnostics"]
        lines += [
            "",
            "| Model | Early Stops | Overshoots | Avg. Hops | Avg. Latency / Hop (s) |",
            "|---|---|---|---|---|",
            f"| this run | {d['early_stops']} | {d['overshoots']} | {d['avg_hops']:.2f} "
            f"| {d['avg_latency_per_hop']:.2f} |",
        ]
    if not lines:
        raise HopchainError(f"{args.input}: no renderable sections (expected 'hits'/'diagnostics')")
    rendered = "\n".join(lines)
    if args.out:
        Path(args.out).write_text(rendered + "\n", encoding="utf-8")
    else:
        print(rendered)
    return 0


_HANDLERS = {
    "ingest": _cmd_ingest,
    "index": _cmd_index,
    "mine": _cmd_mine,
    "build-dataset": _cmd_build_dataset,
    "retrieve": _cmd_retrieve,
    "evaluate": _cmd_evaluate,
    "bench": _cmd_bench,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not args.command:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return _HANDLERS[args.command](args)
    except HopchainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def run() -> None:
    raise SystemExit(main())
