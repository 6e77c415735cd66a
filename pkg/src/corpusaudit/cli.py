"""Command-line entry point.

One binary, subcommand style: index, search, merge, audit, probe,
stats, bloom.  Every subcommand takes --json for machine output; the
human and JSON renderings come from the same result objects.

Exit codes: 0 success; 2 invalid arguments or configuration; 3 I/O or
data-format failure; 4 unknown query type; 5 analyzer mismatch on
merge; 6 domain error in audit or probe inputs; 7 query timeout.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import analysis, audit as audit_mod, bloom as bloom_mod
from .index import (
    AnalyzerMismatchError,
    IndexFormatError,
    IndexReader,
    IndexWriter,
    create_index,
)
from .ingest import BulkParams, MissingTextColumnError, bulk_index
from .merge import DocCountMismatchError, merge_indexes
from .query import (
    ConfigError,
    QueryConfig,
    QueryEngine,
    QuerySpec,
    QueryTimeoutError,
    UnknownQueryTypeError,
    load_query_config,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_QUERY_TYPE = 4
EXIT_ANALYZER = 5
EXIT_DOMAIN = 6
EXIT_TIMEOUT = 7


class _UsageError(ValueError):
    pass


def _parse_file_range(s: str) -> tuple[int, int]:
    try:
        a, b = s.split(":")
        start, end = int(a), int(b)
    except ValueError:
        raise _UsageError(f"bad --file-range {s!r}, expected START:END")
    if start < 0 or end < start:
        raise _UsageError(f"bad --file-range {s!r}, need 0 <= START <= END")
    return start, end


def _expand_inputs(inputs: list[str]) -> list[Path]:
    files: list[Path] = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            files.extend(sorted(p.glob("*.parquet")))
        elif p.exists():
            files.append(p)
        else:
            raise FileNotFoundError(f"input not found: {item}")
    if not files:
        raise FileNotFoundError(f"no parquet files under {inputs}")
    return files


def _emit(obj: dict | list, as_json: bool, human: str) -> None:
    if as_json:
        print(json.dumps(obj, ensure_ascii=False))
    else:
        print(human)


def cmd_index(args) -> int:
    files = _expand_inputs(args.input)
    if args.file_range:
        start, end = _parse_file_range(args.file_range)
        files = files[start:end]
        if not files:
            raise _UsageError("--file-range selects no files")
    out = Path(args.output)
    if (out / "manifest.json").exists():
        reader_manifest = json.loads((out / "manifest.json").read_text())
        if args.shards and args.shards != reader_manifest["n_shards"]:
            raise _UsageError(
                f"index at {out} has {reader_manifest['n_shards']} shards; "
                f"--shards {args.shards} conflicts"
            )
    else:
        if not args.shards or args.shards < 1:
            raise _UsageError("--shards must be >= 1 when creating an index")
        create_index(out, n_shards=args.shards, language=args.language)
    params = BulkParams(
        thread_count=args.thread_count,
        chunk_size=args.chunk_size,
        max_chunk_bytes=args.max_chunk_bytes,
        queue_size=args.queue_size,
    )
    writer = IndexWriter(out)
    doc_id_start = None
    if args.worker_id is not None:
        from .ingest import WORKER_DOC_ID_BASE

        doc_id_start = args.worker_id * WORKER_DOC_ID_BASE
    report = bulk_index(
        [str(f) for f in files], writer, params, doc_id_start=doc_id_start
    )
    d = report.to_dict()
    human = "\n".join(f"{k}: {v}" for k, v in d.items())
    _emit(d, args.json, human)
    return EXIT_OK if not report.files_failed else EXIT_IO


def cmd_search(args) -> int:
    reader = IndexReader(args.index)
    try:
        spec = QuerySpec(
            query_type=args.type,
            text=args.query,
            operator=args.operator,
            slop=args.slop,
            fuzziness=args.fuzziness,
            bool_must_max_words=args.bool_max_words,
            minimum_should_match=args.min_should_match,
            top_k=args.top_k,
        )
        engine = QueryEngine(reader, timeout_seconds=args.timeout)
        result = engine.execute(spec)
    finally:
        reader.close()
    d = result.to_dict()
    lines = [f"total_hits: {result.total_hits}  took_ms: {result.took_ms:.2f}"]
    for h in result.hits:
        lines.append(f"{h.score:10.4f}  {h.url or '(no url)'}  [doc {h.doc_id}]")
        for s in h.snippets:
            lines.append(f"            {s}")
    _emit(d, args.json, "\n".join(lines))
    return EXIT_OK


def cmd_merge(args) -> int:
    def progress(ev: dict) -> None:
        print(json.dumps(ev), file=sys.stderr, flush=True)

    manifest = merge_indexes(
        args.sources, args.dest, n_shards=args.shards, progress=progress
    )
    summary = {
        "dest": str(args.dest),
        "n_shards": manifest["n_shards"],
        "docs": manifest["next_doc_id"],
    }
    _emit(
        summary,
        args.json,
        f"merged {summary['docs']} docs into {args.dest} "
        f"({summary['n_shards']} shards)",
    )
    return EXIT_OK


def cmd_audit(args) -> int:
    if args.config:
        qconfig = load_query_config(args.config)
    else:
        qconfig = QueryConfig()
    config = audit_mod.AuditConfig(
        query_config=qconfig,
        keyword_file=args.keywords,
        top_k_snippets=args.top_k,
        report_path=args.report,
    )
    reader = IndexReader(args.index)
    try:
        report = audit_mod.run_audit(
            reader, config, workers=args.workers, index_path=args.index
        )
    finally:
        reader.close()
    if args.csv:
        report.write_stats_csv(args.csv)
    rows = [r.to_dict() for r in report.stats]
    lines = [
        f"{'type':<14} {'avg ms':>9} {'med ms':>9} {'std ms':>9} "
        f"{'avg hits':>10} {'queries':>8}"
    ]
    for r in rows:
        lines.append(
            f"{r['query_type']:<14} {r['avg_time_ms']:>9.2f} "
            f"{r['median_time_ms']:>9.2f} {r['std_time_ms']:>9.2f} "
            f"{r['avg_hits']:>10.2f} {r['total_queries']:>8}"
        )
    if report.skipped:
        lines.append(f"skipped: {report.skipped}")
    _emit({"stats": rows, "skipped": report.skipped}, args.json, "\n".join(lines))
    return EXIT_OK


def cmd_probe(args) -> int:
    lengths = [int(x) for x in args.lengths.split(",") if x]
    reader = IndexReader(args.index)
    try:
        segments = audit_mod.sample_segments(
            reader, lengths, args.samples, seed=args.seed
        )
        reports = audit_mod.verbatim_probe(reader, segments, slop=args.slop)
    finally:
        reader.close()
    rows = [r.to_dict() for r in reports]
    if args.report:
        Path(args.report).write_text(
            json.dumps(rows, ensure_ascii=False, indent=1) + "\n"
        )
    lines = [
        f"{'length':>6} {'avg ms':>9} {'med ms':>9} {'std ms':>9} "
        f"{'hit %':>7} {'src %':>7} {'n':>5}"
    ]
    for r in rows:
        lines.append(
            f"{r['segment_length']:>6} {r['avg_ms']:>9.2f} {r['median_ms']:>9.2f} "
            f"{r['std_ms']:>9.2f} {r['hit_rate_percent']:>7.2f} "
            f"{r['source_found_percent']:>7.2f} {r['total']:>5}"
        )
        for m in r["misses"]:
            lines.append(f"       miss doc={m['doc_id']} [{m['category']}] "
                         f"{m['segment'][:60]!r}")
    _emit(rows, args.json, "\n".join(lines))
    return EXIT_OK


def cmd_stats(args) -> int:
    reader = IndexReader(args.index)
    try:
        stats = reader.index_stats().to_dict()
        shards = [
            {
                "shard": block["shard"],
                "segments": [s["name"] for s in block["segments"]],
                "docs": sum(s["doc_count"] for s in block["segments"]),
                "bytes": block["bytes"],
            }
            for block in reader.manifest["shards"]
        ]
    finally:
        reader.close()
    obj = {"stats": stats, "shards": shards}
    lines = [f"{k}: {v}" for k, v in stats.items()]
    for s in shards:
        lines.append(
            f"shard {s['shard']}: {s['docs']} docs, "
            f"{len(s['segments'])} segments, {s['bytes']} bytes"
        )
    _emit(obj, args.json, "\n".join(lines))
    return EXIT_OK


def cmd_bloom(args) -> int:
    if args.bloom_cmd == "build":
        reader = IndexReader(args.from_index)
        try:
            vocab = reader.field_vocabulary("main")
            filt = bloom_mod.build_filter(
                iter(vocab), capacity=args.capacity, fp_rate=args.fp_rate
            )
        finally:
            reader.close()
        filt.save(args.out)
        obj = {
            "out": str(args.out),
            "m_bits": filt.m,
            "k": filt.k,
            "inserted": filt.n_inserted,
            "capacity": filt.capacity,
            "fp_rate": filt.target_fp_rate,
        }
        _emit(
            obj,
            args.json,
            f"built filter {args.out}: m={filt.m} bits, k={filt.k}, "
            f"{filt.n_inserted} terms",
        )
        return EXIT_OK
    filt = bloom_mod.load_filter(args.filter)
    present = bloom_mod.maybe_contains(filt, args.term)
    _emit(
        {"term": args.term, "maybe_contains": present},
        args.json,
        f"{args.term}: {'possibly present' if present else 'definitely absent'}",
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="corpusaudit",
        description="Full-text index, search, and corpus audit toolkit",
    )
    p.add_argument("--verbose", action="store_true", help="log at INFO level")
    sub = p.add_subparsers(dest="cmd", required=True)

    sp = sub.add_parser("index", help="build or append to an index")
    sp.add_argument("--input", nargs="+", required=True,
                    help="parquet files or directories")
    sp.add_argument("--output", required=True)
    sp.add_argument("--shards", type=int, default=0)
    sp.add_argument("--language", default="en")
    sp.add_argument("--thread-count", type=int, default=4)
    sp.add_argument("--chunk-size", type=int, default=1000)
    sp.add_argument("--max-chunk-bytes", type=int, default=50_000_000)
    sp.add_argument("--queue-size", type=int, default=4)
    sp.add_argument("--file-range", default=None, metavar="START:END")
    sp.add_argument("--worker-id", type=int, default=None,
                    help="offset doc ids by worker_id * 2^40")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(fn=cmd_index)

    sp = sub.add_parser("search", help="run one query")
    sp.add_argument("--index", required=True)
    sp.add_argument("--type", required=True)
    sp.add_argument("--query", required=True)
    sp.add_argument("--slop", type=int, default=0)
    sp.add_argument("--fuzziness", default="auto")
    sp.add_argument("--operator", default="or", choices=["or", "and"])
    sp.add_argument("--top-k", type=int, default=10)
    sp.add_argument("--bool-max-words", type=int, default=3)
    sp.add_argument("--min-should-match", default="50%")
    sp.add_argument("--timeout", type=float, default=30.0)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(fn=cmd_search)

    sp = sub.add_parser("merge", help="merge indexes into a new one")
    sp.add_argument("--dest", required=True)
    sp.add_argument("--shards", type=int, required=True)
    sp.add_argument("sources", nargs="+")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(fn=cmd_merge)

    sp = sub.add_parser("audit", help="run a keyword-list audit")
    sp.add_argument("--index", required=True)
    sp.add_argument("--keywords", required=True)
    sp.add_argument("--config", default=None)
    sp.add_argument("--report", default=None)
    sp.add_argument("--csv", default=None)
    sp.add_argument("--top-k", type=int, default=5)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(fn=cmd_audit)

    sp = sub.add_parser("probe", help="verbatim self-retrieval probe")
    sp.add_argument("--index", required=True)
    sp.add_argument("--lengths", default="1,10,100,300")
    sp.add_argument("--samples", type=int, default=200)
    sp.add_argument("--seed", type=int, default=7)
    sp.add_argument("--slop", type=int, default=0)
    sp.add_argument("--report", default=None)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(fn=cmd_probe)

    sp = sub.add_parser("stats", help="manifest and per-shard sizes")
    sp.add_argument("--index", required=True)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(fn=cmd_stats)

    sp = sub.add_parser("bloom", help="membership baseline")
    bsub = sp.add_subparsers(dest="bloom_cmd", required=True)
    bp = bsub.add_parser("build")
    bp.add_argument("--capacity", type=int, required=True)
    bp.add_argument("--fp-rate", type=float, required=True)
    bp.add_argument("--from-index", required=True)
    bp.add_argument("out")
    bp.add_argument("--json", action="store_true")
    bp.set_defaults(fn=cmd_bloom)
    pp = bsub.add_parser("probe")
    pp.add_argument("filter")
    pp.add_argument("term")
    pp.add_argument("--json", action="store_true")
    pp.set_defaults(fn=cmd_bloom)

    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.fn(args)
    except UnknownQueryTypeError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_QUERY_TYPE
    except AnalyzerMismatchError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ANALYZER
    except (audit_mod.EmptyKeywordFileError,
            audit_mod.UnsatisfiableLengthError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DOMAIN
    except QueryTimeoutError as e:
        print(f"error: {e}", file=sys.stderr)
        if e.partial is not None:
            print(json.dumps(e.partial.to_dict()), file=sys.stderr)
        return EXIT_TIMEOUT
    except (_UsageError, ConfigError, analysis.UnknownLanguageError,
            ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, IndexFormatError, MissingTextColumnError,
            DocCountMismatchError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
