"""Keyword-list audit runner and verbatim self-retrieval probe.

An audit executes every keyword from a list against every enabled query
type and retains each raw query record, so the trailing per-type
statistics rows can always be recomputed from the report itself.  The
probe samples contiguous word windows from indexed documents and
reissues them as slop-0 phrase queries, measuring how reliably verbatim
text can be retrieved from the index that contains it.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import random
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .index import IndexReader
from .query import QueryConfig, QueryEngine, QuerySpec

__all__ = [
    "AuditConfig",
    "AuditReport",
    "QueryTypeStats",
    "ProbeReport",
    "Segment",
    "EmptyKeywordFileError",
    "UnsatisfiableLengthError",
    "read_keywords",
    "manifest_digest",
    "run_audit",
    "sample_segments",
    "verbatim_probe",
]

log = logging.getLogger(__name__)

MISS_ALL_TOKENS_REMOVED = "all_tokens_removed"
MISS_TRUNCATION_BOUNDARY = "truncation_boundary"
MISS_OTHER = "other"


class EmptyKeywordFileError(ValueError):
    pass


class UnsatisfiableLengthError(RuntimeError):
    def __init__(self, lengths: list[int]):
        self.lengths = lengths
        super().__init__(
            f"no document long enough for segment lengths {lengths} "
            "within the retry cap"
        )


def read_keywords(path: str | Path) -> list[str]:
    """Load one query string per line; blanks and # comments skipped."""
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        out.append(s)
    if not out:
        raise EmptyKeywordFileError(f"no keywords in {path}")
    return out


def manifest_digest(index_path: str | Path) -> str:
    data = (Path(index_path) / "manifest.json").read_bytes()
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class QueryTypeStats:
    query_type: str
    avg_time_ms: float
    median_time_ms: float
    std_time_ms: float
    avg_hits: float
    total_queries: int

    def to_dict(self) -> dict:
        return {
            "query_type": self.query_type,
            "avg_time_ms": self.avg_time_ms,
            "median_time_ms": self.median_time_ms,
            "std_time_ms": self.std_time_ms,
            "avg_hits": self.avg_hits,
            "total_queries": self.total_queries,
        }


def stats_from_records(query_type: str, records: list[dict]) -> QueryTypeStats:
    """Aggregate raw per-query records into one statistics row.

    Uses the sample (n-1) standard deviation; a single query reports
    zero spread.
    """
    times = [r["took_ms"] for r in records]
    hits = [r["total_hits"] for r in records]
    n = len(records)
    return QueryTypeStats(
        query_type=query_type,
        avg_time_ms=statistics.fmean(times) if n else 0.0,
        median_time_ms=float(statistics.median(times)) if n else 0.0,
        std_time_ms=statistics.stdev(times) if n >= 2 else 0.0,
        avg_hits=statistics.fmean(hits) if n else 0.0,
        total_queries=n,
    )


@dataclass
class AuditConfig:
    query_config: QueryConfig
    keyword_file: str | Path
    top_k_snippets: int = 5
    report_path: str | Path | None = None

    def __post_init__(self):
        if not self.query_config.enabled_types:
            raise ValueError("at least one query type must be enabled")
        if self.top_k_snippets < 0:
            raise ValueError("top_k_snippets must be >= 0")


@dataclass
class AuditReport:
    header: dict
    records: list[dict]
    stats: list[QueryTypeStats]
    skipped: dict[str, int] = field(default_factory=dict)

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(json.dumps(self.header, ensure_ascii=False) + "\n")
            for rec in self.records:
                f.write(json.dumps(rec, ensure_ascii=False) + "\n")
            for row in self.stats:
                f.write(json.dumps(row.to_dict(), ensure_ascii=False) + "\n")

    def write_stats_csv(self, path: str | Path) -> None:
        cols = [
            "query_type",
            "avg_time_ms",
            "median_time_ms",
            "std_time_ms",
            "avg_hits",
            "total_queries",
        ]
        with open(path, "w", encoding="utf-8", newline="") as f:
            w = csv.DictWriter(f, fieldnames=cols)
            w.writeheader()
            for row in self.stats:
                w.writerow(row.to_dict())

    @staticmethod
    def read_jsonl(path: str | Path) -> "AuditReport":
        header = None
        records = []
        stats = []
        with open(path, encoding="utf-8") as f:
            for line in f:
                obj = json.loads(line)
                if header is None:
                    header = obj
                elif "keyword" in obj:
                    records.append(obj)
                else:
                    stats.append(QueryTypeStats(**obj))
        if header is None:
            raise ValueError(f"empty report: {path}")
        return AuditReport(
            header=header,
            records=records,
            stats=stats,
            skipped=dict(header.get("skipped", {})),
        )


def _fuzzy_skipped(engine: QueryEngine, keyword: str) -> bool:
    """A keyword with no analyzable tokens has nothing to expand, so the
    fuzzy query is skipped rather than issued; other types define empty
    results for empty analyses and still execute."""
    terms, _ = engine._analyze_main(keyword)
    return not terms


def run_audit(
    reader: IndexReader,
    config: AuditConfig,
    workers: int = 1,
    index_path: str | Path | None = None,
) -> AuditReport:
    """Execute keyword x enabled-type queries and aggregate statistics.

    Results are assembled in keyword-file order regardless of worker
    count, so two runs differ only in took_ms values.
    """
    keywords = read_keywords(config.keyword_file)
    engine = QueryEngine(reader)
    skipped: dict[str, int] = {}

    def run_keyword(kw: str) -> list[dict]:
        recs = []
        for spec in config.query_config.audit_specs_for(
            kw, top_k=config.top_k_snippets
        ):
            if spec.query_type == "fuzzy" and _fuzzy_skipped(engine, kw):
                recs.append({"keyword": kw, "query_type": "fuzzy", "skip": True})
                continue
            res = engine.execute(spec)
            recs.append(
                {
                    "keyword": kw,
                    "query_type": spec.query_type,
                    "took_ms": res.took_ms,
                    "total_hits": res.total_hits,
                    "hits": [
                        {"score": h.score, "url": h.url,
                         "snippets": list(h.snippets)}
                        for h in res.hits
                    ],
                }
            )
        return recs

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_keyword = list(pool.map(run_keyword, keywords))
    else:
        per_keyword = [run_keyword(kw) for kw in keywords]

    records = []
    for recs in per_keyword:
        for rec in recs:
            if rec.get("skip"):
                qt = rec["query_type"]
                skipped[qt] = skipped.get(qt, 0) + 1
                log.info("skipped %s query for unanalyzable keyword %r",
                         qt, rec["keyword"])
            else:
                records.append(rec)

    stats = [
        stats_from_records(
            qt, [r for r in records if r["query_type"] == qt]
        )
        for qt in config.query_config.enabled_types
    ]
    header = {
        "config": dict(config.query_config.raw) or None,
        "index_digest": manifest_digest(index_path or reader.root),
        "keywords": len(keywords),
        "top_k_snippets": config.top_k_snippets,
        "skipped": dict(skipped),
    }
    report = AuditReport(
        header=header, records=records, stats=stats, skipped=skipped
    )
    if config.report_path is not None:
        report.write_jsonl(config.report_path)
    return report


@dataclass(frozen=True)
class Segment:
    doc_id: int
    length: int
    text: str


def sample_segments(
    reader: IndexReader,
    lengths: list[int],
    n_per_length: int,
    seed: int,
    retry_cap: int = 100,
) -> list[Segment]:
    """Draw random contiguous word windows from indexed documents.

    Documents are drawn uniformly with replacement; a uniform window of
    L whitespace-delimited words is taken from the raw stored text.
    Documents shorter than L are redrawn up to retry_cap times per
    segment; lengths that cannot be satisfied are reported together.
    """
    ids = reader.all_doc_ids()
    if len(ids) == 0:
        raise ValueError("cannot sample from an empty index")
    rng = random.Random(seed)
    out: list[Segment] = []
    failed: list[int] = []
    for length in lengths:
        if length < 1:
            raise ValueError(f"segment length must be >= 1, got {length}")
        for _ in range(n_per_length):
            seg = None
            for _attempt in range(retry_cap):
                doc_id = int(ids[rng.randrange(len(ids))])
                rec = reader.fetch_document(doc_id)
                words = rec.text.split()
                if len(words) < length:
                    continue
                start = rng.randrange(len(words) - length + 1)
                seg = Segment(
                    doc_id, length, " ".join(words[start : start + length])
                )
                break
            if seg is None:
                failed.append(length)
                break
            out.append(seg)
    if failed:
        raise UnsatisfiableLengthError(failed)
    return out


@dataclass(frozen=True)
class ProbeMiss:
    doc_id: int
    segment: str
    category: str


@dataclass
class ProbeReport:
    segment_length: int
    avg_ms: float
    median_ms: float
    std_ms: float
    hit_rate_percent: float
    source_found_percent: float
    total: int
    misses: list[ProbeMiss] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.hit_rate_percent <= 100.0:
            raise ValueError("hit rate out of range")

    def to_dict(self) -> dict:
        return {
            "segment_length": self.segment_length,
            "avg_ms": self.avg_ms,
            "median_ms": self.median_ms,
            "std_ms": self.std_ms,
            "hit_rate_percent": self.hit_rate_percent,
            "source_found_percent": self.source_found_percent,
            "total": self.total,
            "misses": [
                {"doc_id": m.doc_id, "segment": m.segment, "category": m.category}
                for m in self.misses
            ],
        }


def _miss_category(engine: QueryEngine, seg: Segment) -> str:
    terms, _ = engine._analyze_main(seg.text)
    if not terms:
        return MISS_ALL_TOKENS_REMOVED
    # Stored text is never cut, so a window can only straddle a missing
    # tail if the source document text ends before the window does.
    rec = engine.reader.fetch_document(seg.doc_id)
    if rec is None or seg.text not in " ".join(rec.text.split()):
        return MISS_TRUNCATION_BOUNDARY
    return MISS_OTHER


def verbatim_probe(
    reader: IndexReader,
    segments: list[Segment],
    slop: int = 0,
) -> list[ProbeReport]:
    """Reissue sampled segments as phrase queries, one report per length.

    A hit is any query with total_hits >= 1; whether the originating
    document itself matched is tracked separately as a stricter
    secondary rate.  Every miss is categorized and logged.
    """
    engine = QueryEngine(reader)
    by_length: dict[int, list[Segment]] = {}
    for seg in segments:
        by_length.setdefault(seg.length, []).append(seg)

    reports = []
    for length in sorted(by_length):
        group = by_length[length]
        times = []
        hits = 0
        source_found = 0
        misses = []
        for seg in group:
            res = engine.match_phrase_query(seg.text, slop=slop, top_k=1)
            times.append(res.took_ms)
            if res.total_hits >= 1:
                hits += 1
                probe_ids = np.array([seg.doc_id], dtype=np.uint64)
                own = engine.match_phrase_query(
                    seg.text, slop=slop, top_k=1, within_ids=probe_ids
                )
                if own.total_hits >= 1:
                    source_found += 1
            else:
                cat = _miss_category(engine, seg)
                misses.append(ProbeMiss(seg.doc_id, seg.text, cat))
                log.info(
                    "probe miss (length %d, doc %d, %s): %r",
                    length, seg.doc_id, cat, seg.text[:80],
                )
        n = len(group)
        reports.append(
            ProbeReport(
                segment_length=length,
                avg_ms=statistics.fmean(times) if times else 0.0,
                median_ms=float(statistics.median(times)) if times else 0.0,
                std_ms=statistics.stdev(times) if len(times) >= 2 else 0.0,
                hit_rate_percent=100.0 * hits / n if n else 0.0,
                source_found_percent=100.0 * source_found / n if n else 0.0,
                total=n,
                misses=misses,
            )
        )
    return reports
