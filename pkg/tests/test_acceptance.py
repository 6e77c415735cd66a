"""End-to-end checks of shipped behavior, one test per release gate:
sizing arithmetic, verbatim self-retrieval, audit latency, equivalence
with a linear-scan oracle, slop and fuzziness worked examples, merge
equivalence, ingestion memory and determinism, and membership-filter
error bounds.

Each test maps to one verdict line printed by the conftest summary
hook at the end of the run.  Worked-example expectations are frozen
from the independent reference implementations in tests/oracle.py.
"""

import hashlib
import json
import random
import shutil
import statistics
import subprocess
import sys
import time
from pathlib import Path

import pytest

from corpusaudit import synthcorpus
from corpusaudit.audit import (
    MISS_ALL_TOKENS_REMOVED,
    MISS_TRUNCATION_BOUNDARY,
    AuditConfig,
    run_audit,
    sample_segments,
    verbatim_probe,
)
from corpusaudit.bloom import build_filter, maybe_contains
from corpusaudit.index import (
    DocumentRecord,
    IndexReader,
    IndexWriter,
    create_index,
)
from corpusaudit.ingest import (
    WORKER_DOC_ID_BASE,
    BulkParams,
    bulk_index,
    compute_chunk_size,
)
from corpusaudit.merge import merge_indexes
from corpusaudit.query import QueryConfig, QueryEngine, QuerySpec

from conftest import DESK_BUILD
from oracle import OracleIndex


# ---------------------------------------------------------------------------
# 1. chunk sizing worked example


def test_chunk_size_worked_example():
    t0 = time.perf_counter()
    assert compute_chunk_size(50_000_000, 4_000) == 12_500
    assert time.perf_counter() - t0 < 1.0


# ---------------------------------------------------------------------------
# 2. verbatim self-retrieval on the desk corpus


def test_verbatim_probe_hit_rate(desk_reader):
    lengths = [1, 10, 100, 300]
    t0 = time.perf_counter()
    segments = sample_segments(desk_reader, lengths, n_per_length=200, seed=7)
    assert len(segments) == 4 * 200
    reports = verbatim_probe(desk_reader, segments, slop=0)
    wall = time.perf_counter() - t0
    assert [r.segment_length for r in reports] == lengths
    for rep in reports:
        assert rep.total == 200
        assert rep.hit_rate_percent >= 98.5, (
            rep.segment_length,
            rep.hit_rate_percent,
            [m.segment for m in rep.misses][:5],
        )
        # every miss is attributed to a known cause; the fallback
        # bucket stays empty
        for m in rep.misses:
            assert m.category in (MISS_ALL_TOKENS_REMOVED, MISS_TRUNCATION_BOUNDARY)
        n_miss = rep.total - round(rep.total * rep.hit_rate_percent / 100.0)
        assert len(rep.misses) == n_miss
    assert DESK_BUILD["ingest_seconds"] + wall < 600.0


# ---------------------------------------------------------------------------
# 3 and 11. keyword audit over the desk corpus (shared run)


@pytest.fixture(scope="module")
def desk_audit(desk_reader, keyword_file_53):
    config = AuditConfig(QueryConfig(), keyword_file_53)
    t0 = time.perf_counter()
    report = run_audit(desk_reader, config)
    wall = time.perf_counter() - t0
    return report, wall


def test_audit_latency_envelope(desk_audit):
    report, wall = desk_audit
    assert wall < 300.0
    assert len(report.header["keywords"]) == 53
    tooks = [r["took_ms"] for r in report.records]
    assert max(tooks) < 2000.0, max(tooks)
    match_tooks = [
        r["took_ms"] for r in report.records if r["query_type"] == "match"
    ]
    assert len(match_tooks) == 53
    assert statistics.median(match_tooks) < 100.0


def test_audit_stats_recompute_and_fuzzy_skip(desk_audit):
    report, _ = desk_audit
    t0 = time.perf_counter()
    # each stats row must be recomputable from the retained records alone
    for row in report.stats:
        recs = [r for r in report.records if r["query_type"] == row.query_type]
        times = [r["took_ms"] for r in recs]
        hits = [r["total_hits"] for r in recs]
        assert row.total_queries == len(recs)
        assert row.avg_time_ms == statistics.fmean(times)
        assert row.median_time_ms == float(statistics.median(times))
        assert row.std_time_ms == statistics.stdev(times)
        assert row.avg_hits == statistics.fmean(hits)
    # the stopword keyword analyzes to nothing: fuzzy alone skips it
    by_type = {row.query_type: row.total_queries for row in report.stats}
    assert by_type["fuzzy"] == 52
    for qt in ("match", "match_phrase", "term_exact", "bool_must"):
        assert by_type[qt] == 53
    assert report.skipped == {"fuzzy": 1}
    assert time.perf_counter() - t0 < 60.0


# ---------------------------------------------------------------------------
# 4. randomized equivalence against the linear-scan oracle


ORACLE_VOCAB = synthcorpus.make_vocabulary()
ORACLE_SIZES = (40, 120, 400, 1000, 250)


def _battery(reader, docs, rng):
    """Sixteen queries spanning every type, drawn from the live corpus."""
    vocab = reader.field_vocabulary("main")
    by_df = sorted(vocab.items(), key=lambda kv: (-kv[1], kv[0]))
    common = by_df[0][0]
    mid = by_df[len(by_df) // 2][0]
    rare = by_df[-1][0]
    w_a = docs[rng.randrange(len(docs))].split()
    w_b = docs[rng.randrange(len(docs))].split()
    i = rng.randrange(max(1, len(w_a) - 3))
    phrase2 = " ".join(w_a[i : i + 2])
    phrase3 = " ".join(w_a[i : i + 3])
    rev2 = " ".join(reversed(phrase2.split()))
    exact_word = w_b[rng.randrange(len(w_b))].lower()
    fuzz_src = mid if len(mid) >= 4 else common
    fuzzed = fuzz_src[:-1] + ("x" if fuzz_src[-1] != "x" else "q")
    n = reader.doc_count
    return [
        QuerySpec("match", f"{common} {mid}", operator="or", top_k=n),
        QuerySpec("match", f"{common} {mid} {rare}", operator="and", top_k=n),
        QuerySpec("match", f"{mid} {mid} {rare}", operator="or", top_k=n),
        QuerySpec("match", "qqqzzzxxx", operator="or", top_k=n),
        QuerySpec("match_phrase", phrase2, slop=0, top_k=n),
        QuerySpec("match_phrase", phrase3, slop=rng.choice([0, 1, 2]), top_k=n),
        QuerySpec("match_phrase", rev2, slop=2, top_k=n),
        QuerySpec("match_phrase", mid, slop=0, top_k=n),
        QuerySpec("term_exact", exact_word, top_k=n),
        QuerySpec("term_exact", "qqqzzzxxx", top_k=n),
        QuerySpec("fuzzy", fuzzed, fuzziness="auto", top_k=n),
        QuerySpec("fuzzy", f"{mid} {rare}", fuzziness=1, operator="and", top_k=n),
        QuerySpec("fuzzy", fuzzed, fuzziness=2, max_expansions=10, top_k=n),
        QuerySpec(
            "bool_must",
            f"{common} {mid} {rare} {rare}",
            operator="or",
            minimum_should_match="50%",
            top_k=n,
        ),
        QuerySpec("bool_must", f"{common} {mid} {rare}", operator="and", top_k=n),
        QuerySpec(
            "bool_must",
            f"{common} {mid} {rare}",
            operator="or",
            bool_must_max_words=2,
            minimum_should_match="100%",
            top_k=n,
        ),
    ]


def _check_random_corpus(root, n_docs, seed):
    """Index a fresh corpus, run the battery, return mismatch notes."""
    rng = random.Random(seed)
    docs = [
        t
        for _, t in synthcorpus.generate_documents(
            n_docs, seed=seed, mean_words=60, vocab=ORACLE_VOCAB
        )
    ]
    create_index(root, n_shards=rng.choice([1, 2, 4]))
    w = IndexWriter(root)
    for i, text in enumerate(docs):
        w.add_document(
            DocumentRecord(doc_id=i, text=text, url=f"u{i}", source="s", row_index=i)
        )
    w.commit()
    reader = IndexReader(root)
    try:
        engine = QueryEngine(reader)
        oracle = OracleIndex(list(enumerate(docs)))
        bad = []
        for spec in _battery(reader, docs, rng):
            res = engine.execute(spec)
            total, ranked = oracle.run(spec)
            got = [(h.doc_id, h.score) for h in res.hits]
            if res.total_hits != total:
                bad.append((spec, "total", res.total_hits, total))
                continue
            if [d for d, _ in got] != [d for d, _ in ranked]:
                bad.append((spec, "order", got[:5], ranked[:5]))
                continue
            for (d1, s1), (_, s2) in zip(got, ranked):
                if abs(s1 - s2) > 1e-6 * max(1.0, abs(s2)):
                    bad.append((spec, "score", d1, s1, s2))
                    break
        return bad
    finally:
        reader.close()


def test_engine_equals_linear_scan_oracle(tmp_path):
    t0 = time.perf_counter()
    mismatches = []
    for ci in range(20):
        n_docs = ORACLE_SIZES[ci % len(ORACLE_SIZES)]
        bad = _check_random_corpus(tmp_path / f"c{ci}", n_docs, seed=1000 + ci)
        mismatches.extend(bad)
        shutil.rmtree(tmp_path / f"c{ci}")
    assert not mismatches, mismatches[:3]
    assert time.perf_counter() - t0 < 300.0


# ---------------------------------------------------------------------------
# 5. phrase slop worked examples


SLOP_DOCS = [
    "climate change",
    "climate rapid change",
    "climate and change",
    "climate action and change",
    "unrelated text entirely",
]


def test_phrase_slop_examples(make_index):
    engine = QueryEngine(make_index(SLOP_DOCS))

    def ids(slop):
        res = engine.match_phrase_query("climate change", slop=slop, top_k=10)
        return {h.doc_id for h in res.hits}

    t0 = time.perf_counter()
    s0, s1, s2 = ids(0), ids(1), ids(2)
    assert 1 not in s0  # "climate rapid change" rejected with no slack
    assert s0 == {0}
    assert 2 in s1  # "climate and change" needs one position of slack
    assert 3 not in s1
    assert 3 in s2  # "climate action and change" needs two
    assert s0 <= s1 <= s2
    assert time.perf_counter() - t0 < 5.0


# ---------------------------------------------------------------------------
# 6. fuzzy misspelling recovery and monotone widening


def test_fuzzy_misspelling_examples(make_index):
    engine = QueryEngine(make_index(SLOP_DOCS + ["cliamts weather report"]))
    t0 = time.perf_counter()
    auto_c = {h.doc_id for h in engine.fuzzy_query("cliamte", "auto", top_k=10).hits}
    auto_g = {h.doc_id for h in engine.fuzzy_query("changge", "auto", top_k=10).hits}
    # both misspellings recover every document containing the intended word
    assert {0, 1, 2, 3} <= auto_c
    assert {0, 1, 2, 3} <= auto_g

    def ladder(text):
        out = []
        for d in (0, 1, 2):
            res = engine.fuzzy_query(text, d, top_k=10, max_expansions=10_000)
            out.append({h.doc_id for h in res.hits})
        return out

    for probe in ("cliamte", "changge"):
        l0, l1, l2 = ladder(probe)
        assert l0 <= l1 <= l2
    l0, _, l2 = ladder("cliamte")
    assert l0 == {5}  # distance 0 reaches only the verbatim misspelling
    assert auto_c == l2  # auto resolves to distance 2 for a 6-letter term
    assert time.perf_counter() - t0 < 5.0


# ---------------------------------------------------------------------------
# 7. partitioned build + merge equals a single-pass build


def _merge_suite(reader, rng):
    """Fifty queries, ten per type, drawn from the indexed corpus."""
    by_df = sorted(
        reader.field_vocabulary("main").items(), key=lambda kv: (-kv[1], kv[0])
    )
    words = [t for t, _ in by_df]
    longish = [t for t in words if len(t) >= 5][:3000]
    ids = reader.all_doc_ids()

    def doc_tokens():
        doc = reader.fetch_document(int(ids[rng.randrange(len(ids))]))
        return doc.text.split()

    specs = []
    for i in range(10):
        text = " ".join(
            rng.choice(words[: len(words) // 2]) for _ in range(2 + i % 3)
        )
        specs.append(
            QuerySpec("match", text, operator="or" if i % 2 else "and", top_k=50)
        )
    for i in range(10):
        toks = doc_tokens()
        j = rng.randrange(max(1, len(toks) - 3))
        k = 2 + (i % 2)
        specs.append(
            QuerySpec(
                "match_phrase",
                " ".join(toks[j : j + k]),
                slop=(0, 0, 1, 2)[i % 4],
                top_k=50,
            )
        )
    for _ in range(10):
        toks = doc_tokens()
        specs.append(
            QuerySpec("term_exact", toks[rng.randrange(len(toks))], top_k=50)
        )
    for i in range(10):
        src = rng.choice(longish)
        probe = src[:-1] + ("x" if src[-1] != "x" else "q")
        specs.append(
            QuerySpec(
                "fuzzy",
                probe,
                fuzziness=("auto", 1, 2)[i % 3],
                operator="or" if i % 2 else "and",
                top_k=50,
            )
        )
    for i in range(10):
        text = " ".join(rng.choice(words) for _ in range(3 + i % 2))
        specs.append(
            QuerySpec(
                "bool_must",
                text,
                operator="or" if i % 2 else "and",
                minimum_should_match=("50%", "100%", "25%")[i % 3],
                top_k=50,
            )
        )
    assert len(specs) == 50
    return specs


def test_partitioned_merge_equals_single_pass(tmp_path):
    t0 = time.perf_counter()
    corpus = tmp_path / "corpus"
    paths = synthcorpus.write_corpus(corpus, n_files=8, docs_per_file=500, seed=11)

    single = tmp_path / "single"
    create_index(single, n_shards=4)
    report = bulk_index(paths, IndexWriter(single), BulkParams())
    assert report.docs_indexed == 4000 and not report.files_failed

    sources = []
    for wi, p in enumerate(paths):
        part = tmp_path / f"part{wi}"
        create_index(part, n_shards=2)
        prep = bulk_index(
            [p], IndexWriter(part), BulkParams(),
            doc_id_start=wi * WORKER_DOC_ID_BASE,
        )
        assert prep.docs_indexed == 500 and not prep.files_failed
        sources.append(part)
    merged = tmp_path / "merged"
    merge_indexes(sources, merged, n_shards=4)

    rs, rm = IndexReader(single), IndexReader(merged)
    try:
        assert rm.doc_count == rs.doc_count == 4000
        es, em = QueryEngine(rs), QueryEngine(rm)
        rng = random.Random(77)
        for spec in _merge_suite(rs, rng):
            a, b = es.execute(spec), em.execute(spec)
            assert a.total_hits == b.total_hits, spec
            assert [h.url for h in a.hits] == [h.url for h in b.hits], spec
    finally:
        rs.close()
        rm.close()
    assert time.perf_counter() - t0 < 600.0


# ---------------------------------------------------------------------------
# 8. ingestion memory stays flat as the corpus grows tenfold


def _cli_ingest(corpus: Path, out: Path) -> dict:
    argv = [
        sys.executable, "-m", "corpusaudit.cli", "index",
        "--input", str(corpus), "--output", str(out),
        "--shards", "4", "--thread-count", "4",
        "--chunk-size", "1000", "--queue-size", "4", "--json",
    ]
    proc = subprocess.run(argv, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr[-2000:]
    return json.loads(proc.stdout)


@pytest.mark.slow
def test_ingest_peak_memory_flat_across_corpus_size(tmp_path_factory):
    base = tmp_path_factory.mktemp("scaling")
    runs = {}
    ingest_seconds = 0.0
    for label, n_files, floor_bytes, n_docs in (
        ("small", 54, 100_000_000, 54_000),
        ("large", 540, 1_000_000_000, 540_000),
    ):
        corpus = base / f"corpus-{label}"
        files = synthcorpus.write_corpus(
            corpus, n_files=n_files, docs_per_file=1000, seed=23
        )
        assert sum(p.stat().st_size for p in files) >= floor_bytes
        out = base / f"ix-{label}"
        report = _cli_ingest(corpus, out)
        assert report["docs_indexed"] == n_docs
        assert not report["files_failed"]
        runs[label] = report["peak_memory_bytes"]
        ingest_seconds += report["elapsed_seconds"]
        shutil.rmtree(out)
        shutil.rmtree(corpus)
    lo, hi = min(runs.values()), max(runs.values())
    assert hi <= 1.25 * lo, runs
    assert ingest_seconds < 900.0


# ---------------------------------------------------------------------------
# 9. identical index bytes across pipeline concurrency settings


def _tree_digest(root: Path) -> dict[str, str]:
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            out[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


@pytest.mark.slow
def test_ingest_bytes_identical_across_concurrency(tmp_path):
    corpus = tmp_path / "corpus"
    synthcorpus.write_corpus(corpus, n_files=4, docs_per_file=1000, seed=29)
    digests = []
    for tc, qs in ((1, 1), (1, 8), (8, 1), (8, 8)):
        out = tmp_path / f"ix-t{tc}-q{qs}"
        argv = [
            sys.executable, "-m", "corpusaudit.cli", "index",
            "--input", str(corpus), "--output", str(out),
            "--shards", "4", "--thread-count", str(tc),
            "--queue-size", str(qs), "--worker-id", "0", "--json",
        ]
        proc = subprocess.run(argv, capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr[-2000:]
        assert json.loads(proc.stdout)["docs_indexed"] == 4000
        digests.append(_tree_digest(out))
    first = digests[0]
    assert first  # non-empty tree
    for other in digests[1:]:
        assert other == first


# ---------------------------------------------------------------------------
# 10. membership filter error bounds at scale


def test_bloom_membership_error_bounds():
    t0 = time.perf_counter()
    present = [f"term-{i:06d}" for i in range(100_000)]
    absent = [f"absent-{i:06d}" for i in range(100_000)]
    bf = build_filter(present, capacity=len(present), fp_rate=0.01)
    false_negatives = sum(1 for t in present if not maybe_contains(bf, t))
    assert false_negatives == 0
    false_positives = sum(1 for t in absent if maybe_contains(bf, t))
    assert false_positives / len(absent) <= 2 * 0.01, false_positives
    assert time.perf_counter() - t0 < 60.0
