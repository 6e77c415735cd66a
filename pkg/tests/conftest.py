"""Shared fixtures: small index builders and the session-scoped desk
corpus used by the slower end-to-end tests."""

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from corpusaudit import synthcorpus
from corpusaudit.index import DocumentRecord, IndexReader, IndexWriter, create_index
from corpusaudit.ingest import BulkParams, bulk_index

DESK_FILES = 16
DESK_DOCS_PER_FILE = 1850
DESK_SEED = 7
DESK_SHARDS = 8

# wall-clock seconds of the desk ingest, for end-to-end time budgets
DESK_BUILD: dict = {}


def build_index(path, texts, n_shards=2, urls=None, language="en", flush_bytes=None):
    """Create an index at path from in-memory texts; returns an open reader."""
    create_index(path, n_shards=n_shards, language=language)
    kw = {} if flush_bytes is None else {"flush_bytes": flush_bytes}
    w = IndexWriter(path, **kw)
    for i, text in enumerate(texts):
        url = urls[i] if urls is not None else f"u{i}"
        w.add_document(
            DocumentRecord(doc_id=i, text=text, url=url, source="mem", row_index=i)
        )
    w.commit()
    return IndexReader(path)


@pytest.fixture
def make_index(tmp_path):
    """Factory fixture building throwaway indexes, closed on teardown."""
    readers = []
    counter = [0]

    def _make(texts, n_shards=2, urls=None, language="en", flush_bytes=None):
        counter[0] += 1
        r = build_index(
            tmp_path / f"ix{counter[0]}",
            texts,
            n_shards=n_shards,
            urls=urls,
            language=language,
            flush_bytes=flush_bytes,
        )
        readers.append(r)
        return r

    yield _make
    for r in readers:
        r.close()


@pytest.fixture(scope="session")
def desk_corpus(tmp_path_factory):
    """Roughly 55 MB of synthetic web text in parquet files."""
    out = tmp_path_factory.mktemp("desk-corpus")
    paths = synthcorpus.write_corpus(
        out, n_files=DESK_FILES, docs_per_file=DESK_DOCS_PER_FILE, seed=DESK_SEED
    )
    total = sum(p.stat().st_size for p in paths)
    assert total >= 50 * 1024 * 1024, f"desk corpus only {total} bytes"
    return out


@pytest.fixture(scope="session")
def desk_index(tmp_path_factory, desk_corpus):
    """The desk corpus ingested into an 8-shard index."""
    path = tmp_path_factory.mktemp("desk-index") / "ix"
    create_index(path, n_shards=DESK_SHARDS)
    w = IndexWriter(path)
    files = sorted(desk_corpus.glob("*.parquet"))
    report = bulk_index(files, w, BulkParams(thread_count=2, queue_size=4))
    assert report.docs_indexed == DESK_FILES * DESK_DOCS_PER_FILE
    assert not report.files_failed
    return path


@pytest.fixture(scope="session")
def desk_reader(desk_index):
    r = IndexReader(desk_index)
    yield r
    r.close()


@pytest.fixture(scope="session")
def keyword_file_53(tmp_path_factory, desk_reader):
    """53 audit keywords: 52 corpus words plus one pure stopword.

    The stopword analyzes to nothing under the web-content chain, so
    fuzzy queries skip it while the other four types still run it.
    """
    vocab = desk_reader.field_vocabulary("main")
    by_df = sorted(vocab.items(), key=lambda kv: (-kv[1], kv[0]))
    words = [t for t, _ in by_df[: 52 * 25 : 25]]
    assert len(words) == 52
    path = tmp_path_factory.mktemp("audit") / "keywords.txt"
    path.write_text("\n".join(words + ["the"]) + "\n", encoding="utf-8")
    return path


# Ordered checklist mirrored by tests/test_acceptance.py; the summary hook
# below prints one verdict line per entry at the end of the run.
ACCEPTANCE_CHECKS = [
    ("test_chunk_size_worked_example", "chunk sizing worked example"),
    ("test_verbatim_probe_hit_rate", "verbatim self-retrieval hit rate"),
    ("test_audit_latency_envelope", "keyword audit latency envelope"),
    ("test_engine_equals_linear_scan_oracle", "engine matches linear-scan oracle"),
    ("test_phrase_slop_examples", "phrase slop worked examples"),
    ("test_fuzzy_misspelling_examples", "fuzzy misspelling recovery"),
    ("test_partitioned_merge_equals_single_pass", "partitioned merge equals single pass"),
    ("test_ingest_peak_memory_flat_across_corpus_size", "flat ingest memory across corpus size"),
    ("test_ingest_bytes_identical_across_concurrency", "byte-identical index across concurrency"),
    ("test_bloom_membership_error_bounds", "bloom membership error bounds"),
    ("test_audit_stats_recompute_and_fuzzy_skip", "audit stats recompute and fuzzy skip"),
]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Print a one-line PASS/FAIL verdict per end-to-end check."""
    verdicts = {}
    for key in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py" not in nodeid or "::" not in nodeid:
                continue
            name = nodeid.split("::")[-1].split("[")[0]
            verdicts[name] = verdicts.get(name, True) and key == "passed"
    if not verdicts:
        return
    terminalreporter.write_sep("-", "end-to-end checks")
    for i, (fn, label) in enumerate(ACCEPTANCE_CHECKS, 1):
        if fn in verdicts:
            word = "PASS" if verdicts[fn] else "FAIL"
        else:
            word = "skip"
        terminalreporter.write_line(f"  {i:>2}. {word}  {label}")
