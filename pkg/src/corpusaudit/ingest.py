"""Bulk ingestion of columnar text corpora.

A single producer streams parquet rows, assigns sequential document
ids, and groups records into bounded chunks; consumer threads drain
per-consumer queues and write to the shards they own (consumer j owns
every shard s with s % thread_count == j, so no shard ever sees two
writers).  Ids, shard routing, and flush decisions depend only on the
input order, making the committed index bytes independent of thread
count and queue capacity.  Backpressure comes from the bounded queues:
the producer blocks when consumers fall behind, which is what bounds
memory.
"""

from __future__ import annotations

import logging
import queue
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import psutil
import pyarrow as pa
import pyarrow.parquet as pq

from .index import DocumentRecord, IndexWriter, shard_of

__all__ = [
    "BulkParams",
    "IngestReport",
    "MissingTextColumnError",
    "stream_parquet",
    "compute_chunk_size",
    "partition_file_range",
    "bulk_index",
    "PeakMemorySampler",
    "WORKER_DOC_ID_BASE",
]

log = logging.getLogger(__name__)

# Parallel file-range workers offset their doc ids by worker_id * 2^40,
# guaranteeing cross-worker uniqueness without coordination.
WORKER_DOC_ID_BASE = 1 << 40

_AVG_SAMPLE_DOCS = 10_000


class MissingTextColumnError(RuntimeError):
    pass


@dataclass(frozen=True)
class BulkParams:
    thread_count: int = 4
    chunk_size: int = 1000
    max_chunk_bytes: int = 50_000_000
    queue_size: int = 4

    def __post_init__(self):
        if self.thread_count < 1:
            raise ValueError("thread_count must be >= 1")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")
        if self.queue_size < 1:
            raise ValueError("queue_size must be >= 1")
        if self.max_chunk_bytes < 1:
            raise ValueError("max_chunk_bytes must be >= 1")


@dataclass
class IngestReport:
    files_processed: int
    docs_indexed: int
    elapsed_seconds: float
    peak_memory_bytes: int
    docs_per_second: float
    files_failed: list[tuple[str, str]] = field(default_factory=list)
    oversized_chunks: int = 0

    def to_dict(self) -> dict:
        return {
            "files_processed": self.files_processed,
            "docs_indexed": self.docs_indexed,
            "elapsed_seconds": self.elapsed_seconds,
            "peak_memory_bytes": self.peak_memory_bytes,
            "docs_per_second": self.docs_per_second,
            "files_failed": [list(x) for x in self.files_failed],
            "oversized_chunks": self.oversized_chunks,
        }


def compute_chunk_size(max_chunk_bytes: int, avg_doc_size: int) -> int:
    """Documents per chunk under a byte budget: floor(max/avg), minimum 1."""
    if avg_doc_size <= 0:
        raise ValueError("avg_doc_size must be > 0")
    return max(1, max_chunk_bytes // avg_doc_size)


def partition_file_range(files: list, n_workers: int) -> list[tuple[int, int]]:
    """Split a file list into n_workers contiguous balanced (start, end) ranges.

    Ranges are disjoint, cover the list, and differ in size by at most
    one file; when workers outnumber files the tail ranges are empty.
    """
    if n_workers < 1:
        raise ValueError("n_workers must be >= 1")
    n = len(files)
    q, r = divmod(n, n_workers)
    ranges = []
    start = 0
    for w in range(n_workers):
        size = q + (1 if w < r else 0)
        ranges.append((start, start + size))
        start += size
    return ranges


def stream_parquet(path: str | Path):
    """Yield DocumentRecord per row without materializing the file.

    Requires a ``text`` column; ``url`` is optional and defaults to "".
    The yielded doc_id is the row ordinal within the file; bulk
    ingestion reassigns globally unique ids.
    """
    pf = pq.ParquetFile(path)
    names = pf.schema_arrow.names
    if "text" not in names:
        raise MissingTextColumnError(f"no text column in {path}")
    columns = ["text"] + (["url"] if "url" in names else [])
    source = str(path)
    row = 0
    for batch in pf.iter_batches(batch_size=1024, columns=columns):
        texts = batch.column(0).to_pylist()
        urls = batch.column(1).to_pylist() if batch.num_columns > 1 else None
        for i, text in enumerate(texts):
            url = urls[i] if urls is not None else ""
            yield DocumentRecord(
                doc_id=row,
                url=url if url is not None else "",
                text=text if text is not None else "",
                source=source,
                row_index=row,
            )
            row += 1


class PeakMemorySampler:
    """Samples resident-set size on a timer and keeps the high-water mark."""

    def __init__(self, interval: float = 0.1):
        self.interval = interval
        self.peak = 0
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._proc = psutil.Process()

    def _run(self):
        while not self._stop.is_set():
            rss = self._proc.memory_info().rss
            if rss > self.peak:
                self.peak = rss
            self._stop.wait(self.interval)

    def __enter__(self):
        self.peak = self._proc.memory_info().rss
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
        rss = self._proc.memory_info().rss
        if rss > self.peak:
            self.peak = rss
        return False


def bulk_index(
    files: list,
    writer: IndexWriter,
    params: BulkParams | None = None,
    doc_id_start: int | None = None,
) -> IngestReport:
    """Stream files through the producer/consumer pipeline and commit once.

    Per-file read errors are logged, counted, and skipped; consumer
    (storage) errors abort the run, leaving the index at its last
    commit.  Returns a report with counts, timings, and peak RSS.
    """
    params = params or BulkParams()
    n_shards = writer.n_shards
    tc = params.thread_count
    start_id = (
        doc_id_start
        if doc_id_start is not None
        else writer.manifest.get("next_doc_id", 0)
    )

    queues: list[queue.Queue] = [
        queue.Queue(maxsize=params.queue_size) for _ in range(tc)
    ]
    failure: list[BaseException] = []
    stop_event = threading.Event()

    def consumer(j: int):
        q = queues[j]
        while True:
            chunk = q.get()
            if chunk is None:
                return
            try:
                for rec in chunk:
                    writer.add_document(rec)
            except BaseException as e:  # propagate to the producer
                failure.append(e)
                stop_event.set()
                # Keep draining so the producer never blocks forever.
                while True:
                    item = q.get()
                    if item is None:
                        return

    threads = [
        threading.Thread(target=consumer, args=(j,), daemon=True) for j in range(tc)
    ]
    for t in threads:
        t.start()

    report = IngestReport(0, 0, 0.0, 0, 0.0)
    started = time.perf_counter()
    next_id = start_id
    pending: list[list[DocumentRecord]] = [[] for _ in range(tc)]
    pending_bytes = [0] * tc
    effective_chunk = params.chunk_size
    sample_bytes = 0
    sample_docs = 0
    avg_fixed = False

    def close_chunk(owner: int):
        if pending[owner]:
            queues[owner].put(pending[owner])
            pending[owner] = []
            pending_bytes[owner] = 0

    with PeakMemorySampler() as sampler:
        try:
            for path in files:
                if stop_event.is_set():
                    break
                try:
                    rows = stream_parquet(path)
                    for rec in rows:
                        if stop_event.is_set():
                            break
                        rec = replace(rec, doc_id=next_id)
                        next_id += 1
                        blen = len(rec.text.encode("utf-8"))
                        if not avg_fixed:
                            sample_bytes += blen
                            sample_docs += 1
                            if sample_docs >= _AVG_SAMPLE_DOCS:
                                avg = max(1, sample_bytes // sample_docs)
                                effective_chunk = min(
                                    params.chunk_size,
                                    compute_chunk_size(params.max_chunk_bytes, avg),
                                )
                                avg_fixed = True
                        owner = shard_of(rec.doc_id, n_shards) % tc
                        if (
                            pending[owner]
                            and pending_bytes[owner] + blen > params.max_chunk_bytes
                        ):
                            close_chunk(owner)
                        pending[owner].append(rec)
                        pending_bytes[owner] += blen
                        if blen > params.max_chunk_bytes:
                            # A single document over budget ships alone.
                            report.oversized_chunks += 1
                            log.warning(
                                "document %d (%d bytes) exceeds max_chunk_bytes=%d; "
                                "shipping as singleton chunk",
                                rec.doc_id,
                                blen,
                                params.max_chunk_bytes,
                            )
                            close_chunk(owner)
                        elif len(pending[owner]) >= effective_chunk:
                            close_chunk(owner)
                    report.files_processed += 1
                except (pa.ArrowInvalid, MissingTextColumnError, OSError) as e:
                    log.warning("skipping file %s: %s", path, e)
                    report.files_failed.append((str(path), str(e)))
            for owner in range(tc):
                close_chunk(owner)
        finally:
            for q in queues:
                q.put(None)
            for t in threads:
                t.join()
        if failure:
            writer.abort()
            raise failure[0]
        report.docs_indexed = next_id - start_id
        writer.commit()
    report.elapsed_seconds = time.perf_counter() - started
    report.peak_memory_bytes = sampler.peak
    report.docs_per_second = (
        report.docs_indexed / report.elapsed_seconds
        if report.elapsed_seconds > 0
        else 0.0
    )
    return report
