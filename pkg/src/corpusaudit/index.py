"""Sharded positional inverted index.

On-disk layout, writer, and reader.  An index directory holds a
``manifest.json`` plus one subdirectory per shard; each shard holds
immutable segments.  A segment is three files:

* ``seg-N.docs``: document store (raw text and metadata) with a footer
  of doc ids, entry offsets, and per-field token counts.
* ``seg-N.postings``: per-term blocks: delta-encoded doc ids, term
  frequencies, and per-document delta-encoded positions.
* ``seg-N.terms``: per-field sorted term dictionaries pointing into the
  postings file.

Documents are routed to shards by FNV-1a of the document id, so a given
id always lands in the same shard regardless of ingestion order or
thread layout.  Writers buffer postings in flat arrays and flush a shard
segment whenever the buffered estimate crosses a byte budget; flush
points therefore depend only on the per-shard document sequence, which
keeps produced bytes independent of producer/consumer scheduling.
Readers open against the manifest as committed at open time and never
observe later writes (snapshot isolation).
"""

from __future__ import annotations

import heapq
import json
import os
import struct
from array import array
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analysis

__all__ = [
    "FIELD_MAIN",
    "FIELD_EXACT",
    "FIELD_KEYWORD",
    "FIELDS",
    "DocumentRecord",
    "PostingEntry",
    "SegmentPostings",
    "IndexStats",
    "IndexWriter",
    "IndexReader",
    "create_index",
    "fnv1a64",
    "shard_of",
    "IndexFormatError",
    "AnalyzerMismatchError",
]

FORMAT_VERSION = 1

FIELD_MAIN = "main"
FIELD_EXACT = "exact"
FIELD_KEYWORD = "keyword"
FIELDS = (FIELD_MAIN, FIELD_EXACT, FIELD_KEYWORD)

_TERMS_MAGIC = b"CATM"
_POSTINGS_MAGIC = b"CAPO"
_DOCS_MAGIC = b"CADC"
_DOCS_FOOTER_MAGIC = b"CADF"

_DEFAULT_FLUSH_BYTES = 24 * 1024 * 1024
_COMPACT_AT = 8

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


class IndexFormatError(RuntimeError):
    """Raised when an index directory or segment file is malformed."""


class AnalyzerMismatchError(RuntimeError):
    """Raised when analyzer configurations of two indexes differ."""


def fnv1a64(data: bytes) -> int:
    """FNV-1a 64-bit hash."""
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


def shard_of(doc_id: int, n_shards: int) -> int:
    """Shard owning a document id: FNV-1a of its little-endian bytes."""
    return fnv1a64(doc_id.to_bytes(8, "little")) % n_shards


def shard_of_array(doc_ids: np.ndarray, n_shards: int) -> np.ndarray:
    """Vectorized shard_of over an array of doc ids."""
    h = np.full(len(doc_ids), _FNV_OFFSET, dtype=np.uint64)
    prime = np.uint64(_FNV_PRIME)
    ids = doc_ids.astype(np.uint64)
    for shift in range(0, 64, 8):
        byte = (ids >> np.uint64(shift)) & np.uint64(0xFF)
        h = (h ^ byte) * prime
    return (h % np.uint64(n_shards)).astype(np.int64)


@dataclass(frozen=True)
class DocumentRecord:
    """One document as stored: identity, location, and raw text."""

    doc_id: int
    url: str
    text: str
    source: str = ""
    row_index: int = 0


@dataclass(frozen=True)
class PostingEntry:
    doc_id: int
    tf: int
    positions: tuple[int, ...]


@dataclass
class IndexStats:
    doc_count: int
    n_shards: int
    segment_count: int
    main_tokens: int
    exact_tokens: int
    avg_doc_length_main: float
    avg_doc_length_exact: float
    on_disk_bytes: int
    language: str
    shard_doc_counts: list[int]

    def to_dict(self) -> dict:
        return {
            "doc_count": self.doc_count,
            "n_shards": self.n_shards,
            "segment_count": self.segment_count,
            "main_tokens": self.main_tokens,
            "exact_tokens": self.exact_tokens,
            "avg_doc_length_main": self.avg_doc_length_main,
            "avg_doc_length_exact": self.avg_doc_length_exact,
            "on_disk_bytes": self.on_disk_bytes,
            "language": self.language,
            "shard_doc_counts": self.shard_doc_counts,
        }


# ---------------------------------------------------------------------------
# Manifest


def _analyzer_block(language: str) -> dict:
    main = analysis.web_content_chain(language)
    exact = analysis.exact_match_chain()
    return {
        "language": language,
        "main_digest": analysis.chain_digest(main),
        "exact_digest": analysis.chain_digest(exact),
    }


def _write_manifest(path: Path, manifest: dict) -> None:
    tmp = path / "manifest.json.tmp"
    tmp.write_text(
        json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )
    tmp.replace(path / "manifest.json")


def _read_manifest(path: Path) -> dict:
    mpath = Path(path) / "manifest.json"
    if not mpath.is_file():
        raise IndexFormatError(f"not an index directory (no manifest): {path}")
    manifest = json.loads(mpath.read_text(encoding="utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise IndexFormatError(
            f"unsupported index format version {manifest.get('format_version')!r}"
        )
    return manifest


def create_index(
    path: str | Path,
    n_shards: int = 4,
    language: str = "en",
) -> None:
    """Create an empty index directory with n_shards shards."""
    if n_shards < 1:
        raise ValueError("n_shards must be >= 1")
    root = Path(path)
    if root.exists() and any(root.iterdir()):
        raise IndexFormatError(f"refusing to create index in non-empty dir: {root}")
    # Validates that a stopword list exists for the language.
    analysis.load_stopwords(language)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": FORMAT_VERSION,
        "n_shards": n_shards,
        "analyzer": _analyzer_block(language),
        "next_doc_id": 0,
        "shards": [
            {"shard": s, "segments": [], "bytes": 0} for s in range(n_shards)
        ],
    }
    for s in range(n_shards):
        (root / f"shard-{s}").mkdir()
    _write_manifest(root, manifest)


# ---------------------------------------------------------------------------
# Segment encoding helpers


def _encode_postings_block(
    ids: np.ndarray, tfs: np.ndarray, positions: np.ndarray
) -> tuple[bytes, int, int]:
    """Encode one term's postings; returns (block, doc_len, pos_len)."""
    delta = ids.astype(np.uint64, copy=True)
    delta[1:] -= ids[:-1]
    wide = bool(delta.max(initial=0) >= 1 << 32)
    flag = b"\x01" if wide else b"\x00"
    id_bytes = delta.tobytes() if wide else delta.astype("<u4").tobytes()
    tf_bytes = tfs.astype("<u4").tobytes()
    if len(positions):
        pdelta = positions.astype(np.uint32, copy=True)
        pdelta[1:] -= positions[:-1]
        doc_starts = np.zeros(len(tfs), dtype=np.int64)
        np.cumsum(tfs[:-1], dtype=np.int64, out=doc_starts[1:])
        pdelta[doc_starts] = positions[doc_starts]
        pos_bytes = pdelta.astype("<u4").tobytes()
    else:
        pos_bytes = b""
    block = flag + id_bytes + tf_bytes + pos_bytes
    doc_len = 1 + len(id_bytes) + len(tf_bytes)
    return block, doc_len, len(pos_bytes)


def _decode_doc_block(buf: bytes, df: int) -> tuple[np.ndarray, np.ndarray]:
    """Decode (doc_ids, tfs) from a doc block (flag + deltas + tfs)."""
    wide = buf[0] == 1
    width = 8 if wide else 4
    dtype = "<u8" if wide else "<u4"
    deltas = np.frombuffer(buf, dtype=dtype, count=df, offset=1).astype(np.uint64)
    ids = np.cumsum(deltas, dtype=np.uint64)
    tfs = np.frombuffer(buf, dtype="<u4", count=df, offset=1 + df * width)
    return ids, tfs.astype(np.int64)


class _TermsSection:
    """Parsed dictionary of one field within one segment."""

    __slots__ = ("entries",)

    def __init__(self, entries: dict[str, tuple[int, int, int, int]]):
        self.entries = entries  # term -> (df, offset, doc_len, pos_len)


def _parse_terms_file(path: Path, lazy_keyword: bool = True):
    data = path.read_bytes()
    if data[:4] != _TERMS_MAGIC:
        raise IndexFormatError(f"bad terms file magic: {path}")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != FORMAT_VERSION:
        raise IndexFormatError(f"bad terms file version {version}: {path}")
    sections = []
    off = 8
    meta = []
    for _ in range(3):
        s_off, s_len, s_cnt = struct.unpack_from("<QQQ", data, off)
        meta.append((s_off, s_len, s_cnt))
        off += 24
    unpack_entry = struct.Struct("<H").unpack_from
    tail = struct.Struct("<IQII")
    for fidx, (s_off, s_len, s_cnt) in enumerate(meta):
        if lazy_keyword and fidx == 2:
            sections.append((s_off, s_len, s_cnt))
            continue
        entries: dict[str, tuple[int, int, int, int]] = {}
        p = s_off
        for _ in range(s_cnt):
            (tlen,) = unpack_entry(data, p)
            p += 2
            term = data[p : p + tlen].decode("utf-8")
            p += tlen
            df, poff, dlen, plen = tail.unpack_from(data, p)
            p += tail.size
            entries[term] = (df, poff, dlen, plen)
        sections.append(_TermsSection(entries))
    return sections, data


# ---------------------------------------------------------------------------
# Writer


class _PostingAcc:
    """Growable postings for one term in the in-memory buffer."""

    __slots__ = ("docs", "tfs", "pos")

    def __init__(self):
        self.docs = array("Q")
        self.tfs = array("I")
        self.pos = array("I")


class _WriterShard:
    """Buffered state for a single shard.

    Not thread-safe across calls for the *same* shard; distinct shards
    are fully independent, so concurrent adds routed to different shards
    are safe.
    """

    def __init__(self, root: Path, shard: int, seg_start: int, flush_bytes: int):
        self.dir = root / f"shard-{shard}"
        self.shard = shard
        self.next_seg = seg_start
        self.flush_bytes = flush_bytes
        self.pending: list[dict] = []
        self.buffers: dict[str, dict[str, _PostingAcc]] = {
            f: {} for f in FIELDS
        }
        # main-field occurrences buffer flat (term id, position) pairs;
        # grouping into postings is deferred to flush, where numpy does
        # it in bulk instead of per-token dict work
        self.m_terms: dict[str, int] = {}
        self.m_id2term: list[str] = []
        self.m_tids = array("i")
        self.m_pos = array("I")
        self.est_bytes = 0
        self.doc_ids = array("Q")
        self.doc_offsets = array("Q")
        self.main_lens = array("I")
        self.exact_lens = array("I")
        self.docs_file = None
        self.docs_pos = 0
        self.max_doc_id = -1

    def _open_docs(self):
        path = self.dir / f"seg-{self.next_seg}.docs"
        self.docs_file = open(path, "wb", buffering=1 << 20)
        self.docs_file.write(_DOCS_MAGIC + struct.pack("<HH", FORMAT_VERSION, 0))
        self.docs_pos = 8

    def add(self, rec: DocumentRecord, exact_terms, main_terms, main_pos) -> None:
        if self.docs_file is None:
            self._open_docs()
        doc_id = rec.doc_id
        if doc_id <= self.max_doc_id:
            raise ValueError(
                f"doc ids must be strictly increasing per shard: got {doc_id} "
                f"after {self.max_doc_id}"
            )
        self.max_doc_id = doc_id

        url_b = rec.url.encode("utf-8")
        text_b = rec.text.encode("utf-8")
        src_b = rec.source.encode("utf-8")
        entry = struct.pack(
            "<QQIII", doc_id, rec.row_index, len(url_b), len(text_b), len(src_b)
        )
        self.doc_ids.append(doc_id)
        self.doc_offsets.append(self.docs_pos)
        self.main_lens.append(len(main_terms))
        self.exact_lens.append(len(exact_terms))
        f = self.docs_file
        f.write(entry)
        f.write(url_b)
        f.write(text_b)
        f.write(src_b)
        self.docs_pos += len(entry) + len(url_b) + len(text_b) + len(src_b)

        # est_bytes approximates the real in-process cost of the buffers
        # (array slots plus dict and string overhead for new terms)
        est = 20 * len(main_terms)
        tid_of = self.m_terms
        id2term = self.m_id2term
        get = tid_of.get
        tid_list = []
        tid_append = tid_list.append
        for t in main_terms:
            tid = get(t)
            if tid is None:
                tid = tid_of[t] = len(id2term)
                id2term.append(t)
                est += 120 + len(t)
            tid_append(tid)
        self.m_tids.extend(tid_list)
        self.m_pos.extend(main_pos)
        # exact and keyword fields carry no meaningful positions; their
        # blocks are zero-filled at flush, so only counts are buffered
        buf = self.buffers[FIELD_EXACT]
        for t, c in Counter(exact_terms).items():
            acc = buf.get(t)
            if acc is None:
                acc = buf[t] = _PostingAcc()
                est += 280 + len(t)
            acc.docs.append(doc_id)
            acc.tfs.append(c)
            est += 16
        kw = analysis.keyword_term(rec.text)
        if kw:
            buf = self.buffers[FIELD_KEYWORD]
            acc = buf.get(kw)
            if acc is None:
                acc = buf[kw] = _PostingAcc()
                est += 280 + len(kw)
            acc.docs.append(doc_id)
            acc.tfs.append(1)
            est += 16
        self.est_bytes += est
        if self.est_bytes >= self.flush_bytes:
            self.flush()

    def flush(self) -> None:
        """Write buffered docs + postings as one immutable segment."""
        if not self.doc_ids:
            return
        seg = self.next_seg
        name = f"seg-{seg}"
        post_path = self.dir / f"{name}.postings"
        terms_path = self.dir / f"{name}.terms"

        sections = []
        with open(post_path.with_suffix(".postings.tmp"), "wb", buffering=1 << 20) as pf:
            pf.write(_POSTINGS_MAGIC + struct.pack("<HH", FORMAT_VERSION, 0))
            pos = 8
            for fname in FIELDS:
                gathered = self._gather_field(fname)
                if gathered is None:
                    sections.append((b"", 0))
                    continue
                # One delta-encoding pass over the whole field; the
                # per-term loop below only slices and writes.
                terms, dfs, doc_cat, tf_cat, pos_cat = gathered
                count = len(terms)
                tf_joined = tf_cat.tobytes()
                starts = np.zeros(count + 1, dtype=np.int64)
                np.cumsum(dfs, out=starts[1:])
                heads = starts[:-1]
                delta = doc_cat.copy()
                delta[1:] -= doc_cat[:-1]
                delta[heads] = doc_cat[heads]
                wide = np.maximum.reduceat(delta, heads) >= np.uint64(1 << 32)
                wide_any = bool(wide.any())
                narrow_b = delta.astype("<u4").tobytes()
                pos_ends = np.cumsum(
                    np.add.reduceat(tf_cat, heads).astype(np.int64)
                )
                total_tf = int(pos_ends[-1])
                if len(pos_cat):
                    # every term boundary is also a doc boundary, so one
                    # global pass restores per-doc absolute heads
                    pdelta = pos_cat.copy()
                    pdelta[1:] -= pos_cat[:-1]
                    doc_heads = np.zeros(len(tf_cat), dtype=np.int64)
                    np.cumsum(tf_cat[:-1], dtype=np.int64, out=doc_heads[1:])
                    pdelta[doc_heads] = pos_cat[doc_heads]
                    pos_b = pdelta.tobytes()
                else:
                    # fields without buffered positions get zero blocks
                    pos_b = b"\x00" * (4 * total_tf)
                mv_ids = memoryview(narrow_b)
                mv_tfs = memoryview(tf_joined)
                mv_pos = memoryview(pos_b)
                starts_l = starts.tolist()
                ends_l = pos_ends.tolist()
                wide_l = wide.tolist()
                pack_head = struct.Struct("<H").pack
                pack_tail = struct.Struct("<IQII").pack
                out = bytearray()
                pe_prev = 0
                for i, term in enumerate(terms):
                    s = starts_l[i]
                    e = starts_l[i + 1]
                    df_i = e - s
                    if wide_any and wide_l[i]:
                        pf.write(b"\x01")
                        id_b = delta[s:e].tobytes()
                        id_len = 8 * df_i
                    else:
                        pf.write(b"\x00")
                        id_b = mv_ids[4 * s : 4 * e]
                        id_len = 4 * df_i
                    pf.write(id_b)
                    pf.write(mv_tfs[4 * s : 4 * e])
                    pe = ends_l[i]
                    pf.write(mv_pos[4 * pe_prev : 4 * pe])
                    doc_len = 1 + id_len + 4 * df_i
                    pos_len = 4 * (pe - pe_prev)
                    pe_prev = pe
                    tb = term.encode("utf-8")
                    out += pack_head(len(tb))
                    out += tb
                    out += pack_tail(df_i, pos, doc_len, pos_len)
                    pos += doc_len + pos_len
                sections.append((bytes(out), count))

        with open(terms_path.with_suffix(".terms.tmp"), "wb") as tf:
            tf.write(_TERMS_MAGIC + struct.pack("<HBB", FORMAT_VERSION, 3, 0))
            off = 8 + 24 * 3
            header = b""
            for data, count in sections:
                header += struct.pack("<QQQ", off, len(data), count)
                off += len(data)
            tf.write(header)
            for data, _ in sections:
                tf.write(data)

        footer_off = self.docs_pos
        f = self.docs_file
        f.write(struct.pack("<Q", len(self.doc_ids)))
        f.write(self.doc_ids.tobytes())
        f.write(self.doc_offsets.tobytes())
        f.write(self.main_lens.tobytes())
        f.write(self.exact_lens.tobytes())
        f.write(struct.pack("<Q", footer_off) + _DOCS_FOOTER_MAGIC)
        f.close()
        self.docs_file = None

        post_path.with_suffix(".postings.tmp").replace(post_path)
        terms_path.with_suffix(".terms.tmp").replace(terms_path)

        self.pending.append(
            {
                "name": name,
                "doc_count": len(self.doc_ids),
                "main_tokens": int(sum(self.main_lens)),
                "exact_tokens": int(sum(self.exact_lens)),
                "min_doc_id": int(self.doc_ids[0]),
                "max_doc_id": int(self.doc_ids[-1]),
            }
        )
        self.next_seg += 1
        self.buffers = {f: {} for f in FIELDS}
        self.m_terms = {}
        self.m_id2term = []
        self.m_tids = array("i")
        self.m_pos = array("I")
        self.est_bytes = 0
        self.doc_ids = array("Q")
        self.doc_offsets = array("Q")
        self.main_lens = array("I")
        self.exact_lens = array("I")
        self.docs_pos = 0
        if len(self.pending) >= _COMPACT_AT:
            self._compact_pending()

    def _gather_field(self, fname: str):
        """Collect one field's buffered postings in sorted-term order.

        Returns (terms, dfs, doc_cat, tf_cat, pos_cat) with the per-term
        blocks concatenated, or None for an empty field.  The main field
        groups its flat occurrence buffer here with one lexsort; the
        other fields were already grouped per document at add time.
        """
        if fname == FIELD_MAIN:
            ntok = len(self.m_tids)
            if ntok == 0:
                return None
            id2term = self.m_id2term
            order_terms = sorted(range(len(id2term)), key=id2term.__getitem__)
            rank = np.empty(len(id2term), dtype=np.int32)
            rank[order_terms] = np.arange(len(id2term), dtype=np.int32)
            key = rank[np.frombuffer(self.m_tids, dtype=np.int32)]
            lens = np.frombuffer(self.main_lens, dtype="<u4")
            didx = np.repeat(np.arange(len(lens), dtype=np.int64), lens)
            poss = np.frombuffer(self.m_pos, dtype="<u4")
            order = np.lexsort((poss, didx, key))
            sk = key[order]
            sd = didx[order]
            pos_cat = poss[order]
            new_run = np.empty(ntok, dtype=bool)
            new_run[0] = True
            np.logical_or(sk[1:] != sk[:-1], sd[1:] != sd[:-1],
                          out=new_run[1:])
            run_starts = np.flatnonzero(new_run)
            tf_cat = np.diff(np.append(run_starts, ntok)).astype("<u4")
            doc_arr = np.frombuffer(self.doc_ids, dtype="<u8")
            doc_cat = doc_arr[sd[run_starts]]
            run_key = sk[run_starts]
            term_new = np.empty(len(run_starts), dtype=bool)
            term_new[0] = True
            term_new[1:] = run_key[1:] != run_key[:-1]
            term_starts = np.flatnonzero(term_new)
            dfs = np.diff(np.append(term_starts, len(run_starts)))
            terms = [id2term[i] for i in order_terms]
            return terms, dfs, doc_cat, tf_cat, pos_cat
        buf = self.buffers[fname]
        if not buf:
            return None
        terms = sorted(buf)
        accs = [buf[t] for t in terms]
        dfs = np.array([len(a.docs) for a in accs], dtype=np.int64)
        doc_cat = np.frombuffer(
            b"".join(a.docs.tobytes() for a in accs), "<u8"
        )
        tf_cat = np.frombuffer(
            b"".join(a.tfs.tobytes() for a in accs), "<u4"
        )
        return terms, dfs, doc_cat, tf_cat, np.empty(0, dtype="<u4")

    def _compact_pending(self) -> None:
        """Merge all pending segments of this shard into one.

        Pending segments cover disjoint, increasing doc id ranges, so the
        document stores concatenate directly and per-term postings can be
        stitched by fixing up the first doc delta of each block.
        """
        segs = [p["name"] for p in self.pending]
        first = segs[0]
        first_num = int(first.split("-")[1])
        readers = [_SegmentHandle(self.dir, s) for s in segs]

        out_docs = self.dir / "compact.docs.tmp"
        ids_all = array("Q")
        offs_all = array("Q")
        main_all = array("I")
        exact_all = array("I")
        with open(out_docs, "wb", buffering=1 << 20) as df:
            df.write(_DOCS_MAGIC + struct.pack("<HH", FORMAT_VERSION, 0))
            wpos = 8
            for r in readers:
                base = wpos
                copied = r.copy_docs_entries(df)
                ids_all.extend(r.doc_ids.tolist())
                offs_all.extend((r.doc_offsets + (base - 8)).tolist())
                main_all.extend(r.main_lens.tolist())
                exact_all.extend(r.exact_lens.tolist())
                wpos += copied
            df.write(struct.pack("<Q", len(ids_all)))
            df.write(ids_all.tobytes())
            df.write(offs_all.tobytes())
            df.write(main_all.tobytes())
            df.write(exact_all.tobytes())
            df.write(struct.pack("<Q", wpos) + _DOCS_FOOTER_MAGIC)

        out_post = self.dir / "compact.postings.tmp"
        out_terms = self.dir / "compact.terms.tmp"
        sections = []
        with open(out_post, "wb", buffering=1 << 20) as pf:
            pf.write(_POSTINGS_MAGIC + struct.pack("<HH", FORMAT_VERSION, 0))
            pos = 8
            for fidx, fname in enumerate(FIELDS):
                out = bytearray()
                count = 0
                for term, sources in _merged_terms(readers, fidx):
                    parts_ids = []
                    parts_tfs = []
                    parts_pos = []
                    for r, (df_, poff, dlen, plen) in sources:
                        ids, tfs = _decode_doc_block(
                            r.read_postings(poff, dlen), df_
                        )
                        parts_ids.append(ids)
                        parts_tfs.append(tfs)
                        parts_pos.append(r.read_postings(poff + dlen, plen))
                    ids = np.concatenate(parts_ids)
                    tfs = np.concatenate(parts_tfs)
                    delta = ids.astype(np.uint64, copy=True)
                    delta[1:] -= ids[:-1]
                    wide = bool(delta.max(initial=0) >= 1 << 32)
                    flag = b"\x01" if wide else b"\x00"
                    id_bytes = (
                        delta.tobytes() if wide else delta.astype("<u4").tobytes()
                    )
                    tf_bytes = tfs.astype("<u4").tobytes()
                    pos_bytes = b"".join(parts_pos)
                    pf.write(flag)
                    pf.write(id_bytes)
                    pf.write(tf_bytes)
                    pf.write(pos_bytes)
                    doc_len = 1 + len(id_bytes) + len(tf_bytes)
                    tb = term.encode("utf-8")
                    out += struct.pack("<H", len(tb))
                    out += tb
                    out += struct.pack(
                        "<IQII", len(ids), pos, doc_len, len(pos_bytes)
                    )
                    pos += doc_len + len(pos_bytes)
                    count += 1
                sections.append((bytes(out), count))

        with open(out_terms, "wb") as tf:
            tf.write(_TERMS_MAGIC + struct.pack("<HBB", FORMAT_VERSION, 3, 0))
            off = 8 + 24 * 3
            header = b""
            for data, count in sections:
                header += struct.pack("<QQQ", off, len(data), count)
                off += len(data)
            tf.write(header)
            for data, _ in sections:
                tf.write(data)

        merged = {
            "name": first,
            "doc_count": sum(p["doc_count"] for p in self.pending),
            "main_tokens": sum(p["main_tokens"] for p in self.pending),
            "exact_tokens": sum(p["exact_tokens"] for p in self.pending),
            "min_doc_id": self.pending[0]["min_doc_id"],
            "max_doc_id": self.pending[-1]["max_doc_id"],
        }
        for r in readers:
            r.close()
        for s in segs:
            for ext in (".docs", ".postings", ".terms"):
                (self.dir / f"{s}{ext}").unlink()
        out_docs.replace(self.dir / f"{first}.docs")
        out_post.replace(self.dir / f"{first}.postings")
        out_terms.replace(self.dir / f"{first}.terms")
        self.pending = [merged]
        self.next_seg = first_num + 1


def _merged_terms(handles, fidx):
    """Iterate (term, [(handle, entry), ...]) over segment dictionaries.

    Terms come out in sorted order; each yields the handles containing
    the term, in the order the handles were given (ascending doc ids for
    same-shard or same-source segment lists).
    """
    its = [h.iter_terms(fidx) for h in handles]
    heads: list[tuple[str, tuple] | None] = []
    heap = []
    for k, it in enumerate(its):
        nxt = next(it, None)
        heads.append(nxt)
        if nxt is not None:
            heap.append((nxt[0], k))
    heapq.heapify(heap)
    while heap:
        term = heap[0][0]
        sources = []
        ks = []
        while heap and heap[0][0] == term:
            _, k = heapq.heappop(heap)
            ks.append(k)
        for k in sorted(ks):
            sources.append((handles[k], heads[k][1]))
            nxt = next(its[k], None)
            heads[k] = nxt
            if nxt is not None:
                heapq.heappush(heap, (nxt[0], k))
        yield term, sources


class _SegmentHandle:
    """Read access to one segment.

    The keyword dictionary (whole-document terms) is never materialized;
    it is scanned from disk per lookup or streamed in sorted order.
    """

    def __init__(self, dir_: Path, name: str):
        self.dir = dir_
        self.name = name
        sections, _ = _parse_terms_file(dir_ / f"{name}.terms", lazy_keyword=True)
        self.sections = sections
        self._sorted: dict[int, list[str]] = {}
        self.pf = open(dir_ / f"{name}.postings", "rb")
        dpath = dir_ / f"{name}.docs"
        with open(dpath, "rb") as f:
            f.seek(-12, 2)
            tail = f.read(12)
            if tail[8:] != _DOCS_FOOTER_MAGIC:
                raise IndexFormatError(f"bad docs footer: {dpath}")
            (footer_off,) = struct.unpack("<Q", tail[:8])
            f.seek(footer_off)
            footer = f.read()
        (count,) = struct.unpack_from("<Q", footer, 0)
        o = 8
        self.doc_ids = np.frombuffer(footer, "<u8", count, o).copy()
        o += 8 * count
        self.doc_offsets = np.frombuffer(footer, "<u8", count, o).copy()
        o += 8 * count
        self.main_lens = np.frombuffer(footer, "<u4", count, o).copy()
        o += 4 * count
        self.exact_lens = np.frombuffer(footer, "<u4", count, o).copy()
        self.footer_off = footer_off
        self.docs_path = dpath

    def sorted_terms(self, fidx: int) -> list[str]:
        if fidx not in self._sorted:
            self._sorted[fidx] = sorted(self.sections[fidx].entries)
        return self._sorted[fidx]

    def entry(self, fidx: int, term: str):
        return self.sections[fidx].entries[term]

    def iter_terms(self, fidx: int):
        """Yield (term, entry) in sorted term order.

        Keyword entries stream from disk in bounded chunks; other fields
        iterate the in-memory dictionary.
        """
        if fidx != 2:
            section = self.sections[fidx]
            for t in self.sorted_terms(fidx):
                yield t, section.entries[t]
            return
        s_off, s_len, s_cnt = self.sections[2]
        tail = struct.Struct("<IQII")
        with open(self.dir / f"{self.name}.terms", "rb") as f:
            f.seek(s_off)
            buf = b""
            remaining = s_len
            done = 0
            while done < s_cnt:
                if len(buf) < 2 + 65535 + tail.size and remaining > 0:
                    chunk = f.read(min(remaining, 1 << 20))
                    remaining -= len(chunk)
                    buf += chunk
                (tlen,) = struct.unpack_from("<H", buf, 0)
                need = 2 + tlen + tail.size
                if len(buf) < need:
                    chunk = f.read(min(remaining, max(need - len(buf), 1 << 20)))
                    remaining -= len(chunk)
                    buf += chunk
                term = buf[2 : 2 + tlen].decode("utf-8")
                entry = tail.unpack_from(buf, 2 + tlen)
                buf = buf[need:]
                done += 1
                yield term, entry

    def read_postings(self, off: int, length: int) -> bytes:
        # positioned read keeps concurrent readers safe on the shared fd
        return os.pread(self.pf.fileno(), length, off)

    def copy_docs_entries(self, out, chunk: int = 1 << 23) -> int:
        """Stream the entries region into out; memory stays O(chunk)."""
        copied = 0
        with open(self.docs_path, "rb") as f:
            f.seek(8)
            remaining = self.footer_off - 8
            while remaining:
                piece = f.read(min(chunk, remaining))
                if not piece:
                    raise IndexFormatError(f"short docs file: {self.docs_path}")
                out.write(piece)
                remaining -= len(piece)
                copied += len(piece)
        return copied

    def close(self):
        self.pf.close()


class IndexWriter:
    """Append documents and commit them atomically.

    Documents become visible to readers only at :meth:`commit`, which
    rewrites the manifest.  Concurrent ``add_document`` calls are safe
    as long as two threads never touch the same shard; the bulk loader
    guarantees this by routing each shard to exactly one consumer.
    """

    def __init__(self, path: str | Path, flush_bytes: int = _DEFAULT_FLUSH_BYTES):
        self.root = Path(path)
        self.manifest = _read_manifest(self.root)
        self.n_shards = self.manifest["n_shards"]
        self.language = self.manifest["analyzer"]["language"]
        self._stopwords = analysis.load_stopwords(self.language)
        self._shards = []
        for s in range(self.n_shards):
            committed = {
                seg["name"] for seg in self.manifest["shards"][s]["segments"]
            }
            sdir = self.root / f"shard-{s}"
            # Drop stray files from an interrupted earlier run.
            for f in sdir.glob("seg-*"):
                stem = f.name.split(".")[0]
                if stem not in committed:
                    f.unlink()
            for f in sdir.glob("compact.*"):
                f.unlink()
            seg_next = (
                1 + max(int(n.split("-")[1]) for n in committed) if committed else 0
            )
            ws = _WriterShard(self.root, s, seg_next, flush_bytes)
            for seg in self.manifest["shards"][s]["segments"]:
                ws.max_doc_id = max(ws.max_doc_id, seg.get("max_doc_id", -1))
            self._shards.append(ws)
        self._committed = False

    def analyze_record(self, rec: DocumentRecord):
        """Run both chains once; returns (exact_terms, main_terms, main_pos)."""
        return analysis.analyze_both(rec.text, self._stopwords, self.language)

    def add_document(self, rec: DocumentRecord, analyzed=None) -> int:
        """Index one document; returns the shard it was routed to."""
        s = shard_of(rec.doc_id, self.n_shards)
        if analyzed is None:
            analyzed = self.analyze_record(rec)
        exact_terms, main_terms, main_pos = analyzed
        self._shards[s].add(rec, exact_terms, main_terms, main_pos)
        return s

    def add_to_shard(self, shard: int, rec: DocumentRecord, analyzed=None) -> None:
        """Add a document already known to belong to ``shard``."""
        if analyzed is None:
            analyzed = self.analyze_record(rec)
        exact_terms, main_terms, main_pos = analyzed
        self._shards[shard].add(rec, exact_terms, main_terms, main_pos)

    def flush_all(self) -> None:
        for sh in self._shards:
            sh.flush()

    def commit(self) -> dict:
        """Flush remaining buffers and publish all pending segments."""
        self.flush_all()
        max_id = self.manifest.get("next_doc_id", 0) - 1
        for s, sh in enumerate(self._shards):
            block = self.manifest["shards"][s]
            block["segments"].extend(sh.pending)
            sh.pending = []
            size = 0
            for f in (self.root / f"shard-{s}").iterdir():
                size += f.stat().st_size
            block["bytes"] = size
            if sh.max_doc_id > max_id:
                max_id = sh.max_doc_id
        self.manifest["next_doc_id"] = max_id + 1
        _write_manifest(self.root, self.manifest)
        self._committed = True
        return self.manifest

    def abort(self) -> None:
        """Drop uncommitted buffers and segment files."""
        for sh in self._shards:
            if sh.docs_file is not None:
                sh.docs_file.close()
                sh.docs_file = None
            for p in sh.pending:
                for ext in (".docs", ".postings", ".terms"):
                    f = sh.dir / f"{p['name']}{ext}"
                    if f.exists():
                        f.unlink()
            sh.pending = []


# ---------------------------------------------------------------------------
# Reader


@dataclass
class SegmentPostings:
    """One term's postings within one segment (still delta-packed positions)."""

    doc_ids: np.ndarray
    tfs: np.ndarray
    pos_deltas: np.ndarray
    doc_starts: np.ndarray

    def positions_at(self, i: int) -> np.ndarray:
        start = self.doc_starts[i]
        end = start + self.tfs[i]
        return np.cumsum(self.pos_deltas[start:end], dtype=np.int64)


class _ReaderSegment:
    def __init__(self, dir_: Path, name: str):
        self.handle = _SegmentHandle(dir_, name)
        self.name = name

    def lookup(self, fidx: int, term: str):
        if fidx == 2:
            return self.keyword_entry(term)
        return self.handle.sections[fidx].entries.get(term)

    def keyword_entry(self, term: str):
        """Scan the on-disk keyword dictionary for one term."""
        s_off, s_len, s_cnt = self.handle.sections[2]
        tb = term.encode("utf-8")
        tail = struct.Struct("<IQII")
        with open(self.handle.dir / f"{self.name}.terms", "rb") as f:
            f.seek(s_off)
            buf = f.read(s_len)
        p = 0
        for _ in range(s_cnt):
            (tlen,) = struct.unpack_from("<H", buf, p)
            p += 2
            t = buf[p : p + tlen]
            p += tlen
            entry = tail.unpack_from(buf, p)
            p += tail.size
            if t == tb:
                return entry
        return None

    def fetch(self, offset: int) -> DocumentRecord:
        with open(self.handle.docs_path, "rb") as f:
            f.seek(offset)
            head = f.read(28)
            doc_id, row_index, ulen, tlen, slen = struct.unpack("<QQIII", head)
            payload = f.read(ulen + tlen + slen)
        url = payload[:ulen].decode("utf-8")
        text = payload[ulen : ulen + tlen].decode("utf-8")
        source = payload[ulen + tlen :].decode("utf-8")
        return DocumentRecord(doc_id, url, text, source, row_index)

    def term_postings(self, fidx: int, term: str, need_positions: bool):
        e = self.lookup(fidx, term)
        if e is None:
            return None
        df, poff, dlen, plen = e
        if need_positions:
            raw = self.handle.read_postings(poff, dlen + plen)
            ids, tfs = _decode_doc_block(raw[:dlen], df)
            pos_deltas = np.frombuffer(raw, "<u4", plen // 4, dlen)
        else:
            raw = self.handle.read_postings(poff, dlen)
            ids, tfs = _decode_doc_block(raw, df)
            pos_deltas = np.empty(0, dtype="<u4")
        doc_starts = np.zeros(len(tfs), dtype=np.int64)
        if len(tfs) > 1:
            np.cumsum(tfs[:-1], dtype=np.int64, out=doc_starts[1:])
        return SegmentPostings(ids, tfs, pos_deltas, doc_starts)


_FIELD_INDEX = {FIELD_MAIN: 0, FIELD_EXACT: 1, FIELD_KEYWORD: 2}


class IndexReader:
    """Snapshot read access to an index directory."""

    def __init__(self, path: str | Path):
        self.root = Path(path)
        self.manifest = _read_manifest(self.root)
        self.n_shards = self.manifest["n_shards"]
        self.language = self.manifest["analyzer"]["language"]
        self.analyzer_digests = (
            self.manifest["analyzer"]["main_digest"],
            self.manifest["analyzer"]["exact_digest"],
        )
        self._segments: list[list[_ReaderSegment]] = []
        doc_count = 0
        main_tokens = 0
        exact_tokens = 0
        self._shard_doc_counts = []
        for s in range(self.n_shards):
            block = self.manifest["shards"][s]
            segs = []
            shard_docs = 0
            for seg in block["segments"]:
                segs.append(_ReaderSegment(self.root / f"shard-{s}", seg["name"]))
                shard_docs += seg["doc_count"]
                main_tokens += seg["main_tokens"]
                exact_tokens += seg["exact_tokens"]
            self._segments.append(segs)
            self._shard_doc_counts.append(shard_docs)
            doc_count += shard_docs
        self.doc_count = doc_count
        self.main_tokens = main_tokens
        self.exact_tokens = exact_tokens

        ids_parts = []
        main_parts = []
        exact_parts = []
        seg_parts = []
        off_parts = []
        flat_segments = []
        for segs in self._segments:
            for seg in segs:
                k = len(flat_segments)
                flat_segments.append(seg)
                h = seg.handle
                ids_parts.append(h.doc_ids)
                main_parts.append(h.main_lens)
                exact_parts.append(h.exact_lens)
                off_parts.append(h.doc_offsets)
                seg_parts.append(np.full(len(h.doc_ids), k, dtype=np.int32))
        self._flat_segments = flat_segments
        if ids_parts:
            ids = np.concatenate(ids_parts)
            order = np.argsort(ids, kind="stable")
            self._doc_ids = ids[order]
            self._main_lens = np.concatenate(main_parts)[order].astype(np.int64)
            self._exact_lens = np.concatenate(exact_parts)[order].astype(np.int64)
            self._doc_offsets = np.concatenate(off_parts)[order]
            self._doc_segref = np.concatenate(seg_parts)[order]
        else:
            self._doc_ids = np.empty(0, dtype=np.uint64)
            self._main_lens = np.empty(0, dtype=np.int64)
            self._exact_lens = np.empty(0, dtype=np.int64)
            self._doc_offsets = np.empty(0, dtype=np.uint64)
            self._doc_segref = np.empty(0, dtype=np.int32)
        self._vocab_cache: dict[str, dict[str, int]] = {}

    # -- stats ----------------------------------------------------------

    def index_stats(self) -> IndexStats:
        seg_count = sum(len(s) for s in self._segments)
        size = 0
        for p in self.root.rglob("*"):
            if p.is_file():
                size += p.stat().st_size
        n = self.doc_count
        return IndexStats(
            doc_count=n,
            n_shards=self.n_shards,
            segment_count=seg_count,
            main_tokens=self.main_tokens,
            exact_tokens=self.exact_tokens,
            avg_doc_length_main=(self.main_tokens / n) if n else 0.0,
            avg_doc_length_exact=(self.exact_tokens / n) if n else 0.0,
            on_disk_bytes=size,
            language=self.language,
            shard_doc_counts=list(self._shard_doc_counts),
        )

    def avg_doc_length(self, field: str) -> float:
        if not self.doc_count:
            return 0.0
        tot = self.main_tokens if field == FIELD_MAIN else self.exact_tokens
        return tot / self.doc_count

    def doc_lengths(self, field: str, doc_ids: np.ndarray) -> np.ndarray:
        """Per-field token counts for an array of existing doc ids."""
        idx = np.searchsorted(self._doc_ids, doc_ids)
        lens = self._main_lens if field == FIELD_MAIN else self._exact_lens
        return lens[idx]

    # -- terms ----------------------------------------------------------

    def df(self, field: str, term: str) -> int:
        fidx = _FIELD_INDEX[field]
        total = 0
        for segs in self._segments:
            for seg in segs:
                e = seg.lookup(fidx, term)
                if e is not None:
                    total += e[0]
        return total

    def segment_postings(
        self, field: str, term: str, need_positions: bool = False
    ) -> list[SegmentPostings]:
        """All per-segment postings for a term, in ascending doc id order."""
        fidx = _FIELD_INDEX[field]
        out = []
        for segs in self._segments:
            for seg in segs:
                sp = seg.term_postings(fidx, term, need_positions)
                if sp is not None:
                    out.append(sp)
        return out

    def term_postings(self, field: str, term: str):
        """Iterate PostingEntry for a term, doc ids ascending."""
        parts = self.segment_postings(field, term, need_positions=True)
        entries = []
        for sp in parts:
            for i in range(len(sp.doc_ids)):
                entries.append(
                    PostingEntry(
                        int(sp.doc_ids[i]),
                        int(sp.tfs[i]),
                        tuple(int(p) for p in sp.positions_at(i)),
                    )
                )
        entries.sort(key=lambda e: e.doc_id)
        return iter(entries)

    def field_vocabulary(self, field: str) -> dict[str, int]:
        """Merged term -> document frequency map (cached)."""
        if field not in self._vocab_cache:
            fidx = _FIELD_INDEX[field]
            vocab: dict[str, int] = {}
            for segs in self._segments:
                for seg in segs:
                    if fidx == 2:
                        raise IndexFormatError(
                            "keyword vocabulary is not materialized"
                        )
                    for term, e in seg.handle.sections[fidx].entries.items():
                        vocab[term] = vocab.get(term, 0) + e[0]
            self._vocab_cache[field] = vocab
        return self._vocab_cache[field]

    def keyword_df(self, term: str) -> int:
        """Document frequency of a keyword-field term (lazy section scan)."""
        total = 0
        for segs in self._segments:
            for seg in segs:
                e = seg.keyword_entry(term)
                if e is not None:
                    total += e[0]
        return total

    # -- documents ------------------------------------------------------

    def fetch_document(self, doc_id: int) -> DocumentRecord | None:
        i = int(np.searchsorted(self._doc_ids, np.uint64(doc_id)))
        if i >= len(self._doc_ids) or self._doc_ids[i] != doc_id:
            return None
        seg = self._flat_segments[self._doc_segref[i]]
        return seg.fetch(int(self._doc_offsets[i]))

    def has_document(self, doc_id: int) -> bool:
        i = int(np.searchsorted(self._doc_ids, np.uint64(doc_id)))
        return i < len(self._doc_ids) and self._doc_ids[i] == doc_id

    def all_doc_ids(self) -> np.ndarray:
        return self._doc_ids

    def close(self) -> None:
        for segs in self._segments:
            for seg in segs:
                seg.handle.close()
