"""Merging independently built indexes into one.

Documents from all sources are renumbered into a fresh contiguous id
space (sources in argument order, ascending old id within each source)
and re-routed to destination shards by the standard id hash.  The merge
is streaming: the document pass concatenates entry bytes shard-merged
per source, and the term pass heap-merges sorted dictionaries term by
term, so memory is bounded by one term's postings regardless of index
size.  An id mapping file records provenance (old composite id -> new
id).  BM25 statistics are recomputed globally by construction since
document lengths and frequencies travel with their postings.
"""

from __future__ import annotations

import heapq
import shutil
import struct
from array import array
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analysis
from .index import (
    _DOCS_FOOTER_MAGIC,
    _DOCS_MAGIC,
    _POSTINGS_MAGIC,
    _TERMS_MAGIC,
    _SegmentHandle,
    _decode_doc_block,
    _merged_terms,
    _read_manifest,
    _write_manifest,
    AnalyzerMismatchError,
    FIELDS,
    FORMAT_VERSION,
    IndexFormatError,
    shard_of,
    shard_of_array,
)

__all__ = [
    "merge_indexes",
    "DocCountMismatchError",
    "MAPPING_FILE",
    "read_mapping",
    "composite_id",
]

MAPPING_FILE = "docid_map.bin"
_MAPPING_MAGIC = b"CAMP"

_SOURCE_ID_BITS = 48


class DocCountMismatchError(RuntimeError):
    pass


def composite_id(source_ordinal: int, old_doc_id: int) -> int:
    """Provenance key used in the mapping file."""
    if old_doc_id >= 1 << _SOURCE_ID_BITS:
        raise ValueError(f"old doc id too large for mapping: {old_doc_id}")
    if source_ordinal >= 1 << (64 - _SOURCE_ID_BITS):
        raise ValueError(f"too many sources for mapping: {source_ordinal}")
    return (source_ordinal << _SOURCE_ID_BITS) | old_doc_id


def read_mapping(path: str | Path) -> np.ndarray:
    """Load the mapping file as an (n, 2) array of (old composite, new)."""
    data = Path(path).read_bytes()
    if data[:4] != _MAPPING_MAGIC:
        raise IndexFormatError(f"bad mapping file magic: {path}")
    (count,) = struct.unpack_from("<Q", data, 8)
    rows = np.frombuffer(data, dtype="<u8", count=count * 2, offset=16)
    return rows.reshape(count, 2)


class _DocStream:
    """Sequential iterator over one segment's document entries."""

    __slots__ = ("f", "ids", "main_lens", "exact_lens", "k", "count", "cur")

    def __init__(self, handle: _SegmentHandle):
        self.f = open(handle.docs_path, "rb", buffering=1 << 20)
        self.f.seek(8)
        self.ids = handle.doc_ids
        self.main_lens = handle.main_lens
        self.exact_lens = handle.exact_lens
        self.count = len(self.ids)
        self.k = 0
        self.cur = None
        self.advance()

    def advance(self):
        if self.k >= self.count:
            self.cur = None
            self.f.close()
            return
        head = self.f.read(28)
        doc_id, row_index, ulen, tlen, slen = struct.unpack("<QQIII", head)
        payload = self.f.read(ulen + tlen + slen)
        self.cur = (
            doc_id,
            row_index,
            payload,
            (ulen, tlen, slen),
            int(self.main_lens[self.k]),
            int(self.exact_lens[self.k]),
        )
        self.k += 1


@dataclass
class _DestShard:
    dir: Path
    docs_f: object
    docs_pos: int
    post_f: object
    post_pos: int
    doc_ids: array
    doc_offsets: array
    main_lens: array
    exact_lens: array
    term_sections: list
    term_counts: list


def _open_dest_shard(root: Path, s: int) -> _DestShard:
    sdir = root / f"shard-{s}"
    docs_f = open(sdir / "seg-0.docs", "wb", buffering=1 << 20)
    docs_f.write(_DOCS_MAGIC + struct.pack("<HH", FORMAT_VERSION, 0))
    post_f = open(sdir / "seg-0.postings", "wb", buffering=1 << 20)
    post_f.write(_POSTINGS_MAGIC + struct.pack("<HH", FORMAT_VERSION, 0))
    return _DestShard(
        dir=sdir,
        docs_f=docs_f,
        docs_pos=8,
        post_f=post_f,
        post_pos=8,
        doc_ids=array("Q"),
        doc_offsets=array("Q"),
        main_lens=array("I"),
        exact_lens=array("I"),
        term_sections=[bytearray(), bytearray(), bytearray()],
        term_counts=[0, 0, 0],
    )


def _concat_ranges(starts: np.ndarray, lens: np.ndarray) -> np.ndarray:
    """Index array selecting [starts[i], starts[i]+lens[i]) blocks in order."""
    total = int(lens.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    rep = np.repeat(starts.astype(np.int64), lens)
    offsets = np.arange(total, dtype=np.int64)
    block0 = np.zeros(len(lens), dtype=np.int64)
    np.cumsum(lens[:-1], dtype=np.int64, out=block0[1:])
    rep_block0 = np.repeat(block0, lens)
    return rep + (offsets - rep_block0)


def merge_indexes(
    sources: list[str | Path],
    destination: str | Path,
    n_shards: int,
    progress=None,
) -> dict:
    """Merge source indexes into a fresh destination with n_shards shards.

    Aborts before writing anything when analyzer digests differ; aborts
    and deletes the partial destination when document conservation
    fails.  ``progress``, when given, is called with a dict every
    10,000 documents during the document pass.
    """
    if not sources:
        raise ValueError("need at least one source index")
    manifests = [_read_manifest(Path(p)) for p in sources]
    ref = manifests[0]["analyzer"]
    for p, m in zip(sources, manifests):
        a = m["analyzer"]
        if (
            a["main_digest"] != ref["main_digest"]
            or a["exact_digest"] != ref["exact_digest"]
        ):
            raise AnalyzerMismatchError(
                f"analyzer config of {p} differs from {sources[0]}"
            )

    dest = Path(destination)
    if dest.exists() and any(dest.iterdir()):
        raise IndexFormatError(f"destination not empty: {dest}")
    dest.mkdir(parents=True, exist_ok=True)
    for s in range(n_shards):
        (dest / f"shard-{s}").mkdir()

    # Per-source segment handles, grouped and ordered.
    src_handles: list[list[_SegmentHandle]] = []
    expected_docs = 0
    for p, m in zip(sources, manifests):
        handles = []
        for s in range(m["n_shards"]):
            for seg in m["shards"][s]["segments"]:
                handles.append(_SegmentHandle(Path(p) / f"shard-{s}", seg["name"]))
                expected_docs += seg["doc_count"]
        src_handles.append(handles)

    bases = []
    acc = 0
    for handles in src_handles:
        bases.append(acc)
        acc += sum(len(h.doc_ids) for h in handles)
    total_docs = acc
    if total_docs != expected_docs:
        raise IndexFormatError("manifest doc counts disagree with segment footers")

    shards = [_open_dest_shard(dest, s) for s in range(n_shards)]
    old_id_arrays: list[np.ndarray] = []

    try:
        # ---- Pass A: documents ----------------------------------------
        written = 0
        with open(dest / MAPPING_FILE, "wb", buffering=1 << 20) as mapf:
            mapf.write(_MAPPING_MAGIC + struct.pack("<HH", FORMAT_VERSION, 0))
            mapf.write(struct.pack("<Q", total_docs))
            for si, handles in enumerate(src_handles):
                base = bases[si]
                old_ids = array("Q")
                streams = [_DocStream(h) for h in handles]
                heap = [
                    (st.cur[0], k) for k, st in enumerate(streams) if st.cur
                ]
                heapq.heapify(heap)
                k_local = 0
                while heap:
                    old_id, sk = heapq.heappop(heap)
                    st = streams[sk]
                    _, row_index, payload, lens3, mlen, elen = st.cur
                    new_id = base + k_local
                    k_local += 1
                    old_ids.append(old_id)
                    dsh = shards[shard_of(new_id, n_shards)]
                    entry = struct.pack(
                        "<QQIII", new_id, row_index, lens3[0], lens3[1], lens3[2]
                    )
                    dsh.doc_ids.append(new_id)
                    dsh.doc_offsets.append(dsh.docs_pos)
                    dsh.main_lens.append(mlen)
                    dsh.exact_lens.append(elen)
                    dsh.docs_f.write(entry)
                    dsh.docs_f.write(payload)
                    dsh.docs_pos += len(entry) + len(payload)
                    mapf.write(
                        struct.pack("<QQ", composite_id(si, old_id), new_id)
                    )
                    written += 1
                    if progress is not None and written % 10_000 == 0:
                        progress({"stage": "documents", "docs": written,
                                  "total": total_docs})
                    st.advance()
                    if st.cur is not None:
                        heapq.heappush(heap, (st.cur[0], sk))
                old_id_arrays.append(
                    np.frombuffer(old_ids, dtype=np.uint64)
                    if len(old_ids)
                    else np.empty(0, dtype=np.uint64)
                )
        if written != total_docs:
            raise DocCountMismatchError(
                f"wrote {written} documents, expected {total_docs}"
            )

        # ---- Pass B: terms and postings -------------------------------
        # Flatten handles with their source ordinal; _merged_terms yields
        # contributors in this same order.
        flat = []
        src_of = {}
        for si, handles in enumerate(src_handles):
            for h in handles:
                src_of[id(h)] = si
                flat.append(h)

        for fidx, fname in enumerate(FIELDS):
            for term, contributors in _merged_terms(flat, fidx):
                ids_parts = []
                tfs_parts = []
                pos_parts = []
                for h, (df_, poff, dlen, plen) in contributors:
                    si = src_of[id(h)]
                    raw = h.read_postings(poff, dlen + plen)
                    ids, tfs = _decode_doc_block(raw[:dlen], df_)
                    rank = np.searchsorted(old_id_arrays[si], ids)
                    ids_parts.append(rank.astype(np.uint64) + np.uint64(bases[si]))
                    tfs_parts.append(tfs)
                    pos_parts.append(np.frombuffer(raw, "<u4", plen // 4, dlen))
                new_ids = np.concatenate(ids_parts)
                tfs = np.concatenate(tfs_parts)
                pos = (
                    np.concatenate(pos_parts)
                    if any(len(p) for p in pos_parts)
                    else np.empty(0, dtype="<u4")
                )
                order = np.argsort(new_ids, kind="stable")
                if not np.array_equal(order, np.arange(len(order))):
                    starts = np.zeros(len(tfs), dtype=np.int64)
                    np.cumsum(tfs[:-1], dtype=np.int64, out=starts[1:])
                    gather = _concat_ranges(starts[order], tfs[order])
                    pos = pos[gather]
                    new_ids = new_ids[order]
                    tfs = tfs[order]
                dshard = shard_of_array(new_ids, n_shards)
                pos_starts = np.zeros(len(tfs), dtype=np.int64)
                np.cumsum(tfs[:-1], dtype=np.int64, out=pos_starts[1:])
                tb = term.encode("utf-8")
                for s in np.unique(dshard):
                    mask = dshard == s
                    ids_s = new_ids[mask]
                    tfs_s = tfs[mask]
                    gather = _concat_ranges(pos_starts[mask], tfs_s)
                    pos_s = pos[gather]
                    delta = ids_s.astype(np.uint64, copy=True)
                    delta[1:] -= ids_s[:-1]
                    wide = bool(delta.max(initial=0) >= 1 << 32)
                    flag = b"\x01" if wide else b"\x00"
                    id_bytes = (
                        delta.tobytes()
                        if wide
                        else delta.astype("<u4").tobytes()
                    )
                    tf_bytes = tfs_s.astype("<u4").tobytes()
                    pos_bytes = pos_s.astype("<u4").tobytes()
                    dsh = shards[int(s)]
                    dsh.post_f.write(flag)
                    dsh.post_f.write(id_bytes)
                    dsh.post_f.write(tf_bytes)
                    dsh.post_f.write(pos_bytes)
                    doc_len = 1 + len(id_bytes) + len(tf_bytes)
                    sec = dsh.term_sections[fidx]
                    sec += struct.pack("<H", len(tb))
                    sec += tb
                    sec += struct.pack(
                        "<IQII", len(ids_s), dsh.post_pos, doc_len, len(pos_bytes)
                    )
                    dsh.post_pos += doc_len + len(pos_bytes)
                    dsh.term_counts[fidx] += 1

        # ---- Finalize ------------------------------------------------
        manifest = {
            "format_version": FORMAT_VERSION,
            "n_shards": n_shards,
            "analyzer": dict(ref),
            "next_doc_id": total_docs,
            "shards": [],
        }
        merged_count = 0
        for s, dsh in enumerate(shards):
            count = len(dsh.doc_ids)
            merged_count += count
            footer_off = dsh.docs_pos
            dsh.docs_f.write(struct.pack("<Q", count))
            dsh.docs_f.write(dsh.doc_ids.tobytes())
            dsh.docs_f.write(dsh.doc_offsets.tobytes())
            dsh.docs_f.write(dsh.main_lens.tobytes())
            dsh.docs_f.write(dsh.exact_lens.tobytes())
            dsh.docs_f.write(struct.pack("<Q", footer_off) + _DOCS_FOOTER_MAGIC)
            dsh.docs_f.close()
            dsh.post_f.close()
            with open(dsh.dir / "seg-0.terms", "wb") as tf:
                tf.write(_TERMS_MAGIC + struct.pack("<HBB", FORMAT_VERSION, 3, 0))
                off = 8 + 24 * 3
                header = b""
                for fi in range(3):
                    header += struct.pack(
                        "<QQQ", off, len(dsh.term_sections[fi]), dsh.term_counts[fi]
                    )
                    off += len(dsh.term_sections[fi])
                tf.write(header)
                for fi in range(3):
                    tf.write(dsh.term_sections[fi])
            if count == 0:
                for ext in (".docs", ".postings", ".terms"):
                    (dsh.dir / f"seg-0{ext}").unlink()
                segments = []
            else:
                segments = [
                    {
                        "name": "seg-0",
                        "doc_count": count,
                        "main_tokens": int(sum(dsh.main_lens)),
                        "exact_tokens": int(sum(dsh.exact_lens)),
                        "min_doc_id": int(dsh.doc_ids[0]),
                        "max_doc_id": int(dsh.doc_ids[-1]),
                    }
                ]
            size = sum(
                f.stat().st_size for f in dsh.dir.iterdir() if f.is_file()
            )
            manifest["shards"].append(
                {"shard": s, "segments": segments, "bytes": size}
            )
        if merged_count != total_docs:
            raise DocCountMismatchError(
                f"destination holds {merged_count} documents, expected {total_docs}"
            )
        _write_manifest(dest, manifest)
    except Exception:
        for dsh in shards:
            for f in (dsh.docs_f, dsh.post_f):
                try:
                    f.close()
                except Exception:
                    pass
        shutil.rmtree(dest, ignore_errors=True)
        raise
    finally:
        for handles in src_handles:
            for h in handles:
                h.close()
    if progress is not None:
        progress({"stage": "done", "docs": total_docs, "total": total_docs})
    return manifest
