"""Seeded synthetic web-text corpora in parquet form.

Documents are built from a pseudo-English vocabulary under a Zipf-like
rank distribution, with light web artifacts mixed in: sentence casing
and punctuation, paragraph breaks, whitespace-free markup tags, HTML
entities, and decimal numbers.  Tags never contain whitespace, so any
whitespace-delimited window of a document analyzes to the same token
sequence as the full document does at that span.  Degenerate
whitespace words (bare tags, injected stopwords) are kept rare so that
single-word self-retrieval stays near-perfect.

Given the same seed and shape parameters, output is identical across
runs and independent of how many files are requested.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pyarrow as pa
import pyarrow.parquet as pq

__all__ = ["make_vocabulary", "generate_documents", "write_corpus"]

_SYLLABLES = (
    "ba be bi bo bu ca ce ci co cu da de di do du fa fe fi fo fu "
    "ga ge gi go gu ha he hi ho ja jo ka ke ki ko la le li lo lu "
    "ma me mi mo mu na ne ni no nu pa pe pi po pu ra re ri ro ru "
    "sa se si so su ta te ti to tu va ve vi vo wa we wi wo za zo "
    "tion ment ness ing er ed ly al ic ous ive ure age ist ism"
).split()

# injected function words; a 1-word window landing on one of these is
# removed by analysis and becomes an expected probe miss
_STOPWORDS = ("the", "of", "and", "to", "in", "is", "it", "that")

_STOP_FRACTION = 0.005
_TAG_WRAP_FRACTION = 0.004
_BARE_TAG_FRACTION = 0.001
_NUMBER_FRACTION = 0.002
_ENTITY_FRACTION = 0.002


def make_vocabulary(size: int = 20_000, seed: int = 1) -> list[str]:
    """Pseudo-words of 2-5 syllables, deduplicated, stopword-free."""
    rng = np.random.default_rng(seed)
    syl = np.array(_SYLLABLES, dtype=object)
    stop = set(_STOPWORDS)
    out: list[str] = []
    seen: set[str] = set()
    while len(out) < size:
        counts = rng.integers(2, 6, size=size)
        for c in counts:
            w = "".join(syl[rng.integers(0, len(syl), size=c)])
            if w not in seen and w not in stop:
                seen.add(w)
                out.append(w)
                if len(out) == size:
                    break
    return out


def _rank_cdf(size: int) -> np.ndarray:
    ranks = np.arange(1, size + 1, dtype=np.float64)
    weights = 1.0 / (ranks + 2.7) ** 1.05
    cdf = np.cumsum(weights)
    return cdf / cdf[-1]


def generate_documents(
    n_docs: int,
    seed: int,
    mean_words: int = 370,
    vocab: list[str] | None = None,
) -> list[tuple[str, str]]:
    """Return n_docs (url, text) pairs, deterministic in the seed."""
    if vocab is None:
        vocab = make_vocabulary()
    vocab_arr = np.array(vocab, dtype=object)
    cdf = _rank_cdf(len(vocab))
    rng = np.random.default_rng(seed)
    docs = []
    for i in range(n_docs):
        n = max(12, int(rng.normal(mean_words, mean_words / 3)))
        idx = np.searchsorted(cdf, rng.random(n))
        words = vocab_arr[idx].tolist()
        r = rng.random(n)
        lo = 0.0
        for frac, make in (
            (_STOP_FRACTION,
             lambda p: _STOPWORDS[int(r[p] * 1e9) % len(_STOPWORDS)]),
            (_TAG_WRAP_FRACTION, lambda p: f"<b>{words[p]}</b>"),
            (_BARE_TAG_FRACTION, lambda p: "<p>"),
            (_NUMBER_FRACTION,
             lambda p: f"{int(r[p] * 1e9) % 9000 + 1}.{int(r[p] * 1e13) % 100}"),
            (_ENTITY_FRACTION, lambda p: f"{words[p]}&amp;{words[p]}"),
        ):
            hi = lo + frac
            for p in np.flatnonzero((r >= lo) & (r < hi)):
                words[p] = make(int(p))
            lo = hi

        # sentence casing and terminal periods
        p = 0
        while p < n:
            w = words[p]
            if w[0].isalpha():
                words[p] = w[0].upper() + w[1:]
            p += int(rng.integers(8, 17))
            end = min(p - 1, n - 1)
            if words[end][-1].isalnum():
                words[end] = words[end] + "."

        # paragraph breaks roughly every 70 words
        parts = []
        start = 0
        while start < n:
            stop = min(n, start + int(rng.integers(50, 90)))
            parts.append(" ".join(words[start:stop]))
            start = stop
        text = "\n\n".join(parts)
        docs.append((f"https://corpus.example/{seed}/{i}", text))
    return docs


def write_corpus(
    out_dir: str | Path,
    n_files: int,
    docs_per_file: int,
    seed: int = 7,
    mean_words: int = 370,
) -> list[Path]:
    """Write file-%04d.parquet files; content depends only on the seed
    and per-file shape, never on n_files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab = make_vocabulary()
    paths = []
    for k in range(n_files):
        docs = generate_documents(
            docs_per_file, seed * 1_000_003 + k, mean_words, vocab
        )
        table = pa.table(
            {
                "url": pa.array([u for u, _ in docs], type=pa.string()),
                "text": pa.array([t for _, t in docs], type=pa.string()),
            }
        )
        path = out / f"file-{k:04d}.parquet"
        pq.write_table(table, path, row_group_size=2048)
        paths.append(path)
    return paths
