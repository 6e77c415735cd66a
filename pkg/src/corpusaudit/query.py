"""Query execution over an index reader.

Five query types (match, match_phrase, term_exact, fuzzy, bool_must)
ranked by BM25, plus snippet highlighting.  All scoring uses float64
and the closed-form BM25 with idf = ln(1 + (N - df + 0.5)/(df + 0.5)).
Result ordering is (score descending, doc_id ascending).

Phrase matching measures positional slack over analyzed positions: the
query's own analyzed positions (including gaps left by removed
stopwords) define the expected layout, and a document matches at slop s
when its positions admit an assignment with total forward displacement
<= s.  Transposing two adjacent words costs 2.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import analysis, editdist
from .index import FIELD_EXACT, FIELD_MAIN, IndexReader, SegmentPostings

__all__ = [
    "Bm25Params",
    "QuerySpec",
    "SearchHit",
    "SearchResult",
    "QueryEngine",
    "QueryConfig",
    "QueryTimeoutError",
    "UnknownQueryTypeError",
    "ConfigError",
    "bm25_score",
    "auto_fuzziness",
    "highlight",
    "load_query_config",
    "execute",
    "QUERY_TYPES",
]

QUERY_TYPES = ("match", "match_phrase", "term_exact", "fuzzy", "bool_must")

_DEFAULT_FRAGMENT_SIZE = 150
_DEFAULT_MAX_FRAGMENTS = 3


class UnknownQueryTypeError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class QueryTimeoutError(RuntimeError):
    """Raised when a query exceeds its wall-clock budget.

    ``partial`` holds whatever was assembled before the deadline.
    """

    def __init__(self, message: str, partial: "SearchResult | None" = None):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if self.k1 < 0:
            raise ValueError("k1 must be >= 0")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must be in [0, 1]")


@dataclass(frozen=True)
class QuerySpec:
    query_type: str
    text: str
    operator: str = "or"
    slop: int = 0
    fuzziness: str | int = "auto"
    bool_must_max_words: int = 3
    minimum_should_match: str = "50%"
    top_k: int = 10
    max_expansions: int | None = 50


@dataclass(frozen=True)
class SearchHit:
    doc_id: int
    score: float
    url: str
    snippets: tuple[str, ...] = ()


@dataclass
class SearchResult:
    total_hits: int
    hits: list[SearchHit]
    took_ms: float = 0.0

    def to_dict(self) -> dict:
        return {
            "total_hits": self.total_hits,
            "took_ms": self.took_ms,
            "hits": [
                {
                    "doc_id": h.doc_id,
                    "score": h.score,
                    "url": h.url,
                    "snippets": list(h.snippets),
                }
                for h in self.hits
            ],
        }


def bm25_score(
    tf: int,
    df: int,
    n_docs: int,
    doc_len: int,
    avg_doc_len: float,
    params: Bm25Params = Bm25Params(),
) -> float:
    """Closed-form BM25 contribution of one term in one document."""
    if tf <= 0:
        return 0.0
    idf = math.log1p((n_docs - df + 0.5) / (df + 0.5))
    denom = tf + params.k1 * (1.0 - params.b + params.b * doc_len / avg_doc_len)
    return idf * tf * (params.k1 + 1.0) / denom


def auto_fuzziness(term: str) -> int:
    """Edit-distance ladder by term length: <=2 -> 0, 3-5 -> 1, >=6 -> 2."""
    n = len(term)
    if n <= 2:
        return 0
    if n <= 5:
        return 1
    return 2


class _TermData:
    """Merged postings of one term: sorted ids, aligned tfs, per-segment parts."""

    __slots__ = ("ids", "tfs", "parts", "scores")

    def __init__(self, parts: list[SegmentPostings]):
        self.parts = parts
        if not parts:
            self.ids = np.empty(0, dtype=np.uint64)
            self.tfs = np.empty(0, dtype=np.int64)
        elif len(parts) == 1:
            self.ids = parts[0].doc_ids
            self.tfs = parts[0].tfs
        else:
            ids = np.concatenate([p.doc_ids for p in parts])
            tfs = np.concatenate([p.tfs for p in parts])
            order = np.argsort(ids, kind="stable")
            self.ids = ids[order]
            self.tfs = tfs[order]
        self.scores: np.ndarray | None = None

    @property
    def df(self) -> int:
        return len(self.ids)

    def positions_for(self, doc_id: int) -> np.ndarray | None:
        for sp in self.parts:
            i = int(np.searchsorted(sp.doc_ids, np.uint64(doc_id)))
            if i < len(sp.doc_ids) and sp.doc_ids[i] == doc_id:
                return sp.positions_at(i)
        return None

    def scores_at(self, doc_ids: np.ndarray) -> np.ndarray:
        """Scores for doc ids known to be present."""
        idx = np.searchsorted(self.ids, doc_ids)
        return self.scores[idx]


def _parse_min_should_match(value: str | int | float) -> float:
    """Percentage out of a minimum_should_match value like "50%" or "50"."""
    if isinstance(value, (int, float)):
        pct = float(value)
    else:
        s = value.strip().rstrip("%").strip().strip('"')
        try:
            pct = float(s)
        except ValueError as e:
            raise ConfigError(f"bad minimum_should_match value: {value!r}") from e
    if not 0.0 <= pct <= 100.0:
        raise ConfigError(f"minimum_should_match out of range: {value!r}")
    return pct


class QueryEngine:
    """Executes queries against one immutable reader snapshot."""

    def __init__(
        self,
        reader: IndexReader,
        bm25: Bm25Params | None = None,
        timeout_seconds: float = 30.0,
    ):
        self.reader = reader
        self.bm25 = bm25 or Bm25Params()
        self.timeout_seconds = timeout_seconds
        self._main_chain = analysis.web_content_chain(reader.language)
        self._exact_chain = analysis.exact_match_chain()
        self._stopwords = analysis.load_stopwords(reader.language)

    # -- shared machinery ----------------------------------------------

    def _deadline(self) -> float:
        return time.perf_counter() + self.timeout_seconds

    def _check_deadline(self, deadline: float, what: str) -> None:
        if time.perf_counter() > deadline:
            raise QueryTimeoutError(f"query exceeded {self.timeout_seconds}s ({what})")

    def _analyze_main(self, text: str) -> tuple[list[str], list[int]]:
        return analysis.analyze_terms(text, self._main_chain, self._stopwords)

    def _term_data(
        self, field: str, term: str, need_positions: bool = False, cache: dict | None = None
    ) -> _TermData:
        key = (field, term, need_positions)
        if cache is not None and key in cache:
            return cache[key]
        data = _TermData(self.reader.segment_postings(field, term, need_positions))
        if cache is not None:
            cache[key] = data
        return data

    def _attach_scores(self, data: _TermData, field: str) -> None:
        """Precompute the BM25 array aligned with data.ids."""
        if data.scores is not None or data.df == 0:
            if data.scores is None:
                data.scores = np.empty(0, dtype=np.float64)
            return
        n = self.reader.doc_count
        avgdl = self.reader.avg_doc_length(field)
        if avgdl <= 0.0:
            avgdl = 1.0
        dls = self.reader.doc_lengths(field, data.ids).astype(np.float64)
        tf = data.tfs.astype(np.float64)
        idf = math.log1p((n - data.df + 0.5) / (data.df + 0.5))
        k1, b = self.bm25.k1, self.bm25.b
        data.scores = idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dls / avgdl))

    def _empty(self) -> SearchResult:
        return SearchResult(total_hits=0, hits=[])

    def _finish(
        self,
        ids: np.ndarray,
        scores: np.ndarray,
        top_k: int,
        matched_terms: set[str],
        highlight_mode: str,
        started: float,
    ) -> SearchResult:
        total = len(ids)
        if total == 0:
            res = self._empty()
        else:
            order = np.lexsort((ids, -scores))
            take = order[: max(top_k, 0)]
            hits = []
            for i in take:
                doc_id = int(ids[i])
                rec = self.reader.fetch_document(doc_id)
                url = rec.url if rec else ""
                snippets = ()
                if rec is not None and matched_terms:
                    snippets = tuple(
                        highlight(
                            rec,
                            matched_terms,
                            fragment_size=_DEFAULT_FRAGMENT_SIZE,
                            max_fragments=_DEFAULT_MAX_FRAGMENTS,
                            mode=highlight_mode,
                            language=self.reader.language,
                        )
                    )
                hits.append(
                    SearchHit(doc_id, float(scores[i]), url, snippets)
                )
            res = SearchResult(total_hits=total, hits=hits)
        res.took_ms = (time.perf_counter() - started) * 1000.0
        return res

    def _union_scores(
        self, datas: list[_TermData]
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Union of doc sets with summed scores and per-doc clause counts."""
        all_ids = np.concatenate([d.ids for d in datas])
        all_scores = np.concatenate([d.scores for d in datas])
        uniq, inv = np.unique(all_ids, return_inverse=True)
        scores = np.zeros(len(uniq), dtype=np.float64)
        np.add.at(scores, inv, all_scores)
        counts = np.zeros(len(uniq), dtype=np.int64)
        np.add.at(counts, inv, 1)
        return uniq, scores, counts

    def _intersect_ids(self, datas: list[_TermData]) -> np.ndarray:
        """Intersection of doc-id sets, rarest first for early exit."""
        uniq_sets = {}
        for d in datas:
            uniq_sets[id(d)] = d
        ordered = sorted(uniq_sets.values(), key=lambda d: d.df)
        inter = ordered[0].ids
        for d in ordered[1:]:
            if len(inter) == 0:
                break
            inter = inter[
                np.isin(inter, d.ids, assume_unique=True)
            ]
        return inter

    # -- query types ----------------------------------------------------

    def match_query(
        self, text: str, operator: str = "or", top_k: int = 10
    ) -> SearchResult:
        started = time.perf_counter()
        if operator not in ("or", "and"):
            raise ValueError(f"bad operator: {operator!r}")
        terms, _ = self._analyze_main(text)
        if not terms:
            return self._finish_empty(started)
        cache: dict = {}
        datas = [self._term_data(FIELD_MAIN, t, cache=cache) for t in terms]
        for d in datas:
            self._attach_scores(d, FIELD_MAIN)
        distinct = {t: d for t, d in zip(terms, datas)}
        if operator == "and":
            if any(d.df == 0 for d in distinct.values()):
                return self._finish_empty(started)
            inter = self._intersect_ids(list(distinct.values()))
            if len(inter) == 0:
                return self._finish_empty(started)
            scores = np.zeros(len(inter), dtype=np.float64)
            for d in datas:
                scores += d.scores_at(inter)
            ids = inter
        else:
            live = [d for d in datas if d.df]
            if not live:
                return self._finish_empty(started)
            ids, scores, _ = self._union_scores(live)
        return self._finish(
            ids, scores, top_k, set(distinct), "main", started
        )

    def _finish_empty(self, started: float) -> SearchResult:
        res = self._empty()
        res.took_ms = (time.perf_counter() - started) * 1000.0
        return res

    def match_phrase_query(
        self,
        text: str,
        slop: int = 0,
        top_k: int = 10,
        within_ids: np.ndarray | None = None,
    ) -> SearchResult:
        started = time.perf_counter()
        if slop < 0:
            raise ValueError("slop must be >= 0")
        terms, qpos = self._analyze_main(text)
        if not terms:
            return self._finish_empty(started)
        cache: dict = {}
        datas = [
            self._term_data(FIELD_MAIN, t, need_positions=True, cache=cache)
            for t in terms
        ]
        for d in datas:
            self._attach_scores(d, FIELD_MAIN)
        distinct = {t: d for t, d in zip(terms, datas)}
        if len(terms) == 1:
            d = datas[0]
            if d.df == 0:
                return self._finish_empty(started)
            ids, scores = d.ids, d.scores
            if within_ids is not None:
                keep = np.isin(ids, within_ids)
                ids, scores = ids[keep], scores[keep]
                if len(ids) == 0:
                    return self._finish_empty(started)
            return self._finish(
                ids, scores, top_k, set(distinct), "main", started
            )
        if any(d.df == 0 for d in distinct.values()):
            return self._finish_empty(started)
        candidates = self._intersect_ids(list(distinct.values()))
        if within_ids is not None:
            candidates = candidates[np.isin(candidates, within_ids)]
        if len(candidates) == 0:
            return self._finish_empty(started)

        deadline = self._deadline()
        matched_mask = np.zeros(len(candidates), dtype=bool)
        for ci, doc_id in enumerate(candidates):
            if ci % 256 == 0:
                self._check_deadline(deadline, "phrase candidate scan")
            pos_lists = []
            ok = True
            for d, q in zip(datas, qpos):
                p = d.positions_for(int(doc_id))
                if p is None or len(p) == 0:
                    ok = False
                    break
                pos_lists.append(p)
            if not ok:
                continue
            if _phrase_matches(pos_lists, qpos, terms, slop):
                matched_mask[ci] = True
        ids = candidates[matched_mask]
        if len(ids) == 0:
            return self._finish_empty(started)
        scores = np.zeros(len(ids), dtype=np.float64)
        for d in datas:
            scores += d.scores_at(ids)
        return self._finish(
            ids, scores, top_k, set(distinct), "main", started
        )

    def term_query_exact(self, text: str, top_k: int = 10) -> SearchResult:
        started = time.perf_counter()
        parts = text.lower().split()
        if len(parts) != 1:
            return self._finish_empty(started)
        term = parts[0]
        data = self._term_data(FIELD_EXACT, term)
        if data.df == 0:
            return self._finish_empty(started)
        self._attach_scores(data, FIELD_EXACT)
        return self._finish(
            data.ids, data.scores, top_k, {term}, "exact", started
        )

    def fuzzy_query(
        self,
        text: str,
        fuzziness: str | int = "auto",
        operator: str = "or",
        top_k: int = 10,
        max_expansions: int | None = 50,
    ) -> SearchResult:
        started = time.perf_counter()
        if operator not in ("or", "and"):
            raise ValueError(f"bad operator: {operator!r}")
        terms, _ = self._analyze_main(text)
        if not terms:
            return self._finish_empty(started)
        vocab = self.reader.field_vocabulary(FIELD_MAIN)
        deadline = self._deadline()
        cache: dict = {}

        per_term: list[tuple[np.ndarray, np.ndarray]] = []
        matched_terms: set[str] = set()
        for t in terms:
            if fuzziness == "auto":
                d = auto_fuzziness(t)
            else:
                d = int(fuzziness)
                if d not in (0, 1, 2):
                    raise ValueError(f"fuzziness must be auto, 0, 1 or 2: {fuzziness!r}")
            expansions = self._expand_term(t, d, vocab, max_expansions, deadline)
            if not expansions:
                per_term.append(
                    (np.empty(0, dtype=np.uint64), np.empty(0, dtype=np.float64))
                )
                continue
            datas = []
            for v in expansions:
                td = self._term_data(FIELD_MAIN, v, cache=cache)
                if td.df:
                    self._attach_scores(td, FIELD_MAIN)
                    datas.append(td)
                    matched_terms.add(v)
            if not datas:
                per_term.append(
                    (np.empty(0, dtype=np.uint64), np.empty(0, dtype=np.float64))
                )
                continue
            # Best matching variant per document.
            all_ids = np.concatenate([td.ids for td in datas])
            all_scores = np.concatenate([td.scores for td in datas])
            uniq, inv = np.unique(all_ids, return_inverse=True)
            best = np.full(len(uniq), -np.inf, dtype=np.float64)
            np.maximum.at(best, inv, all_scores)
            per_term.append((uniq, best))

        if operator == "and":
            if any(len(ids) == 0 for ids, _ in per_term):
                return self._finish_empty(started)
            inter = per_term[0][0]
            for ids, _ in per_term[1:]:
                inter = inter[np.isin(inter, ids, assume_unique=True)]
                if len(inter) == 0:
                    return self._finish_empty(started)
            scores = np.zeros(len(inter), dtype=np.float64)
            for ids, s in per_term:
                scores += s[np.searchsorted(ids, inter)]
            result_ids = inter
        else:
            live = [(ids, s) for ids, s in per_term if len(ids)]
            if not live:
                return self._finish_empty(started)
            all_ids = np.concatenate([ids for ids, _ in live])
            all_scores = np.concatenate([s for _, s in live])
            uniq, inv = np.unique(all_ids, return_inverse=True)
            scores = np.zeros(len(uniq), dtype=np.float64)
            np.add.at(scores, inv, all_scores)
            result_ids = uniq
        return self._finish(
            result_ids, scores, top_k, matched_terms, "main", started
        )

    def _expand_term(
        self,
        term: str,
        d: int,
        vocab: dict[str, int],
        max_expansions: int | None,
        deadline: float,
    ) -> list[str]:
        """Dictionary terms within edit distance d, highest-idf first."""
        if d == 0:
            return [term] if term in vocab else []
        lo, hi = len(term) - d, len(term) + d
        candidates = []
        i = 0
        for v, df in vocab.items():
            i += 1
            if i % 8192 == 0:
                self._check_deadline(deadline, "fuzzy expansion scan")
            if not lo <= len(v) <= hi:
                continue
            if editdist.distance(term, v, d) <= d:
                candidates.append((df, v))
        candidates.sort()
        if max_expansions is not None:
            candidates = candidates[:max_expansions]
        return [v for _, v in candidates]

    def bool_must_query(
        self,
        text: str,
        operator: str = "or",
        bool_must_max_words: int = 3,
        minimum_should_match: str | int = "50%",
        top_k: int = 10,
    ) -> SearchResult:
        started = time.perf_counter()
        if operator not in ("or", "and"):
            raise ValueError(f"bad operator: {operator!r}")
        terms, _ = self._analyze_main(text)
        terms = terms[: max(bool_must_max_words, 0)]
        if not terms:
            return self._finish_empty(started)
        cache: dict = {}
        datas = [self._term_data(FIELD_MAIN, t, cache=cache) for t in terms]
        for d in datas:
            self._attach_scores(d, FIELD_MAIN)
        distinct = {t: d for t, d in zip(terms, datas)}
        if operator == "and":
            if any(d.df == 0 for d in distinct.values()):
                return self._finish_empty(started)
            inter = self._intersect_ids(list(distinct.values()))
            if len(inter) == 0:
                return self._finish_empty(started)
            scores = np.zeros(len(inter), dtype=np.float64)
            for d in datas:
                scores += d.scores_at(inter)
            ids = inter
        else:
            pct = _parse_min_should_match(minimum_should_match)
            threshold = max(1, math.floor(pct * len(terms) / 100.0))
            live = [d for d in datas if d.df]
            if not live:
                return self._finish_empty(started)
            ids, scores, counts = self._union_scores(live)
            keep = counts >= threshold
            ids, scores = ids[keep], scores[keep]
            if len(ids) == 0:
                return self._finish_empty(started)
        return self._finish(
            ids, scores, top_k, set(distinct), "main", started
        )

    # -- dispatch -------------------------------------------------------

    def execute(self, spec: QuerySpec) -> SearchResult:
        if spec.query_type == "match":
            return self.match_query(spec.text, spec.operator, spec.top_k)
        if spec.query_type == "match_phrase":
            return self.match_phrase_query(spec.text, spec.slop, spec.top_k)
        if spec.query_type == "term_exact":
            return self.term_query_exact(spec.text, spec.top_k)
        if spec.query_type == "fuzzy":
            return self.fuzzy_query(
                spec.text,
                spec.fuzziness,
                spec.operator,
                spec.top_k,
                spec.max_expansions,
            )
        if spec.query_type == "bool_must":
            return self.bool_must_query(
                spec.text,
                spec.operator,
                spec.bool_must_max_words,
                spec.minimum_should_match,
                spec.top_k,
            )
        raise UnknownQueryTypeError(f"unknown query type: {spec.query_type!r}")


def _phrase_matches(
    pos_lists: list[np.ndarray],
    qpos: list[int],
    terms: list[str],
    slop: int,
) -> bool:
    """Minimum-slack phrase test.

    Residues r_i = p_i - qpos_i align a document position with query slot
    i; a slack-0 match is a common residue across slots.  For general
    slop, the minimum over anchors a of sum_i (r_i - a), with slots of
    the same term holding distinct positions, is compared against slop.
    """
    if slop == 0:
        inter = pos_lists[0] - qpos[0]
        for p, q in zip(pos_lists[1:], qpos[1:]):
            inter = np.intersect1d(inter, p - q, assume_unique=False)
            if len(inter) == 0:
                return False
        # Same-term slots use different q offsets, so equal residues
        # imply distinct positions; no extra distinctness check needed.
        return True

    m = len(pos_lists)
    # Group slots by term to enforce distinct positions within a group.
    groups: dict[str, list[int]] = {}
    for i, t in enumerate(terms):
        groups.setdefault(t, []).append(i)

    anchors = np.unique(np.concatenate([p - q for p, q in zip(pos_lists, qpos)]))
    best = None
    for a in anchors:
        total = 0
        feasible = True
        for slots in groups.values():
            if len(slots) == 1:
                i = slots[0]
                p = pos_lists[i]
                j = int(np.searchsorted(p, a + qpos[i]))
                if j >= len(p):
                    feasible = False
                    break
                total += int(p[j]) - qpos[i] - int(a)
            else:
                # Greedy: ascending q, smallest unused position >= a + q.
                p = pos_lists[slots[0]]
                used_j = -1
                for i in sorted(slots, key=lambda s: qpos[s]):
                    j = int(np.searchsorted(p, a + qpos[i]))
                    if j <= used_j:
                        j = used_j + 1
                    if j >= len(p):
                        feasible = False
                        break
                    used_j = j
                    total += int(p[j]) - qpos[i] - int(a)
                if not feasible:
                    break
            if best is not None and total >= best:
                feasible = False
                break
        if feasible:
            if total <= slop:
                return True
            if best is None or total < best:
                best = total
    return False


# ---------------------------------------------------------------------------
# Highlighting


def highlight(
    record,
    matched_terms: set[str],
    fragment_size: int = 150,
    max_fragments: int = 5,
    pre_tag: str = "<em>",
    post_tag: str = "</em>",
    mode: str = "main",
    language: str = "en",
) -> list[str]:
    """Extract highlighted fragments around term matches.

    ``mode="main"`` maps each document token through folding and
    stemming before comparing against matched_terms (so stems returned
    by main-field queries match surface forms); ``mode="exact"``
    compares the lowercased surface directly.  Fragments are ordered by
    match count descending and never split a highlighted span.
    """
    text = record.text
    tokens = analysis.analyze(text, analysis.exact_match_chain())
    spans: list[tuple[int, int]] = []
    for tok in tokens:
        if mode == "main":
            t = analysis.fold_ascii(tok.term)
            t = analysis._stem_cached(t, language)
        else:
            t = tok.term
        if t in matched_terms:
            spans.append((tok.start_char, tok.end_char))
    if not spans:
        return []
    spans.sort()

    fragments: list[tuple[int, list[tuple[int, int]]]] = []
    remaining = spans
    while remaining and len(fragments) < max_fragments:
        # Densest window: two pointers over span starts.
        best_i, best_j = 0, 0
        i = 0
        for j in range(len(remaining)):
            while remaining[j][1] - remaining[i][0] > fragment_size and i < j:
                i += 1
            if j - i > best_j - best_i:
                best_i, best_j = i, j
        chosen = remaining[best_i : best_j + 1]
        fragments.append((len(chosen), chosen))
        remaining = remaining[:best_i] + remaining[best_j + 1 :]

    out = []
    n = len(text)
    for _, chosen in fragments:
        core_start = chosen[0][0]
        core_end = chosen[-1][1]
        pad = max(0, fragment_size - (core_end - core_start)) // 2
        start = max(0, core_start - pad)
        end = min(n, start + fragment_size)
        if end < core_end:
            end = core_end
        if end == n:
            start = max(0, min(start, n - fragment_size))
        if start > core_start:
            start = core_start
        # Snap outward to whitespace so fragments do not cut words.
        snap = 16
        s = start
        while s > 0 and not text[s - 1].isspace() and start - s < snap:
            s -= 1
        if s == 0 or text[s - 1].isspace():
            start = s
        e = end
        while e < n and not text[e].isspace() and e - end < snap:
            e += 1
        if e == n or (e < n and text[e].isspace()):
            end = e
        parts = []
        cursor = start
        for s0, e0 in chosen:
            parts.append(text[cursor:s0])
            parts.append(pre_tag)
            parts.append(text[s0:e0])
            parts.append(post_tag)
            cursor = e0
        parts.append(text[cursor:end])
        out.append("".join(parts))
    return out


# ---------------------------------------------------------------------------
# Module-level convenience wrappers (one engine per call)


def match_query(reader, text, operator="or", bm25=None, top_k=10):
    return QueryEngine(reader, bm25).match_query(text, operator, top_k)


def match_phrase_query(reader, text, slop=0, bm25=None, top_k=10):
    return QueryEngine(reader, bm25).match_phrase_query(text, slop, top_k)


def term_query_exact(reader, text, bm25=None, top_k=10):
    return QueryEngine(reader, bm25).term_query_exact(text, top_k)


def fuzzy_query(
    reader, text, fuzziness="auto", operator="or", bm25=None, top_k=10,
    max_expansions=50,
):
    return QueryEngine(reader, bm25).fuzzy_query(
        text, fuzziness, operator, top_k, max_expansions
    )


def bool_must_query(
    reader, text, operator="or", bool_must_max_words=3,
    minimum_should_match="50%", bm25=None, top_k=10,
):
    return QueryEngine(reader, bm25).bool_must_query(
        text, operator, bool_must_max_words, minimum_should_match, top_k
    )


def execute(reader, spec: QuerySpec, bm25=None, timeout_seconds: float = 30.0):
    return QueryEngine(reader, bm25, timeout_seconds).execute(spec)


# ---------------------------------------------------------------------------
# Query configuration (audit-style JSON)


_CONFIG_TYPE_KEYS = {
    "execute_match_query": "match",
    "execute_match_phrase_query": "match_phrase",
    "execute_term_query_exact": "term_exact",
    "execute_fuzzy_query": "fuzzy",
    "execute_bool_must_query": "bool_must",
}


@dataclass
class QueryConfig:
    """Enabled query types and their parameters."""

    enabled_types: tuple[str, ...] = QUERY_TYPES
    match_operators: tuple[str, ...] = ("or",)
    phrase_slops: tuple[int, ...] = (0,)
    fuzziness: str | int = "auto"
    bool_must_operator: str = "or"
    bool_must_max_words: int = 3
    minimum_should_match: str = "50%"
    raw: dict = dc_field(default_factory=dict)

    def specs_for(self, text: str, top_k: int = 10) -> list[QuerySpec]:
        """One QuerySpec per enabled (type, parameter) combination."""
        specs = []
        for qt in self.enabled_types:
            if qt == "match":
                for op in self.match_operators:
                    specs.append(
                        QuerySpec("match", text, operator=op, top_k=top_k)
                    )
            elif qt == "match_phrase":
                for slop in self.phrase_slops:
                    specs.append(
                        QuerySpec("match_phrase", text, slop=slop, top_k=top_k)
                    )
            elif qt == "term_exact":
                specs.append(QuerySpec("term_exact", text, top_k=top_k))
            elif qt == "fuzzy":
                specs.append(
                    QuerySpec("fuzzy", text, fuzziness=self.fuzziness, top_k=top_k)
                )
            elif qt == "bool_must":
                specs.append(
                    QuerySpec(
                        "bool_must",
                        text,
                        operator=self.bool_must_operator,
                        bool_must_max_words=self.bool_must_max_words,
                        minimum_should_match=self.minimum_should_match,
                        top_k=top_k,
                    )
                )
        return specs

    def audit_specs_for(self, text: str, top_k: int = 10) -> list[QuerySpec]:
        """One QuerySpec per enabled type, using the first listed
        operator and slop, so per-type query totals stay comparable to
        the keyword count."""
        primary = dataclasses.replace(
            self,
            match_operators=self.match_operators[:1],
            phrase_slops=self.phrase_slops[:1],
        )
        return primary.specs_for(text, top_k=top_k)


def load_query_config(source: str | Path | dict) -> QueryConfig:
    """Parse the JSON query configuration.

    Accepts the key set of the audit configuration listing; unknown keys
    are rejected, and wildcard execution must be disabled.
    """
    if isinstance(source, dict):
        data = dict(source)
    else:
        data = json.loads(Path(source).read_text(encoding="utf-8"))
    known = set(_CONFIG_TYPE_KEYS) | {
        "execute_wildcard_query",
        "match_query_operator",
        "match_phrase_slop",
        "bool_must_operator",
        "bool_must_max_words",
        "bool_must_minimum_should_match",
        "fuzzy_fuzziness",
    }
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if data.get("execute_wildcard_query", False):
        raise ConfigError("wildcard queries are not supported; must be false")
    enabled = tuple(
        qt for key, qt in _CONFIG_TYPE_KEYS.items() if data.get(key, True)
    )
    if not enabled:
        raise ConfigError("at least one query type must be enabled")
    ops = data.get("match_query_operator", ["or"])
    if isinstance(ops, str):
        ops = [ops]
    for op in ops:
        if op not in ("or", "and"):
            raise ConfigError(f"bad match operator: {op!r}")
    slops = data.get("match_phrase_slop", [0])
    if isinstance(slops, int):
        slops = [slops]
    for s in slops:
        if not isinstance(s, int) or s < 0:
            raise ConfigError(f"bad slop value: {s!r}")
    fuzz = data.get("fuzzy_fuzziness", "auto")
    msm = data.get("bool_must_minimum_should_match", "50%")
    _parse_min_should_match(msm)
    bop = data.get("bool_must_operator", "or")
    if bop not in ("or", "and"):
        raise ConfigError(f"bad bool_must operator: {bop!r}")
    maxw = data.get("bool_must_max_words", 3)
    if not isinstance(maxw, int) or maxw < 1:
        raise ConfigError(f"bad bool_must_max_words: {maxw!r}")
    return QueryConfig(
        enabled_types=enabled,
        match_operators=tuple(ops),
        phrase_slops=tuple(slops),
        fuzziness=fuzz,
        bool_must_operator=bop,
        bool_must_max_words=maxw,
        minimum_should_match=str(msm),
        raw=data,
    )
