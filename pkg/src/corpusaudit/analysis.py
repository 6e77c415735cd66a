"""Text analysis chains.

Turns raw document text into index terms.  Two chains are supported:

* ``web_content``: HTML stripping, word tokenization, lowercasing, ASCII
  folding, stopword removal, and English (Porter2) stemming.
* ``exact_match``: HTML stripping and lowercasing only.

Tokens carry ordinal positions and byte offsets into the *raw* input, so
highlighting can address the original text even when markup was removed
in between.  Stopword removal leaves gaps in the position sequence;
phrase matching relies on those gaps being preserved.
"""

from __future__ import annotations

import hashlib
import os
import unicodedata
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import regex

from . import porterstem

__all__ = [
    "Token",
    "AnalyzerChain",
    "web_content_chain",
    "exact_match_chain",
    "analyze",
    "analyze_terms",
    "analyze_both",
    "strip_html",
    "strip_html_mapped",
    "tokenize",
    "fold_ascii",
    "load_stopwords",
    "available_languages",
    "stopwords_digest",
    "chain_digest",
    "keyword_term",
    "UnknownLanguageError",
    "KEYWORD_MAX_BYTES",
]

KEYWORD_MAX_BYTES = 8192

_DATA_DIR = Path(__file__).resolve().parent / "data" / "stopwords"

# Word pattern: runs of letters, marks, digits, and connector punctuation,
# optionally extended across an apostrophe followed by letters (don't,
# l'avion) or a period/comma between digits (3.14, 1,000,000).
_TOKEN_RE = regex.compile(
    r"[\p{L}\p{M}\p{Nd}\p{Pc}]+"
    r"(?:['’][\p{L}\p{M}][\p{L}\p{M}\p{Nd}\p{Pc}]*"
    r"|[.,][\p{Nd}][\p{Nd}\p{Pc}]*)*"
)

# A match must contain at least one letter or digit to become a token.
_HAS_ALNUM_RE = regex.compile(r"[\p{L}\p{Nd}]")

_NAMED_ENTITIES = {"amp": "&", "lt": "<", "gt": ">", "quot": '"', "apos": "'"}


class UnknownLanguageError(ValueError):
    """Raised when no stopword list exists for a requested language."""

    def __init__(self, language: str, available: tuple[str, ...]):
        self.language = language
        self.available = available
        super().__init__(
            f"no stopword list for language {language!r}; "
            f"available: {', '.join(available) or '(none)'}"
        )


@dataclass(frozen=True)
class Token:
    """A single analyzed term.

    ``position`` is the token ordinal before stopword removal, so removed
    stopwords leave gaps.  ``start_offset``/``end_offset`` are byte
    offsets into the raw input text; ``start_char``/``end_char`` are the
    corresponding character offsets.
    """

    term: str
    position: int
    start_offset: int
    end_offset: int
    start_char: int
    end_char: int


@dataclass(frozen=True)
class AnalyzerChain:
    """Configuration of one analysis chain."""

    name: str
    strip_markup: bool = True
    lowercase: bool = True
    ascii_fold: bool = False
    remove_stopwords: bool = False
    stem: bool = False
    language: str = "en"


def web_content_chain(language: str = "en") -> AnalyzerChain:
    """Full chain used for the main searchable field."""
    return AnalyzerChain(
        name="web_content",
        strip_markup=True,
        lowercase=True,
        ascii_fold=True,
        remove_stopwords=True,
        stem=True,
        language=language,
    )


def exact_match_chain() -> AnalyzerChain:
    """Markup stripping and lowercasing only; surface forms survive."""
    return AnalyzerChain(
        name="exact_match",
        strip_markup=True,
        lowercase=True,
        ascii_fold=False,
        remove_stopwords=False,
        stem=False,
    )


# ---------------------------------------------------------------------------
# HTML stripping


def _parse_entity(text: str, i: int) -> tuple[str, int] | None:
    """Decode an entity starting at text[i] == '&'.

    Returns (decoded_char, end_index_exclusive) or None when the byte
    run is not a recognized entity.
    """
    semi = text.find(";", i + 1, i + 12)
    if semi == -1:
        return None
    body = text[i + 1 : semi]
    if not body:
        return None
    if body[0] == "#":
        digits = body[1:]
        try:
            if digits[:1] in ("x", "X"):
                code = int(digits[1:], 16)
            else:
                code = int(digits)
        except ValueError:
            return None
        if 0 < code <= 0x10FFFF and not 0xD800 <= code <= 0xDFFF:
            return chr(code), semi + 1
        return None
    ch = _NAMED_ENTITIES.get(body)
    if ch is None:
        return None
    return ch, semi + 1


def _find_tag_end(text: str, i: int) -> int:
    """Index just past a tag opened at text[i] == '<', or -1 if unterminated."""
    if text.startswith("<!--", i):
        end = text.find("-->", i + 4)
        return -1 if end == -1 else end + 3
    j = i + 1
    n = len(text)
    quote = ""
    while j < n:
        c = text[j]
        if quote:
            if c == quote:
                quote = ""
        elif c in "\"'":
            quote = c
        elif c == ">":
            return j + 1
        j += 1
    return -1


def _strip_core(
    text: str, want_map: bool
) -> tuple[str, list[int] | None, list[int] | None]:
    out: list[str] = []
    starts: list[int] | None = [] if want_map else None
    ends: list[int] | None = [] if want_map else None
    i = 0
    n = len(text)
    while i < n:
        lt = text.find("<", i)
        amp = text.find("&", i)
        if lt == -1 and amp == -1:
            out.append(text[i:])
            if want_map:
                starts.extend(range(i, n))
                ends.extend(range(i + 1, n + 1))
            break
        nxt = min(x for x in (lt, amp) if x != -1)
        if nxt > i:
            out.append(text[i:nxt])
            if want_map:
                starts.extend(range(i, nxt))
                ends.extend(range(i + 1, nxt + 1))
            i = nxt
        if text[i] == "<":
            follow = text[i + 1] if i + 1 < n else ""
            if follow and (follow.isalpha() or follow in "/!?"):
                end = _find_tag_end(text, i)
                if end != -1:
                    i = end
                    continue
            # Literal '<': not markup, or markup left unterminated.
            out.append("<")
            if want_map:
                starts.append(i)
                ends.append(i + 1)
            i += 1
        else:
            parsed = _parse_entity(text, i)
            if parsed is None:
                out.append("&")
                if want_map:
                    starts.append(i)
                    ends.append(i + 1)
                i += 1
            else:
                ch, end = parsed
                out.append(ch)
                if want_map:
                    starts.append(i)
                    ends.append(end)
                i = end
    return "".join(out), starts, ends


def strip_html(text: str) -> str:
    """Remove markup and decode basic entities; plain text passes through.

    A ``<`` only opens a tag when followed by a letter, ``/``, ``!`` or
    ``?``; anything else, and any markup with no closing delimiter, is
    kept literally.
    """
    if "<" not in text and "&" not in text:
        return text
    stripped, _, _ = _strip_core(text, want_map=False)
    return stripped


def strip_html_mapped(text: str) -> tuple[str, list[int], list[int]]:
    """Like strip_html, also returning per-character raw spans.

    For output character k, ``starts[k]:ends[k]`` is the half-open range
    of raw character offsets it was decoded from (an entity maps all of
    its source bytes onto the single decoded character).
    """
    stripped, starts, ends = _strip_core(text, want_map=True)
    return stripped, starts, ends


# ---------------------------------------------------------------------------
# Tokenization and normalization


def tokenize(text: str) -> list[tuple[str, int, int, int]]:
    """Split text into (surface, position, start_char, end_char) tuples.

    Positions are ordinals over emitted tokens; matches without a letter
    or digit (bare underscores, combining marks) are discarded without
    consuming a position.
    """
    out = []
    pos = 0
    for m in _TOKEN_RE.finditer(text):
        g = m.group()
        if _HAS_ALNUM_RE.search(g) is None:
            continue
        out.append((g, pos, m.start(), m.end()))
        pos += 1
    return out


@lru_cache(maxsize=65536)
def _fold_cached(text: str) -> str:
    decomposed = unicodedata.normalize("NFD", text)
    return "".join(c for c in decomposed if not unicodedata.combining(c))


def fold_ascii(text: str) -> str:
    """Strip diacritics by NFD decomposition and mark removal.

    Characters that do not decompose pass through unchanged.
    """
    if text.isascii():
        return text
    return _fold_cached(text)


@lru_cache(maxsize=262144)
def _stem_cached(term: str, language: str) -> str:
    if language == "en":
        return porterstem.stem(term)
    return term


def _stopword_dirs() -> list[Path]:
    dirs = []
    home = os.environ.get("CORPUS_AUDIT_HOME")
    if home:
        override = Path(home) / "stopwords"
        if override.is_dir():
            dirs.append(override)
    dirs.append(_DATA_DIR)
    return dirs


def available_languages(directory: str | Path | None = None) -> tuple[str, ...]:
    """Languages with a stopword list, sorted."""
    dirs = [Path(directory)] if directory is not None else _stopword_dirs()
    names: set[str] = set()
    for d in dirs:
        if d.is_dir():
            names.update(p.stem for p in d.glob("*.txt"))
    return tuple(sorted(names))


@lru_cache(maxsize=32)
def _load_stopwords_cached(language: str, directory: str | None) -> frozenset[str]:
    dirs = [Path(directory)] if directory is not None else _stopword_dirs()
    for d in dirs:
        path = d / f"{language}.txt"
        if path.is_file():
            terms = set()
            for line in path.read_text(encoding="utf-8").splitlines():
                line = line.strip()
                if line and not line.startswith("#"):
                    terms.add(line)
            return frozenset(terms)
    raise UnknownLanguageError(language, available_languages(directory))


def load_stopwords(
    language: str = "en", directory: str | Path | None = None
) -> frozenset[str]:
    """Load the stopword set for a language.

    Looks in ``directory`` when given, else in
    ``$CORPUS_AUDIT_HOME/stopwords`` (when set) and finally the bundled
    data directory.  Raises UnknownLanguageError when no list exists.
    """
    return _load_stopwords_cached(
        language, str(directory) if directory is not None else None
    )


def stopwords_digest(language: str = "en", directory: str | Path | None = None) -> str:
    """Hex digest of the stopword set, independent of file ordering."""
    terms = sorted(load_stopwords(language, directory))
    h = hashlib.sha256("\n".join(terms).encode("utf-8"))
    return h.hexdigest()


def chain_digest(chain: AnalyzerChain, stopword_dir: str | Path | None = None) -> str:
    """Digest over chain settings and its effective stopword list."""
    parts = [
        chain.name,
        str(int(chain.strip_markup)),
        str(int(chain.lowercase)),
        str(int(chain.ascii_fold)),
        str(int(chain.remove_stopwords)),
        str(int(chain.stem)),
        chain.language,
    ]
    if chain.remove_stopwords:
        parts.append(stopwords_digest(chain.language, stopword_dir))
    return hashlib.sha256("|".join(parts).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Analysis entry points


def _byte_offset_table(text: str) -> np.ndarray:
    """cum[i] = number of UTF-8 bytes encoding text[:i]."""
    ords = np.frombuffer(text.encode("utf-32-le"), dtype=np.uint32)
    blen = (
        1
        + (ords >= 0x80).astype(np.int64)
        + (ords >= 0x800)
        + (ords >= 0x10000)
    )
    cum = np.empty(len(text) + 1, dtype=np.int64)
    cum[0] = 0
    np.cumsum(blen, out=cum[1:])
    return cum


def analyze(
    text: str,
    chain: AnalyzerChain,
    stopwords: frozenset[str] | None = None,
) -> list[Token]:
    """Run the full chain, producing terms with positions and raw offsets."""
    if chain.strip_markup:
        stripped, starts, ends = strip_html_mapped(text)
    else:
        stripped, starts, ends = text, None, None
    if not chain.remove_stopwords:
        stopwords = None
    elif stopwords is None:
        stopwords = load_stopwords(chain.language)

    raw_spans: list[tuple[str, int, int, int]] = []
    for surface, pos, cs, ce in tokenize(stripped):
        term = surface.lower() if chain.lowercase else surface
        if chain.ascii_fold:
            term = fold_ascii(term)
        if stopwords and term in stopwords:
            continue
        if chain.stem:
            term = _stem_cached(term, chain.language)
        if not term:
            continue
        if starts is not None:
            rs, re_ = starts[cs], ends[ce - 1]
        else:
            rs, re_ = cs, ce
        raw_spans.append((term, pos, rs, re_))

    if not raw_spans:
        return []
    if text.isascii():
        return [
            Token(t, p, rs, re_, rs, re_) for t, p, rs, re_ in raw_spans
        ]
    cum = _byte_offset_table(text)
    return [
        Token(t, p, int(cum[rs]), int(cum[re_]), rs, re_)
        for t, p, rs, re_ in raw_spans
    ]


def analyze_terms(
    text: str,
    chain: AnalyzerChain,
    stopwords: frozenset[str] | None = None,
) -> tuple[list[str], list[int]]:
    """Terms and positions only; the fast path used during indexing.

    Produces exactly the (term, position) pairs of :func:`analyze` while
    skipping offset bookkeeping.
    """
    if chain.strip_markup and ("<" in text or "&" in text):
        text = strip_html(text)
    if not chain.remove_stopwords:
        stopwords = None
    elif stopwords is None:
        stopwords = load_stopwords(chain.language)

    # Lowering the whole text once is cheaper than per token, but is only
    # length- and context-safe for ASCII.
    pre_lowered = False
    if chain.lowercase and text.isascii():
        text = text.lower()
        pre_lowered = True

    fold = chain.ascii_fold
    do_stem = chain.stem
    language = chain.language
    lower = chain.lowercase and not pre_lowered

    terms: list[str] = []
    positions: list[int] = []
    pos = 0
    search_alnum = _HAS_ALNUM_RE.search
    stop = stopwords or ()
    for g in _TOKEN_RE.findall(text):
        if not g.isalnum() and search_alnum(g) is None:
            continue
        p = pos
        pos += 1
        if lower:
            g = g.lower()
        if fold and not g.isascii():
            g = _fold_cached(g)
        if g in stop:
            continue
        if do_stem:
            g = _stem_cached(g, language)
        if not g:
            continue
        terms.append(g)
        positions.append(p)
    return terms, positions


def analyze_both(
    text: str,
    stopwords: frozenset[str],
    language: str = "en",
) -> tuple[list[str], list[str], list[int]]:
    """Run both index chains over one tokenization pass.

    Returns (exact_terms, main_terms, main_positions).  Exact-field
    positions are implicitly 0..len(exact_terms)-1.  Produces exactly
    what analyze_terms would for the exact_match and web_content chains;
    sharing the markup stripping and tokenization roughly halves
    indexing cost.
    """
    if "<" in text or "&" in text:
        text = strip_html(text)
    is_ascii = text.isascii()
    if is_ascii:
        text = text.lower()
    exact_terms: list[str] = []
    main_terms: list[str] = []
    main_pos: list[int] = []
    pos = 0
    search_alnum = _HAS_ALNUM_RE.search
    if is_ascii:
        # common case: no per-token lowering or folding needed
        for g in _TOKEN_RE.findall(text):
            if not g.isalnum() and search_alnum(g) is None:
                continue
            exact_terms.append(g)
            p = pos
            pos += 1
            if g in stopwords:
                continue
            t = _stem_cached(g, language)
            if t:
                main_terms.append(t)
                main_pos.append(p)
        return exact_terms, main_terms, main_pos
    for g in _TOKEN_RE.findall(text):
        if not g.isalnum() and search_alnum(g) is None:
            continue
        g = g.lower()
        exact_terms.append(g)
        p = pos
        pos += 1
        t = g if g.isascii() else _fold_cached(g)
        if t in stopwords:
            continue
        t = _stem_cached(t, language)
        if t:
            main_terms.append(t)
            main_pos.append(p)
    return exact_terms, main_terms, main_pos


def keyword_term(text: str, max_bytes: int = KEYWORD_MAX_BYTES) -> str:
    """Whole lowercased text as a single term, truncated to max_bytes.

    Truncation counts UTF-8 bytes of the lowercased text and never splits
    a character.
    """
    lowered = text.lower()
    encoded = lowered.encode("utf-8")
    if len(encoded) <= max_bytes:
        return lowered
    return encoded[:max_bytes].decode("utf-8", errors="ignore")
