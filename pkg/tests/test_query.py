"""Query semantics: BM25 values, operators, slop, fuzzy expansion,
bool_must thresholds, timeouts, highlighting, configuration."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from corpusaudit.query import (
    Bm25Params,
    ConfigError,
    QueryConfig,
    QueryEngine,
    QuerySpec,
    QueryTimeoutError,
    UnknownQueryTypeError,
    auto_fuzziness,
    bm25_score,
    load_query_config,
)

LN_4_3 = 0.28768207245178085  # ln(4/3), worked by hand


# ---------------------------------------------------------------------------
# Closed-form scoring


def test_bm25_closed_form_value():
    # n=5 docs, df=4, tf=1, dl == avgdl: the length term cancels and the
    # score reduces to idf = ln(1 + (5-4+0.5)/(4+0.5)) = ln(4/3)
    assert bm25_score(1, 4, 5, 2, 2.0) == pytest.approx(LN_4_3, rel=1e-12)


def test_bm25_zero_tf_scores_zero():
    assert bm25_score(0, 4, 5, 2, 2.0) == 0.0


def test_bm25_monotonic_in_tf_and_length():
    s1 = bm25_score(1, 2, 10, 5, 5.0)
    s2 = bm25_score(3, 2, 10, 5, 5.0)
    assert s2 > s1
    long_doc = bm25_score(1, 2, 10, 20, 5.0)
    assert long_doc < s1


def test_bm25_params_validation():
    with pytest.raises(ValueError):
        Bm25Params(k1=-0.1)
    with pytest.raises(ValueError):
        Bm25Params(b=1.5)


# ---------------------------------------------------------------------------
# match


FIVE_DOCS = [
    "apple beta",
    "apple gamma",
    "apple delta",
    "apple epsilon",
    "zeta eta",
]


def test_match_frozen_score_and_tie_order(make_index):
    eng = QueryEngine(make_index(FIVE_DOCS, n_shards=2))
    res = eng.match_query("apple", top_k=10)
    assert res.total_hits == 4
    assert [h.doc_id for h in res.hits] == [0, 1, 2, 3]  # ties break by id
    for h in res.hits:
        assert h.score == pytest.approx(LN_4_3, rel=1e-9)


def test_match_top_k_truncates_but_counts_all(make_index):
    eng = QueryEngine(make_index(FIVE_DOCS))
    res = eng.match_query("apple", top_k=2)
    assert res.total_hits == 4
    assert len(res.hits) == 2


def test_match_or_vs_and(make_index):
    eng = QueryEngine(make_index(["fox wolf", "fox", "wolf"]))
    assert eng.match_query("fox wolf", "or").total_hits == 3
    res = eng.match_query("fox wolf", "and")
    assert [h.doc_id for h in res.hits] == [0]
    # an absent term empties "and" but not "or"
    assert eng.match_query("fox missingterm", "and").total_hits == 0
    assert eng.match_query("fox missingterm", "or").total_hits == 2


def test_match_duplicate_terms_double_score(make_index):
    eng = QueryEngine(make_index(["fox den", "den"]))
    single = eng.match_query("fox", top_k=5).hits[0]
    double = eng.match_query("fox fox", top_k=5).hits[0]
    assert double.score == pytest.approx(2 * single.score, rel=1e-12)


def test_match_stopword_only_query_empty(make_index):
    eng = QueryEngine(make_index(FIVE_DOCS))
    for qt in ("match", "match_phrase", "fuzzy", "bool_must"):
        res = eng.execute(QuerySpec(qt, "the and of"))
        assert res.total_hits == 0 and res.hits == []


def test_match_bad_operator(make_index):
    eng = QueryEngine(make_index(["x"]))
    with pytest.raises(ValueError, match="operator"):
        eng.match_query("x", "xor")


def test_unknown_query_type(make_index):
    eng = QueryEngine(make_index(["x"]))
    with pytest.raises(UnknownQueryTypeError):
        eng.execute(QuerySpec("wildcard", "x"))


# ---------------------------------------------------------------------------
# match_phrase


PHRASE_DOCS = [
    "climate change",
    "climate rapid change",
    "climate and change",
    "climate action and change",
    "unrelated text entirely",
]


def _phrase_ids(eng, text, slop):
    res = eng.match_phrase_query(text, slop=slop, top_k=10)
    return {h.doc_id for h in res.hits}


def test_phrase_slop_semantics(make_index):
    eng = QueryEngine(make_index(PHRASE_DOCS, n_shards=2))
    assert _phrase_ids(eng, "climate change", 0) == {0}
    # the removed stopword in doc 2 leaves a gap costing one slack
    assert _phrase_ids(eng, "climate change", 1) == {0, 1, 2}
    assert _phrase_ids(eng, "climate change", 2) == {0, 1, 2, 3}


def test_phrase_stopword_gap_in_query(make_index):
    # removed stopword keeps its position: "climate and change" queries
    # positions 0 and 2, indistinguishable from any one-word separator
    eng = QueryEngine(make_index(PHRASE_DOCS))
    assert _phrase_ids(eng, "climate and change", 0) == {1, 2}
    assert _phrase_ids(eng, "climate and change", 1) == {0, 1, 2, 3}


def test_phrase_reorder_costs_two(make_index):
    eng = QueryEngine(make_index(["climate change"]))
    assert _phrase_ids(eng, "change climate", 0) == set()
    assert _phrase_ids(eng, "change climate", 1) == set()
    assert _phrase_ids(eng, "change climate", 2) == {0}


def test_phrase_repeated_term_needs_distinct_positions(make_index):
    eng = QueryEngine(make_index(["buffalo buffalo roam", "buffalo roam"]))
    assert _phrase_ids(eng, "buffalo buffalo", 0) == {0}
    # generous slop still cannot reuse one occurrence for both slots
    assert _phrase_ids(eng, "buffalo buffalo", 5) == {0}


def test_phrase_single_term_is_containment(make_index):
    eng = QueryEngine(make_index(PHRASE_DOCS))
    assert _phrase_ids(eng, "climate", 0) == {0, 1, 2, 3}


def test_phrase_scores_sum_terms(make_index):
    eng = QueryEngine(make_index(PHRASE_DOCS))
    phrase = eng.match_phrase_query("climate change", slop=0, top_k=10)
    match = eng.match_query("climate change", "and", top_k=10)
    m = {h.doc_id: h.score for h in match.hits}
    for h in phrase.hits:
        assert h.score == pytest.approx(m[h.doc_id], rel=1e-12)


def test_phrase_within_ids_restricts(make_index):
    eng = QueryEngine(make_index(PHRASE_DOCS))
    only = eng.match_phrase_query(
        "climate change", slop=2, within_ids=np.array([2], dtype=np.uint64)
    )
    assert [h.doc_id for h in only.hits] == [2]


def test_phrase_negative_slop_rejected(make_index):
    eng = QueryEngine(make_index(["x y"]))
    with pytest.raises(ValueError):
        eng.match_phrase_query("x y", slop=-1)


_WORDS = ["ada", "bel", "cor", "dim"]


@settings(deadline=None, max_examples=40)
@given(
    st.lists(
        st.lists(st.sampled_from(_WORDS), min_size=1, max_size=7).map(" ".join),
        min_size=1,
        max_size=6,
    ),
    st.lists(st.sampled_from(_WORDS), min_size=2, max_size=3).map(" ".join),
)
def test_subset_ladder(tmp_path_factory, texts, query):
    # phrase(s) <= phrase(s+1) <= match-and <= match-or, for every query
    from conftest import build_index

    r = build_index(tmp_path_factory.mktemp("lad") / "x", texts, n_shards=2)
    try:
        eng = QueryEngine(r)
        prev: set[int] = set()
        for slop in (0, 1, 2, 3):
            cur = _phrase_ids(eng, query, slop)
            assert prev <= cur
            prev = cur
        and_ids = {h.doc_id for h in eng.match_query(query, "and", top_k=50).hits}
        or_ids = {h.doc_id for h in eng.match_query(query, "or", top_k=50).hits}
        assert prev <= and_ids <= or_ids
    finally:
        r.close()


# ---------------------------------------------------------------------------
# term_exact


def test_term_exact_unstemmed_unstopped(make_index):
    eng = QueryEngine(make_index(["The running CLIMATES", "running shoes"]))
    # surface forms, lowercased, no stemming: "climates" != "climate"
    assert eng.term_query_exact("climates").total_hits == 1
    assert eng.term_query_exact("climate").total_hits == 0
    assert eng.term_query_exact("RUNNING").total_hits == 2
    assert eng.term_query_exact("the").total_hits == 1


def test_term_exact_multiword_empty(make_index):
    eng = QueryEngine(make_index(["alpha beta"]))
    assert eng.term_query_exact("alpha beta").total_hits == 0
    assert eng.term_query_exact("").total_hits == 0


# ---------------------------------------------------------------------------
# fuzzy


def test_fuzzy_spec_examples(make_index):
    eng = QueryEngine(make_index(PHRASE_DOCS))
    assert eng.fuzzy_query("cliamte", "auto").total_hits == 4
    assert eng.fuzzy_query("changge", "auto").total_hits == 4


def test_auto_fuzziness_ladder():
    assert auto_fuzziness("ab") == 0
    assert auto_fuzziness("abc") == 1
    assert auto_fuzziness("abcde") == 1
    assert auto_fuzziness("abcdef") == 2


def test_fuzzy_monotone_in_distance(make_index):
    texts = ["cat hat", "cart mat", "chart bat", "crate rat", "cat cart"]
    eng = QueryEngine(make_index(texts))
    sets = []
    for d in (0, 1, 2):
        res = eng.fuzzy_query("cat", d, max_expansions=None, top_k=20)
        sets.append({h.doc_id for h in res.hits})
    assert sets[0] <= sets[1] <= sets[2]


def test_fuzzy_zero_distance_is_exact_term(make_index):
    eng = QueryEngine(make_index(["cat", "cart"]))
    res = eng.fuzzy_query("cat", 0, top_k=10)
    assert {h.doc_id for h in res.hits} == {0}


def test_fuzzy_expansion_cap_rarest_first(make_index):
    # df: xa=3, xb=2, xc=1; cap 1 keeps only the rarest variant (xc)
    eng = QueryEngine(
        make_index(["xa xb xc", "xa xb", "xa"], n_shards=1)
    )
    capped = eng.fuzzy_query("xz", 1, max_expansions=1, top_k=10)
    assert {h.doc_id for h in capped.hits} == {0}
    full = eng.fuzzy_query("xz", 1, max_expansions=None, top_k=10)
    assert {h.doc_id for h in full.hits} == {0, 1, 2}


def test_fuzzy_best_variant_scores_once(make_index):
    # a document containing two variants scores its best one, not the sum
    eng = QueryEngine(make_index(["cat cot", "cat", "cot"]))
    res = eng.fuzzy_query("cat", 1, top_k=10)
    by_id = {h.doc_id: h.score for h in res.hits}
    assert by_id[0] <= max(by_id[1], by_id[2]) * (1 + 1e-9)


def test_fuzzy_and_requires_all_tokens(make_index):
    eng = QueryEngine(make_index(["cat dog", "cat", "dog"]))
    res = eng.fuzzy_query("cat dog", "auto", operator="and", top_k=10)
    assert [h.doc_id for h in res.hits] == [0]


def test_fuzzy_bad_fuzziness(make_index):
    eng = QueryEngine(make_index(["cat"]))
    with pytest.raises(ValueError, match="fuzziness"):
        eng.fuzzy_query("cat", 3)


# ---------------------------------------------------------------------------
# bool_must


BOOL_DOCS = [
    "alpha bravo charlie delta",  # 0: all three clause terms
    "alpha bravo xray",           # 1: two
    "alpha xray yankee",          # 2: one
    "xray yankee zulu",           # 3: none
]


def test_bool_must_truncates_to_max_words(make_index):
    eng = QueryEngine(make_index(BOOL_DOCS))
    # delta is dropped by the 3-word cap, so doc 0 is not required to
    # beat the others by a fourth clause
    r3 = eng.bool_must_query("alpha bravo charlie delta", "and", 3)
    assert [h.doc_id for h in r3.hits] == [0]
    r1 = eng.bool_must_query("alpha bravo charlie delta", "or", 1, "100%")
    assert {h.doc_id for h in r1.hits} == {0, 1, 2}  # only "alpha" kept


def test_bool_must_threshold_counts(make_index):
    eng = QueryEngine(make_index(BOOL_DOCS))
    # threshold = floor(50% * 3) = 1
    half = eng.bool_must_query("alpha bravo charlie", "or", 3, "50%")
    assert {h.doc_id for h in half.hits} == {0, 1, 2}
    # threshold = floor(67% * 3) = 2
    two = eng.bool_must_query("alpha bravo charlie", "or", 3, "67%")
    assert {h.doc_id for h in two.hits} == {0, 1}
    full = eng.bool_must_query("alpha bravo charlie", "or", 3, "100%")
    assert {h.doc_id for h in full.hits} == {0}


def test_bool_must_threshold_floor_is_one(make_index):
    eng = QueryEngine(make_index(BOOL_DOCS))
    res = eng.bool_must_query("alpha bravo charlie", "or", 3, "0%")
    assert {h.doc_id for h in res.hits} == {0, 1, 2}  # never below 1 clause


def test_bool_must_duplicate_clauses_count(make_index):
    eng = QueryEngine(make_index(BOOL_DOCS))
    # "alpha alpha bravo": a doc with only alpha satisfies 2 of 3 clauses
    res = eng.bool_must_query("alpha alpha bravo", "or", 3, "67%")
    assert {h.doc_id for h in res.hits} == {0, 1, 2}


def test_bool_must_and_operator(make_index):
    eng = QueryEngine(make_index(BOOL_DOCS))
    res = eng.bool_must_query("alpha bravo charlie", "and", 3)
    assert [h.doc_id for h in res.hits] == [0]
    assert eng.bool_must_query("alpha missing bravo", "and", 3).total_hits == 0


# ---------------------------------------------------------------------------
# timeout


def test_phrase_timeout_raises(make_index):
    r = make_index(["alpha beta"] * 3)
    eng = QueryEngine(r, timeout_seconds=0.0)
    with pytest.raises(QueryTimeoutError):
        eng.match_phrase_query("alpha beta", slop=0)


def test_generous_timeout_fine(make_index):
    eng = QueryEngine(make_index(["alpha beta"]), timeout_seconds=30.0)
    assert eng.match_phrase_query("alpha beta").total_hits == 1


# ---------------------------------------------------------------------------
# highlighting and result shape


def test_highlight_wraps_matches(make_index):
    eng = QueryEngine(make_index(["The Climate crisis demands climate action"]))
    res = eng.match_query("climate", top_k=1)
    assert res.hits[0].snippets
    snip = res.hits[0].snippets[0]
    assert "<em>Climate</em>" in snip and "<em>climate</em>" in snip


def test_highlight_through_markup(make_index):
    eng = QueryEngine(make_index(["Nice <b>climate</b> today &amp; tomorrow"]))
    res = eng.match_query("climate", top_k=1)
    assert "<em>climate</em>" in res.hits[0].snippets[0]


def test_result_to_dict_shape(make_index):
    eng = QueryEngine(make_index(["alpha beta"]))
    res = eng.match_query("alpha")
    d = res.to_dict()
    assert d["total_hits"] == 1
    assert d["took_ms"] >= 0.0
    assert d["hits"][0]["url"] == "u0"
    assert isinstance(d["hits"][0]["snippets"], list)


# ---------------------------------------------------------------------------
# configuration


def _full_config():
    return {
        "execute_match_query": True,
        "execute_match_phrase_query": True,
        "execute_term_query_exact": True,
        "execute_wildcard_query": False,
        "execute_fuzzy_query": True,
        "execute_bool_must_query": True,
        "match_query_operator": ["or", "and"],
        "match_phrase_slop": [0, 1],
        "bool_must_operator": "or",
        "bool_must_max_words": 3,
        "bool_must_minimum_should_match": "50%",
    }


def test_config_round_trip():
    cfg = load_query_config(_full_config())
    assert cfg.enabled_types == (
        "match",
        "match_phrase",
        "term_exact",
        "fuzzy",
        "bool_must",
    )
    assert cfg.match_operators == ("or", "and")
    assert cfg.phrase_slops == (0, 1)
    # every (type, parameter) combination: 2 + 2 + 1 + 1 + 1
    assert len(cfg.specs_for("text")) == 7
    # audit flavor keeps one spec per type
    audit = cfg.audit_specs_for("text")
    assert len(audit) == 5
    assert [s.query_type for s in audit] == list(cfg.enabled_types)
    assert audit[0].operator == "or" and audit[1].slop == 0


def test_config_from_file(tmp_path):
    import json

    p = tmp_path / "q.json"
    p.write_text(json.dumps(_full_config()))
    assert load_query_config(p).phrase_slops == (0, 1)


def test_config_disabled_types():
    data = _full_config()
    data["execute_fuzzy_query"] = False
    cfg = load_query_config(data)
    assert "fuzzy" not in cfg.enabled_types
    assert len(cfg.audit_specs_for("x")) == 4


@pytest.mark.parametrize(
    "patch",
    [
        {"execute_wildcard_query": True},
        {"no_such_key": 1},
        {"match_query_operator": ["xor"]},
        {"match_phrase_slop": [-1]},
        {"bool_must_minimum_should_match": "150%"},
        {"bool_must_minimum_should_match": "abc"},
        {"bool_must_operator": "not"},
        {"bool_must_max_words": 0},
    ],
)
def test_config_rejects_bad_values(patch):
    data = _full_config()
    data.update(patch)
    with pytest.raises(ConfigError):
        load_query_config(data)


def test_config_rejects_all_disabled():
    data = _full_config()
    for k in list(data):
        if k.startswith("execute_") and k != "execute_wildcard_query":
            data[k] = False
    with pytest.raises(ConfigError):
        load_query_config(data)


def test_default_config_enables_all():
    cfg = QueryConfig()
    assert len(cfg.enabled_types) == 5
