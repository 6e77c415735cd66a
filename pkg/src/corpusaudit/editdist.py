"""Bounded Levenshtein distance for fuzzy term expansion.

Plain dynamic programming with a distance cutoff: callers only ever need
to know whether two terms are within a small edit distance (at most 2),
so the inner loop abandons a row as soon as every cell exceeds the
cutoff.  Distances are unit-cost insert/delete/substitute.
"""

from __future__ import annotations


def within_distance(a: str, b: str, cutoff: int) -> bool:
    """True when levenshtein(a, b) <= cutoff."""
    return distance(a, b, cutoff) <= cutoff


def distance(a: str, b: str, cutoff: int | None = None) -> int:
    """Levenshtein distance between a and b.

    With a cutoff, returns cutoff + 1 as soon as the true distance is
    known to exceed it; the exact value above the cutoff is not computed.
    """
    la, lb = len(a), len(b)
    if la > lb:
        a, b, la, lb = b, a, lb, la
    if cutoff is not None:
        if lb - la > cutoff:
            return cutoff + 1
        if la == 0:
            return lb
    elif la == 0:
        return lb

    prev = list(range(la + 1))
    cur = [0] * (la + 1)
    for j in range(1, lb + 1):
        cur[0] = j
        bj = b[j - 1]
        best = cur[0]
        for i in range(1, la + 1):
            cost = 0 if a[i - 1] == bj else 1
            c = min(prev[i] + 1, cur[i - 1] + 1, prev[i - 1] + cost)
            cur[i] = c
            if c < best:
                best = c
        if cutoff is not None and best > cutoff:
            return cutoff + 1
        prev, cur = cur, prev
    return prev[la]
