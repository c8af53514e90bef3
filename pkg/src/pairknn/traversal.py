"""Paired traversal of a query tree against a reference tree.

The traversal keeps a state ``(i, j, q, R_i)``: a reference level ``i``, a
query level ``j``, a query node ``q`` and a candidate subset ``R_i`` of the
reference cover set ``C_i``. Each step either descends the reference tree
(when ``max(l_min(R), j) < i``) or the query tree. Pruning is delegated to
hooks, so the same driver serves the k-NN solver and the instrumentation.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Protocol

from .covertree import CompressedCoverTree, height_set
from .errors import InputError, TraversalError

STATS_COLUMNS = ("ref_expansions", "query_expansions", "distance_calls", "max_width")


class TraversalHooks(Protocol):
    def final_candidates(self, i: int, j: int, q: int, R: list[int]) -> None: ...

    def update_candidates(self, i: int, j: int, q: int, C: list[int]) -> list[int]: ...


class KeepAll:
    """Hooks that never prune; useful for counting expansions."""

    def __init__(self):
        self.final_calls = []

    def final_candidates(self, i, j, q, R):
        self.final_calls.append((i, j, q, tuple(R)))

    def update_candidates(self, i, j, q, C):
        return list(C)


@dataclass
class TraversalStats:
    reference_expansions: int = 0
    query_expansions: int = 0
    distance_calls: int = 0
    max_candidate_width: int = 0

    def as_row(self) -> tuple:
        return (self.reference_expansions, self.query_expansions, self.distance_calls, self.max_candidate_width)

    def to_csv(self, header: bool = True) -> str:
        row = ",".join(str(v) for v in self.as_row())
        return (",".join(STATS_COLUMNS) + "\n" if header else "") + row + "\n"

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())


def paired_traversal(treeQ: CompressedCoverTree, treeR: CompressedCoverTree, hooks, observer=None) -> TraversalStats:
    """Run the paired traversal from the two roots.

    Both tree walks are driven by an explicit stack, so tall trees do not hit
    the recursion limit. ``observer``, if given, is called after every
    reference expansion as ``observer(i, j, q, R_i, R_next, t)``.

    Two details make the loop total. A query node moves on to
    ``1 + Next(q', j-1)``, the next level at which it gains children; when it
    has none left it drops to ``min(l_min(Q), l_min(R))`` so the reference
    side can still reach its bottom level. A query node re-entering itself is
    skipped unless its level strictly drops.
    """
    lminR = treeR.l_min
    bottom = min(treeQ.l_min, lminR)
    sentinelQ = treeQ.sentinel()
    lev_R = treeR.levels
    lev_Q = treeQ.levels
    counter = treeR.points.counter
    start_calls = counter.calls
    stats = TraversalStats()

    stack = [(treeR.l_max, treeQ.l_max, treeQ.root, [treeR.root])]
    while stack:
        i, j, q, R = stack.pop()
        if len(R) > stats.max_candidate_width:
            stats.max_candidate_width = len(R)
        if i == lminR:
            try:
                hooks.final_candidates(i, j, q, R)
            except Exception as exc:
                raise TraversalError(f"final_candidates failed at (i={i}, j={j}, q={q}): {exc}", (i, j, q)) from exc
        if max(lminR, j) < i:
            stats.reference_expansions += 1
            seen = set(R)
            C = list(R)
            for p in R:
                for a in treeR.child_list(p):
                    if lev_R[a] < i - 1:
                        break
                    if a not in seen:
                        seen.add(a)
                        C.append(a)
            try:
                R_next = hooks.update_candidates(i, j, q, C)
            except Exception as exc:
                raise TraversalError(f"update_candidates failed at (i={i}, j={j}, q={q}): {exc}", (i, j, q)) from exc
            if not R_next:
                raise TraversalError(f"update_candidates returned no candidates at (i={i}, j={j}, q={q})", (i, j, q))
            t = _next_reference_level(treeR, R_next, i - 1)
            if observer is not None:
                observer(i, j, q, R, R_next, t)
            stack.append((t, j, q, R_next))
        else:
            stats.query_expansions += 1
            pushed = []
            for qc in treeQ.child_list(q):
                lq = lev_Q[qc]
                if lq > j - 1:
                    continue
                if lq < j - 1:
                    break
                pushed.append(qc)
            pushed.append(q)
            # push in reverse so the first child is processed first
            for qc in reversed(pushed):
                nxt = treeQ.next_level(qc, j - 1)
                jn = bottom if nxt == sentinelQ else 1 + nxt
                if qc == q and jn >= j:
                    continue
                stack.append((i, jn, qc, R))
    stats.distance_calls = counter.calls - start_calls
    return stats


def _next_reference_level(tree: CompressedCoverTree, R: list[int], level: int) -> int:
    """``1 + max Next(a, level)`` over ``R``, stopping early at the ceiling ``level - 1``."""
    best = tree.sentinel()
    ceiling = level - 1
    nxt = tree.next_level
    for a in R:
        v = nxt(a, level)
        if v > best:
            best = v
            if best == ceiling:
                break
    return best + 1


def imbalance(treeQ: CompressedCoverTree, treeR: CompressedCoverTree) -> int:
    """Sum over query nodes of how many reference height levels lie in ``[l_min(R), l(q)]``."""
    heights = sorted(height_set(treeR))
    lo = treeR.l_min
    total = 0
    for lq in treeQ.levels:
        total += sum(1 for h in heights if lo <= h <= lq)
    return total


def expansion_bound(treeQ: CompressedCoverTree, treeR: CompressedCoverTree) -> int:
    """Upper bound ``I(Q, R) + |H(R)|`` on reference expansions."""
    return imbalance(treeQ, treeR) + len(height_set(treeR))


def balanced_imbalance_formula(t: int, m: int) -> Fraction:
    """Closed-form imbalance of a complete ``t``-ary tree paired with itself.

    The tree has ``m + 1`` levels and ``t**i`` nodes ``i`` levels below the
    root, so ``|R| = (t**(m+1) - 1) / (t - 1)``.
    """
    if t < 2 or m < 0:
        raise InputError("need t >= 2 and m >= 0")
    size = Fraction(t ** (m + 1) - 1, t - 1)
    return (1 + Fraction(1, t - 1)) * size - Fraction(m + 1, t - 1)
