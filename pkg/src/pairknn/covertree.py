"""Compressed cover trees: one node per point, integer levels, parent links.

A tree is valid when

* the root's level is at least one above every other level;
* every non-root ``q`` has ``l(q) < l(parent)`` and ``d(q, parent) <= 2**(l(q)+1)``;
* for every level ``i``, points with level ``>= i`` are pairwise more than
  ``2**i`` apart.

``children(p)`` follows the convention that a node is its own child;
``child_list(p)`` is the list without ``p``.
"""
from __future__ import annotations

import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, InputError, TreeValidationError
from .metric import EuclideanSet, PointSet

MAX_LEVEL_SPAN = 64

ROOT_CONDITION = "root"
COVERING_CONDITION = "covering"
SEPARATION_CONDITION = "separation"


def pow2(level: int):
    """Exact ``2**level`` (a Fraction for negative levels)."""
    return 2**level if level >= 0 else Fraction(1, 2 ** (-level))


def level_below(d) -> int:
    """Largest integer ``L`` with ``2**L < d`` for ``d > 0``."""
    if isinstance(d, int):
        return d.bit_length() - 2 if d & (d - 1) == 0 else d.bit_length() - 1
    if isinstance(d, Fraction):
        num, den = d.numerator, d.denominator
        L = num.bit_length() - den.bit_length()
        while pow2(L) >= d:
            L -= 1
        while pow2(L + 1) < d:
            L += 1
        return L
    mant, exp = math.frexp(d)
    return exp - 2 if mant == 0.5 else exp - 1


def _levels_below(d: np.ndarray) -> np.ndarray:
    mant, exp = np.frexp(d)
    return np.where(mant == 0.5, exp - 2, exp - 1)


class CompressedCoverTree:
    """Immutable tree over a ``PointSet``.

    ``levels[p]`` and ``parents[p]`` (``None`` for the root) define the tree.
    Build with ``build_tree`` or ``from_levels``; both validate.
    """

    def __init__(self, points: PointSet, levels: Sequence[int], parents: Sequence[int | None]):
        n = points.n
        if len(levels) != n or len(parents) != n:
            raise InputError("tree/point-set mismatch")
        self.points = points
        self.levels = [int(v) for v in levels]
        self.parents = [None if p is None else int(p) for p in parents]
        roots = [p for p in range(n) if self.parents[p] is None]
        if len(roots) != 1:
            raise InputError(f"expected exactly one root, found {len(roots)}")
        self.root = roots[0]
        kids: list[list[int]] = [[] for _ in range(n)]
        for p, par in enumerate(self.parents):
            if par is None:
                continue
            if not 0 <= par < n:
                raise InputError(f"unknown parent id {par} for node {p}")
            kids[par].append(p)
        lev = self.levels
        # non-self children, highest level first, ties by id
        self._kids = [sorted(c, key=lambda x: (-lev[x], x)) for c in kids]
        self._kid_levels = [sorted({lev[c] for c in cs}) for cs in self._kids]
        self._check_acyclic()
        self.l_max = lev[self.root]
        self.l_min = min(lev)
        self._sizes = self._subtree_sizes()
        self._cache = None

    # -- structure --------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.levels)

    def __len__(self) -> int:
        return self.n

    def _check_acyclic(self):
        seen = [False] * self.n
        stack = [self.root]
        seen[self.root] = True
        count = 0
        while stack:
            p = stack.pop()
            count += 1
            for c in self._kids[p]:
                if seen[c]:
                    raise InputError(f"node {c} reached twice")
                seen[c] = True
                stack.append(c)
        if count != self.n:
            raise InputError("parent links contain a cycle or a detached node")

    def _subtree_sizes(self) -> list[int]:
        sizes = [1] * self.n
        for p in reversed(self.preorder()):
            par = self.parents[p]
            if par is not None:
                sizes[par] += sizes[p]
        return sizes

    def preorder(self) -> list[int]:
        order, stack = [], [self.root]
        while stack:
            p = stack.pop()
            order.append(p)
            stack.extend(reversed(self._kids[p]))
        return order

    def level(self, p: int) -> int:
        return self.levels[p]

    def child_list(self, p: int) -> list[int]:
        """Children of ``p`` excluding ``p``, highest level first."""
        return self._kids[p]

    def children(self, p: int) -> list[int]:
        """Children of ``p`` including ``p`` itself."""
        return [p] + self._kids[p]

    def children_at(self, p: int, level: int) -> list[int]:
        return [c for c in self._kids[p] if self.levels[c] == level]

    def children_by_level(self, p: int) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for c in self._kids[p]:
            out.setdefault(self.levels[c], []).append(c)
        return out

    def subtree_size(self, p: int) -> int:
        return self._sizes[p]

    def sentinel(self) -> int:
        return self.l_min - 1

    def next_level(self, p: int, i: int) -> int:
        """Largest child level of ``p`` strictly below ``i``; ``l_min - 1`` if none."""
        lv = self._kid_levels[p]
        pos = bisect_left(lv, i)
        return lv[pos - 1] if pos else self.l_min - 1

    def cover_set(self, i: int) -> list[int]:
        return [p for p in range(self.n) if self.levels[p] >= i]

    def depth_first_ids(self) -> list[int]:
        return self.preorder()

    # -- descendant counts -------------------------------------------------

    @property
    def cache(self) -> "DescendantCountCache":
        if self._cache is None:
            self._cache = count_distinctive_descendants(self)
        return self._cache

    def count_at(self, p: int, i: int) -> int:
        return distinctive_count_at(self.cache, p, i)

    def __repr__(self):
        return f"CompressedCoverTree(n={self.n}, root={self.root}, levels=[{self.l_min}, {self.l_max}])"


# -- construction -------------------------------------------------------------


def from_levels(points: PointSet, levels, parents, validate: bool = True) -> CompressedCoverTree:
    """Realize an explicit tree; ``levels``/``parents`` are sequences or id->value maps."""
    n = points.n
    if isinstance(levels, dict):
        if set(levels) != set(range(n)):
            raise InputError("tree/point-set mismatch")
        levels = [levels[i] for i in range(n)]
    if isinstance(parents, dict):
        parents = [parents.get(i) for i in range(n)]
    tree = CompressedCoverTree(points, levels, parents)
    if validate:
        report = validate_tree(tree)
        if not report.ok:
            raise TreeValidationError(report.summary(), report.violations)
    return tree


def build_tree(points: PointSet, order: Iterable[int] | None = None, *, levels=None, parents=None,
               seed: int | None = None) -> CompressedCoverTree:
    """Build a valid compressed cover tree.

    With ``levels``/``parents`` given the tree is taken verbatim and validated.
    Otherwise points are inserted one at a time in ``order`` (default: id
    order, or a permutation drawn from ``seed``).
    """
    if points.n == 0:
        raise InputError("cannot build a tree on an empty set")
    if levels is not None or parents is not None:
        if levels is None or parents is None:
            raise InputError("given-levels mode needs both levels and parents")
        return from_levels(points, levels, parents)
    if order is None:
        order = range(points.n)
        if seed is not None:
            order = np.random.default_rng(seed).permutation(points.n).tolist()
    order = [int(v) for v in order]
    if sorted(order) != list(range(points.n)):
        raise InputError("insertion order must be a permutation of the point ids")
    levels_, parents_ = _insert_all(points, order)
    tree = CompressedCoverTree(points, levels_, parents_)
    if isinstance(points, EuclideanSet) and tree.l_max - tree.l_min > MAX_LEVEL_SPAN:
        raise InputError(f"level span {tree.l_max - tree.l_min} exceeds {MAX_LEVEL_SPAN}")
    return tree


def _insert_all(points: PointSet, order: list[int]):
    n = points.n
    levels: list[int] = [0] * n
    parents: list[int | None] = [None] * n
    root = order[0]
    inserted = [root]
    use_float = isinstance(points, EuclideanSet)
    lev_arr = np.empty(n, dtype=np.int64)
    for q in order[1:]:
        d = points.distances(points.payload(q), inserted)
        if use_float:
            L, par = _place_float(np.asarray(d), inserted, lev_arr, root)
        else:
            L, par = _place_exact(d, inserted, levels, root)
        if L is None:
            raise InputError(f"duplicate point: id {q} coincides with id {inserted[par]}")
        levels[q] = L
        lev_arr[len(inserted)] = L
        parents[q] = inserted[par]
        inserted.append(q)
    others = [levels[p] for p in order[1:]]
    levels[root] = 1 + max(others) if others else 0
    return levels, parents


def _place_float(d: np.ndarray, inserted: list[int], lev_arr: np.ndarray, root: int):
    # slot 0 is the root and behaves as if it had level +infinity
    if np.any(d == 0):
        return None, int(np.flatnonzero(d == 0)[0])
    L = int(_levels_below(d[:1])[0])
    if len(d) > 1:
        lev = lev_arr[1:len(d)]
        rest = d[1:]
        tight = rest <= np.ldexp(1.0, lev)
        if np.any(tight):
            L = min(L, int(_levels_below(rest[tight]).min()))
    bound = np.ldexp(1.0, L + 1)
    ok = d <= bound
    ok[1:] &= lev_arr[1:len(d)] >= L + 1
    cand = np.flatnonzero(ok[1:]) + 1
    if len(cand) == 0:
        return L, 0
    ids = np.asarray(inserted)[cand]
    best = np.lexsort((ids, lev_arr[cand]))[0]
    return L, int(cand[best])


def _place_exact(d: list, inserted: list[int], levels: list[int], root: int):
    if any(v == 0 for v in d):
        return None, next(k for k, v in enumerate(d) if v == 0)
    L = level_below(d[0])
    for k in range(1, len(d)):
        lp = levels[inserted[k]]
        if d[k] <= pow2(lp):
            L = min(L, level_below(d[k]))
    bound = pow2(L + 1)
    best = None
    for k in range(1, len(d)):
        lp = levels[inserted[k]]
        if lp >= L + 1 and d[k] <= bound:
            key = (lp, inserted[k])
            if best is None or key < best[0]:
                best = (key, k)
    return L, (0 if best is None else best[1])


# -- validation ---------------------------------------------------------------


@dataclass
class Violation:
    condition: str
    level: int | None
    pair: tuple
    distance: object = None

    def __str__(self):
        where = f" at level {self.level}" if self.level is not None else ""
        dist = f", distance {self.distance}" if self.distance is not None else ""
        return f"{self.condition} condition violated{where} by pair {self.pair}{dist}"


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)
    min_separation: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok

    def by_condition(self, condition: str) -> list:
        return [v for v in self.violations if v.condition == condition]

    def summary(self) -> str:
        if self.ok:
            return "tree is valid"
        head = "; ".join(str(v) for v in self.violations[:5])
        more = len(self.violations) - 5
        return head + (f"; and {more} more" if more > 0 else "")


def validate_tree(tree: CompressedCoverTree, points: PointSet | None = None) -> ValidationReport:
    """Check the root, covering and separation conditions exhaustively.

    Separation of a pair ``(a, b)`` only needs checking at ``min(l(a), l(b))``,
    the highest level where both are in the cover set. ``min_separation``
    maps each height-set level ``i`` to the smallest distance inside ``C_i``.
    """
    pts = tree.points if points is None else points
    if pts.n != tree.n:
        raise InputError("tree/point-set mismatch")
    report = ValidationReport()
    lev = tree.levels
    others = [lev[p] for p in range(tree.n) if p != tree.root]
    if others and lev[tree.root] < 1 + max(others):
        top = max((p for p in range(tree.n) if p != tree.root), key=lambda p: (lev[p], -p))
        report.violations.append(Violation(ROOT_CONDITION, lev[tree.root], (tree.root, top)))
    for q in range(tree.n):
        par = tree.parents[q]
        if par is None:
            continue
        d = pts.distance(q, par)
        if lev[q] >= lev[par] or d > pow2(lev[q] + 1):
            report.violations.append(Violation(COVERING_CONDITION, lev[q], (q, par), d))
    ids = sorted(range(tree.n), key=lambda p: (-lev[p], p))
    closest_at: dict[int, object] = {}
    fast = isinstance(pts, EuclideanSet)
    lev_arr = np.asarray(lev)
    for pos, a in enumerate(ids[:-1]):
        rest = ids[pos + 1:]
        dists = pts.distances(pts.payload(a), rest)
        if fast:
            d_arr, tops = np.asarray(dists), lev_arr[rest]
            for k in np.flatnonzero(d_arr <= np.ldexp(1.0, tops)):
                report.violations.append(Violation(SEPARATION_CONDITION, int(tops[k]), (a, rest[k]), float(d_arr[k])))
            for top in np.unique(tops).tolist():
                d = float(d_arr[tops == top].min())
                if top not in closest_at or d < closest_at[top]:
                    closest_at[top] = d
            continue
        for b, d in zip(rest, dists):
            # ids are sorted by level, so l(b) <= l(a)
            top = lev[b]
            if d <= pow2(top):
                report.violations.append(Violation(SEPARATION_CONDITION, top, (a, b), d))
            cur = closest_at.get(top)
            if cur is None or d < cur:
                closest_at[top] = d
    # a pair whose lower level is ``top`` lies in C_i for every i <= top
    heights = height_set(tree)
    best = None
    for i in sorted(heights | set(closest_at), reverse=True):
        d = closest_at.get(i)
        if d is not None and (best is None or d < best):
            best = d
        if best is not None and i in heights:
            report.min_separation[i] = best
    return report


# -- level navigation ---------------------------------------------------------


def height_set(tree: CompressedCoverTree) -> set[int]:
    """``{l_max, l_min}`` plus every level at which the cover set grows."""
    out = {tree.l_max, tree.l_min}
    out.update(tree.levels[p] + 1 for p in range(tree.n) if p != tree.root)
    return out


def next_level(tree: CompressedCoverTree, p: int, i: int) -> int:
    return tree.next_level(p, i)


def essential_levels(tree: CompressedCoverTree, q: int) -> list[int]:
    """Levels ``t + 1`` along the chain ``t0 = l(q)``, ``t_{k+1} = Next(q, t_k)``.

    The chain stops at the sentinel ``l_min - 1``, which contributes nothing.
    Returned in descending order.
    """
    out = []
    t = tree.levels[q]
    stop = tree.sentinel()
    while t != stop:
        out.append(t + 1)
        t = tree.next_level(q, t)
    return out


def descendants(tree: CompressedCoverTree, p: int) -> set[int]:
    out, stack = set(), [p]
    while stack:
        u = stack.pop()
        out.add(u)
        stack.extend(tree.child_list(u))
    return out


def distinctive_descendant_set(tree: CompressedCoverTree, p: int, i: int) -> set[int]:
    """Literal evaluation of the distinctive descendant set ``S_i(p)``.

    Slow on purpose: this is the oracle the cached counts are tested against.
    """
    lp = tree.levels[p]
    if i > lp:
        raise ContractError(f"level {i} above l({p}) = {lp}")
    below = descendants(tree, p)
    removed = set()
    for u in below:
        if i <= tree.levels[u] <= lp - 1:
            removed |= descendants(tree, u)
    return below - removed


@dataclass
class DescendantCountCache:
    """Per node: ascending breakpoint levels and the counts that start there.

    ``|S_i(p)|`` is the count at the largest breakpoint ``<= i``, or 1 when
    ``i`` lies below every breakpoint.
    """

    breakpoints: list
    counts: list

    def total_entries(self) -> int:
        return sum(len(b) for b in self.breakpoints)


def count_distinctive_descendants(tree: CompressedCoverTree) -> DescendantCountCache:
    """Counts ``|S_i(p)|`` at every essential level of every node.

    ``|S_i(p)|`` is one plus the subtree sizes of the children of ``p`` whose
    level is below ``i``, so it only changes one level above a child level.
    """
    bps, cnts = [], []
    for p in range(tree.n):
        kids = tree.child_list(p)
        levels_seen: list[int] = []
        counts: list[int] = []
        running = 1
        for c in reversed(kids):  # ascending level
            lc = tree.levels[c]
            running += tree.subtree_size(c)
            if levels_seen and levels_seen[-1] == lc + 1:
                counts[-1] = running
            else:
                levels_seen.append(lc + 1)
                counts.append(running)
        top = tree.levels[p] + 1
        if not levels_seen or levels_seen[-1] != top:
            levels_seen.append(top)
            counts.append(running)
        bps.append(levels_seen)
        cnts.append(counts)
    return DescendantCountCache(bps, cnts)


def distinctive_count_at(cache: DescendantCountCache, p: int, i: int, tree: CompressedCoverTree | None = None) -> int:
    bp = cache.breakpoints[p]
    if i >= bp[-1]:
        raise ContractError(f"level {i} above the level of node {p}")
    pos = bisect_right(bp, i)
    return cache.counts[p][pos - 1] if pos else 1


# -- text format --------------------------------------------------------------

HEADER_PREFIX = "#cct v1"


def serialize_tree(tree: CompressedCoverTree) -> str:
    lines = [f"{HEADER_PREFIX} n={tree.n} root={tree.root}"]
    for p in range(tree.n):
        par = tree.parents[p]
        lines.append(f"{p} {tree.levels[p]} {'-' if par is None else par}")
    return "\n".join(lines) + "\n"


def deserialize_tree(text: str, points: PointSet, validate: bool = True) -> CompressedCoverTree:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith(HEADER_PREFIX):
        raise InputError("missing '#cct v1' header")
    fields = dict(tok.split("=", 1) for tok in lines[0][len(HEADER_PREFIX):].split() if "=" in tok)
    try:
        n = int(fields["n"])
        root = int(fields["root"])
    except (KeyError, ValueError):
        raise InputError("header needs n=<count> root=<id>") from None
    if n != points.n or len(lines) - 1 != n:
        raise InputError("tree/point-set mismatch")
    levels: dict[int, int] = {}
    parents: dict[int, int | None] = {}
    for lineno, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        if len(parts) != 3:
            raise InputError(f"line {lineno}: expected 'id level parent_id'")
        try:
            p, lv = int(parts[0]), int(parts[1])
            par = None if parts[2] == "-" else int(parts[2])
        except ValueError:
            raise InputError(f"line {lineno}: malformed fields") from None
        if p in levels or not 0 <= p < n:
            raise InputError(f"line {lineno}: unknown or repeated id {p}")
        if par is not None and not 0 <= par < n:
            raise InputError(f"line {lineno}: unknown parent id {par}")
        levels[p], parents[p] = lv, par
    if parents.get(root, 0) is not None:
        raise InputError(f"header root {root} has a parent")
    if set(levels) != set(range(n)):
        raise InputError("tree/point-set mismatch")
    if validate:
        for p, par in parents.items():
            if par is not None and levels[p] >= levels[par]:
                raise TreeValidationError(
                    f"{COVERING_CONDITION} condition violated: node {p} at level {levels[p]} "
                    f"has parent {par} at level {levels[par]}",
                    [Violation(COVERING_CONDITION, levels[p], (p, par))],
                )
    return from_levels(points, levels, parents, validate=validate)
