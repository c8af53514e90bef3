"""All-k-nearest-neighbors: brute force oracle and the paired-tree solver."""
from __future__ import annotations

import csv
import heapq
import math
from bisect import insort
from dataclasses import dataclass, field

from .covertree import CompressedCoverTree, descendants, distinctive_descendant_set, pow2
from .errors import ContractError, InputError, VerificationError
from .metric import PointSet
from .traversal import TraversalStats, paired_traversal


def _pow2_like(level: int, like):
    if isinstance(like, float):
        return math.ldexp(1.0, level)
    return pow2(level)


class NeighborBuffer:
    """The ``k`` best ``(id, distance)`` pairs seen so far, ordered by (distance, id)."""

    def __init__(self, k: int):
        if k < 1:
            raise InputError("k must be positive")
        self.k = k
        self._items: list[tuple] = []
        self._ids: set[int] = set()

    def __len__(self):
        return len(self._items)

    def push(self, pid: int, dist) -> bool:
        if pid in self._ids:
            return False
        key = (dist, pid)
        if len(self._items) == self.k:
            if key >= self._items[-1]:
                return False
            _, old = self._items.pop()
            self._ids.discard(old)
        insort(self._items, key)
        self._ids.add(pid)
        return True

    def merge(self, pairs) -> None:
        fresh = [(d, pid) for pid, d in pairs if pid not in self._ids]
        if not fresh:
            return
        best = heapq.nsmallest(self.k, set(fresh).union(self._items))
        self._items = best
        self._ids = {pid for _, pid in best}

    def worst(self):
        return self._items[-1][0] if len(self._items) == self.k else None

    def items(self) -> list[tuple[int, object]]:
        return [(pid, d) for d, pid in self._items]


@dataclass
class KnnResult:
    """Per query: ``k`` ``(neighbor_id, distance)`` pairs by (distance, id)."""

    k: int
    neighbors: list = field(default_factory=list)

    def distances(self, q: int) -> list:
        return [d for _, d in self.neighbors[q]]

    def ids(self, q: int) -> list[int]:
        return [p for p, _ in self.neighbors[q]]

    def to_csv(self, sink) -> None:
        writer = csv.writer(sink, lineterminator="\n")
        writer.writerow(["query_id", "rank", "neighbor_id", "distance"])
        for q, row in enumerate(self.neighbors):
            for rank, (p, d) in enumerate(row, start=1):
                writer.writerow([q, rank, p, format_distance(d)])


def format_distance(d) -> str:
    if isinstance(d, int) and not isinstance(d, bool):
        return str(d)
    return format(float(d), ".17g")


def _same_set(Q: PointSet, R: PointSet) -> bool:
    return Q is R


def _check_k(k: int, nR: int, exclude_self: bool):
    limit = nR - 1 if exclude_self else nR
    if not isinstance(k, int) or k < 1 or k > limit:
        raise InputError(f"k={k} out of range: need 1 <= k <= {limit}")


def _drop_self(row, q: int, same: bool, k: int):
    """Remove the query's own reference point from a (k+1)-row, keep k."""
    if same:
        kept = [(p, d) for p, d in row if p != q]
    else:
        zero = next((p for p, d in row if d == 0), None)
        kept = [(p, d) for p, d in row if p != zero]
    return kept[:k]


# -- brute force ---------------------------------------------------------------


def nn_sets(q: int, Q: PointSet, R: PointSet, k_max: int, exclude_self: bool = False) -> list[set[int]]:
    """``NN_1(q) .. NN_{k_max}(q)`` from neighborhood sizes.

    ``u`` is in ``NN_k(q)`` when ``|N(q;u)| >= k`` while fewer than ``k``
    points are strictly closer to ``q`` than ``u``.
    """
    x = Q.payload(q)
    ids = list(R.ids)
    dist = dict(zip(ids, R.distances(x, ids)))
    if exclude_self:
        if _same_set(Q, R):
            dist.pop(q, None)
        else:
            zero = min((p for p, d in dist.items() if d == 0), default=None)
            if zero is not None:
                dist.pop(zero)
    if not 1 <= k_max <= len(dist):
        raise InputError(f"k_max={k_max} out of range for {len(dist)} reference points")
    nbhd = {u: sum(1 for d in dist.values() if d <= du) for u, du in dist.items()}
    closer = {u: sum(1 for d in dist.values() if d < du) for u, du in dist.items()}
    out = []
    for k in range(1, k_max + 1):
        members = {u for u in dist if closer[u] < k <= nbhd[u]}
        out.append(members)
    return out


def knn_bruteforce(Q: PointSet, R: PointSet, k: int, exclude_self: bool | None = None) -> KnnResult:
    """Full scan; ties broken by the smaller id."""
    same = _same_set(Q, R)
    if exclude_self is None:
        exclude_self = same
    _check_k(k, R.n, exclude_self)
    kk = min(k + 1, R.n) if exclude_self else k
    ids = list(R.ids)
    rows = []
    for q in Q.ids:
        d = R.distances(Q.payload(q), ids)
        row = [(p, dp) for dp, p in heapq.nsmallest(kk, zip(d, ids))]
        rows.append(_drop_self(row, q, same, k) if exclude_self else row)
    return KnnResult(k, rows)


# -- candidate selection -------------------------------------------------------


def lambda_point(dist: dict, C, counts, k: int) -> int:
    """The candidate ``lam`` in ``C`` nearest to ``q`` such that the points no
    farther than ``lam`` carry at least ``k`` distinctive descendants.

    ``dist[a]`` is ``d(q, a)`` and ``counts(a)`` the descendant count of ``a``
    at the current level. Only the ``k`` nearest members of ``C`` can matter,
    since each contributes at least one.
    """
    nearest = heapq.nsmallest(k, ((dist[a], a) for a in C))
    total = 0
    for _, a in nearest:
        total += counts(a)
        if total >= k:
            return a
    raise ContractError(f"candidates carry only {total} descendants, fewer than k={k}")


class _PairedKnn:
    """Hooks for the paired traversal that keep per-query distance caches."""

    def __init__(self, treeQ: CompressedCoverTree, treeR: CompressedCoverTree, k: int):
        self.treeQ, self.treeR, self.k = treeQ, treeR, k
        self.Q, self.R = treeQ.points, treeR.points
        self.cache = treeR.cache
        self.buffers = [NeighborBuffer(k) for _ in range(self.Q.n)]
        self._dist: dict[int, dict[int, object]] = {}
        self.last_lambda = None

    def dists(self, q: int, ids) -> dict:
        known = self._dist.setdefault(q, {})
        missing = [a for a in ids if a not in known]
        if missing:
            known.update(zip(missing, self.R.distances(self.Q.payload(q), missing)))
        return known

    def update_candidates(self, i, j, q, C):
        dist = self.dists(q, C)
        level = i - 1
        tree = self.treeR
        lam = lambda_point(dist, C, lambda a: tree.count_at(a, level), self.k)
        dl = dist[lam]
        bound = dl + _pow2_like(i + 1, dl) + _pow2_like(j + 2, dl)
        self.last_lambda = (q, level, lam, dl)
        return [a for a in C if dist[a] <= bound]

    def final_candidates(self, i, j, q, R):
        dist = self.dists(q, R)
        self.buffers[q].merge((a, dist[a]) for a in R)


def update_candidates(i: int, j: int, q, C, k: int, treeR: CompressedCoverTree, Q: PointSet | None = None) -> list[int]:
    """Prune ``C`` to the candidates within ``d(q, lam) + 2**(i+1) + 2**(j+2)``.

    ``q`` is an id of ``Q`` (or of the reference set when ``Q`` is omitted).
    """
    Q = treeR.points if Q is None else Q
    R = treeR.points
    C = list(C)
    dist = dict(zip(C, R.distances(Q.payload(q), C)))
    lam = lambda_point(dist, C, lambda a: treeR.count_at(a, i - 1), k)
    dl = dist[lam]
    bound = dl + _pow2_like(i + 1, dl) + _pow2_like(j + 2, dl)
    return [a for a in C if dist[a] <= bound]


def final_candidates(q, R_i, buffer: NeighborBuffer, treeR: CompressedCoverTree, Q: PointSet | None = None) -> NeighborBuffer:
    Q = treeR.points if Q is None else Q
    R_i = list(R_i)
    buffer.merge(zip(R_i, treeR.points.distances(Q.payload(q), R_i)))
    return buffer


# -- verification --------------------------------------------------------------


class _Verifier:
    """Oracle checks run after every reference expansion (small inputs only)."""

    def __init__(self, hooks: _PairedKnn):
        self.hooks = hooks
        self.treeQ, self.treeR = hooks.treeQ, hooks.treeR
        Q, R = self.treeQ.points, self.treeR.points
        ids = list(R.ids)
        self.true = []
        for q in Q.ids:
            d = R.distances(Q.payload(q), ids)
            self.true.append(sorted(zip(d, ids)))
        self._sets = {}
        self._below = {}
        self.checks = 0

    def _S(self, p, t):
        key = (p, t)
        if key not in self._sets:
            self._sets[key] = distinctive_descendant_set(self.treeR, p, t)
        return self._sets[key]

    def _query_block(self, q, j):
        key = (q, j)
        if key not in self._below:
            block = {q}
            for c in self.treeQ.child_list(q):
                if self.treeQ.levels[c] < j:
                    block |= descendants(self.treeQ, c)
            self._below[key] = block
        return self._below[key]

    def __call__(self, i, j, q, R_i, R_next, t):
        k = self.hooks.k
        covered = set()
        for p in R_next:
            covered |= self._S(p, t)
        for qq in self._query_block(q, j):
            row = self.true[qq]
            kth = row[k - 1][0]
            need = [p for d, p in row if d < kth]
            if any(p not in covered for p in need):
                raise VerificationError(f"true neighbor pruned for query {qq} at (i={i}, j={j}, q={q})")
            ties = sum(1 for d, p in row if d == kth and p in covered)
            if len(need) + ties < k:
                raise VerificationError(f"k-th neighbor distance lost for query {qq} at (i={i}, j={j}, q={q})")
        lq, level, lam, dl = self.hooks.last_lambda
        dk = self.true[lq][k - 1][0]
        if dl > dk + _pow2_like(level + 1, dl):
            raise VerificationError(f"lambda point {lam} too far from query {lq} at level {level}")
        self.checks += 1


# -- solver --------------------------------------------------------------------


def knn_paired(treeQ: CompressedCoverTree, treeR: CompressedCoverTree, k: int,
               exclude_self: bool | None = None, verify: bool = False):
    """All k nearest neighbors of the query tree's points among the reference tree's.

    ``exclude_self`` defaults to on exactly when both trees share one point
    set; a point is then never reported as its own neighbor. Returns
    ``(KnnResult, TraversalStats)``.
    """
    Q, R = treeQ.points, treeR.points
    if not R.compatible(Q):
        raise InputError("query and reference points live in different metric spaces")
    same = _same_set(Q, R)
    if exclude_self is None:
        exclude_self = same
    _check_k(k, R.n, exclude_self)
    kk = min(k + 1, R.n) if exclude_self else k
    hooks = _PairedKnn(treeQ, treeR, kk)
    observer = _Verifier(hooks) if verify else None
    stats = paired_traversal(treeQ, treeR, hooks, observer=observer)
    rows = []
    for q in range(Q.n):
        row = hooks.buffers[q].items()
        if len(row) != kk:
            raise VerificationError(f"query {q} collected {len(row)} of {kk} neighbors")
        rows.append(_drop_self(row, q, same, k) if exclude_self else row)
    result = KnnResult(k, rows)
    if verify:
        oracle = knn_bruteforce(Q, R, k, exclude_self)
        for q in range(Q.n):
            if result.distances(q) != oracle.distances(q):
                raise VerificationError(f"query {q}: distances differ from the brute-force scan")
    return result, stats
