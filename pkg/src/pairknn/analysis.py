"""Structural analytics, adversarial datasets and the legacy dual-tree search.

``legacy_findallnn`` reproduces the older dual-tree nearest neighbor search
that walks implicit levels one at a time. It is kept to show its failure
modes: on a query set equal to the reference set it returns every point as
its own neighbor, and on the bichromatic train-line pair its number of
reference expansions grows like ``m**4``.
"""
from __future__ import annotations

import csv
import io
import math
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .covertree import CompressedCoverTree, descendants, from_levels, height_set, pow2
from .errors import InputError
from .metric import EuclideanSet, GraphPointSet, MatrixSet, PointSet, TrainLineGraph
from .traversal import TraversalStats, imbalance

M_RANGE = (4, 22)


# -- expansion constant ------------------------------------------------------


@dataclass
class ExpansionReport:
    c: float
    witness: tuple  # (center id, radius t)
    ratio: float

    @property
    def note(self) -> str:
        return "c(R) is an upper bound for the minimized expansion constant"


def _ball_ratio_scan(rows):
    """Max of ``|B(p, 2t)| / |B(p, t)|`` over centers and critical radii.

    The ratio only jumps when ``2t`` reaches a distance (numerator grows) or
    ``t`` does (denominator grows), so ``t`` in ``{v/2, v}`` for every
    distance ``v`` from the center covers every value it takes.
    """
    best = (1.0, None)
    for p, d in enumerate(rows):
        D = np.sort(np.asarray(d, dtype=float))
        D2 = 2.0 * D
        v = D[1:]
        # t = v / 2: count(D <= v) over count(2D <= v), doubling is exact
        num = np.searchsorted(D, v, side="right")
        den = np.searchsorted(D2, v, side="right")
        ratio = num / den
        k = int(np.argmax(ratio))
        if ratio[k] > best[0]:
            best = (float(ratio[k]), (p, float(v[k]) / 2))
        # t = v
        num = np.searchsorted(D, D2[1:], side="right")
        den = np.searchsorted(D, v, side="right")
        ratio = num / den
        k = int(np.argmax(ratio))
        if ratio[k] > best[0]:
            best = (float(ratio[k]), (p, float(v[k])))
    return best


def expansion_constant(R: PointSet) -> ExpansionReport:
    """Exact expansion constant ``c(R)``: the smallest ``c >= 2`` with
    ``|B(p, 2t)| <= c |B(p, t)|`` for every center ``p`` and radius ``t``."""
    if R.n < 2:
        raise InputError("expansion constant needs at least two points")
    ratio, witness = _ball_ratio_scan(R.distance_matrix())
    return ExpansionReport(max(2.0, ratio), witness, ratio)


def ball_ratio(R: PointSet, p: int, t) -> float:
    d = np.asarray(R.distances(R.payload(p), list(R.ids)), dtype=float)
    return float(np.count_nonzero(d <= 2 * t) / np.count_nonzero(d <= t))


def c_qr(Q: EuclideanSet, R: EuclideanSet) -> float:
    """``max over q of c(R + {q})``; a query equal to a reference point adds nothing."""
    best = 2.0
    base = None
    for q in Q.ids:
        x = Q.payload(q)
        if np.any(np.all(R.coords == x, axis=1)):
            if base is None:
                base = expansion_constant(R).c
            c = base
        else:
            c = expansion_constant(EuclideanSet(np.vstack([R.coords, x]), check_duplicates=False)).c
        best = max(best, c)
    return best


def aspect_ratio(R: PointSet):
    """``(diameter, minimum distance, diameter / minimum distance)``."""
    if R.n < 2:
        raise InputError("aspect ratio needs at least two points")
    table = R.distance_matrix()
    off = [d for a, row in enumerate(table) for b, d in enumerate(row) if a < b]
    diam, dmin = max(off), min(off)
    return diam, dmin, diam / dmin


# -- generated datasets --------------------------------------------------------


@dataclass
class GeneratedDataset:
    variant: str
    m: int
    reference: PointSet
    reference_tree: CompressedCoverTree
    query: PointSet | None = None
    query_tree: CompressedCoverTree | None = None
    meets_original_constraint: bool = False

    @property
    def Q(self) -> PointSet:
        return self.reference if self.query is None else self.query

    @property
    def TQ(self) -> CompressedCoverTree:
        return self.reference_tree if self.query_tree is None else self.query_tree


def _check_m(m: int):
    lo, hi = M_RANGE
    if not isinstance(m, (int, np.integer)) or not lo <= m <= hi:
        raise InputError(f"m must be an integer in [{lo}, {hi}], got {m!r}")


def train_line_tree(points: GraphPointSet, family: str, m: int, validate: bool = True) -> CompressedCoverTree:
    """The prescribed tall tree: hub ``r`` on top, ``l(x_i) = i``, and
    ``x_i`` hangs off ``r`` when ``m`` divides ``i``, else off ``x_{i+1}``."""
    top = m * m
    levels, parents = {}, {}
    for pid, label in enumerate(points.labels):
        if label == "r":
            levels[pid], parents[pid] = top + 1, None
            continue
        fam, i = points.graph.parse(label)
        if fam != family:
            raise InputError(f"label {label!r} is not in family {family!r}")
        levels[pid] = i
        parents[pid] = points.id_of("r" if i % m == 0 else f"{family}{i + 1}")
    return from_levels(points, levels, parents, validate=validate)


def chain_labels(family: str, m: int) -> list[str]:
    return ["r"] + [f"{family}{i}" for i in range(1, m * m + 1)]


def gen_tall_imbalanced(m: int, validate: bool = True) -> GeneratedDataset:
    """Hub ``r`` plus ``m*m`` chain points with one point per level."""
    _check_m(m)
    graph = TrainLineGraph.doubling(m, ["p"])
    R = GraphPointSet(graph, chain_labels("p", m))
    tree = train_line_tree(R, "p", m, validate=validate)
    return GeneratedDataset("tall-imbalanced", m, R, tree, meets_original_constraint=m > 10)


def gen_bichromatic(m: int, validate: bool = True) -> GeneratedDataset:
    """Query chain ``q_i`` and reference chain ``r_i`` on one graph; both sets
    contain the hub ``r`` and both trees have the tall shape."""
    _check_m(m)
    graph = TrainLineGraph.doubling(m, ["q", "r"])
    R = GraphPointSet(graph, chain_labels("r", m))
    Q = GraphPointSet(graph, chain_labels("q", m), counter=R.counter)
    TR = train_line_tree(R, "r", m, validate=validate)
    TQ = train_line_tree(Q, "q", m, validate=validate)
    return GeneratedDataset("bichromatic", m, R, TR, Q, TQ, meets_original_constraint=m > 100)


def gen_balanced(t: int, m: int):
    """Complete ``t``-ary tree with ``m + 1`` levels under a tree metric.

    Node ``v`` at level ``l`` is joined to its parent by an edge of length
    ``2**(l+1)``; distances are path lengths. Returns ``(points, tree)``.
    """
    if t < 2 or m < 0:
        raise InputError("need t >= 2 and m >= 0")
    levels, parents = [m], [None]
    frontier = [0]
    for lev in range(m - 1, -1, -1):
        nxt = []
        for p in frontier:
            for _ in range(t):
                levels.append(lev)
                parents.append(p)
                nxt.append(len(levels) - 1)
        frontier = nxt
    n = len(levels)
    up = np.zeros(n)  # distance to the root
    for v in range(1, n):
        up[v] = up[parents[v]] + 2.0 ** (levels[v] + 1)
    ancestors = []
    for v in range(n):
        chain, u = [], v
        while u is not None:
            chain.append(u)
            u = parents[u]
        ancestors.append(chain)
    table = np.zeros((n, n))
    for a in range(n):
        anc_a = set(ancestors[a])
        for b in range(n):
            lca = next(u for u in ancestors[b] if u in anc_a)
            table[a, b] = up[a] + up[b] - 2 * up[lca]
    points = MatrixSet(table)
    return points, from_levels(points, levels, parents)


def explicit_depth(tree: CompressedCoverTree, p: int) -> int:
    """Number of explicit nodes on the path from ``p`` to the root.

    For each edge ``(w, parent)`` of the path, count children of the parent
    (itself excluded) whose level lies in ``[l(w), l(parent) - 1]``.
    """
    total = 0
    w = p
    while tree.parents[w] is not None:
        par = tree.parents[w]
        lo, hi = tree.levels[w], tree.levels[par] - 1
        total += sum(1 for c in tree.child_list(par) if lo <= tree.levels[c] <= hi)
        w = par
    return total


# -- legacy dual-tree search ---------------------------------------------------


@dataclass
class LegacyResult:
    nearest: list  # per query id: (reference id, distance)
    stats: TraversalStats
    trace: list = field(default_factory=list)

    def all_trivial(self) -> bool:
        return all(d == 0 for _, d in self.nearest)


def _query_block(tree: CompressedCoverTree, q: int, j: int) -> list[int]:
    out = [q]
    for c in tree.child_list(q):
        if tree.levels[c] < j:
            out.extend(sorted(descendants(tree, c)))
    return out


def legacy_findallnn(treeQ: CompressedCoverTree, treeR: CompressedCoverTree, trace_query: int | None = None) -> LegacyResult:
    """Older dual-tree 1-NN search, stepping through implicit levels.

    State ``(i, j, q, R_i)``. While ``j < i`` the reference side drops one
    level: each candidate contributes itself and its children at level
    ``i - 1``, and candidates farther than ``min d + 2**i + 2**(j+2)`` are cut.
    Otherwise the query side drops one level into its children at ``j - 1``
    and itself. Once ``i`` reaches the bottom reference level every query
    point still grouped under ``q`` takes its nearest surviving candidate.
    """
    Q, R = treeQ.points, treeR.points
    counter = R.counter
    start = counter.calls
    stats = TraversalStats()
    nearest: list = [None] * Q.n
    trace = []
    lminR = treeR.l_min
    levR, levQ = treeR.levels, treeQ.levels
    stack = [(treeR.l_max, treeQ.l_max, treeQ.root, (treeR.root,))]
    while stack:
        i, j, q, Rset = stack.pop()
        stats.max_candidate_width = max(stats.max_candidate_width, len(Rset))
        if i <= lminR:
            ids = sorted(Rset)
            for qq in _query_block(treeQ, q, j):
                d = R.distances(Q.payload(qq), ids)
                best = min(zip(d, ids))
                nearest[qq] = (best[1], best[0])
        elif j < i:
            stats.reference_expansions += 1
            C = list(Rset)
            for r in Rset:
                C.extend(a for a in treeR.child_list(r) if levR[a] == i - 1)
            d = R.distances(Q.payload(q), C)
            bound = min(d) + pow2(i) + pow2(j + 2)
            kept = tuple(a for a, da in zip(C, d) if da <= bound)
            if q == trace_query:
                trace.append((i, j, frozenset(kept)))
            stack.append((i - 1, j, q, kept))
        else:
            stats.query_expansions += 1
            stack.append((i, j - 1, q, Rset))
            for c in treeQ.child_list(q):
                if levQ[c] == j - 1:
                    stack.append((i, j - 1, c, Rset))
    stats.distance_calls = counter.calls - start
    return LegacyResult(nearest, stats, trace)


def legacy_lower_bound(m: int) -> int:
    """``sum over u = 2 .. m*m + 1 of (u - 2)``."""
    top = m * m + 1
    return sum(u - 2 for u in range(2, top + 1))


# -- growth study --------------------------------------------------------------

STUDY_COLUMNS = ("m", "n", "ref_expansions", "imbalance", "height", "distance_calls")


@dataclass
class StudyRow:
    m: int
    n: int
    ref_expansions: int
    imbalance: int
    height: int
    distance_calls: int


@dataclass
class StudyResult:
    variant: str
    rows: list
    slope: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(STUDY_COLUMNS)
        for row in self.rows:
            writer.writerow([getattr(row, c) for c in STUDY_COLUMNS])
        return buf.getvalue() + f"# fitted log-log slope of ref_expansions vs m: {self.slope:.4f}\n"


def fit_loglog_slope(xs, ys) -> float:
    slope, _ = np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)
    return float(slope)


def expansion_growth_study(variant: str, m_list) -> StudyResult:
    """Legacy reference expansions per ``m`` and their log-log slope in ``m``."""
    rows = []
    for m in m_list:
        if variant == "bichromatic":
            data = gen_bichromatic(m)
        elif variant == "tall-imbalanced":
            data = gen_tall_imbalanced(m)
        else:
            raise InputError(f"unknown variant {variant!r}")
        res = legacy_findallnn(data.TQ, data.reference_tree)
        rows.append(StudyRow(m, data.reference.n, res.stats.reference_expansions,
                             imbalance(data.TQ, data.reference_tree),
                             len(height_set(data.reference_tree)), res.stats.distance_calls))
    if len(rows) < 2:
        raise InputError("need at least two values of m to fit a slope")
    slope = fit_loglog_slope([r.m for r in rows], [r.ref_expansions for r in rows])
    return StudyResult(variant, rows, slope)


# -- packing -------------------------------------------------------------------


@dataclass
class PackingReport:
    trials: int
    skipped: int
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def packing_bound(c: float, t, delta) -> float:
    return c ** math.ceil(math.log2(4 * t / delta + 1))


def packing_check(tree: CompressedCoverTree, trials: int, rng=None, c: float | None = None,
                  radii=None) -> PackingReport:
    """Sample balls ``B(p, t)`` and count cover-set points inside.

    A cover set ``C_i`` is ``2**i``-sparse, so for ``t > 2**i`` the ball holds
    at most ``c ** ceil(log2(4 t / 2**i + 1))`` of its points. Samples with
    ``t <= 2**i`` are skipped.
    """
    rng = np.random.default_rng(rng)
    pts = tree.points
    if c is None:
        c = expansion_constant(pts).c
    table = np.asarray(pts.distance_matrix(), dtype=float)
    levels = np.asarray(tree.levels)
    heights = sorted(height_set(tree))
    skipped, bad = 0, []
    for _ in range(trials):
        p = int(rng.integers(pts.n))
        i = int(rng.choice(heights))
        delta = math.ldexp(1.0, i)
        t = float(rng.choice(radii)) if radii is not None else delta * float(rng.uniform(0.5, 16.0))
        if t <= delta:
            skipped += 1
            continue
        inside = int(np.count_nonzero((table[p] <= t) & (levels >= i)))
        bound = packing_bound(c, t, delta)
        if inside > bound:
            bad.append((p, t, i, inside, bound))
    return PackingReport(trials, skipped, bad)
