"""Distance oracles over finite point sets.

Three kinds of point sets are supported:

* ``EuclideanSet`` -- rows of a coordinate matrix under the L2 metric;
* ``GraphPointSet`` -- labelled points on a "train line" metric graph whose
  shortest-path distances have closed forms (exact Python integers);
* ``MatrixSet`` -- an explicit distance table, used for tree metrics and
  for planting corrupted distances in tests.

Every set carries a ``DistanceCounter`` that is bumped once per metric
evaluation. Distances between two different sets (query vs reference) are
always evaluated by the reference set via ``distances(payload, ids)`` where
``payload`` comes from the query set's ``payload(i)``.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError

__all__ = [
    "DistanceCounter",
    "PointSet",
    "EuclideanSet",
    "MatrixSet",
    "TrainLineGraph",
    "GraphPointSet",
    "MetricReport",
    "euclidean_distance",
    "graph_distance",
    "verify_metric_axioms",
    "read_points_csv",
    "write_points_csv",
    "write_distance_matrix_csv",
]


class DistanceCounter:
    """Thread-safe tally of metric evaluations."""

    def __init__(self):
        self._calls = 0
        self._lock = threading.Lock()

    @property
    def calls(self) -> int:
        return self._calls

    def add(self, n: int = 1) -> None:
        with self._lock:
            self._calls += n

    def reset(self) -> None:
        with self._lock:
            self._calls = 0


def euclidean_distance(a, b) -> float:
    """L2 distance between two coordinate vectors.

    Squares are accumulated coordinate by coordinate, left to right, which
    is the same order ``EuclideanSet.distances`` uses; the two paths give
    bit-identical results.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise InputError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    acc = 0.0
    for x, y in zip(a.tolist(), b.tolist()):
        diff = x - y
        acc += diff * diff
    return math.sqrt(acc)


class PointSet:
    """Base class: ``n`` points with dense ids ``0..n-1``."""

    kind = "abstract"

    def __init__(self, counter: DistanceCounter | None = None):
        self.counter = counter if counter is not None else DistanceCounter()

    def __len__(self) -> int:
        return self.n

    @property
    def n(self) -> int:
        raise NotImplementedError

    @property
    def ids(self) -> range:
        return range(self.n)

    def payload(self, i: int):
        """The raw point (coordinates or label) behind id ``i``."""
        raise NotImplementedError

    def _batch(self, x, ids: Sequence[int]) -> list:
        raise NotImplementedError

    def distances(self, x, ids: Sequence[int]) -> list:
        """Distances from payload ``x`` to each point in ``ids``."""
        ids = list(ids)
        self.counter.add(len(ids))
        if not ids:
            return []
        return self._batch(x, ids)

    def distance(self, i: int, j: int):
        return self.distances(self.payload(i), [j])[0]

    def cross_distance(self, x, j: int):
        return self.distances(x, [j])[0]

    def distance_matrix(self) -> list[list]:
        """Full pairwise table (counts n*n calls)."""
        everything = list(self.ids)
        return [self.distances(self.payload(i), everything) for i in everything]

    def compatible(self, other: "PointSet") -> bool:
        """True when payloads of ``other`` can be measured against this set."""
        return self.kind == other.kind


class EuclideanSet(PointSet):
    """Coordinate vectors of a shared dimension under the L2 metric."""

    kind = "l2"

    def __init__(self, coords, counter: DistanceCounter | None = None, check_duplicates: bool = True):
        super().__init__(counter)
        arr = np.asarray(coords, dtype=float)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise InputError("expected a non-empty 2-d array of coordinates")
        if not np.all(np.isfinite(arr)):
            raise InputError("coordinates must be finite")
        self.coords = np.ascontiguousarray(arr)
        self._columns = [np.ascontiguousarray(self.coords[:, c]) for c in range(self.dim)]
        if check_duplicates:
            self._reject_duplicates()

    def _reject_duplicates(self) -> None:
        _, first, counts = np.unique(self.coords, axis=0, return_index=True, return_counts=True)
        if np.any(counts > 1):
            dup_row = self.coords[first[np.argmax(counts > 1)]]
            where = np.flatnonzero(np.all(self.coords == dup_row, axis=1))
            raise InputError(f"duplicate point: ids {where.tolist()} coincide")

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    def payload(self, i: int):
        return self.coords[i]

    def _batch(self, x, ids):
        idx = np.asarray(ids, dtype=np.intp)
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise InputError(f"dimension mismatch: {x.shape[-1]} vs {self.dim}")
        diff = self._columns[0][idx] - x[0]
        acc = diff * diff
        for c in range(1, self.dim):
            diff = self._columns[c][idx] - x[c]
            acc += diff * diff
        return np.sqrt(acc).tolist()

    def compatible(self, other):
        return isinstance(other, EuclideanSet) and other.dim == self.dim


class MatrixSet(PointSet):
    """Points given only through an explicit symmetric distance table.

    Two ``MatrixSet`` objects sharing the same table can be paired: a payload
    is the row index into the table and ``ids`` maps local ids to rows.
    """

    kind = "matrix"

    def __init__(self, matrix, rows: Sequence[int] | None = None, counter: DistanceCounter | None = None):
        super().__init__(counter)
        table = np.asarray(matrix, dtype=float)
        if table.ndim != 2 or table.shape[0] != table.shape[1]:
            raise InputError("distance table must be square")
        self.table = table
        self.rows = np.arange(table.shape[0]) if rows is None else np.asarray(rows, dtype=np.intp)

    @property
    def n(self) -> int:
        return len(self.rows)

    def payload(self, i: int):
        return int(self.rows[i])

    def _batch(self, x, ids):
        return self.table[x, self.rows[np.asarray(ids, dtype=np.intp)]].tolist()

    def compatible(self, other):
        return isinstance(other, MatrixSet) and other.table is self.table


# -- train-line metric graphs -------------------------------------------------


def _split_label(label: str) -> tuple[str, int | None]:
    head = label.rstrip("0123456789")
    tail = label[len(head):]
    if not head or (tail and tail.startswith("0")):
        raise InputError(f"bad graph label {label!r}")
    return head, (int(tail) if tail else None)


@dataclass(frozen=True)
class TrainLineGraph:
    """Two hub vertices ``r`` and ``q`` joined by an edge of length 1, plus
    one edge per (family, block) running between the hubs.

    Chain points of a family are indexed ``1..m*m`` and grouped into blocks
    of ``m`` consecutive indices. The top point of block ``b`` (index
    ``b*m``) is the midpoint of the block's edge; every other point is the
    midpoint between its successor and the hub ``q``. Hence a point sits at
    distance ``L_b / 2**(1 + b*m - i)`` from ``q``, where ``L_b`` is the
    block's edge length.
    """

    m: int
    edge_lengths: dict = field(hash=False)

    @classmethod
    def doubling(cls, m: int, families: Iterable[str]) -> "TrainLineGraph":
        """Edge lengths ``2**(b*m + 2)``: the hub distance of point i is ``2**(i+1)``."""
        lengths = [2 ** (b * m + 2) for b in range(1, m + 1)]
        return cls(m, {fam: list(lengths) for fam in families})

    def block(self, i: int) -> int:
        return -(-i // self.m)

    def parse(self, label: str) -> tuple[str, int | None]:
        fam, i = _split_label(label)
        if i is None:
            if fam not in ("q", "r"):
                raise InputError(f"unknown graph vertex {label!r}")
        else:
            if fam not in self.edge_lengths:
                raise InputError(f"unknown point family in {label!r}")
            if not 1 <= i <= self.m * len(self.edge_lengths[fam]):
                raise InputError(f"index out of range in {label!r}")
        return fam, i

    def _edge(self, fam: str, i: int):
        return self.edge_lengths[fam][self.block(i) - 1]

    def hub_offset(self, fam: str, i: int):
        """Distance from chain point ``fam<i>`` to the hub ``q``."""
        b = self.block(i)
        pos = Fraction(self._edge(fam, i), 2 ** (1 + b * self.m - i))
        return int(pos) if pos.denominator == 1 else pos

    def _to_r(self, fam: str, i: int):
        pos = self.hub_offset(fam, i)
        return min(pos + 1, self._edge(fam, i) - pos)

    def distance_parsed(self, x: tuple, y: tuple):
        if x == y:
            return 0
        (fx, ix), (fy, iy) = x, y
        if ix is None and iy is None:
            return 1
        if ix is None or iy is None:
            vertex, (fam, i) = (fx, (fy, iy)) if ix is None else (fy, (fx, ix))
            return self.hub_offset(fam, i) if vertex == "q" else self._to_r(fam, i)
        px, py = self.hub_offset(fx, ix), self.hub_offset(fy, iy)
        best = min(px + py, self._to_r(fx, ix) + self._to_r(fy, iy))
        if fx == fy and self.block(ix) == self.block(iy):
            best = min(best, abs(px - py))
        return best

    def distance_labels(self, a: str, b: str):
        return self.distance_parsed(self.parse(a), self.parse(b))


class GraphPointSet(PointSet):
    """Labelled points on a ``TrainLineGraph``; distances are exact integers."""

    kind = "graph"

    def __init__(self, graph: TrainLineGraph, labels: Sequence[str], counter: DistanceCounter | None = None):
        super().__init__(counter)
        self.graph = graph
        self.labels = list(labels)
        if len(set(self.labels)) != len(self.labels):
            raise InputError("duplicate point: repeated graph label")
        self._parsed = [graph.parse(lab) for lab in self.labels]
        self._index = {lab: i for i, lab in enumerate(self.labels)}

    @property
    def n(self) -> int:
        return len(self.labels)

    def payload(self, i: int):
        return self._parsed[i]

    def id_of(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise InputError(f"unknown point {label!r}") from None

    def _batch(self, x, ids):
        dist = self.graph.distance_parsed
        parsed = self._parsed
        return [dist(x, parsed[j]) for j in ids]

    def compatible(self, other):
        return isinstance(other, GraphPointSet) and other.graph == self.graph


def graph_distance(points: GraphPointSet, a, b):
    """Closed-form shortest-path distance between two points of a graph set.

    ``a`` and ``b`` may be ids or labels.
    """
    ia = points.id_of(a) if isinstance(a, str) else a
    ib = points.id_of(b) if isinstance(b, str) else b
    for x in (ia, ib):
        if not (isinstance(x, (int, np.integer)) and 0 <= x < points.n):
            raise InputError(f"unknown point id {x!r}")
    return points.distance(int(ia), int(ib))


# -- metric axioms ------------------------------------------------------------


@dataclass
class MetricReport:
    ok: bool
    checked: int
    violation: str | None = None
    triple: tuple | None = None

    def __bool__(self) -> bool:
        return self.ok


def verify_metric_axioms(points: PointSet, triples: Iterable[tuple[int, int, int]] | None = None) -> MetricReport:
    """Check symmetry, identity of indiscernibles and the triangle inequality.

    With ``triples=None`` every ordered triple is checked against the full
    distance table. Reports the first violation found.
    """
    table = points.distance_matrix()
    n = points.n
    for a in range(n):
        if table[a][a] != 0:
            return MetricReport(False, 0, "identity", (a, a, a))
    if triples is None:
        return _exhaustive_axioms(table, n)

    checked = 0
    for a, b, c in triples:
        checked += 1
        dab, dba = table[a][b], table[b][a]
        if dab != dba:
            return MetricReport(False, checked, "symmetry", (a, b, c))
        if a != b and dab <= 0:
            return MetricReport(False, checked, "identity", (a, b, c))
        if table[a][c] > dab + table[b][c]:
            return MetricReport(False, checked, "triangle", (a, b, c))
    return MetricReport(True, checked)


def _exhaustive_axioms(table, n) -> MetricReport:
    exact_ints = any(isinstance(v, (int, Fraction)) and not isinstance(v, bool) for v in table[0])
    arr = np.array(table, dtype=object if exact_ints else float)
    for a, b in itertools.combinations(range(n), 2):
        if arr[a, b] != arr[b, a]:
            return MetricReport(False, a * n + b, "symmetry", (a, b, b))
        if arr[a, b] <= 0:
            return MetricReport(False, a * n + b, "identity", (a, b, b))
    for b in range(n):
        # bound[a, c] = d(a, b) + d(b, c)
        bound = arr[:, b][:, None] + arr[b, :][None, :]
        bad = np.argwhere(arr > bound)
        if len(bad):
            a, c = (int(v) for v in bad[0])
            return MetricReport(False, n * n * n, "triangle", (a, b, c))
    return MetricReport(True, n * n * n)


# -- CSV formats --------------------------------------------------------------


def read_points_csv(source) -> EuclideanSet:
    """Parse ``id,x1,...,xd`` rows; ids must be exactly ``0..n-1``."""
    text = source.read() if hasattr(source, "read") else open(source, newline="").read()
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if not rows:
        raise InputError("empty points file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2 or header[0] != "id":
        raise InputError("points header must be 'id,x1,...,xd'")
    dim = len(header) - 1
    ids, coords = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != dim + 1:
            raise InputError(f"line {lineno}: expected {dim + 1} fields, got {len(row)}")
        try:
            ids.append(int(row[0]))
            coords.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise InputError(f"line {lineno}: {exc}") from None
    if not coords:
        raise InputError("points file has no rows")
    order = np.argsort(ids, kind="stable")
    if sorted(ids) != list(range(len(ids))):
        raise InputError("point ids must be exactly 0..n-1")
    return EuclideanSet(np.asarray(coords)[order])


def write_points_csv(points: EuclideanSet, sink) -> None:
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(["id"] + [f"x{c + 1}" for c in range(points.dim)])
    for i in points.ids:
        writer.writerow([i] + [repr(float(v)) for v in points.coords[i]])


def _fmt_distance(value) -> str:
    if isinstance(value, int) and not isinstance(value, bool):
        return str(value)
    return format(float(value), ".17g")


def write_distance_matrix_csv(points: PointSet, sink, limit: int = 2000) -> None:
    """Export ``id_a,id_b,distance`` for every ordered pair."""
    if points.n > limit:
        raise InputError(f"distance matrix export limited to n <= {limit}")
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(["id_a", "id_b", "distance"])
    everything = list(points.ids)
    for a in everything:
        for b, d in zip(everything, points.distances(points.payload(a), everything)):
            writer.writerow([a, b, _fmt_distance(d)])
