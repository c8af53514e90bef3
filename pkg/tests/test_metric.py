import heapq
import io
import itertools
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pairknn.errors import InputError
from pairknn.metric import (
    DistanceCounter,
    EuclideanSet,
    GraphPointSet,
    MatrixSet,
    TrainLineGraph,
    euclidean_distance,
    graph_distance,
    read_points_csv,
    verify_metric_axioms,
    write_distance_matrix_csv,
    write_points_csv,
)


def test_euclidean_examples():
    assert euclidean_distance([0], [1]) == 1
    assert euclidean_distance([2], [30]) == 28
    assert euclidean_distance([3, 4], [0, 0]) == 5


def test_euclidean_dimension_mismatch():
    with pytest.raises(InputError):
        euclidean_distance([1, 2], [1])


@given(st.lists(st.tuples(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.floats(-1e6, 1e6)),
                min_size=2, max_size=12, unique=True))
@settings(max_examples=60, deadline=None)
def test_batch_matches_scalar_bitwise(rows):
    pts = EuclideanSet(np.array(rows), check_duplicates=False)
    batch = pts.distances(pts.payload(0), list(pts.ids))
    scalar = [euclidean_distance(rows[0], r) for r in rows]
    assert batch == scalar


def test_duplicate_points_rejected():
    with pytest.raises(InputError, match="duplicate point"):
        EuclideanSet([[0.0, 1.0], [2.0, 2.0], [0.0, 1.0]])


def test_counter_counts_each_evaluation():
    pts = EuclideanSet(np.arange(10.0))
    pts.distances(pts.payload(0), range(10))
    pts.distance(1, 2)
    assert pts.counter.calls == 11
    pts.counter.reset()
    assert pts.counter.calls == 0


def test_counter_exact_under_threads():
    counter = DistanceCounter()

    def work():
        for _ in range(2000):
            counter.add()

    threads = [threading.Thread(target=work) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert counter.calls == 16000


def test_counter_replay_matches():
    rng = np.random.default_rng(3)
    coords = rng.random((40, 3))
    totals = []
    for _ in range(2):
        pts = EuclideanSet(coords)
        for q in range(0, 40, 7):
            pts.distances(pts.payload(q), range(q, 40))
        totals.append(pts.counter.calls)
    assert totals[0] == totals[1] == sum(40 - q for q in range(0, 40, 7))


# -- train-line graphs ----------------------------------------------------------


def dijkstra_table(graph: TrainLineGraph, labels):
    """Shortest paths on the explicit subdivided graph, in exact integers."""
    adj = {"q": [], "r": []}

    def edge(a, b, w):
        adj.setdefault(a, []).append((b, w))
        adj.setdefault(b, []).append((a, w))

    edge("q", "r", 1)
    for fam, lengths in graph.edge_lengths.items():
        m = graph.m
        for b, L in enumerate(lengths, start=1):
            # chain points of block b sorted by distance from q
            idx = list(range((b - 1) * m + 1, b * m + 1))
            pos = [graph.hub_offset(fam, i) for i in idx]
            names = [f"{fam}{i}" for i in idx]
            prev, prev_pos = "q", 0
            for name, p in zip(names, pos):
                edge(prev, name, p - prev_pos)
                prev, prev_pos = name, p
            edge(prev, "r", L - prev_pos)

    def sssp(src):
        dist = {src: 0}
        heap = [(0, src)]
        while heap:
            d, u = heapq.heappop(heap)
            if d > dist[u]:
                continue
            for v, w in adj[u]:
                nd = d + w
                if v not in dist or nd < dist[v]:
                    dist[v] = nd
                    heapq.heappush(heap, (nd, v))
        return dist

    return {a: sssp(a) for a in labels}


@pytest.mark.parametrize("m", [4, 5, 11])
def test_graph_closed_form_matches_shortest_paths(m):
    graph = TrainLineGraph.doubling(m, ["p"])
    labels = ["r", "q"] + [f"p{i}" for i in range(1, m * m + 1)]
    table = dijkstra_table(graph, labels)
    for a, b in itertools.combinations(labels, 2):
        assert graph.distance_labels(a, b) == table[a][b], (a, b)


def test_bichromatic_closed_form_matches_shortest_paths():
    m = 5
    graph = TrainLineGraph.doubling(m, ["q", "r"])
    labels = ["r", "q"] + [f"{f}{i}" for f in "qr" for i in range(1, m * m + 1)]
    table = dijkstra_table(graph, labels)
    for a, b in itertools.combinations(labels, 2):
        assert graph.distance_labels(a, b) == table[a][b], (a, b)


def test_graph_distance_examples():
    m = 11
    graph = TrainLineGraph.doubling(m, ["p"])
    pts = GraphPointSet(graph, ["r", "q"] + [f"p{i}" for i in range(1, m * m + 1)])
    assert graph_distance(pts, "q", "r") == 1
    # hub offsets double along a block: p_i sits at 2**(i+1) from q
    assert graph_distance(pts, "q", "p3") == 16
    assert graph_distance(pts, "p2", "p3") == 8
    assert graph_distance(pts, "r", "p5") == 2**6 + 1
    assert graph_distance(pts, "r", "p11") == 2**12
    # different blocks meet at q
    assert graph_distance(pts, "p3", "p14") == 2**4 + 2**15


def test_bichromatic_distance_example():
    graph = TrainLineGraph.doubling(11, ["q", "r"])
    pts = GraphPointSet(graph, ["q2", "r5", "r", "q"])
    assert graph_distance(pts, "q2", "r5") == 72
    assert graph_distance(pts, "q2", "r") == 2**3 + 1
    assert graph_distance(pts, "q", "r") == 1


def test_graph_unknown_point():
    graph = TrainLineGraph.doubling(4, ["p"])
    pts = GraphPointSet(graph, ["r", "p1"])
    with pytest.raises(InputError):
        graph_distance(pts, "p2", "r")
    with pytest.raises(InputError):
        graph_distance(pts, 0, 7)
    with pytest.raises(InputError):
        GraphPointSet(graph, ["r", "p17"])


def test_graph_distances_exact_at_large_m():
    m = 22
    graph = TrainLineGraph.doubling(m, ["p"])
    top = m * m
    d = graph.distance_labels(f"p{top}", f"p{top - 1}")
    assert d == 2**top
    assert isinstance(d, int)
    assert graph.distance_labels("r", f"p{top - 1}") == 2**top + 1


def test_root_separated_from_cover_sets():
    m = 6
    graph = TrainLineGraph.doubling(m, ["p"])
    for t in range(1, m * m + 1):
        for i in range(t, m * m + 1):
            assert graph.distance_labels("r", f"p{i}") > 2**t


def test_axioms_euclidean(rng):
    pts = EuclideanSet(rng.random((25, 3)))
    triples = [tuple(rng.integers(25, size=3)) for _ in range(300)]
    assert verify_metric_axioms(pts, triples).ok
    assert verify_metric_axioms(pts).ok


def test_axioms_tall_graph_exhaustive():
    m = 11
    graph = TrainLineGraph.doubling(m, ["p"])
    pts = GraphPointSet(graph, ["r"] + [f"p{i}" for i in range(1, m * m + 1)])
    report = verify_metric_axioms(pts)
    assert report.ok, report


def test_axioms_catch_planted_violation():
    pts = EuclideanSet(np.array([[0.0], [1.0], [3.0], [7.0]]))
    table = np.array(pts.distance_matrix())
    table[0, 3] /= 2
    table[3, 0] /= 2
    bad = MatrixSet(table)
    report = verify_metric_axioms(bad)
    assert not report.ok
    assert report.violation == "triangle"
    a, b, c = report.triple
    assert table[a, c] > table[a, b] + table[b, c]
    asym = table.copy()
    asym[1, 2] = 5.0
    assert verify_metric_axioms(MatrixSet(asym), [(1, 2, 0)]).violation == "symmetry"


def test_points_csv_roundtrip(rng):
    pts = EuclideanSet(rng.normal(size=(12, 4)))
    buf = io.StringIO()
    write_points_csv(pts, buf)
    back = read_points_csv(io.StringIO(buf.getvalue()))
    assert np.array_equal(back.coords, pts.coords)


def test_points_csv_errors():
    with pytest.raises(InputError):
        read_points_csv(io.StringIO("id,x1\n0,1\n2,3\n"))
    with pytest.raises(InputError, match="duplicate point"):
        read_points_csv(io.StringIO("id,x1\n0,1\n1,1\n"))
    with pytest.raises(InputError):
        read_points_csv(io.StringIO("name,x\n0,1\n"))
    with pytest.raises(InputError):
        read_points_csv(io.StringIO("id,x1,x2\n0,1\n"))


def test_points_csv_rows_may_be_unordered():
    pts = read_points_csv(io.StringIO("id,x1\n1,5\n0,2\n"))
    assert pts.coords.ravel().tolist() == [2.0, 5.0]


def test_distance_matrix_export():
    graph = TrainLineGraph.doubling(4, ["p"])
    pts = GraphPointSet(graph, ["r", "p1", "p2"])
    buf = io.StringIO()
    write_distance_matrix_csv(pts, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "id_a,id_b,distance"
    assert len(lines) == 1 + 9
    assert "1,2,4" in lines
    with pytest.raises(InputError):
        write_distance_matrix_csv(pts, io.StringIO(), limit=2)
