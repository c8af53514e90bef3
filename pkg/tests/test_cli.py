import csv
import subprocess
import sys

import numpy as np
import pytest

from pairknn.cli import main
from pairknn.covertree import deserialize_tree, serialize_tree, validate_tree
from pairknn.fixtures import even_line_tree, four_point_line, powers_of_four
from pairknn.metric import EuclideanSet, read_points_csv, write_points_csv
from pairknn.traversal import STATS_COLUMNS


def write_points(path, pts):
    with open(path, "w", newline="") as fh:
        write_points_csv(pts, fh)
    return str(path)


@pytest.fixture
def random128(tmp_path):
    pts = EuclideanSet(np.random.default_rng(7).random((128, 3)))
    return write_points(tmp_path / "pts.csv", pts)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_build_with_given_levels(tmp_path):
    fx = even_line_tree()
    src = write_points(tmp_path / "line.csv", fx.points)
    sidecar = tmp_path / "levels.txt"
    sidecar.write_text(serialize_tree(fx.tree))
    out = tmp_path / "tree.cct"
    assert main(["build", "--input", src, "--given-levels", str(sidecar), "--out", str(out)]) == 0
    assert out.read_text() == serialize_tree(fx.tree)


def test_build_deterministic(tmp_path, random128):
    outs = []
    for name in ("a.cct", "b.cct"):
        assert main(["build", "--input", random128, "--seed", "7", "--out", str(tmp_path / name)]) == 0
        outs.append((tmp_path / name).read_text())
    assert outs[0] == outs[1]
    with open(random128, newline="") as fh:
        pts = read_points_csv(fh)
    assert validate_tree(deserialize_tree(outs[0], pts)).ok


def test_build_duplicate_row(tmp_path, capsys):
    path = tmp_path / "dup.csv"
    path.write_text("id,x1,x2\n0,1,2\n1,3,4\n2,1,2\n")
    assert main(["build", "--input", str(path)]) == 2
    assert "duplicate point" in capsys.readouterr().err


def test_knn_worked_example(tmp_path):
    src = write_points(tmp_path / "four.csv", four_point_line())
    out = tmp_path / "nn.csv"
    assert main(["knn", "--input", src, "--k", "3", "--out", str(out)]) == 0
    rows = [(r["query_id"], r["rank"], r["neighbor_id"], float(r["distance"])) for r in read_rows(out)]
    assert rows == [
        ("0", "1", "1", 1.0), ("0", "2", "2", 2.0), ("0", "3", "3", 3.0),
        ("1", "1", "0", 1.0), ("1", "2", "2", 1.0), ("1", "3", "3", 2.0),
        ("2", "1", "1", 1.0), ("2", "2", "3", 1.0), ("2", "3", "0", 2.0),
        ("3", "1", "2", 1.0), ("3", "2", "1", 2.0), ("3", "3", "0", 3.0),
    ]


def test_knn_verify_and_stats(tmp_path, random128):
    stats = tmp_path / "stats.txt"
    assert main(["knn", "--input", random128, "--k", "5", "--verify", "--stats", str(stats),
                 "--out", str(tmp_path / "nn.csv")]) == 0
    assert "reference_expansions=" in stats.read_text()


def test_knn_with_tree_file_and_query(tmp_path, random128):
    tree = tmp_path / "t.cct"
    assert main(["build", "--input", random128, "--out", str(tree)]) == 0
    q = write_points(tmp_path / "q.csv", EuclideanSet(np.random.default_rng(1).random((10, 3))))
    out = tmp_path / "nn.csv"
    assert main(["knn", "--input", random128, "--tree", str(tree), "--query", q, "--k", "2",
                 "--verify", "--out", str(out)]) == 0
    assert len(read_rows(out)) == 20


def test_knn_bad_k(tmp_path, capsys):
    src = write_points(tmp_path / "four.csv", four_point_line())
    assert main(["knn", "--input", src, "--k", "4"]) == 2
    assert main(["knn", "--input", src, "--k", "5", "--include-self"]) == 2
    assert main(["knn", "--input", src, "--k", "1", "--include-self", "--exclude-self"]) == 2
    assert main(["knn", "--input", src]) == 2
    assert main(["knn", "--input", str(tmp_path / "missing.csv"), "--k", "1"]) == 2


def test_validate(tmp_path, capsys):
    fx = even_line_tree()
    src = write_points(tmp_path / "line.csv", fx.points)
    good = tmp_path / "good.cct"
    good.write_text(serialize_tree(fx.tree))
    assert main(["validate", "--input", src, "--tree", str(good)]) == 0
    assert capsys.readouterr().out.startswith("valid: true")
    raised = even_line_tree({8: 3}, validate=False)
    bad = tmp_path / "bad.cct"
    bad.write_text(serialize_tree(raised.tree))
    assert main(["validate", "--input", src, "--tree", str(bad)]) == 3
    assert "valid: false" in capsys.readouterr().out


def test_analyze_powers_of_four(tmp_path, capsys):
    src = write_points(tmp_path / "p4.csv", powers_of_four())
    assert main(["analyze", "--input", src, "--build-tree"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert "c=8.0" in out
    assert any(line.startswith("height=") for line in out)


def test_gen_tall(tmp_path, capsys):
    assert main(["gen", "--variant", "tall-imbalanced", "--m", "8", "--out", str(tmp_path)]) == 0
    base = tmp_path / "tall-imbalanced_m8"
    assert "valid=true" in capsys.readouterr().out
    labels = read_rows(str(base) + "_points.csv")
    assert len(labels) == 65 and labels[0]["label"] == "r"
    matrix = read_rows(str(base) + "_matrix.csv")
    assert len(matrix) == 65 * 65
    assert (base.parent / "tall-imbalanced_m8.cct").read_text().startswith("#cct v1 n=65")


def test_gen_bichromatic_and_bad_m(tmp_path):
    assert main(["gen", "--variant", "bichromatic", "--m", "4", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "bichromatic_m4_query.cct").exists()
    assert (tmp_path / "bichromatic_m4_reference_matrix.csv").exists()
    assert main(["gen", "--variant", "bichromatic", "--m", "2", "--out", str(tmp_path)]) == 2


def test_legacy_self_pair(capsys):
    assert main(["legacy", "--variant", "tall-imbalanced", "--m", "8", "--self-pair"]) == 0
    out = capsys.readouterr().out
    assert "all neighbors trivial: true" in out


def test_legacy_bichromatic(capsys):
    assert main(["legacy", "--variant", "bichromatic", "--m", "6"]) == 0
    fields = dict(line.split("=", 1) for line in capsys.readouterr().out.splitlines() if "=" in line)
    assert int(fields["ref_expansions"]) >= int(fields["lower_bound"])


def test_bench(tmp_path, random128):
    out = tmp_path / "bench.csv"
    assert main(["bench", "--input", random128, "--k", "3", "--repeat", "2", "--seed", "1",
                 "--brute", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == ",".join(STATS_COLUMNS)
    assert len(lines) == 4
    assert lines[-1] == f"# brute_force_distance_calls={128 * 128}"


def test_study(tmp_path):
    out = tmp_path / "study.csv"
    assert main(["study", "--m-list", "4,5,6", "--out", str(out)]) == 0
    assert out.read_text().splitlines()[-1].startswith("# fitted log-log slope")
    assert main(["study", "--m-list", "4,x"]) == 2


def test_unknown_command():
    assert main(["frobnicate"]) == 2
    assert main([]) == 2


def test_roundtrip_byte_identity(tmp_path, random128):
    tree = tmp_path / "t.cct"
    assert main(["build", "--input", random128, "--out", str(tree)]) == 0
    again = tmp_path / "again.cct"
    assert main(["build", "--input", random128, "--given-levels", str(tree), "--out", str(again)]) == 0
    assert tree.read_bytes() == again.read_bytes()


def test_module_entry_point(tmp_path):
    src = write_points(tmp_path / "four.csv", four_point_line())
    proc = subprocess.run([sys.executable, "-m", "pairknn", "knn", "--input", src, "--k", "1"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.splitlines()[0] == "query_id,rank,neighbor_id,distance"
