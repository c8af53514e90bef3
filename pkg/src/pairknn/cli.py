"""Command-line front end.

Exit codes: 0 success, 2 bad input, 3 a verification check failed.
"""
from __future__ import annotations

import argparse
import contextlib
import io
import os
import sys

from . import analysis
from .covertree import build_tree, deserialize_tree, height_set, serialize_tree, validate_tree
from .errors import InputError, VerificationError
from .knn import knn_bruteforce, knn_paired
from .metric import read_points_csv, write_distance_matrix_csv
from .traversal import STATS_COLUMNS, expansion_bound

EXIT_OK, EXIT_INPUT, EXIT_VERIFY = 0, 2, 3


@contextlib.contextmanager
def _sink(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _read_text(path) -> str:
    try:
        with open(path) as fh:
            return fh.read()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def _load_points(path):
    if path is None:
        raise InputError("--input is required")
    try:
        with open(path, newline="") as fh:
            return read_points_csv(fh)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def _parse_given_levels(text: str, points):
    """Sidecar with ``id level parent_id`` lines; a '#cct' header is optional."""
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    levels, parents = {}, {}
    for lineno, ln in enumerate(lines, start=1):
        parts = ln.split()
        if len(parts) != 3:
            raise InputError(f"given-levels line {lineno}: expected 'id level parent_id'")
        try:
            p = int(parts[0])
            levels[p] = int(parts[1])
            parents[p] = None if parts[2] == "-" else int(parts[2])
        except ValueError:
            raise InputError(f"given-levels line {lineno}: malformed fields") from None
    if set(levels) != set(range(points.n)):
        raise InputError("tree/point-set mismatch")
    return levels, parents


def _tree_for(points, tree_path=None, seed=None):
    if tree_path:
        return deserialize_tree(_read_text(tree_path), points)
    return build_tree(points, seed=seed)


def cmd_build(args) -> int:
    points = _load_points(args.input)
    if args.given_levels:
        levels, parents = _parse_given_levels(_read_text(args.given_levels), points)
        tree = build_tree(points, levels=levels, parents=parents)
    else:
        tree = build_tree(points, seed=args.seed)
    with _sink(args.out) as fh:
        fh.write(serialize_tree(tree))
    return EXIT_OK


def cmd_knn(args) -> int:
    ref = _load_points(args.input)
    treeR = _tree_for(ref, args.tree, args.seed)
    if args.query:
        query = _load_points(args.query)
        treeQ = build_tree(query, seed=args.seed)
    else:
        query, treeQ = ref, treeR
    if args.include_self:
        exclude = False
    elif args.exclude_self:
        exclude = True
    else:
        exclude = None
    result, stats = knn_paired(treeQ, treeR, args.k, exclude_self=exclude, verify=args.verify)
    with _sink(args.out) as fh:
        result.to_csv(fh)
    if args.stats:
        with open(args.stats, "w") as fh:
            fh.write(stats.to_text())
    return EXIT_OK


def cmd_validate(args) -> int:
    points = _load_points(args.input)
    if not args.tree:
        raise InputError("--tree is required")
    tree = deserialize_tree(_read_text(args.tree), points, validate=False)
    report = validate_tree(tree)
    with _sink(args.out) as fh:
        fh.write(f"valid: {str(report.ok).lower()}\n")
        for v in report.violations:
            fh.write(f"{v}\n")
        for i in sorted(report.min_separation, reverse=True):
            fh.write(f"min_separation[{i}]={report.min_separation[i]!r}\n")
    return EXIT_OK if report.ok else EXIT_VERIFY


def cmd_analyze(args) -> int:
    points = _load_points(args.input)
    rep = analysis.expansion_constant(points)
    lines = [f"n={points.n}", f"c={rep.c!r}", f"witness_center={rep.witness[0]}", f"witness_radius={rep.witness[1]!r}"]
    diam, dmin, delta = analysis.aspect_ratio(points)
    lines += [f"diameter={diam!r}", f"min_distance={dmin!r}", f"aspect_ratio={delta!r}"]
    if args.tree or args.build_tree:
        tree = _tree_for(points, args.tree, args.seed)
        lines.append(f"height={len(height_set(tree))}")
    with _sink(args.out) as fh:
        fh.write("\n".join(lines) + "\n")
    return EXIT_OK


def _generate(variant, m):
    if m is None:
        raise InputError("--m is required")
    if variant == "tall-imbalanced":
        return analysis.gen_tall_imbalanced(m)
    if variant == "bichromatic":
        return analysis.gen_bichromatic(m)
    raise InputError(f"unknown variant {variant!r}")


def _write_graph_set(points, tree, prefix):
    with open(prefix + "_points.csv", "w", newline="") as fh:
        fh.write("id,label\n")
        for i, lab in enumerate(points.labels):
            fh.write(f"{i},{lab}\n")
    with open(prefix + ".cct", "w") as fh:
        fh.write(serialize_tree(tree))
    with open(prefix + "_matrix.csv", "w", newline="") as fh:
        write_distance_matrix_csv(points, fh)


def cmd_gen(args) -> int:
    data = _generate(args.variant, args.m)
    outdir = args.out or "."
    os.makedirs(outdir, exist_ok=True)
    base = os.path.join(outdir, f"{args.variant}_m{args.m}")
    if data.query is None:
        sets = [("", data.reference, data.reference_tree)]
    else:
        sets = [("_query", data.query, data.query_tree), ("_reference", data.reference, data.reference_tree)]
    for suffix, pts, tree in sets:
        _write_graph_set(pts, tree, base + suffix)
        ok = validate_tree(tree).ok
        print(f"{base + suffix}: n={pts.n} valid={str(ok).lower()}")
        if not ok:
            return EXIT_VERIFY
    return EXIT_OK


def cmd_legacy(args) -> int:
    data = _generate(args.variant, args.m)
    if args.self_pair:
        TQ, TR, Q = data.reference_tree, data.reference_tree, data.reference
    else:
        TQ, TR, Q = data.TQ, data.reference_tree, data.Q
    res = analysis.legacy_findallnn(TQ, TR)
    lines = [
        f"variant={args.variant}",
        f"m={args.m}",
        f"queries={Q.n}",
        f"all neighbors trivial: {str(res.all_trivial()).lower()}",
        f"ref_expansions={res.stats.reference_expansions}",
        f"lower_bound={analysis.legacy_lower_bound(args.m)}",
        f"imbalance_bound={expansion_bound(TQ, TR)}",
    ]
    with _sink(args.out) as fh:
        fh.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_bench(args) -> int:
    ref = _load_points(args.input)
    query = _load_points(args.query) if args.query else ref
    with _sink(args.out) as fh:
        fh.write(",".join(STATS_COLUMNS) + "\n")
        for run in range(args.repeat):
            seed = None if args.seed is None else args.seed + run
            treeR = build_tree(ref, seed=seed)
            treeQ = treeR if query is ref else build_tree(query, seed=seed)
            _, stats = knn_paired(treeQ, treeR, args.k, verify=args.verify)
            fh.write(stats.to_csv(header=False))
        if args.brute:
            start = ref.counter.calls
            knn_bruteforce(query, ref, args.k)
            fh.write(f"# brute_force_distance_calls={ref.counter.calls - start}\n")
    return EXIT_OK


def cmd_study(args) -> int:
    try:
        ms = [int(v) for v in args.m_list.split(",") if v.strip()]
    except ValueError:
        raise InputError("--m-list must be comma-separated integers") from None
    result = analysis.expansion_growth_study(args.variant, ms)
    with _sink(args.out) as fh:
        fh.write(result.to_csv())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pairknn", description="Exact all-k-nearest-neighbors on compressed cover trees")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, k=False):
        p.add_argument("--input", help="points CSV (id,x1,...,xd)")
        p.add_argument("--out", help="output path (default: stdout)")
        p.add_argument("--metric", choices=["l2"], default="l2")
        p.add_argument("--seed", type=int, default=None, help="seed for the insertion order")
        if k:
            p.add_argument("--k", type=int, required=True)
            p.add_argument("--query", help="query points CSV (default: the input points)")
            p.add_argument("--verify", action="store_true", help="run oracle checks during the search")

    p = sub.add_parser("build", help="build a tree file from points")
    common(p)
    p.add_argument("--given-levels", help="file of 'id level parent_id' lines to use verbatim")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("knn", help="all k nearest neighbors")
    common(p, k=True)
    p.add_argument("--tree", help="reference tree file (default: build one)")
    p.add_argument("--exclude-self", action="store_true", help="never report a query point as its own neighbor")
    p.add_argument("--include-self", action="store_true", help="allow self matches when queries are the input")
    p.add_argument("--stats", help="write traversal counters to this file")
    p.set_defaults(func=cmd_knn)

    p = sub.add_parser("validate", help="check a tree file against its points")
    common(p)
    p.add_argument("--tree")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("analyze", help="expansion constant and aspect ratio")
    common(p)
    p.add_argument("--tree")
    p.add_argument("--build-tree", action="store_true", help="also report the height of a built tree")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("gen", help="write a generated train-line dataset")
    p.add_argument("--variant", choices=["tall-imbalanced", "bichromatic"], required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("legacy", help="run the legacy dual-tree search on a generated dataset")
    p.add_argument("--variant", choices=["tall-imbalanced", "bichromatic"], required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--self-pair", action="store_true", help="use the reference tree as the query tree")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_legacy)

    p = sub.add_parser("bench", help="traversal counters per run as CSV")
    common(p, k=True)
    p.add_argument("--repeat", type=int, default=1)
    p.add_argument("--brute", action="store_true", help="also report brute-force distance calls")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("study", help="legacy expansion growth over several m")
    p.add_argument("--variant", choices=["tall-imbalanced", "bichromatic"], default="bichromatic")
    p.add_argument("--m-list", default="6,8,10,12,14")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_study)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    if getattr(args, "include_self", False) and getattr(args, "exclude_self", False):
        print("error: --include-self and --exclude-self are exclusive", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except VerificationError as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
