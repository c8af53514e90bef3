"""Small hand-built trees used by tests, the CLI and the README.

Points on the real line are stored by coordinate; ``LineTree.id_of`` maps a
coordinate back to its dense id.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covertree import CompressedCoverTree, from_levels
from .metric import EuclideanSet, GraphPointSet, TrainLineGraph


@dataclass
class LineTree:
    values: list
    points: EuclideanSet
    tree: CompressedCoverTree

    def id_of(self, value) -> int:
        return self.values.index(value)

    def value_of(self, pid: int):
        return self.values[pid]

    def ids(self, values) -> set[int]:
        return {self.id_of(v) for v in values}

    def vals(self, ids) -> set:
        return {self.values[i] for i in ids}


def line_points(values) -> EuclideanSet:
    return EuclideanSet(np.asarray(values, dtype=float).reshape(-1, 1))


def line_tree(levels: dict, parents: dict, validate: bool = True) -> LineTree:
    """Tree on points of the real line given ``value -> level`` and ``value -> parent value``."""
    values = sorted(levels)
    pts = line_points(values)
    lev = [levels[v] for v in values]
    par = [None if parents.get(v) is None else values.index(parents[v]) for v in values]
    return LineTree(values, pts, from_levels(pts, lev, par, validate=validate))


def four_point_line() -> EuclideanSet:
    """``{0, 1, 2, 3}``; ids equal coordinates."""
    return line_points([0, 1, 2, 3])


def five_point_tree() -> LineTree:
    """``{1..5}`` with root 1 at level 2, 5 at 1, 3 at 0 and 2, 4 at -1."""
    return line_tree({1: 2, 5: 1, 3: 0, 2: -1, 4: -1}, {5: 1, 3: 1, 2: 3, 4: 3})


def seven_point_tree() -> LineTree:
    """The five-point tree plus 7 (level 0) and 6 (level -1), both under 5."""
    return line_tree({1: 2, 5: 1, 3: 0, 7: 0, 2: -1, 4: -1, 6: -1},
                     {5: 1, 3: 1, 7: 5, 6: 5, 2: 3, 4: 3})


EVEN_LINE_LEVELS = {16: 3, 8: 2, 24: 2, 4: 1, 12: 1, 20: 1, 28: 1}
EVEN_LINE_PARENTS = {8: 16, 24: 16, 4: 8, 12: 8, 20: 24, 28: 24,
                     2: 4, 6: 4, 10: 12, 14: 12, 18: 20, 22: 20, 26: 28, 30: 28}


def even_line_tree(levels_override: dict | None = None, validate: bool = True) -> LineTree:
    """``{2, 4, ..., 30}`` with root 16; levels follow the powers of two dividing each point."""
    levels = {v: EVEN_LINE_LEVELS.get(v, 0) for v in range(2, 31, 2)}
    levels.update(levels_override or {})
    return line_tree(levels, EVEN_LINE_PARENTS, validate=validate)


def short_train_line(short_edge: int = 16, validate: bool = True):
    """Five points on a graph with hub edges of lengths ``short_edge`` and 64.

    ``p2`` is the midpoint of the short edge, ``p1`` halves the way from
    ``p2`` to the hub ``q``; ``p4`` and ``p3`` do the same on the long edge.
    The root ``r`` parents ``p2`` and ``p4``. With ``short_edge=16`` the tree
    is valid; with 8 the short-edge points sit too close to ``r`` and to each
    other.
    """
    graph = TrainLineGraph(2, {"p": [short_edge, 64]})
    pts = GraphPointSet(graph, ["r", "p1", "p2", "p3", "p4"])
    levels = [5, 1, 2, 3, 4]
    parents = [None, 2, 0, 4, 0]
    return pts, from_levels(pts, levels, parents, validate=validate)


def powers_of_four(n: int = 8) -> EuclideanSet:
    return line_points([4.0**i for i in range(1, n + 1)])


def unit_grid(n: int = 64) -> EuclideanSet:
    return line_points(list(range(1, n + 1)))
