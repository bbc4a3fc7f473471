"""Brute-force reference implementations for property and acceptance tests.

Everything here is deliberately simple (linear scans, dense graphs) and
shares no code with the engine modules beyond primitive vector math, so
a bug in the engine cannot hide in its own oracle.  The arithmetic used
for comparisons (squared distances of float64 positions) matches the
engine's, making equality checks definitional rather than approximate.

The slab lattice rule is replicated here on purpose: intervals of width
2h anchored so the first inserted coordinate per axis sits at a slab
center, membership by half-open interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree


@dataclass
class OracleScene:
    """Flat per-point data in insertion order; no index structures."""

    positions: np.ndarray
    features: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)


def slab_index(coordinate: float, anchor: float, h: float) -> int:
    """Lattice slab index: width 2h, anchor at a slab center, half-open."""
    return math.floor((coordinate - anchor + h) / (2.0 * h))


def slab_triples(positions: np.ndarray, h: float) -> np.ndarray:
    """Slab triples of every point, anchored at the first point."""
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    if pos.shape[0] == 0:
        return np.empty((0, 3), dtype=np.int64)
    anchors = pos[0]
    return np.floor((pos - anchors + h) / (2.0 * h)).astype(np.int64)


def _query_triple(q, positions: np.ndarray, h: float) -> np.ndarray:
    anchors = np.asarray(positions, dtype=np.float64).reshape(-1, 3)[0]
    q = np.asarray(q, dtype=np.float64)
    return np.floor((q - anchors + h) / (2.0 * h)).astype(np.int64)


def brute_neighborhood(q, positions: np.ndarray, h: float) -> set[int]:
    """Indices of points sharing all three slabs with q, by linear scan."""
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    if pos.shape[0] == 0:
        return set()
    triples = slab_triples(pos, h)
    qt = _query_triple(q, pos, h)
    hit = np.all(triples == qt, axis=1)
    return set(int(i) for i in np.flatnonzero(hit))


def brute_extended_neighborhood(q, positions: np.ndarray, h: float) -> set[int]:
    """Indices of points in the 3x3x3 slab block around q."""
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    if pos.shape[0] == 0:
        return set()
    triples = slab_triples(pos, h)
    qt = _query_triple(q, pos, h)
    hit = np.all(np.abs(triples - qt) <= 1, axis=1)
    return set(int(i) for i in np.flatnonzero(hit))


def brute_correspond(q, positions: np.ndarray, delta: float) -> Optional[int]:
    """Nearest point within delta over the whole cloud; ties to smaller index."""
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    if pos.shape[0] == 0:
        return None
    q = np.asarray(q, dtype=np.float64)
    d2 = ((pos - q) ** 2).sum(axis=1)
    within = d2 <= delta * delta
    if not np.any(within):
        return None
    idx = np.flatnonzero(within)
    order = np.lexsort((idx, d2[idx]))
    return int(idx[order[0]])


def brute_octree_children(
    p: int, positions: np.ndarray, child_dist: float, h: float
) -> list[Optional[int]]:
    """Nearest point per Cartesian quadrant of p, scanned exhaustively.

    Candidates are restricted to the extended (3x3x3 slab block)
    neighborhood of p, admitted strictly below child_dist; zero offset
    components count as positive; ties go to the smaller index.
    """
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    children: list[Optional[int]] = [None] * 8
    best_d2 = [math.inf] * 8
    cand = brute_extended_neighborhood(pos[p], pos, h)
    for i in sorted(cand):
        if i == p:
            continue
        off = pos[i] - pos[p]
        d2 = float((off * off).sum())
        if d2 >= child_dist * child_dist:
            continue
        quad = int((off[0] >= 0) * 4 + (off[1] >= 0) * 2 + (off[2] >= 0))
        if d2 < best_d2[quad]:
            best_d2[quad] = d2
            children[quad] = i
    return children


def brute_ring(p: int, children_of, n: int) -> set[int]:
    """Breadth-first expansion to depth n over octree child links."""
    members = {p}
    frontier = [p]
    for _ in range(n):
        nxt = []
        for x in frontier:
            for c in children_of(x):
                if c is not None and c not in members:
                    members.add(c)
                    nxt.append(c)
        frontier = nxt
    return members


def brute_geodesic(p: int, q: int, positions: np.ndarray, radius: float) -> Optional[float]:
    """Shortest-path length over the dense radius graph, or None.

    Connects every pair of points within `radius` and runs Dijkstra; a
    dense sampling of a surface makes this a good stand-in for the true
    geodesic distance along that surface.
    """
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    n = pos.shape[0]
    if p == q:
        return 0.0
    tree = cKDTree(pos)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    if pairs.shape[0] == 0:
        return None
    w = np.sqrt(((pos[pairs[:, 0]] - pos[pairs[:, 1]]) ** 2).sum(axis=1))
    rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
    graph = coo_matrix((np.concatenate([w, w]), (rows, cols)), shape=(n, n)).tocsr()
    dist = dijkstra(graph, directed=False, indices=p, min_only=False)
    d = float(dist[q])
    return d if math.isfinite(d) else None


# -- structural validation ----------------------------------------------------


def validate_red_black(tree) -> None:
    """Independent structural walk of one axis tree.

    Raises AssertionError on any violated red-black or interval property:
    root black, no red child of a red node, equal black count on every
    root-to-leaf path, strictly increasing disjoint slab keys in order,
    consistent parent links, and height <= 2*log2(slabs + 1).
    """
    root = tree.root
    if root is None:
        return
    assert root.color == "black", "root must be black"
    assert root.parent is None, "root must not have a parent"

    keys = []
    black_heights = set()

    def walk(node, black_count):
        if node is None:
            black_heights.add(black_count)
            return
        if node.color == "red":
            for child in (node.left, node.right):
                assert child is None or child.color == "black", "red node with red child"
        else:
            black_count += 1
        for child in (node.left, node.right):
            if child is not None:
                assert child.parent is node, "broken parent link"
        walk(node.left, black_count)
        keys.append(node.key)
        lo, hi = node.interval
        assert hi > lo, "empty interval"
        walk(node.right, black_count)

    walk(root, 0)
    assert len(black_heights) == 1, f"unequal black heights: {sorted(black_heights)}"
    assert all(a < b for a, b in zip(keys, keys[1:])), "in-order keys not strictly increasing"

    def height(node):
        if node is None:
            return -1
        return 1 + max(height(node.left), height(node.right))

    n = len(keys)
    assert height(root) <= 2 * math.log2(n + 1), "height exceeds red-black bound"


def validate_population(global_index, n_points: int) -> None:
    """Every id in [0, n_points) sits in exactly one slab per axis and in a
    slab whose lattice index matches the point's coordinate."""
    for axis in range(3):
        t = global_index.tree(axis)
        seen: dict[int, int] = {}
        for node in t.nodes():
            for p in node.point_ids:
                assert p not in seen, f"point {p} stored in two slabs on axis {axis}"
                seen[p] = node.key
                coord = float(global_index.positions[p][axis])
                assert t.slab_index(coord) == node.key, (
                    f"point {p} coordinate {coord} outside its slab on axis {axis}"
                )
        assert len(seen) == n_points, f"axis {axis} holds {len(seen)} of {n_points} points"
