import math

import numpy as np
import pytest
from helpers import build_indexed, effective_children_snapshot, min_separated_cloud

from fawcon import GlobalIndex, OctreeIndex, UnknownPointError, quadrant_of
from fawcon import oracle


def test_isolated_point_all_children_empty():
    gi, oc = build_indexed([[0.0, 0.0, 0.0]])
    t = oc.octree(0)
    assert t.children == (None,) * 8
    assert t.child_distance == (None,) * 8


def test_single_neighbor_quadrant_and_distance():
    gi, oc = build_indexed([[0.0, 0.0, 0.0], [0.02, 0.02, 0.02]])
    t = oc.octree(0)
    quad = quadrant_of([0.02, 0.02, 0.02])
    assert quad == 7
    assert t.children[quad] == 1
    assert t.children[:7] == (None,) * 7
    assert abs(t.child_distance[quad] - math.sqrt(3) * 0.02) < 1e-12


def test_zero_offset_components_count_positive():
    assert quadrant_of([0.0, 0.0, 0.0]) == 7
    assert quadrant_of([-1.0, 0.0, 1.0]) == 3
    gi, oc = build_indexed([[0.0, 0.0, 0.0], [0.03, 0.0, 0.0]], merge_radius=0.0)
    # offset (+0.03, 0, 0): zero y/z treated as positive
    assert oc.octree(0).children[7] == 1
    # reverse offset (-0.03, +0, +0)
    assert oc.octree(1).children[3] == 0


def test_children_respect_threshold():
    gi, oc = build_indexed([[0.0, 0.0, 0.0], [0.09, 0.0, 0.0]])
    # 0.09 > child_dist 0.08: adjacent slab, but too far to be a child
    assert oc.octree(0).children == (None,) * 8
    assert oc.octree(1).children == (None,) * 8


def test_children_match_brute_oracle_random_clouds():
    for seed in range(3):
        pts = min_separated_cloud(300, 0.045, extent=0.8, seed=seed)
        gi, oc = build_indexed(pts)
        for p in range(len(pts)):
            got = oc.octree(p).children
            want = tuple(oracle.brute_octree_children(p, pts, oc.child_dist, gi.half_width))
            assert got == want, f"seed {seed} point {p}"


def test_unknown_point_errors():
    gi, oc = build_indexed([[0.0, 0.0, 0.0]])
    with pytest.raises(UnknownPointError):
        oc.build_octree(5)
    with pytest.raises(UnknownPointError):
        oc.ring(5, 1)
    with pytest.raises(UnknownPointError):
        oc.trace_path(0, 5)


def test_insertion_updates_nearer_child():
    gi = GlobalIndex()
    gi.insert(0, [0.0, 0.0, 0.0])
    gi.insert(1, [0.04, 0.04, 0.04])
    oc = OctreeIndex(gi, merge_radius=0.0)
    oc.register_insertions([0, 1])
    assert oc.octree(0).children[7] == 1
    gi.insert(2, [0.02, 0.02, 0.02])
    rebuilt = oc.rebuild_affected(2)
    assert {0, 1, 2} <= rebuilt
    assert oc.octree(0).children[7] == 2  # closer (+,+,+) child replaces the old one


def test_incremental_equals_batch_rebuild():
    pts = min_separated_cloud(220, 0.045, extent=0.7, seed=9)
    # incremental: one rebuild_affected per insertion
    gi_inc = GlobalIndex()
    oc_inc = OctreeIndex(gi_inc)
    for i, p in enumerate(pts):
        gi_inc.insert(i, p)
        oc_inc.rebuild_affected(i)
    # batch: register everything once
    gi_b, oc_b = build_indexed(pts)
    assert effective_children_snapshot(oc_inc, len(pts)) == effective_children_snapshot(
        oc_b, len(pts)
    )


def test_incremental_equals_batch_with_merge_shortcut():
    # dense cloud: donors fire; final structure must still be order-independent
    rng = np.random.default_rng(4)
    pts = rng.uniform(0, 0.3, (150, 3))
    gi_inc = GlobalIndex()
    oc_inc = OctreeIndex(gi_inc)
    for i, p in enumerate(pts):
        gi_inc.insert(i, p)
        oc_inc.rebuild_affected(i)
    gi_b, oc_b = build_indexed(pts)
    assert effective_children_snapshot(oc_inc, len(pts)) == effective_children_snapshot(
        oc_b, len(pts)
    )
    for p in range(len(pts)):
        assert oc_inc.anchor_of(p) == oc_b.anchor_of(p)


def test_merge_shortcut_reuses_donor_children():
    pts = [[0.0, 0.0, 0.0], [0.02, 0.0, 0.0], [0.0, 0.03, 0.0]]
    gi, oc = build_indexed(pts)
    assert oc.anchor_of(0) == 0
    assert oc.anchor_of(1) == 0  # within 0.04 of an older point
    assert oc.anchor_of(2) == 0
    assert oc.octree(1).children == oc.octree(0).children
    assert oc.octree(1).center == 1


def test_merge_shortcut_strictly_below_radius():
    gi, oc = build_indexed([[0.0, 0.0, 0.0], [0.04, 0.0, 0.0]])
    # exactly at the merge radius: no donor
    assert oc.anchor_of(1) == 1


def test_ring_isolated_point():
    gi, oc = build_indexed([[0.0, 0.0, 0.0]])
    for n in (1, 2, 5):
        assert oc.ring(0, n).members == {0}


def test_ring_chain_unrolls():
    # p -> a -> b along x, spaced 0.05 (< child_dist) apart
    gi, oc = build_indexed(
        [[0.0, 0.0, 0.0], [0.05, 0.0, 0.0], [0.10, 0.0, 0.0]], merge_radius=0.0
    )
    assert oc.ring(0, 1).members == {0, 1}
    assert oc.ring(0, 2).members == {0, 1, 2}


def test_ring_matches_bfs_oracle_and_monotone():
    pts = min_separated_cloud(250, 0.045, extent=0.6, seed=2)
    gi, oc = build_indexed(pts)

    def children_of(p):
        return oc.octree(p).children

    prev = None
    for n in (1, 2, 3):
        for p in range(0, len(pts), 11):
            assert oc.ring(p, n).members == oracle.brute_ring(p, children_of, n)
        sizes = [len(oc.ring(p, n).members) for p in range(len(pts))]
        if prev is not None:
            assert all(a <= b for a, b in zip(prev, sizes))
        prev = sizes


def test_ring_members_flat_matches_single():
    pts = min_separated_cloud(150, 0.045, extent=0.5, seed=6)
    gi, oc = build_indexed(pts)
    ids = np.arange(len(pts), dtype=np.int64)
    for n in (1, 2, 3):
        rows, members = oc.ring_members_flat(ids, n)
        for p in range(len(pts)):
            got = set(members[rows == p].tolist())
            assert got == set(oc.ring(p, n).members)


def test_ring_order_invariance_under_insertion_order():
    pts = min_separated_cloud(120, 0.05, extent=0.5, seed=8)
    perm = np.random.default_rng(1).permutation(len(pts))
    gi_a, oc_a = build_indexed(pts)
    gi_b, oc_b = build_indexed(pts[perm])
    # map: point at pts[i] has id i in A and position perm^-1 in B
    inv = np.argsort(perm)
    for i in range(len(pts)):
        ring_a = {tuple(pts[m]) for m in oc_a.ring(i, 2).members}
        ring_b = {tuple(pts[perm][m]) for m in oc_b.ring(int(inv[i]), 2).members}
        assert ring_a == ring_b


def _two_plane_cloud(gap=0.2, spacing=0.02, side=0.24):
    n = int(round(side / spacing))
    u = (np.arange(n) + 0.5) * spacing
    xx, yy = np.meshgrid(u, u, indexing="ij")
    plane0 = np.column_stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)])
    plane1 = plane0 + [0.0, 0.0, gap]
    return np.vstack([plane0, plane1]), plane0.shape[0]


def test_no_path_across_gap():
    pts, n0 = _two_plane_cloud()
    gi, oc = build_indexed(pts)
    # no octree edge crosses the gap (gap exceeds child_dist)
    for p in range(len(pts)):
        for c in oc.octree(p).present():
            assert (p < n0) == (c < n0)
    assert oc.trace_path(0, n0) is None
    same_plane = oc.trace_path(0, n0 - 1)
    assert same_plane is not None


def test_trace_path_identity_and_bounds():
    pts = min_separated_cloud(150, 0.045, extent=0.4, seed=3)
    gi, oc = build_indexed(pts)
    assert oc.trace_path(5, 5) == ([5], 0.0)
    rng = np.random.default_rng(0)
    for _ in range(30):
        p, q = rng.integers(0, len(pts), 2)
        res = oc.trace_path(int(p), int(q))
        rev = oc.trace_path(int(q), int(p))
        assert (res is None) == (rev is None)  # undirected reachability
        if res is not None:
            path, length = res
            assert path[0] == p and path[-1] == q
            straight = float(np.linalg.norm(pts[p] - pts[q]))
            assert length >= straight - 1e-12
            assert abs(rev[1] - length) < 1e-9
            # consecutive path nodes are linked by an octree edge
            for a, b in zip(path, path[1:]):
                ca = set(oc.octree(a).present())
                cb = set(oc.octree(b).present())
                assert b in ca or a in cb
