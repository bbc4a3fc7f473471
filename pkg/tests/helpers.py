"""Shared helpers for the test suite."""

import numpy as np


def min_separated_cloud(n, min_sep, extent=1.0, seed=0):
    """Uniform random points with pairwise distance >= min_sep.

    Rejection sampling against a hash grid; used wherever octrees must
    equal the per-quadrant brute oracle (points closer than the octree
    merge radius would legitimately share a donor octree instead).
    """
    rng = np.random.default_rng(seed)
    cell = float(min_sep)
    grid = {}
    pts = []
    attempts = 0
    limit = n * 500
    while len(pts) < n and attempts < limit:
        attempts += 1
        p = rng.uniform(0.0, extent, 3)
        key = tuple(int(v) for v in p // cell)
        ok = True
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                for dk in (-1, 0, 1):
                    for q in grid.get((key[0] + di, key[1] + dj, key[2] + dk), ()):
                        d = p - q
                        if (d * d).sum() < min_sep * min_sep:
                            ok = False
                            break
                    if not ok:
                        break
                if not ok:
                    break
            if not ok:
                break
        if ok:
            grid.setdefault(key, []).append(p)
            pts.append(p)
    if len(pts) < n:
        raise RuntimeError(f"could not place {n} points at separation {min_sep}")
    return np.asarray(pts)


def build_indexed(points, **octree_kw):
    """GlobalIndex + OctreeIndex over a cloud, inserted in order, batch-registered."""
    from fawcon import GlobalIndex, OctreeIndex

    gi = GlobalIndex()
    for i, p in enumerate(points):
        gi.insert(i, p)
    oc = OctreeIndex(gi, **octree_kw)
    oc.register_insertions(np.arange(len(points)))
    return gi, oc


def effective_children_snapshot(oc, n):
    """List of per-point child tuples for equality comparisons."""
    return [oc.octree(p).children for p in range(n)]
