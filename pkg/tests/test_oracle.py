import math

import numpy as np
import pytest

from fawcon import oracle
from fawcon.synth import closed_form_geodesic, gen_cylinder


def test_brute_neighborhood_empty_cloud():
    assert oracle.brute_neighborhood([0, 0, 0], np.empty((0, 3)), 0.04) == set()


def test_brute_neighborhood_contains_coincident_point():
    pts = np.array([[0.3, 0.3, 0.3]])
    assert oracle.brute_neighborhood([0.3, 0.3, 0.3], pts, 0.04) == {0}


def test_brute_correspond_none_and_tie():
    pts = np.array([[0.0, 0.0, 0.0], [0.02, 0.0, 0.0]])
    assert oracle.brute_correspond([0.5, 0.5, 0.5], pts, 0.01) is None
    assert oracle.brute_correspond([0.01, 0.0, 0.0], pts, 0.01) == 0  # tie: smaller id


def test_brute_octree_children_isolated_and_single():
    pts = np.array([[0.0, 0.0, 0.0]])
    assert oracle.brute_octree_children(0, pts, 0.08, 0.04) == [None] * 8
    pts = np.array([[0.0, 0.0, 0.0], [0.02, 0.02, 0.02]])
    children = oracle.brute_octree_children(0, pts, 0.08, 0.04)
    assert children[7] == 1
    assert children[:7] == [None] * 7


def test_brute_geodesic_trivial_and_collinear():
    pts = np.array([[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [0.2, 0.0, 0.0], [0.35, 0.0, 0.0]])
    assert oracle.brute_geodesic(0, 0, pts, 0.2) == 0.0
    # sum of gaps along the line
    assert oracle.brute_geodesic(0, 3, pts, 0.16) == pytest.approx(0.35, rel=1e-12)
    # disconnect when the radius is below the largest gap
    assert oracle.brute_geodesic(0, 3, pts, 0.12) is None


def test_brute_geodesic_matches_closed_form_on_cylinder():
    scene = gen_cylinder(radius=0.4, length=0.6, spacing=0.02, frames=1, seed=0)
    pos = scene.frames[0].positions
    rng = np.random.default_rng(5)
    rel_errors = []
    for _ in range(12):
        p, q = rng.integers(0, len(pos), 2)
        want = closed_form_geodesic(scene.sidecar, pos[p], pos[q])
        got = oracle.brute_geodesic(int(p), int(q), pos, radius=0.05)
        if want < 0.05:
            continue
        rel_errors.append(abs(got - want) / want)
    assert rel_errors and max(rel_errors) < 0.05
