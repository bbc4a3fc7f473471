import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fawcon import DimensionError, DomainError, SceneStore, UnknownPointError
from fawcon.store import HEAD_FEATURE_DIM


def make_store(dim=4, classes=3):
    return SceneStore(feature_dim=dim, num_classes=classes)


def test_ids_are_dense_and_consecutive():
    s = make_store()
    assert s.allocate_point([0, 0, 0], [1, 2, 3, 4]) == 0
    assert s.allocate_point([1, 0, 0], [0, 0, 0, 0]) == 1
    assert len(s) == 2


def test_allocate_rejects_wrong_dimension():
    s = SceneStore(feature_dim=8, num_classes=2)
    with pytest.raises(DimensionError):
        s.allocate_point([0, 0, 0], np.zeros(7))


def test_allocate_rejects_nonfinite():
    s = make_store()
    with pytest.raises(DomainError):
        s.allocate_point([np.nan, 0, 0], [0, 0, 0, 0])
    with pytest.raises(DomainError):
        s.allocate_point([0, 0, 0], [np.inf, 0, 0, 0])


def test_merge_examples():
    s = SceneStore(feature_dim=2, num_classes=2)
    p = s.allocate_point([0, 0, 0], [1.0, 2.0])
    assert np.array_equal(s.merge_observation(p, [1.0, 2.0]), [1.0, 2.0])
    s2 = SceneStore(feature_dim=2, num_classes=2)
    q = s2.allocate_point([0, 0, 0], [1.0, 5.0])
    assert np.array_equal(s2.merge_observation(q, [3.0, 0.0]), [3.0, 5.0])


def test_merge_unknown_id():
    s = make_store()
    with pytest.raises(UnknownPointError):
        s.merge_observation(0, [0, 0, 0, 0])


@given(st.lists(st.lists(st.floats(-100, 100), min_size=4, max_size=4), min_size=1, max_size=10),
       st.randoms())
@settings(deadline=None, max_examples=50)
def test_merge_order_invariance(vectors, rnd):
    """Fused feature equals the brute element-wise max, in any merge order."""
    shuffled = list(vectors)
    rnd.shuffle(shuffled)
    results = []
    for order in (vectors, list(reversed(vectors)), shuffled):
        s = make_store()
        p = s.allocate_point([0, 0, 0], order[0])
        for v in order[1:]:
            s.merge_observation(p, v)
        results.append(s.fused_feature(p))
    brute = np.max(np.asarray(vectors, dtype=float), axis=0)
    for r in results:
        assert np.array_equal(r, brute)


def test_record_best_first_always_wins():
    s = make_store()
    p = s.allocate_point([0, 0, 0], [0, 0, 0, 0])
    assert s.record_best(p, np.ones(HEAD_FEATURE_DIM), 0.9) is True
    assert s.record(p).best_uncertainty == 0.9


def test_record_best_argmin_semantics():
    s = make_store()
    p = s.allocate_point([0, 0, 0], [0, 0, 0, 0])
    f1 = np.full(HEAD_FEATURE_DIM, 1.0)
    f2 = np.full(HEAD_FEATURE_DIM, 2.0)
    assert s.record_best(p, f1, 0.3)
    assert not s.record_best(p, f2, 0.5)
    rec = s.record(p)
    assert rec.best_uncertainty == 0.3
    assert np.array_equal(rec.best_feature, f1)


def test_record_best_tie_keeps_older():
    s = make_store()
    p = s.allocate_point([0, 0, 0], [0, 0, 0, 0])
    f1 = np.full(HEAD_FEATURE_DIM, 1.0)
    s.record_best(p, f1, 0.4)
    assert not s.record_best(p, np.zeros(HEAD_FEATURE_DIM), 0.4)
    assert np.array_equal(s.record(p).best_feature, f1)


def test_record_best_sequence_matches_brute_min():
    seq = [0.8, 0.4, 0.6, 0.2]
    s = make_store()
    p = s.allocate_point([0, 0, 0], [0, 0, 0, 0])
    for u in seq:
        s.record_best(p, np.zeros(HEAD_FEATURE_DIM), u)
    assert s.record(p).best_uncertainty == min(seq)


def test_record_best_domain_error():
    s = make_store()
    p = s.allocate_point([0, 0, 0], [0, 0, 0, 0])
    for bad in (-0.1, 1.5, np.nan):
        with pytest.raises(DomainError):
            s.record_best(p, np.zeros(HEAD_FEATURE_DIM), bad)


@given(st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=30))
@settings(deadline=None)
def test_best_uncertainty_is_running_min(uncertainties):
    s = make_store()
    p = s.allocate_point([0, 0, 0], [0, 0, 0, 0])
    running = []
    for u in uncertainties:
        s.record_best(p, np.zeros(HEAD_FEATURE_DIM), u)
        running.append(s.record(p).best_uncertainty)
    assert running == [min(uncertainties[: i + 1]) for i in range(len(uncertainties))]
    # non-increasing over the lifetime
    assert all(a >= b for a, b in zip(running, running[1:]))


def test_fused_dominates_every_observation():
    rng = np.random.default_rng(7)
    s = make_store()
    p = s.allocate_point([0, 0, 0], rng.normal(size=4))
    observed = [s.fused_feature(p)]
    for _ in range(20):
        v = rng.normal(size=4)
        observed.append(v)
        s.merge_observation(p, v)
    fused = s.fused_feature(p)
    for v in observed:
        assert np.all(fused >= np.asarray(v))


def test_label_distribution_normalized():
    s = make_store(classes=3)
    p = s.allocate_point([0, 0, 0], [0, 0, 0, 0])
    s.set_label(p, [0.2, 0.5, 0.3], 0.7)
    rec = s.record(p)
    assert abs(rec.label_distribution.sum() - 1.0) < 1e-6
    assert np.all(rec.label_distribution >= 0)


def test_record_snapshot_is_isolated():
    s = make_store()
    p = s.allocate_point([1, 2, 3], [1, 1, 1, 1])
    rec = s.record(p)
    rec.position[0] = 99.0
    assert s.position(p)[0] == 1.0
