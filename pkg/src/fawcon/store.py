"""Canonical per-point scene state.

The store owns everything the rest of the engine reads per point:
position, the running element-wise max of all observed input features,
the best (lowest-uncertainty) head feature seen so far, and the current
label distribution.  Points are append-only; ids are dense and assigned
in insertion order.

Data lives in growable column arrays rather than per-point objects so
frame-sized batches can be processed with numpy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionError, DomainError, UnknownPointError

HEAD_FEATURE_DIM = 128


@dataclass
class PointRecord:
    """Read-only snapshot of one point's state."""

    id: int
    position: np.ndarray
    fused_2d3d: np.ndarray
    observation_count: int
    best_feature: Optional[np.ndarray]
    best_uncertainty: Optional[float]
    label_distribution: Optional[np.ndarray]
    last_frame: int


class SceneStore:
    """Append-only store of per-point state.

    Single mutator at a time; reads may run concurrently with each other
    but not with mutation (the CPython GIL makes the read side safe, the
    caller serializes writes).
    """

    def __init__(self, feature_dim: int, num_classes: int):
        if feature_dim < 1:
            raise DimensionError(f"feature_dim must be >= 1, got {feature_dim}")
        if num_classes < 2:
            raise DomainError(f"num_classes must be >= 2, got {num_classes}")
        self.feature_dim = int(feature_dim)
        self.num_classes = int(num_classes)
        self._n = 0
        cap = 64
        self._pos = np.empty((cap, 3), dtype=np.float64)
        self._fused = np.empty((cap, feature_dim), dtype=np.float64)
        self._obs_count = np.zeros(cap, dtype=np.int64)
        self._last_frame = np.full(cap, -1, dtype=np.int64)
        self._best_feat = np.zeros((cap, HEAD_FEATURE_DIM), dtype=np.float32)
        self._best_unc = np.full(cap, np.nan, dtype=np.float64)
        self._label_probs = np.zeros((cap, num_classes), dtype=np.float64)
        self._label = np.full(cap, -1, dtype=np.int32)
        self._label_unc = np.full(cap, np.nan, dtype=np.float64)
        self._gt = np.full(cap, -1, dtype=np.int32)

    def __len__(self) -> int:
        return self._n

    # -- growth ----------------------------------------------------------

    def _ensure_capacity(self, n: int) -> None:
        cap = self._pos.shape[0]
        if n <= cap:
            return
        new_cap = max(n, cap * 2)

        def grow(a: np.ndarray, fill=None) -> np.ndarray:
            shape = (new_cap,) + a.shape[1:]
            out = np.empty(shape, a.dtype) if fill is None else np.full(shape, fill, a.dtype)
            out[: self._n] = a[: self._n]
            return out

        self._pos = grow(self._pos)
        self._fused = grow(self._fused)
        self._obs_count = grow(self._obs_count, 0)
        self._last_frame = grow(self._last_frame, -1)
        self._best_feat = grow(self._best_feat, 0.0)
        self._best_unc = grow(self._best_unc, np.nan)
        self._label_probs = grow(self._label_probs, 0.0)
        self._label = grow(self._label, -1)
        self._label_unc = grow(self._label_unc, np.nan)
        self._gt = grow(self._gt, -1)

    # -- validation ------------------------------------------------------

    def _check_id(self, p: int) -> int:
        p = int(p)
        if not 0 <= p < self._n:
            raise UnknownPointError(p)
        return p

    def _check_feature(self, feature, dim: int) -> np.ndarray:
        f = np.asarray(feature, dtype=np.float64)
        if f.shape != (dim,):
            raise DimensionError(f"expected feature of dimension {dim}, got shape {f.shape}")
        if not np.all(np.isfinite(f)):
            raise DomainError("feature entries must be finite")
        return f

    # -- mutation --------------------------------------------------------

    def allocate_point(self, position, feature) -> int:
        """Create a new point and return its dense id."""
        pos = np.asarray(position, dtype=np.float64)
        if pos.shape != (3,):
            raise DimensionError(f"position must have 3 components, got shape {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise DomainError("position must be finite")
        f = self._check_feature(feature, self.feature_dim)
        p = self._n
        self._ensure_capacity(p + 1)
        self._pos[p] = pos
        self._fused[p] = f
        self._obs_count[p] = 1
        self._n = p + 1
        return p

    def merge_observation(self, p: int, feature) -> np.ndarray:
        """Max-pool a new observation into the point's fused feature.

        Element-wise max is associative and commutative, so keeping only
        the running max yields the same result as pooling the full
        observation history.
        """
        p = self._check_id(p)
        f = self._check_feature(feature, self.feature_dim)
        np.maximum(self._fused[p], f, out=self._fused[p])
        self._obs_count[p] += 1
        return self._fused[p].copy()

    def record_best(self, p: int, feature, uncertainty: float) -> bool:
        """Keep the feature if its uncertainty beats the stored best.

        Ties keep the older record so replays are deterministic.
        Returns True when the new record was accepted.
        """
        p = self._check_id(p)
        u = float(uncertainty)
        if not 0.0 <= u <= 1.0:
            raise DomainError(f"uncertainty must lie in [0, 1], got {u}")
        f = self._check_feature(feature, HEAD_FEATURE_DIM)
        prev = self._best_unc[p]
        if not np.isnan(prev) and u >= prev:
            return False
        self._best_feat[p] = f.astype(np.float32)
        self._best_unc[p] = u
        return True

    def set_label(self, p: int, probabilities, uncertainty: float) -> None:
        """Store the current class distribution for a point."""
        p = self._check_id(p)
        probs = np.asarray(probabilities, dtype=np.float64)
        if probs.shape != (self.num_classes,):
            raise DimensionError(
                f"expected {self.num_classes} class probabilities, got shape {probs.shape}"
            )
        self._label_probs[p] = probs
        self._label[p] = int(np.argmax(probs))
        self._label_unc[p] = float(uncertainty)

    def set_ground_truth(self, p: int, label: int) -> None:
        p = self._check_id(p)
        if self._gt[p] < 0:
            self._gt[p] = int(label)

    def touch(self, p: int, frame_index: int) -> None:
        p = self._check_id(p)
        self._last_frame[p] = int(frame_index)

    # -- bulk operations (batched frame processing) ------------------------

    def allocate_many(self, positions: np.ndarray, features: np.ndarray) -> np.ndarray:
        """Append a block of points; returns their consecutive ids."""
        pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        feats = np.asarray(features, dtype=np.float64).reshape(-1, self.feature_dim)
        if pos.shape[0] != feats.shape[0]:
            raise DimensionError("positions and features must have matching row counts")
        k = pos.shape[0]
        base = self._n
        self._ensure_capacity(base + k)
        self._pos[base : base + k] = pos
        self._fused[base : base + k] = feats
        self._obs_count[base : base + k] = 1
        self._n = base + k
        return np.arange(base, base + k, dtype=np.int64)

    def merge_many(self, ids: np.ndarray, features: np.ndarray) -> None:
        """Max-pool one observation per row into existing points.

        Repeated ids are fine: element-wise max commutes.
        """
        ids = np.asarray(ids, dtype=np.int64)
        feats = np.asarray(features, dtype=np.float64).reshape(-1, self.feature_dim)
        np.maximum.at(self._fused, ids, feats)
        np.add.at(self._obs_count, ids, 1)

    def record_best_many(self, ids: np.ndarray, features: np.ndarray, uncertainties: np.ndarray) -> np.ndarray:
        """Vectorized record_best over unique ids; returns the accepted mask."""
        ids = np.asarray(ids, dtype=np.int64)
        unc = np.asarray(uncertainties, dtype=np.float64)
        prev = self._best_unc[ids]
        accept = np.isnan(prev) | (unc < prev)
        rows = ids[accept]
        self._best_feat[rows] = np.asarray(features, dtype=np.float32)[accept]
        self._best_unc[rows] = unc[accept]
        return accept

    def set_labels_many(self, ids: np.ndarray, probabilities: np.ndarray, uncertainties: np.ndarray) -> None:
        ids = np.asarray(ids, dtype=np.int64)
        probs = np.asarray(probabilities, dtype=np.float64)
        self._label_probs[ids] = probs
        self._label[ids] = np.argmax(probs, axis=1).astype(np.int32)
        self._label_unc[ids] = np.asarray(uncertainties, dtype=np.float64)

    def set_ground_truth_many(self, ids: np.ndarray, labels: np.ndarray) -> None:
        """First observed ground truth wins; later observations never override."""
        ids = np.asarray(ids, dtype=np.int64)
        labels = np.asarray(labels, dtype=np.int32)
        if ids.size == 0:
            return
        # first occurrence per id within this batch
        seen: dict[int, int] = {}
        for k, p in enumerate(ids.tolist()):
            if p not in seen:
                seen[p] = k
        rows = np.fromiter(seen.keys(), dtype=np.int64, count=len(seen))
        picks = np.fromiter(seen.values(), dtype=np.int64, count=len(seen))
        unset = self._gt[rows] < 0
        self._gt[rows[unset]] = labels[picks[unset]]

    def touch_many(self, ids: np.ndarray, frame_index: int) -> None:
        self._last_frame[np.asarray(ids, dtype=np.int64)] = int(frame_index)

    # -- access ----------------------------------------------------------

    def record(self, p: int) -> PointRecord:
        p = self._check_id(p)
        has_best = not np.isnan(self._best_unc[p])
        has_label = self._label[p] >= 0
        return PointRecord(
            id=p,
            position=self._pos[p].copy(),
            fused_2d3d=self._fused[p].copy(),
            observation_count=int(self._obs_count[p]),
            best_feature=self._best_feat[p].copy() if has_best else None,
            best_uncertainty=float(self._best_unc[p]) if has_best else None,
            label_distribution=self._label_probs[p].copy() if has_label else None,
            last_frame=int(self._last_frame[p]),
        )

    def position(self, p: int) -> np.ndarray:
        return self._pos[self._check_id(p)].copy()

    def fused_feature(self, p: int) -> np.ndarray:
        return self._fused[self._check_id(p)].copy()

    @property
    def positions(self) -> np.ndarray:
        """View of all positions, shape (n, 3). Do not mutate."""
        return self._pos[: self._n]

    @property
    def fused_features(self) -> np.ndarray:
        """View of all fused input features, shape (n, feature_dim)."""
        return self._fused[: self._n]

    @property
    def observation_counts(self) -> np.ndarray:
        return self._obs_count[: self._n]

    @property
    def best_uncertainties(self) -> np.ndarray:
        """NaN where no best feature has been recorded yet."""
        return self._best_unc[: self._n]

    @property
    def best_features(self) -> np.ndarray:
        return self._best_feat[: self._n]

    @property
    def labels(self) -> np.ndarray:
        """Predicted labels, -1 where never classified."""
        return self._label[: self._n]

    @property
    def label_uncertainties(self) -> np.ndarray:
        return self._label_unc[: self._n]

    @property
    def ground_truth(self) -> np.ndarray:
        """Ground-truth labels, -1 where unknown."""
        return self._gt[: self._n]
