"""Frame ingestion: correspondence resolution, tree maintenance, and
per-frame convolution over the touched points.

Frames arrive strictly in index order.  Each observation either merges
into the existing point it corresponds to (nearest point within the
merge distance, ties to the smaller id, points created earlier in the
same frame included) or becomes a new point inserted into the global
trees.  After insertion the octrees around the new points are rebuilt,
and every touched point (merged, inserted, or octree-rebuilt) is pushed
through convolution, classification, best-feature gating, and fused
re-classification.

Correspondence is computed in two passes that reproduce the sequential
per-observation semantics exactly: a vectorized pass against the frozen
pre-frame cloud, then an ordered pass against this frame's new points.

Frame files (text, one per frame): header ``FAWF1 <M> <D_in> <has_gt>``
followed by M lines ``x y z f_1 .. f_D [gt_label]``; ``#`` starts a
comment.  A manifest is a text file listing frame paths in order,
resolved relative to the manifest's directory.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .conv import (
    ClassificationHead,
    WeightFunction,
    normalized_entropy_rows,
    softmax_rows,
    weight_from_spec,
)
from .errors import (
    DimensionError,
    DomainError,
    FrameOrderError,
    FrameParseError,
)
from .global_tree import GlobalIndex
from .octree import OctreeIndex
from .store import SceneStore

# -- frame files -------------------------------------------------------------


@dataclass
class Frame:
    """One time step of the stream: positions, input features, optional labels."""

    index: int
    positions: np.ndarray
    features: np.ndarray
    gt_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim == 1:
            self.features = self.features.reshape(self.positions.shape[0], -1)
        if self.gt_labels is not None:
            self.gt_labels = np.asarray(self.gt_labels, dtype=np.int32).reshape(-1)

    def __len__(self) -> int:
        return self.positions.shape[0]


def read_frame(path, index: int) -> Frame:
    """Parse one FAWF1 frame file."""
    path = Path(path)
    with open(path, "r", encoding="ascii") as f:
        lines = f.readlines()
    header_no = None
    for no, line in enumerate(lines, start=1):
        stripped = line.strip()
        if stripped and not stripped.startswith("#"):
            header_no = no
            break
    if header_no is None:
        raise FrameParseError(path, 1, "missing FAWF1 header")
    parts = lines[header_no - 1].split()
    if len(parts) != 4 or parts[0] != "FAWF1":
        raise FrameParseError(path, header_no, f"bad header {lines[header_no - 1].strip()!r}")
    try:
        m, dim, has_gt = int(parts[1]), int(parts[2]), int(parts[3])
    except ValueError:
        raise FrameParseError(path, header_no, "header counts must be integers") from None
    if has_gt not in (0, 1) or m < 0 or dim < 1:
        raise FrameParseError(path, header_no, f"bad header values {parts[1:]}")
    width = 3 + dim + has_gt
    rows = np.empty((m, width), dtype=np.float64)
    got = 0
    for no in range(header_no + 1, len(lines) + 1):
        stripped = lines[no - 1].strip()
        if not stripped or stripped.startswith("#"):
            continue
        if got >= m:
            raise FrameParseError(path, no, f"more than the declared {m} observations")
        fields = stripped.split()
        if len(fields) != width:
            raise FrameParseError(path, no, f"expected {width} fields, got {len(fields)}")
        try:
            rows[got] = [float(v) for v in fields]
        except ValueError:
            raise FrameParseError(path, no, f"non-numeric field in {stripped!r}") from None
        if not np.all(np.isfinite(rows[got])):
            raise FrameParseError(path, no, "non-finite value")
        got += 1
    if got != m:
        raise FrameParseError(path, len(lines), f"declared {m} observations, found {got}")
    gt = rows[:, 3 + dim].astype(np.int32) if has_gt else None
    return Frame(index=index, positions=rows[:, :3], features=rows[:, 3 : 3 + dim], gt_labels=gt)


def write_frame(path, frame: Frame) -> None:
    """Write one FAWF1 frame file (floats via repr: lossless round-trip)."""
    has_gt = 1 if frame.gt_labels is not None else 0
    m, dim = frame.features.shape
    with open(path, "w", encoding="ascii") as f:
        f.write(f"FAWF1 {m} {dim} {has_gt}\n")
        for i in range(m):
            vals = [repr(float(v)) for v in frame.positions[i]]
            vals += [repr(float(v)) for v in frame.features[i]]
            if has_gt:
                vals.append(str(int(frame.gt_labels[i])))
            f.write(" ".join(vals) + "\n")


def read_manifest(path) -> list[Path]:
    """Frame paths listed one per line, relative to the manifest's directory."""
    path = Path(path)
    base = path.parent
    out = []
    with open(path, "r", encoding="ascii") as f:
        for line in f:
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            p = Path(stripped)
            out.append(p if p.is_absolute() else base / p)
    return out


def write_manifest(path, frame_paths) -> None:
    base = Path(path).parent
    with open(path, "w", encoding="ascii") as f:
        for p in frame_paths:
            p = Path(p)
            try:
                p = p.relative_to(base)
            except ValueError:
                pass
            f.write(str(p) + "\n")


def read_labels(path) -> list[tuple]:
    """Rows of a label export: (id, x, y, z, label, uncertainty, observations)."""
    out = []
    with open(path, "r", encoding="ascii") as f:
        for line in f:
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            i, x, y, z, lab, unc, obs = stripped.split()
            out.append((int(i), float(x), float(y), float(z), int(lab), float(unc), int(obs)))
    return out


# -- pipeline ----------------------------------------------------------------


@dataclass
class PipelineConfig:
    """Everything that shapes a replay; all values have working defaults."""

    feature_dim: int = 8
    num_classes: int = 2
    half_width: float = 0.04
    merge_dist: float = 0.01
    child_dist: float = 0.08
    octree_merge_radius: float = 0.04
    rings: int = 2
    weight: Union[str, WeightFunction] = "const"
    head: Union[None, str, ClassificationHead] = None
    frame_cap: Optional[int] = None
    threads: int = 1
    precreate_neighbors: bool = False
    # "octree" uses n-ring neighborhoods; "euclidean" uses fixed-radius balls
    # of matched mean cardinality (the comparison baseline).
    neighborhood_mode: str = "octree"
    euclidean_radius: Optional[float] = None


@dataclass
class IngestReport:
    """Per-frame bookkeeping emitted by ingest()."""

    frame: int
    inserted: int
    merged: int
    octrees_rebuilt: int
    reevaluated: int
    wall_ms: float
    insert_ms: float = 0.0
    rebuild_ms: float = 0.0
    conv_ms: float = 0.0
    points_total: int = 0
    mean_accuracy: Optional[float] = None
    per_class_accuracy: Optional[dict] = field(default=None)

    def to_json(self) -> str:
        d = {
            "frame": self.frame,
            "inserted": self.inserted,
            "merged": self.merged,
            "octrees_rebuilt": self.octrees_rebuilt,
            "reevaluated": self.reevaluated,
            "wall_ms": round(self.wall_ms, 3),
            "insert_ms": round(self.insert_ms, 3),
            "rebuild_ms": round(self.rebuild_ms, 3),
            "conv_ms": round(self.conv_ms, 3),
            "points_total": self.points_total,
            "mean_accuracy": self.mean_accuracy,
            "per_class_accuracy": self.per_class_accuracy,
        }
        return json.dumps(d)


def _resolve_head(config: PipelineConfig) -> ClassificationHead:
    head = config.head
    if isinstance(head, ClassificationHead):
        return head
    if head is None:
        return ClassificationHead.from_seed(config.feature_dim, config.num_classes, seed=0)
    if isinstance(head, str):
        if head.startswith("seed:"):
            try:
                seed = int(head.split(":", 1)[1])
            except ValueError:
                raise DomainError(f"bad head seed in {head!r}") from None
            return ClassificationHead.from_seed(config.feature_dim, config.num_classes, seed=seed)
        return ClassificationHead.from_file(head)
    raise DomainError(f"cannot resolve head from {head!r}")


class Pipeline:
    """Owns the scene and applies the full per-frame update."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        if config.rings < 1:
            raise DomainError(f"ring order must be >= 1, got {config.rings}")
        if config.neighborhood_mode not in ("octree", "euclidean"):
            raise DomainError(f"unknown neighborhood mode {config.neighborhood_mode!r}")
        if config.neighborhood_mode == "euclidean" and not config.euclidean_radius:
            raise DomainError("euclidean mode needs euclidean_radius")
        self.store = SceneStore(config.feature_dim, config.num_classes)
        self.global_index = GlobalIndex(
            half_width=config.half_width,
            merge_dist=config.merge_dist,
            precreate_neighbors=config.precreate_neighbors,
        )
        self.octrees = OctreeIndex(
            self.global_index,
            child_dist=config.child_dist,
            merge_radius=config.octree_merge_radius,
        )
        if isinstance(config.weight, WeightFunction):
            self.weight_fn = config.weight
        else:
            self.weight_fn = weight_from_spec(config.weight, config.feature_dim)
        self.head = _resolve_head(config)
        if self.head.input_dim != config.feature_dim:
            raise DimensionError(
                f"head expects {self.head.input_dim}-dim input, scene is {config.feature_dim}-dim"
            )
        if self.head.num_classes != config.num_classes:
            raise DimensionError(
                f"head predicts {self.head.num_classes} classes, scene has {config.num_classes}"
            )
        self._last_index: Optional[int] = None

    # -- ingestion ---------------------------------------------------------

    def ingest(self, frame: Frame) -> IngestReport:
        t_start = time.perf_counter()
        if self._last_index is not None and frame.index <= self._last_index:
            raise FrameOrderError(
                f"frame index {frame.index} not greater than previous {self._last_index}"
            )
        self._last_index = frame.index
        if frame.features.shape[1] != self.config.feature_dim:
            raise DimensionError(
                f"frame features are {frame.features.shape[1]}-dim, "
                f"scene expects {self.config.feature_dim}"
            )
        if not (np.all(np.isfinite(frame.positions)) and np.all(np.isfinite(frame.features))):
            raise DomainError(f"frame {frame.index} contains non-finite values")

        positions, features, gt = frame.positions, frame.features, frame.gt_labels
        if self.config.frame_cap is not None and len(frame) > self.config.frame_cap:
            # deterministic per-frame uniform subsample, original order kept
            rng = np.random.default_rng(frame.index)
            keep = np.sort(rng.choice(len(frame), self.config.frame_cap, replace=False))
            positions = positions[keep]
            features = features[keep]
            gt = gt[keep] if gt is not None else None

        m = positions.shape[0]
        if m == 0:
            wall = (time.perf_counter() - t_start) * 1000.0
            return self._report(frame.index, 0, 0, 0, 0, wall, 0.0, 0.0, 0.0)

        t0 = time.perf_counter()
        match, inserted_mask, new_ids = self._resolve_and_insert(positions, features, gt)
        t1 = time.perf_counter()
        rebuilt = self.octrees.register_insertions(new_ids)
        t2 = time.perf_counter()
        touched = np.unique(np.concatenate([match, rebuilt])) if rebuilt.size else np.unique(match)
        self._reevaluate(touched, frame.index)
        t3 = time.perf_counter()

        wall = (t3 - t_start) * 1000.0
        return self._report(
            frame.index,
            int(inserted_mask.sum()),
            int(m - inserted_mask.sum()),
            int(rebuilt.size),
            int(touched.size),
            wall,
            (t1 - t0) * 1000.0,
            (t2 - t1) * 1000.0,
            (t3 - t2) * 1000.0,
        )

    def _resolve_and_insert(self, positions, features, gt):
        """Match observations to existing points or allocate new ones.

        Returns (match ids per observation, inserted mask, new ids).
        """
        gi = self.global_index
        m = positions.shape[0]
        delta = gi.merge_dist
        d2max = delta * delta
        h = gi.half_width

        # Pass 1: nearest pre-frame point within delta, vectorized.
        best_pre = np.full(m, -1, dtype=np.int64)
        best_pre_d2 = np.full(m, np.inf)
        if len(gi) > 0:
            obs_r, cand = gi.pools_for_balls(positions, delta)
            if obs_r.size:
                diff = gi.positions[cand] - positions[obs_r]
                d2 = (diff * diff).sum(axis=1)
                within = d2 <= d2max
                obs_r, cand, d2 = obs_r[within], cand[within], d2[within]
                if obs_r.size:
                    picks = _argmin_per_obs(obs_r, d2, cand, m)
                    best_pre[obs_r[picks]] = cand[picks]
                    best_pre_d2[obs_r[picks]] = d2[picks]

        # Pass 2: ordered resolution against this frame's new points.
        # Plain-python state: scalar indexing into numpy arrays would
        # dominate this loop.
        base = len(self.store)
        inserted_mask = np.zeros(m, dtype=bool)
        new_rows: list[int] = []
        temp_grid: dict[tuple[int, int, int], list[int]] = {}
        ta = positions[0]  # frame-local lattice; any consistent anchor works
        width = 2.0 * h
        boxes = np.floor((positions - ta + h) / width).astype(np.int64)
        frac = positions - (ta + (2 * boxes - 1) * h)
        # offsets a delta-ball needs along each axis, as a 2-bit code:
        # bit0 = near lower boundary, bit1 = near upper boundary
        codes = (frac < delta).astype(np.int8) + 2 * (width - frac < delta).astype(np.int8)
        offsets_by_code = ((0,), (-1, 0), (0, 1), (-1, 0, 1))
        xs = positions[:, 0].tolist()
        ys = positions[:, 1].tolist()
        zs = positions[:, 2].tolist()
        bxs = boxes[:, 0].tolist()
        bys = boxes[:, 1].tolist()
        bzs = boxes[:, 2].tolist()
        cxs = codes[:, 0].tolist()
        cys = codes[:, 1].tolist()
        czs = codes[:, 2].tolist()
        pre_d2_list = best_pre_d2.tolist()
        pre_id_list = best_pre.tolist()
        match = [-1] * m
        for j in range(m):
            px, py, pz = xs[j], ys[j], zs[j]
            bx, by, bz = bxs[j], bys[j], bzs[j]
            bn_d2 = math.inf
            bn_row = -1
            if new_rows:
                for dx in offsets_by_code[cxs[j]]:
                    for dy in offsets_by_code[cys[j]]:
                        for dz in offsets_by_code[czs[j]]:
                            bucket = temp_grid.get((bx + dx, by + dy, bz + dz))
                            if not bucket:
                                continue
                            for row in bucket:
                                ox = xs[row] - px
                                oy = ys[row] - py
                                oz = zs[row] - pz
                                d2 = ox * ox + oy * oy + oz * oz
                                if d2 < bn_d2 or (d2 == bn_d2 and match[row] < match[bn_row]):
                                    bn_d2 = d2
                                    bn_row = row
            pre_d2 = pre_d2_list[j]
            if pre_d2 <= d2max and pre_d2 <= bn_d2:
                match[j] = pre_id_list[j]  # pre-frame ids are smaller: ties resolve here
            elif bn_d2 <= d2max:
                match[j] = match[bn_row]
            else:
                inserted_mask[j] = True
                match[j] = base + len(new_rows)
                new_rows.append(j)
                temp_grid.setdefault((bx, by, bz), []).append(j)
        match = np.asarray(match, dtype=np.int64)

        new_ids = np.arange(base, base + len(new_rows), dtype=np.int64)
        if new_rows:
            rows = np.asarray(new_rows, dtype=np.int64)
            got = self.store.allocate_many(positions[rows], features[rows])
            assert got[0] == base
            gi.insert_many(new_ids, positions[rows])
        merged = ~inserted_mask
        if np.any(merged):
            self.store.merge_many(match[merged], features[merged])
        if gt is not None:
            self.store.set_ground_truth_many(match, gt)
        return match, inserted_mask, new_ids

    # -- re-evaluation -------------------------------------------------------

    # Fixed work-unit size: identical array shapes whatever the thread
    # count, so replays with --threads k reproduce the single-thread
    # floats bit for bit (BLAS kernels vary with matrix shape).
    _BLOCK = 2048

    def _reevaluate(self, ids: np.ndarray, frame_index: int) -> None:
        if ids.size == 0:
            return
        blocks = [ids[i : i + self._BLOCK] for i in range(0, ids.size, self._BLOCK)]
        threads = max(1, int(self.config.threads))
        if threads == 1 or len(blocks) == 1:
            for block in blocks:
                self._reevaluate_rows(block, frame_index)
            return
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda b: self._reevaluate_rows(b, frame_index), blocks))

    def _neighbor_pairs(self, ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(rows, members) sorted by (row, member id), one pair per member."""
        if self.config.neighborhood_mode == "octree":
            return self.octrees.ring_members_flat(ids, self.config.rings)
        from scipy.spatial import cKDTree

        n = len(self.store)
        tree = cKDTree(self.store.positions)
        lists = tree.query_ball_point(self.store.positions[ids], self.config.euclidean_radius)
        counts = np.fromiter((len(l) for l in lists), dtype=np.int64, count=len(lists))
        members = np.fromiter(
            (p for l in lists for p in l), dtype=np.int64, count=int(counts.sum())
        )
        rows = np.repeat(np.arange(ids.size, dtype=np.int64), counts)
        order = np.lexsort((members, rows))
        return rows[order], members[order]

    def _reevaluate_rows(self, ids: np.ndarray, frame_index: int) -> None:
        store = self.store
        rows, members = self._neighbor_pairs(ids)
        centers = ids[rows]
        offsets = store.positions[members] - store.positions[centers]
        w = self.weight_fn(offsets)
        contrib = w * store.fused_features[members]
        counts = np.bincount(rows, minlength=ids.size)
        indptr = np.zeros(ids.size, dtype=np.int64)
        np.cumsum(counts[:-1], out=indptr[1:])
        conv = np.add.reduceat(contrib, indptr, axis=0)

        current = self.head.forward_features(conv)
        probs_cur = softmax_rows(self.head.logits(current))
        unc_cur = normalized_entropy_rows(probs_cur)
        store.record_best_many(ids, current, unc_cur)
        fused = np.maximum(current.astype(np.float32), store.best_features[ids])
        probs = softmax_rows(self.head.logits(fused))
        unc = normalized_entropy_rows(probs)
        store.set_labels_many(ids, probs, unc)
        store.touch_many(ids, frame_index)

    # -- reporting / export ---------------------------------------------------

    def _report(self, index, inserted, merged, rebuilt, reevaluated, wall, t_ins, t_reb, t_conv):
        mean_acc, per_class = self.accuracy()
        return IngestReport(
            frame=index,
            inserted=inserted,
            merged=merged,
            octrees_rebuilt=rebuilt,
            reevaluated=reevaluated,
            wall_ms=wall,
            insert_ms=t_ins,
            rebuild_ms=t_reb,
            conv_ms=t_conv,
            points_total=len(self.store),
            mean_accuracy=mean_acc,
            per_class_accuracy=per_class,
        )

    def accuracy(self) -> tuple[Optional[float], Optional[dict]]:
        """Mean and per-class accuracy over points with known ground truth."""
        gt = self.store.ground_truth
        mask = gt >= 0
        if not np.any(mask):
            return None, None
        labels = self.store.labels
        correct = labels[mask] == gt[mask]
        mean = float(correct.mean())
        per_class = {}
        for cls in np.unique(gt[mask]):
            sel = gt[mask] == cls
            per_class[int(cls)] = float(correct[sel].mean())
        return mean, per_class

    def export_labels(self, path) -> None:
        """One row per point: id, position, label, uncertainty, observations.

        Deterministic byte-for-byte for identical scene state (floats are
        written with repr, the shortest lossless form).
        """
        store = self.store
        try:
            with open(path, "w", encoding="ascii") as f:
                f.write("# fawcon labels: id x y z label uncertainty observations\n")
                pos = store.positions
                labels = store.labels
                unc = store.label_uncertainties
                obs = store.observation_counts
                for i in range(len(store)):
                    f.write(
                        f"{i} {float(pos[i, 0])!r} {float(pos[i, 1])!r} {float(pos[i, 2])!r} "
                        f"{labels[i]} {float(unc[i])!r} {obs[i]}\n"
                    )
        except OSError as exc:
            raise OSError(f"cannot write label export to {path}: {exc}") from exc

