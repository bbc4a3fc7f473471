"""Synthetic scene generation for replay, benchmark, and property tests.

Three scene kinds:

* ``planes``   - two parallel horizontal planes separated by a gap along
  z, one label class per plane, class-constant prototype features.  The
  gap is the interesting bit: surface neighborhoods must never cross it.
* ``cylinder`` - a jittered lateral surface of a cylinder; used for
  geodesic-approximation checks (closed form available).
* ``rooms``    - a floor plus four walls observed over several
  overlapping frames.  Every frame sees the scene through a smooth
  random attenuation field per channel (a view-dependent corruption:
  nearby points are corrupted alike, so a neighborhood sum cannot
  average it away; distant regions are corrupted independently, so the
  scene-wide accuracy moves smoothly).  Max-pooling observations across
  frames recovers the true feature channel by channel - the mechanism
  that drives accuracy improvement over a replay.

Each generator is deterministic for a given seed.  ``write_scene`` lays
a scene out as FAWF1 frame files plus a manifest and a JSON sidecar with
the analytic surface parameters (enough to evaluate closed-form
geodesics for planes and cylinder scenes).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DomainError
from .stream import Frame, write_frame, write_manifest


@dataclass
class SyntheticScene:
    frames: list[Frame]
    sidecar: dict
    feature_dim: int
    num_classes: int
    # distinct surface points underlying the frames (frames may re-observe)
    master_points: int = 0


def _jittered_grid_2d(n_u: int, n_v: int, spacing: float, rng, jitter: float = 0.35):
    """Grid coordinates with uniform jitter, as flat (u, v) arrays."""
    u = (np.arange(n_u) + 0.5) * spacing
    v = (np.arange(n_v) + 0.5) * spacing
    uu, vv = np.meshgrid(u, v, indexing="ij")
    uu = uu + rng.uniform(-jitter, jitter, uu.shape) * spacing
    vv = vv + rng.uniform(-jitter, jitter, vv.shape) * spacing
    return uu.ravel(), vv.ravel()


def _pad_features(cols: list[np.ndarray], feature_dim: int) -> np.ndarray:
    n = cols[0].shape[0]
    if feature_dim < 4:
        raise DomainError(f"synthetic scenes need feature_dim >= 4, got {feature_dim}")
    out = np.zeros((n, feature_dim), dtype=np.float64)
    for i, c in enumerate(cols[:feature_dim]):
        out[:, i] = c
    return out


# -- planes -------------------------------------------------------------------


def gen_planes(
    gap: float = 0.2,
    spacing: float = 0.02,
    side: float = 1.0,
    frames: int = 4,
    seed: int = 0,
    feature_dim: int = 8,
) -> SyntheticScene:
    """Two parallel planes at z=0 (class 0) and z=gap (class 1)."""
    if gap <= 0 or spacing <= 0 or side <= 0 or frames < 1:
        raise DomainError("planes scene needs positive gap, spacing, side and frames >= 1")
    rng = np.random.default_rng([seed, 11])
    n = max(2, round(side / spacing))
    parts = []
    for cls, z in ((0, 0.0), (1, float(gap))):
        x, y = _jittered_grid_2d(n, n, spacing, rng)
        pos = np.column_stack([x, y, np.full(x.shape, z)])
        feats = _pad_features(
            [
                np.full(x.shape, 1.0 if cls == 0 else 0.0),
                np.full(x.shape, 0.0 if cls == 0 else 1.0),
                pos[:, 2],
                np.full(x.shape, 0.5),
            ],
            feature_dim,
        )
        labels = np.full(x.shape, cls, dtype=np.int32)
        parts.append((pos, feats, labels))
    pos = np.vstack([p for p, _, _ in parts])
    feats = np.vstack([f for _, f, _ in parts])
    labels = np.concatenate([l for _, _, l in parts])

    frame_list = _sweep_frames(pos, feats, labels, frames, axis=0)
    sidecar = {
        "kind": "planes",
        "gap": float(gap),
        "z_levels": [0.0, float(gap)],
        "side": float(side),
        "spacing": float(spacing),
    }
    return SyntheticScene(frame_list, sidecar, feature_dim, 2, master_points=len(pos))


# -- cylinder -----------------------------------------------------------------


def gen_cylinder(
    radius: float = 0.5,
    length: float = 1.2,
    spacing: float = 0.02,
    frames: int = 6,
    seed: int = 0,
    feature_dim: int = 8,
) -> SyntheticScene:
    """Jittered lateral surface of a z-axis cylinder, single class."""
    if radius <= 0 or length <= 0 or spacing <= 0 or frames < 1:
        raise DomainError("cylinder scene needs positive radius, length, spacing, frames")
    rng = np.random.default_rng([seed, 23])
    n_theta = max(8, round(2 * math.pi * radius / spacing))
    n_z = max(2, round(length / spacing))
    t = (np.arange(n_theta) + 0.5) * (2 * math.pi / n_theta)
    z = (np.arange(n_z) + 0.5) * (length / n_z)
    tt, zz = np.meshgrid(t, z, indexing="ij")
    tt = tt + rng.uniform(-0.35, 0.35, tt.shape) * (spacing / radius)
    zz = zz + rng.uniform(-0.35, 0.35, zz.shape) * spacing
    theta = tt.ravel()
    height = zz.ravel()
    pos = np.column_stack([radius * np.cos(theta), radius * np.sin(theta), height])
    feats = _pad_features(
        [
            np.cos(theta) ** 2,
            np.sin(theta) ** 2,
            height / length,
            np.full(theta.shape, 0.5),
        ],
        feature_dim,
    )
    order = np.argsort(theta, kind="stable")
    pos, feats, theta = pos[order], feats[order], theta[order]
    frame_list = []
    edges = np.linspace(0.0, 2 * math.pi, frames + 1)
    for f in range(frames):
        sel = (theta >= edges[f]) & (theta < edges[f + 1]) if f < frames - 1 else theta >= edges[f]
        frame_list.append(Frame(index=f, positions=pos[sel], features=feats[sel]))
    sidecar = {"kind": "cylinder", "radius": float(radius), "length": float(length)}
    return SyntheticScene(frame_list, sidecar, feature_dim, 2, master_points=len(pos))


# -- rooms --------------------------------------------------------------------


def gen_rooms(
    side: float = 2.0,
    height: float = 1.0,
    spacing: float = 0.05,
    frames: int = 8,
    seed: int = 0,
    feature_dim: int = 8,
    sample_fraction: float = 0.55,
    points_per_frame: Optional[int] = None,
    noise_low: float = 0.25,
) -> SyntheticScene:
    """Floor (class 0) plus four walls (class 1), observed repeatedly.

    Each frame re-observes a random subset of the master point set
    through a per-channel plane-wave attenuation field ranging from
    noise_low (trough) to 1 (crest), plus small independent jitter per
    observation.  Every master point is pinned to one guaranteed frame,
    so coverage is by construction (provided points_per_frame, when set,
    is at least ceil(master / frames)).
    """
    if side <= 0 or height <= 0 or spacing <= 0 or frames < 1:
        raise DomainError("rooms scene needs positive side, height, spacing, frames")
    if not 0 < sample_fraction <= 1:
        raise DomainError(f"sample_fraction must be in (0, 1], got {sample_fraction}")
    if not 0 < noise_low <= 1:
        raise DomainError(f"noise_low must be in (0, 1], got {noise_low}")
    rng = np.random.default_rng([seed, 37])
    n_side = max(2, round(side / spacing))
    n_up = max(2, round(height / spacing))

    blocks = []
    # floor
    x, y = _jittered_grid_2d(n_side, n_side, spacing, rng)
    blocks.append((np.column_stack([x, y, np.zeros_like(x)]), 0, (0.0, 0.0)))
    # walls: (fixed axis, fixed value, normal direction indicator)
    for fixed_axis, fixed_val, (nx2, ny2) in (
        (0, 0.0, (1.0, 0.0)),
        (0, side, (1.0, 0.0)),
        (1, 0.0, (0.0, 1.0)),
        (1, side, (0.0, 1.0)),
    ):
        u, v = _jittered_grid_2d(n_side, n_up, spacing, rng)
        pos = np.empty((u.shape[0], 3))
        pos[:, fixed_axis] = fixed_val
        pos[:, 1 - fixed_axis] = u
        pos[:, 2] = v
        blocks.append((pos, 1, (nx2, ny2)))

    positions = np.vstack([b[0] for b in blocks])
    labels = np.concatenate([np.full(len(b[0]), b[1], dtype=np.int32) for b in blocks])
    nx2 = np.concatenate([np.full(len(b[0]), b[2][0]) for b in blocks])
    ny2 = np.concatenate([np.full(len(b[0]), b[2][1]) for b in blocks])
    # prototypes close enough that one bad view can flip the channel
    # balance; the max-pooled limit still separates cleanly.  The purely
    # geometric channels stay small so within-class variation does not
    # drown the class signal.
    floorness = np.where(labels == 0, 1.3, 0.7)
    wallness = np.where(labels == 1, 1.3, 0.7)
    true_feats = _pad_features(
        [
            floorness,
            wallness,
            0.25 * positions[:, 2] / height,
            np.full(len(positions), 0.5),
            0.25 * nx2,
            0.25 * ny2,
            0.15 * positions[:, 0] / side,
            0.15 * positions[:, 1] / side,
        ],
        feature_dim,
    )

    n = len(positions)
    guarantee = rng.permutation(n) % frames
    per_frame = points_per_frame if points_per_frame is not None else round(sample_fraction * n)
    per_frame = max(1, min(n, per_frame))

    frame_list = []
    for f in range(frames):
        frame_rng = np.random.default_rng([seed, 101, f])
        pinned = np.flatnonzero(guarantee == f)
        if pinned.size >= per_frame:
            chosen = pinned[np.sort(frame_rng.choice(pinned.size, per_frame, replace=False))]
        else:
            rest = np.flatnonzero(guarantee != f)
            extra = frame_rng.choice(rest.size, per_frame - pinned.size, replace=False)
            chosen = np.sort(np.concatenate([pinned, rest[extra]]))
        atten = _wave_attenuation(positions[chosen], feature_dim, noise_low, frame_rng)
        jitter = frame_rng.uniform(0.9, 1.0, size=(chosen.size, feature_dim))
        frame_list.append(
            Frame(
                index=f,
                positions=positions[chosen],
                features=true_feats[chosen] * atten * jitter,
                gt_labels=labels[chosen],
            )
        )
    sidecar = {
        "kind": "rooms",
        "side": float(side),
        "height": float(height),
        "spacing": float(spacing),
    }
    return SyntheticScene(frame_list, sidecar, feature_dim, 2, master_points=n)


def _wave_attenuation(positions: np.ndarray, feature_dim: int, low: float, rng) -> np.ndarray:
    """Smooth per-channel attenuation in [low, 1]: one random plane wave
    per channel, wavelength 0.35..0.7 m.  Points within a neighborhood
    see nearly the same value; far-apart regions are independent."""
    out = np.empty((positions.shape[0], feature_dim))
    for c in range(feature_dim):
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        wavelength = rng.uniform(0.35, 0.7)
        phase = rng.uniform(0, 2 * math.pi)
        r = 0.5 + 0.5 * np.cos(positions @ direction * (2 * math.pi / wavelength) + phase)
        out[:, c] = low + (1.0 - low) * r
    return out


def _sweep_frames(pos, feats, labels, frames: int, axis: int) -> list[Frame]:
    """Partition a cloud into frames by sweeping one coordinate."""
    lo, hi = pos[:, axis].min(), pos[:, axis].max()
    edges = np.linspace(lo, hi, frames + 1)
    out = []
    for f in range(frames):
        if f < frames - 1:
            sel = (pos[:, axis] >= edges[f]) & (pos[:, axis] < edges[f + 1])
        else:
            sel = pos[:, axis] >= edges[f]
        out.append(
            Frame(index=f, positions=pos[sel], features=feats[sel], gt_labels=labels[sel])
        )
    return out


# -- closed-form geodesics -----------------------------------------------------


def closed_form_geodesic(sidecar: dict, a, b) -> Optional[float]:
    """Analytic on-surface distance between two positions, or None.

    Planes: in-plane Euclidean distance, None across the gap.
    Cylinder: length of the helical geodesic on the lateral surface.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    kind = sidecar.get("kind")
    if kind == "planes":
        levels = np.asarray(sidecar["z_levels"])
        pa = int(np.argmin(np.abs(levels - a[2])))
        pb = int(np.argmin(np.abs(levels - b[2])))
        if pa != pb:
            return None
        return float(math.hypot(a[0] - b[0], a[1] - b[1]))
    if kind == "cylinder":
        r = float(sidecar["radius"])
        ta = math.atan2(a[1], a[0])
        tb = math.atan2(b[1], b[0])
        dt = abs(ta - tb)
        if dt > math.pi:
            dt = 2 * math.pi - dt
        return float(math.hypot(r * dt, a[2] - b[2]))
    return None


# -- on-disk layout -------------------------------------------------------------


def write_scene(scene: SyntheticScene, out_dir) -> Path:
    """Write frames, manifest, and sidecar; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for frame in scene.frames:
        p = out / f"frame_{frame.index:04d}.fawf"
        write_frame(p, frame)
        paths.append(p)
    manifest = out / "manifest.txt"
    write_manifest(manifest, paths)
    meta = dict(scene.sidecar)
    meta["feature_dim"] = scene.feature_dim
    meta["num_classes"] = scene.num_classes
    with open(out / "scene.json", "w", encoding="ascii") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest
