"""Point convolution over octree rings, the classification head, and
frame-to-frame feature fusion.

The convolution is a weighted sum of fused per-point input features over
the n-ring of a center, with a pluggable kernel mapping the relative
offset (neighbor minus center) to a per-channel weight.  The head is a
forward-only 3-layer MLP to a 128-wide feature followed by a single
linear classifier; parameters come from a file or a seeded initializer.

Parameter files (shared by heads and learned kernels) are flat binary:
one ASCII header line ``FAWP1 <sizes comma-separated>`` where sizes lists
the layer widths input-first, then for each consecutive size pair the
weight matrix (out x in, row-major) followed by the bias vector, all
little-endian float32.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, DomainError, ParamFormatError
from .store import HEAD_FEATURE_DIM, SceneStore

# -- parameter files -------------------------------------------------------


def save_params(path, layers: list[tuple[np.ndarray, np.ndarray]]) -> None:
    """Write (weight, bias) pairs to a FAWP1 file."""
    sizes = [layers[0][0].shape[1]] + [w.shape[0] for w, _ in layers]
    with open(path, "wb") as f:
        f.write(("FAWP1 " + ",".join(str(s) for s in sizes) + "\n").encode("ascii"))
        for w, b in layers:
            f.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f4").tobytes())


def load_params(path) -> list[tuple[np.ndarray, np.ndarray]]:
    """Read (weight, bias) pairs from a FAWP1 file."""
    path = Path(path)
    with open(path, "rb") as f:
        header = f.readline()
        raw = f.read()
    try:
        magic, sizes_txt = header.decode("ascii").split(None, 1)
        sizes = [int(s) for s in sizes_txt.strip().split(",")]
    except (UnicodeDecodeError, ValueError) as exc:
        raise ParamFormatError(f"{path}: bad parameter header {header!r}") from exc
    if magic != "FAWP1":
        raise ParamFormatError(f"{path}: expected FAWP1 magic, got {magic!r}")
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ParamFormatError(f"{path}: invalid layer sizes {sizes}")
    expected = sum(sizes[i + 1] * sizes[i] + sizes[i + 1] for i in range(len(sizes) - 1))
    data = np.frombuffer(raw, dtype="<f4")
    if data.size != expected:
        raise ParamFormatError(
            f"{path}: expected {expected} float32 values for sizes {sizes}, found {data.size}"
        )
    layers = []
    off = 0
    for i in range(len(sizes) - 1):
        n_in, n_out = sizes[i], sizes[i + 1]
        w = data[off : off + n_out * n_in].reshape(n_out, n_in).astype(np.float32)
        off += n_out * n_in
        b = data[off : off + n_out].astype(np.float32)
        off += n_out
        layers.append((w, b))
    return layers


def _seeded_layers(sizes: list[int], seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """He-normal weights, zero biases.

    Zero biases keep the stack positively homogeneous: scaling the input
    scales every logit by the same factor, so the predicted label does
    not depend on how many ring members were summed, only on the feature
    direction.
    """
    rng = np.random.default_rng(seed)
    layers = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        w = rng.normal(0.0, math.sqrt(2.0 / n_in), size=(n_out, n_in)).astype(np.float32)
        b = np.zeros(n_out, dtype=np.float32)
        layers.append((w, b))
    return layers


# -- weight functions -------------------------------------------------------


class WeightFunction:
    """Maps relative offsets (k, 3) to per-channel weights (k, 1) or (k, d)."""

    def __call__(self, offsets: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def spec(self) -> str:
        raise NotImplementedError


class ConstantWeight(WeightFunction):
    """Unit weight everywhere; the convolution degenerates to a plain sum."""

    def __call__(self, offsets: np.ndarray) -> np.ndarray:
        offsets = np.atleast_2d(np.asarray(offsets, dtype=np.float64))
        return np.ones((offsets.shape[0], 1))

    @property
    def spec(self) -> str:
        return "const"


class GaussianWeight(WeightFunction):
    """Isotropic gaussian falloff in offset length; maximal at zero offset."""

    def __init__(self, sigma: float):
        if not (sigma > 0 and math.isfinite(sigma)):
            raise DomainError(f"gaussian sigma must be positive, got {sigma}")
        self.sigma = float(sigma)

    def __call__(self, offsets: np.ndarray) -> np.ndarray:
        offsets = np.atleast_2d(np.asarray(offsets, dtype=np.float64))
        d2 = (offsets * offsets).sum(axis=1, keepdims=True)
        return np.exp(-d2 / (2.0 * self.sigma * self.sigma))

    @property
    def spec(self) -> str:
        return f"gauss:{self.sigma:g}"


class MlpWeight(WeightFunction):
    """Learned kernel: a small MLP from the 3-component offset to one
    weight per feature channel.  Forward-only; parameters from file."""

    def __init__(self, layers: list[tuple[np.ndarray, np.ndarray]], source: str = "mlp"):
        if layers[0][0].shape[1] != 3:
            raise DimensionError(
                f"kernel MLP must take 3 offset components, got {layers[0][0].shape[1]}"
            )
        self.layers = layers
        self.output_dim = layers[-1][0].shape[0]
        self._source = source

    @classmethod
    def from_file(cls, path) -> "MlpWeight":
        return cls(load_params(path), source=f"mlp:{path}")

    @classmethod
    def from_seed(cls, seed: int, feature_dim: int, hidden: tuple[int, ...] = (16,)) -> "MlpWeight":
        sizes = [3, *hidden, feature_dim]
        return cls(_seeded_layers(sizes, seed), source=f"mlp(seed={seed})")

    def save(self, path) -> None:
        save_params(path, self.layers)

    def __call__(self, offsets: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(offsets, dtype=np.float32))
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            x = x @ w.T + b
            if i < last:
                np.maximum(x, 0.0, out=x)
        return x.astype(np.float64)

    @property
    def spec(self) -> str:
        return self._source


def weight_from_spec(spec: str, feature_dim: int) -> WeightFunction:
    """Parse ``const``, ``gauss:<sigma>``, or ``mlp:<path>``."""
    if spec == "const":
        return ConstantWeight()
    if spec.startswith("gauss:"):
        try:
            sigma = float(spec.split(":", 1)[1])
        except ValueError:
            raise DomainError(f"bad gaussian sigma in weight spec {spec!r}") from None
        return GaussianWeight(sigma)
    if spec.startswith("mlp:"):
        w = MlpWeight.from_file(spec.split(":", 1)[1])
        if w.output_dim not in (1, feature_dim):
            raise DimensionError(
                f"kernel MLP outputs {w.output_dim} channels, scene expects 1 or {feature_dim}"
            )
        return w
    raise DomainError(f"unknown weight spec {spec!r} (use const | gauss:SIGMA | mlp:PATH)")


# -- classification head ----------------------------------------------------


@dataclass
class ClassDistribution:
    """Softmax class probabilities with normalized-entropy uncertainty."""

    probabilities: np.ndarray
    uncertainty: float

    @property
    def label(self) -> int:
        # argmax takes the first maximum, i.e. ties go to the smaller class id
        return int(np.argmax(self.probabilities))


class ClassificationHead:
    """Three fully-connected layers to a 128-wide feature, then a single
    linear classifier.  Rectifier after layers 1 and 2 only; float32
    throughout, so a fixed input and parameters give bit-stable output."""

    def __init__(self, layers: list[tuple[np.ndarray, np.ndarray]]):
        if len(layers) != 4:
            raise DimensionError(f"head needs 3 mlp layers + 1 classifier, got {len(layers)}")
        if layers[2][0].shape[0] != HEAD_FEATURE_DIM:
            raise DimensionError(
                f"third layer must emit {HEAD_FEATURE_DIM} features, got {layers[2][0].shape[0]}"
            )
        if layers[3][0].shape[1] != HEAD_FEATURE_DIM:
            raise DimensionError("classifier must consume the 128-wide head feature")
        for (w_prev, _), (w_next, _) in zip(layers[:-1], layers[1:]):
            if w_next.shape[1] != w_prev.shape[0]:
                raise DimensionError(
                    f"layer widths do not chain: {w_prev.shape} then {w_next.shape}"
                )
        self.layers = [(np.asarray(w, np.float32), np.asarray(b, np.float32)) for w, b in layers]
        self.input_dim = layers[0][0].shape[1]
        self.num_classes = layers[3][0].shape[0]

    @classmethod
    def from_seed(
        cls,
        feature_dim: int,
        num_classes: int,
        seed: int = 0,
        hidden: tuple[int, int] = (128, 128),
    ) -> "ClassificationHead":
        sizes = [feature_dim, hidden[0], hidden[1], HEAD_FEATURE_DIM, num_classes]
        return cls(_seeded_layers(sizes, seed))

    @classmethod
    def from_file(cls, path) -> "ClassificationHead":
        return cls(load_params(path))

    def save(self, path) -> None:
        save_params(path, self.layers)

    def forward_features(self, x: np.ndarray) -> np.ndarray:
        """3-layer forward pass; accepts (d,) or (k, d), returns 128-wide."""
        x = np.asarray(x, dtype=np.float32)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.input_dim:
            raise DimensionError(f"head expects input dim {self.input_dim}, got {x.shape[1]}")
        for i in range(3):
            w, b = self.layers[i]
            x = x @ w.T + b
            if i < 2:
                np.maximum(x, 0.0, out=x)
        return x[0] if single else x

    def logits(self, features: np.ndarray) -> np.ndarray:
        """Classifier logits from 128-wide features."""
        f = np.asarray(features, dtype=np.float32)
        single = f.ndim == 1
        f = np.atleast_2d(f)
        if f.shape[1] != HEAD_FEATURE_DIM:
            raise DimensionError(f"classifier expects {HEAD_FEATURE_DIM}-wide features")
        w, b = self.layers[3]
        out = f @ w.T + b
        return out[0] if single else out


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def normalized_entropy_rows(probs: np.ndarray) -> np.ndarray:
    """Entropy of each row scaled to [0, 1] by log(num classes)."""
    p = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    h = terms.sum(axis=-1) / math.log(p.shape[-1])
    return np.clip(h, 0.0, 1.0)


def classify(feature: np.ndarray, head: ClassificationHead) -> tuple[np.ndarray, ClassDistribution]:
    """Full head pass for one input feature: 128-wide feature + distribution."""
    f = np.asarray(feature, dtype=np.float64)
    if f.ndim != 1 or f.shape[0] != head.input_dim:
        raise DimensionError(f"expected feature of dimension {head.input_dim}, got shape {f.shape}")
    feat = head.forward_features(f)
    probs = softmax_rows(head.logits(feat))
    unc = float(normalized_entropy_rows(probs))
    return feat.astype(np.float32), ClassDistribution(probabilities=probs, uncertainty=unc)


# -- convolution and fusion --------------------------------------------------


def fpc(store: SceneStore, octrees, p: int, n: int, weight_fn: WeightFunction) -> np.ndarray:
    """Fused-feature point convolution over the n-ring of p.

    Element-wise sum over ring members r of W(pos(r) - pos(p)) * fused(r);
    the center contributes at zero offset.  Members are summed in id
    order so repeated evaluation is bit-stable.
    """
    ring = octrees.ring(p, n)
    members = np.asarray(sorted(ring.members), dtype=np.int64)
    center = store.positions[p]
    offsets = store.positions[members] - center
    w = weight_fn(offsets)
    feats = store.fused_features[members]
    return (w * feats).sum(axis=0)


def frame_fuse(store: SceneStore, p: int, current: np.ndarray) -> np.ndarray:
    """Max-pool the current head feature with the stored best, if any."""
    cur = np.asarray(current, dtype=np.float32)
    if cur.shape != (HEAD_FEATURE_DIM,):
        raise DimensionError(f"expected a {HEAD_FEATURE_DIM}-wide feature, got shape {cur.shape}")
    rec_unc = store.best_uncertainties[p] if 0 <= p < len(store) else np.nan
    if np.isnan(rec_unc):
        return cur.copy()
    return np.maximum(cur, store.best_features[p])
