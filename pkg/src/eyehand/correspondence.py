"""Mark propagation by cosine-similarity argmax over dense feature maps.

Feature maps arrive as .fmap files produced by an external extractor; this
module only consumes them. Coordinates are continuous pixels where integer
values address pixel centers, so a mark at (3.0, 7.0) reads exactly the cell
data[7, 3].
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ChannelMismatch, OutOfBounds, ZeroQueryFeature

FMAP_MAGIC = b"FMAP1\x00"

MARK_SOURCES = ("human_annotated", "propagated")


@dataclass(frozen=True)
class FeatureMap:
    """Dense per-pixel descriptors, data shaped (H, W, C) float32."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float32)
        if d.ndim != 3:
            raise ValueError(f"feature map must be (H, W, C), got shape {d.shape}")
        if d.shape[0] < 1 or d.shape[1] < 1 or d.shape[2] < 1:
            raise ValueError("feature map dimensions must all be >= 1")
        if not np.all(np.isfinite(d)):
            raise ValueError("feature map contains NaN or Inf")
        d.flags.writeable = False
        object.__setattr__(self, "data", d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class Mark:
    """A 2D point of interest with its provenance."""

    u: float
    v: float
    source: str = "human_annotated"

    def __post_init__(self):
        if self.source not in MARK_SOURCES:
            raise ValueError(f"mark source must be one of {MARK_SOURCES}")


def query_feature(Fq: FeatureMap, pq: Mark) -> np.ndarray:
    """Bilinear sample of the feature map at the mark position."""
    u, v = float(pq.u), float(pq.v)
    if not (0.0 <= u < Fq.width and 0.0 <= v < Fq.height):
        raise OutOfBounds(
            f"mark ({u}, {v}) outside feature map {Fq.width}x{Fq.height}"
        )
    x0 = int(np.floor(u))
    y0 = int(np.floor(v))
    x1 = min(x0 + 1, Fq.width - 1)
    y1 = min(y0 + 1, Fq.height - 1)
    ax = u - x0
    ay = v - y0
    d = Fq.data
    top = (1.0 - ax) * d[y0, x0] + ax * d[y0, x1]
    bot = (1.0 - ax) * d[y1, x0] + ax * d[y1, x1]
    return ((1.0 - ay) * top + ay * bot).astype(np.float64)


def propagate_mark(fq: np.ndarray, F: FeatureMap):
    """Locate the cell most similar to the query feature.

    Returns (mark, similarity, heatmap). The heatmap holds the cosine
    similarity per cell; cells with zero feature norm score -1 so padding can
    never win. Ties resolve to the smallest row-major index.
    """
    fq = np.asarray(fq, dtype=np.float64).reshape(-1)
    if fq.shape[0] != F.channels:
        raise ChannelMismatch(
            f"query has {fq.shape[0]} channels, map has {F.channels}"
        )
    qn = np.linalg.norm(fq)
    if qn == 0.0:
        raise ZeroQueryFeature("query feature has zero norm")

    data = F.data.astype(np.float64)
    dots = data @ (fq / qn)
    norms = np.linalg.norm(data, axis=2)
    heatmap = np.full((F.height, F.width), -1.0)
    nz = norms > 0.0
    heatmap[nz] = np.clip(dots[nz] / norms[nz], -1.0, 1.0)

    flat_idx = int(np.argmax(heatmap))
    v, u = divmod(flat_idx, F.width)
    similarity = float(heatmap[v, u])
    return Mark(u=float(u), v=float(v), source="propagated"), similarity, heatmap


# --- file formats ----------------------------------------------------------


def save_fmap(F: FeatureMap, path) -> None:
    """Binary layout: magic, u32 LE H, W, C, then float32 LE data row-major."""
    with open(path, "wb") as f:
        f.write(FMAP_MAGIC)
        f.write(struct.pack("<III", F.height, F.width, F.channels))
        f.write(np.ascontiguousarray(F.data, dtype="<f4").tobytes())


def load_fmap(path, target_size=None) -> FeatureMap:
    """Strict .fmap reader.

    `target_size` is an optional (height, width); maps stored at a coarser
    resolution (e.g. model patch grids) are bilinearly upsampled to it.
    """
    with open(path, "rb") as f:
        magic = f.read(len(FMAP_MAGIC))
        if magic != FMAP_MAGIC:
            raise ValueError(f"bad feature map magic {magic!r}")
        header = f.read(12)
        if len(header) != 12:
            raise ValueError("truncated feature map header")
        h, w, c = struct.unpack("<III", header)
        payload = f.read()
    expected = h * w * c * 4
    if len(payload) != expected:
        raise ValueError(
            f"feature map payload is {len(payload)} bytes, expected {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(h, w, c)
    fmap = FeatureMap(data)
    if target_size is not None and (h, w) != tuple(target_size):
        fmap = FeatureMap(_upsample_bilinear(fmap.data, *target_size))
    return fmap


def _upsample_bilinear(data: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = data.shape[:2]
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    top = (1 - fx) * data[y0][:, x0] + fx * data[y0][:, x1]
    bot = (1 - fx) * data[y1][:, x0] + fx * data[y1][:, x1]
    return ((1 - fy) * top + fy * bot).astype(np.float32)


def save_mark(mark: Mark, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"u": mark.u, "v": mark.v, "source": mark.source}, f, indent=2)
        f.write("\n")


def load_mark(path) -> Mark:
    with open(path, "r", encoding="utf-8") as f:
        d = json.load(f)
    return Mark(u=float(d["u"]), v=float(d["v"]), source=str(d["source"]))
