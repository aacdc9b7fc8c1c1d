"""Interchange formats consumed by the calibration toolkit.

These writers are kept independent of the toolkit package on purpose: the
byte formats are the contract between the two sides.

.fmap: magic "FMAP1\\0", u32 LE height/width/channels, float32 LE data in
row-major (v, u, channel) order. Mark JSON: {"u", "v", "source"}. Track CSV:
header "t,u,v,visible". Mask PNG: 8-bit grayscale, foreground 255.
"""
from __future__ import annotations

import csv
import json
import struct

import numpy as np
from PIL import Image

FMAP_MAGIC = b"FMAP1\x00"


def write_fmap(data: np.ndarray, path) -> None:
    data = np.ascontiguousarray(data, dtype="<f4")
    if data.ndim != 3:
        raise ValueError(f"feature map must be (H, W, C), got {data.shape}")
    if not np.all(np.isfinite(data)):
        raise ValueError("feature map contains non-finite values")
    h, w, c = data.shape
    with open(path, "wb") as f:
        f.write(FMAP_MAGIC)
        f.write(struct.pack("<III", h, w, c))
        f.write(data.tobytes())


def write_mark(u: float, v: float, source: str, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"u": float(u), "v": float(v), "source": source}, f, indent=2)
        f.write("\n")


def read_mark(path):
    with open(path, "r", encoding="utf-8") as f:
        d = json.load(f)
    return float(d["u"]), float(d["v"]), str(d["source"])


def write_track(points: np.ndarray, visible: np.ndarray, path) -> None:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    visible = np.asarray(visible, dtype=bool).reshape(-1)
    if len(points) != len(visible):
        raise ValueError("points and visibility lengths differ")
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["t", "u", "v", "visible"])
        for t, ((u, v), vis) in enumerate(zip(points, visible)):
            writer.writerow([t, f"{u:.17g}", f"{v:.17g}", int(vis)])


def write_mask(mask: np.ndarray, path) -> None:
    """Binary mask to 8-bit PNG with values in {0, 255}."""
    out = np.where(np.asarray(mask) > 0, 255, 0).astype(np.uint8)
    Image.fromarray(out, mode="L").save(path)


def load_image_gray(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L"), dtype=np.float64) / 255.0


def load_image_rgb(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
