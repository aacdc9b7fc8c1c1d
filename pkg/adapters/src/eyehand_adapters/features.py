"""Dense per-pixel descriptors for cross-image mark propagation.

The default backend is a classical multi-scale filter bank (color opponents,
oriented gradients, local contrast) computed on a stride-`patch` grid and
bilinearly upsampled to image resolution, mirroring the patch-grid-then-
upsample layout of transformer feature extractors. It is deterministic and
needs no downloaded weights, which keeps the adapters runnable offline; a
learned extractor can be swapped in behind `extract_dense_features`.
"""
from __future__ import annotations

import cv2
import numpy as np

BACKEND_ID = "colorgrad-bank/v1"
UPSAMPLING = "bilinear"

# Feature layout: 3 color opponents + gradient magnitude at 2 scales +
# 4 oriented gradient responses + local standard deviation = 10 channels.
CHANNELS = 10

DEFAULT_PATCH = 4


def _color_opponents(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    lum = (r + g + b) / 3.0
    return np.stack([lum, r - g, (r + g) / 2.0 - b], axis=-1)


def _local_std(gray: np.ndarray, ksize: int = 7) -> np.ndarray:
    mean = cv2.blur(gray, (ksize, ksize))
    sq = cv2.blur(gray * gray, (ksize, ksize))
    return np.sqrt(np.maximum(sq - mean * mean, 0.0))


def extract_dense_features(rgb: np.ndarray, patch: int = DEFAULT_PATCH) -> np.ndarray:
    """(H, W, CHANNELS) float32 descriptors at full image resolution."""
    rgb = np.asarray(rgb, dtype=np.float64)
    h, w = rgb.shape[:2]
    gray = rgb.mean(axis=2)

    gx = cv2.Sobel(gray, cv2.CV_64F, 1, 0, ksize=3)
    gy = cv2.Sobel(gray, cv2.CV_64F, 0, 1, ksize=3)
    mag1 = np.hypot(gx, gy)
    blur = cv2.GaussianBlur(gray, (0, 0), 2.0)
    gx2 = cv2.Sobel(blur, cv2.CV_64F, 1, 0, ksize=3)
    gy2 = cv2.Sobel(blur, cv2.CV_64F, 0, 1, ksize=3)
    mag2 = np.hypot(gx2, gy2)

    # Half-wave rectified responses along 4 orientations.
    oriented = [
        np.maximum(gx, 0.0),
        np.maximum(-gx, 0.0),
        np.maximum(gy, 0.0),
        np.maximum(-gy, 0.0),
    ]

    full = np.concatenate(
        [
            _color_opponents(rgb),
            mag1[..., None],
            mag2[..., None],
            np.stack(oriented, axis=-1),
            _local_std(gray)[..., None],
        ],
        axis=-1,
    )

    # Pool to the patch grid, then upsample back: features become locally
    # smooth the way patch-token maps are.
    if patch > 1:
        gh, gw = max(1, h // patch), max(1, w // patch)
        pooled = cv2.resize(full, (gw, gh), interpolation=cv2.INTER_AREA)
        full = cv2.resize(pooled, (w, h), interpolation=cv2.INTER_LINEAR)
    return full.astype(np.float32)


def sample_feature(features: np.ndarray, u: float, v: float) -> np.ndarray:
    """Bilinear sample at continuous pixel coordinates (centers at integers)."""
    h, w = features.shape[:2]
    if not (0 <= u < w and 0 <= v < h):
        raise ValueError(f"mark ({u}, {v}) outside image {w}x{h}")
    x0, y0 = int(np.floor(u)), int(np.floor(v))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    ax, ay = u - x0, v - y0
    top = (1 - ax) * features[y0, x0] + ax * features[y0, x1]
    bot = (1 - ax) * features[y1, x0] + ax * features[y1, x1]
    return ((1 - ay) * top + ay * bot).astype(np.float64)


def propagate(query: np.ndarray, features: np.ndarray):
    """Cosine-similarity argmax of `query` over a dense feature map.

    Returns (u, v, similarity). Zero-norm cells score -1; ties resolve to
    the smallest row-major index.
    """
    query = np.asarray(query, dtype=np.float64)
    qn = np.linalg.norm(query)
    if qn == 0:
        raise ValueError("query feature has zero norm")
    data = features.astype(np.float64)
    dots = data @ (query / qn)
    norms = np.linalg.norm(data, axis=2)
    heat = np.full(data.shape[:2], -1.0)
    nz = norms > 0
    heat[nz] = np.clip(dots[nz] / norms[nz], -1.0, 1.0)
    idx = int(np.argmax(heat))
    v, u = divmod(idx, data.shape[1])
    return float(u), float(v), float(heat[v, u])
