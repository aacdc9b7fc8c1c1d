"""Robot-arm mask extraction over an episode.

The offline backend segments by change against the episode's median
background: the arm is the thing that moves, the camera is fixed. The
promptable-detector signature (text prompt plus box/text thresholds) is kept
so a grounded detector + promptable segmenter can drop in; this backend uses
`box_threshold` as its normalized difference threshold and ignores the rest.
"""
from __future__ import annotations

import sys

import cv2
import numpy as np

BACKEND_ID = "median-bgdiff/v1"

DEFAULT_PROMPT = "robotic arm"
DEFAULT_BOX_THRESHOLD = 0.35
DEFAULT_TEXT_THRESHOLD = 0.3

# Keep memory bounded on long episodes: the median uses at most this many
# uniformly spaced frames.
MAX_BACKGROUND_FRAMES = 64


def estimate_background(frames: list) -> np.ndarray:
    """Per-pixel median over (a subsample of) the episode's RGB frames."""
    if len(frames) > MAX_BACKGROUND_FRAMES:
        idx = np.round(np.linspace(0, len(frames) - 1, MAX_BACKGROUND_FRAMES))
        frames = [frames[int(i)] for i in np.unique(idx)]
    stack = np.stack(frames)
    return np.median(stack, axis=0)


def segment_frame(
    rgb: np.ndarray,
    background: np.ndarray,
    box_threshold: float = DEFAULT_BOX_THRESHOLD,
) -> np.ndarray:
    """Boolean foreground mask for one frame."""
    diff = np.abs(rgb - background).max(axis=2)
    mask = (diff > box_threshold * diff.max()) if diff.max() > 0 else diff > 0
    # Clean speckle and close small gaps.
    kernel = np.ones((3, 3), np.uint8)
    mask8 = mask.astype(np.uint8)
    mask8 = cv2.morphologyEx(mask8, cv2.MORPH_OPEN, kernel)
    mask8 = cv2.morphologyEx(mask8, cv2.MORPH_CLOSE, kernel)
    return mask8 > 0


def segment_episode(
    frames: list,
    prompt: str = DEFAULT_PROMPT,
    box_threshold: float = DEFAULT_BOX_THRESHOLD,
    text_threshold: float = DEFAULT_TEXT_THRESHOLD,
    warn_stream=None,
) -> list:
    """Masks for every frame; empty detections are kept (all-zero) and warned."""
    del prompt, text_threshold  # recorded in the manifest; unused here
    background = estimate_background(frames)
    masks = []
    for t, frame in enumerate(frames):
        mask = segment_frame(frame, background, box_threshold)
        if not mask.any():
            print(f"warning: no detection in frame {t}, emitting empty mask",
                  file=warn_stream if warn_stream is not None else sys.stderr)
        masks.append(mask)
    return masks
