"""Video point tracking via pyramidal Lucas-Kanade (the off-the-shelf
tracker OpenCV ships). One point in, one row per frame out."""
from __future__ import annotations

import cv2
import numpy as np

BACKEND_ID = f"pyramidal-lk/opencv-{cv2.__version__}"

LK_PARAMS = dict(
    winSize=(21, 21),
    maxLevel=3,
    criteria=(cv2.TERM_CRITERIA_EPS | cv2.TERM_CRITERIA_COUNT, 30, 0.01),
)


def track_point(frames_gray: list, u: float, v: float):
    """Track (u, v) from frame 0 through the episode.

    Returns (points (T, 2), visible (T,)). A frame where the tracker loses
    the point keeps the last position with visible=False; tracking resumes
    from that position when the flow locks on again.
    """
    if not frames_gray:
        raise ValueError("no frames to track over")
    h, w = frames_gray[0].shape[:2]
    as_u8 = [
        np.clip(f * 255.0, 0, 255).astype(np.uint8) if f.dtype != np.uint8 else f
        for f in frames_gray
    ]
    points = [np.array([u, v])]
    visible = [0 <= u < w and 0 <= v < h]
    prev = as_u8[0]
    cur = np.array([[[u, v]]], dtype=np.float32)
    for t in range(1, len(as_u8)):
        nxt, status, _err = cv2.calcOpticalFlowPyrLK(prev, as_u8[t], cur, None, **LK_PARAMS)
        ok = bool(status.ravel()[0])
        pt = nxt.ravel().astype(np.float64)
        inside = bool(0 <= pt[0] < w and 0 <= pt[1] < h)
        if ok and inside:
            points.append(pt)
            visible.append(True)
            cur = nxt
        else:
            points.append(points[-1].copy())
            visible.append(False)
            # keep `cur` at the last good position to re-acquire
        prev = as_u8[t]
    return np.array(points), np.array(visible, dtype=bool)
