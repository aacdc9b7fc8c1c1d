"""Camera placement helpers: look-at construction and rejection sampling."""
from __future__ import annotations

import numpy as np

from .errors import PlacementFailure
from .render import render
from .se3 import Extrinsic

WORLD_UP = np.array([0.0, 0.0, 1.0])


def look_at_extrinsic(camera_pos, target, up=WORLD_UP) -> Extrinsic:
    """Extrinsic for a camera at `camera_pos` looking at `target`.

    Camera +Z points at the target and +Y points as far down (against `up`)
    as the geometry allows.
    """
    camera_pos = np.asarray(camera_pos, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    z_c = target - camera_pos
    n = np.linalg.norm(z_c)
    if n == 0:
        raise ValueError("camera position coincides with the target")
    z_c = z_c / n
    up = np.asarray(up, dtype=np.float64)
    x_c = np.cross(z_c, up)
    if np.linalg.norm(x_c) < 1e-9:
        x_c = np.cross(z_c, np.array([1.0, 0.0, 0.0]))
    x_c = x_c / np.linalg.norm(x_c)
    y_c = np.cross(z_c, x_c)
    rot = np.stack([x_c, y_c, z_c])  # rows: camera axes in base coordinates
    return Extrinsic(rot, -rot @ camera_pos)


def sample_camera_extrinsic(
    model,
    joints_check,
    Kc,
    rng,
    distance,
    target,
    ss=1,
    min_coverage=0.01,
    max_attempts=1000,
    elevation_range_deg=(10.0, 60.0),
    extra_accept=None,
):
    """Rejection-sample a camera pose that keeps the robot in view.

    Accepts the first pose whose rendered coverage exceeds `min_coverage`
    for every joint state in `joints_check` and which passes the optional
    `extra_accept(T)` predicate.
    """
    target = np.asarray(target, dtype=np.float64)
    lo, hi = np.radians(elevation_range_deg)
    for _ in range(max_attempts):
        azim = rng.uniform(0.0, 2.0 * np.pi)
        elev = rng.uniform(lo, hi)
        offset = distance * np.array(
            [np.cos(elev) * np.cos(azim), np.cos(elev) * np.sin(azim), np.sin(elev)]
        )
        T = look_at_extrinsic(target + offset, target)
        ok = True
        for q in joints_check:
            coverage = render(model, q, T, Kc, ss=ss).coverage
            if coverage.mean() <= min_coverage:
                ok = False
                break
        if ok and extra_accept is not None and not extra_accept(T):
            ok = False
        if ok:
            return T
    raise PlacementFailure(
        f"no camera pose with coverage > {min_coverage:.0%} in {max_attempts} attempts"
    )
