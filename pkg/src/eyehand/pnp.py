"""Temporal PnP: pair the tracked 2D mark with the FK end-effector path and
solve for the coarse camera-from-base extrinsic.

The solver itself is off the shelf (OpenCV EPnP) followed by a
Levenberg-Marquardt reprojection refinement; this module owns correspondence
assembly, degeneracy checks, cheirality, and the optional RANSAC loop.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import cv2
import numpy as np

from .errors import (
    DegenerateGeometry,
    LengthMismatch,
    NoConsensus,
    SolverFailure,
    TooFewVisible,
)
from .kinematics import JointState, RobotModel, eef_point
from .se3 import Extrinsic, Intrinsics, project_to_so3, transform_points

# EPnP needs 4 points in theory; 6 keeps it well conditioned and episodes
# have frames to spare.
MIN_CORRESPONDENCES = 6

# At most this many uniformly spaced visible frames enter a solve.
DEFAULT_FRAME_CAP = 200

DEFAULT_RANSAC_THRESHOLD_PX = 8.0


@dataclass(frozen=True)
class Track2D:
    """Per-frame 2D track: points (T, 2) pixels, visible (T,) bools."""

    points: np.ndarray
    visible: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        vis = np.asarray(self.visible, dtype=bool).reshape(-1)
        if len(pts) != len(vis):
            raise ValueError("points and visibility lengths differ")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "visible", vis)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class Correspondences:
    """Paired 2D pixels and base-frame 3D points with their frame indices."""

    p2d: np.ndarray
    p3d: np.ndarray
    frames: np.ndarray

    def __post_init__(self):
        p2d = np.asarray(self.p2d, dtype=np.float64).reshape(-1, 2)
        p3d = np.asarray(self.p3d, dtype=np.float64).reshape(-1, 3)
        frames = np.asarray(self.frames, dtype=np.int64).reshape(-1)
        if not (len(p2d) == len(p3d) == len(frames)):
            raise ValueError("correspondence arrays disagree in length")
        object.__setattr__(self, "p2d", p2d)
        object.__setattr__(self, "p3d", p3d)
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.p2d)

    def subset(self, idx) -> "Correspondences":
        return Correspondences(self.p2d[idx], self.p3d[idx], self.frames[idx])


def build_correspondences(
    track: Track2D, model: RobotModel, joints: list
) -> Correspondences:
    """One (2D, 3D) pair per visible frame, 3D from forward kinematics."""
    if len(track) != len(joints):
        raise LengthMismatch(
            f"track has {len(track)} frames, joints has {len(joints)}"
        )
    p2d, p3d, frames = [], [], []
    for t, (q, vis) in enumerate(zip(joints, track.visible)):
        if not vis:
            continue
        p2d.append(track.points[t])
        p3d.append(eef_point(model, q if isinstance(q, JointState) else JointState(q, t)))
        frames.append(t)
    if len(p2d) < MIN_CORRESPONDENCES:
        raise TooFewVisible(
            f"only {len(p2d)} visible frames, need >= {MIN_CORRESPONDENCES}"
        )
    return Correspondences(np.array(p2d), np.array(p3d), np.array(frames))


def _subsample(c: Correspondences, cap: int) -> Correspondences:
    if len(c) <= cap:
        return c
    idx = np.round(np.linspace(0, len(c) - 1, cap)).astype(int)
    return c.subset(np.unique(idx))


def _check_geometry(p3d: np.ndarray) -> None:
    centered = p3d - p3d.mean(axis=0)
    evals = np.linalg.eigvalsh(centered.T @ centered / len(p3d))
    # evals sorted ascending; collinear (or coincident) points leave the two
    # smallest at ~zero relative to the largest.
    if evals[2] <= 0.0 or evals[1] / evals[2] < 1e-12:
        raise DegenerateGeometry("3D points are collinear or coincident")


def reprojection_residuals(T: Extrinsic, c: Correspondences, Kc: Intrinsics) -> np.ndarray:
    """Per-pair reprojection error in pixels (behind-camera pairs get +inf)."""
    cam = transform_points(T, c.p3d)
    z = cam[:, 2]
    res = np.full(len(c), np.inf)
    ok = z > 0
    u = Kc.fx * cam[ok, 0] / z[ok] + Kc.cx
    v = Kc.fy * cam[ok, 1] / z[ok] + Kc.cy
    res[ok] = np.hypot(u - c.p2d[ok, 0], v - c.p2d[ok, 1])
    return res


def _to_extrinsic(rvec, tvec) -> Extrinsic:
    if not (np.all(np.isfinite(rvec)) and np.all(np.isfinite(tvec))):
        raise SolverFailure("solver returned non-finite pose")
    rot, _ = cv2.Rodrigues(np.asarray(rvec, dtype=np.float64))
    return Extrinsic(project_to_so3(rot), np.asarray(tvec, dtype=np.float64).reshape(3))


def solve_pnp(
    c: Correspondences, Kc: Intrinsics, frame_cap: int = DEFAULT_FRAME_CAP
) -> Extrinsic:
    """EPnP closed form plus LM reprojection refinement over all pairs."""
    if len(c) < MIN_CORRESPONDENCES:
        raise TooFewVisible(
            f"{len(c)} correspondences, need >= {MIN_CORRESPONDENCES}"
        )
    c = _subsample(c, frame_cap)
    _check_geometry(c.p3d)

    obj = np.ascontiguousarray(c.p3d, dtype=np.float64)
    img = np.ascontiguousarray(c.p2d, dtype=np.float64)
    K = Kc.matrix()
    ok, rvec, tvec = cv2.solvePnP(obj, img, K, None, flags=cv2.SOLVEPNP_EPNP)
    if not ok:
        raise SolverFailure("EPnP solve failed")
    T_epnp = _to_extrinsic(rvec, tvec)

    criteria = (cv2.TERM_CRITERIA_EPS + cv2.TERM_CRITERIA_COUNT, 200, 1e-12)
    rvec_r, tvec_r = cv2.solvePnPRefineLM(
        obj, img, K, None, rvec.copy(), tvec.copy(), criteria=criteria
    )
    T_refined = _to_extrinsic(rvec_r, tvec_r)

    # Refinement must never worsen the solve; keep the better of the two.
    res_epnp = reprojection_residuals(T_epnp, c, Kc)
    res_ref = reprojection_residuals(T_refined, c, Kc)
    T = T_refined if res_ref.mean() <= res_epnp.mean() else T_epnp

    depths = transform_points(T, c.p3d)[:, 2]
    if depths.mean() <= 0:
        raise SolverFailure("solution places the points behind the camera")
    return T


def solve_pnp_ransac(
    c: Correspondences,
    Kc: Intrinsics,
    threshold_px: float = DEFAULT_RANSAC_THRESHOLD_PX,
    iters: int = 200,
    seed: int = 0,
    frame_cap: int = DEFAULT_FRAME_CAP,
):
    """RANSAC over minimal 6-point subsets, final refit on the inliers.

    Per-iteration RNG streams are derived from (seed, iteration) so the
    result is independent of evaluation order. Returns (extrinsic, mask).
    """
    if len(c) < MIN_CORRESPONDENCES:
        raise TooFewVisible(
            f"{len(c)} correspondences, need >= {MIN_CORRESPONDENCES}"
        )
    c = _subsample(c, frame_cap)

    best_count = 0
    best_mask = None
    for i in range(iters):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
        idx = rng.choice(len(c), size=MIN_CORRESPONDENCES, replace=False)
        try:
            T_i = solve_pnp(c.subset(idx), Kc, frame_cap=frame_cap)
        except (DegenerateGeometry, SolverFailure):
            continue
        mask = reprojection_residuals(T_i, c, Kc) < threshold_px
        count = int(mask.sum())
        if count > best_count:
            best_count, best_mask = count, mask

    if best_count < MIN_CORRESPONDENCES:
        raise NoConsensus(
            f"best consensus has {best_count} inliers, need >= {MIN_CORRESPONDENCES}"
        )
    T = solve_pnp(c.subset(np.flatnonzero(best_mask)), Kc, frame_cap=frame_cap)
    final_mask = reprojection_residuals(T, c, Kc) < threshold_px
    if final_mask.sum() < MIN_CORRESPONDENCES:
        final_mask = best_mask
    return T, final_mask


# --- track.csv --------------------------------------------------------------


def save_track_csv(track: Track2D, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["t", "u", "v", "visible"])
        for t in range(len(track)):
            u, v = track.points[t]
            # 17 significant digits round-trips float64 exactly.
            writer.writerow([t, f"{u:.17g}", f"{v:.17g}", int(track.visible[t])])


def load_track_csv(path) -> Track2D:
    points, visible = [], []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if [h.strip() for h in header] != ["t", "u", "v", "visible"]:
            raise ValueError(f"unexpected track.csv header {header}")
        for row in reader:
            if not row:
                continue
            points.append([float(row[1]), float(row[2])])
            visible.append(bool(int(row[3])))
    return Track2D(np.array(points).reshape(-1, 2), np.array(visible, dtype=bool))
