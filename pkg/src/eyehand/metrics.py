"""Pose-error metrics (ADD, thresholded-accuracy AUC) and the noise-grid
convergence harness that maps the refinement basin.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CalibrationError
from .kinematics import JointState, posed_meshes
from .placement import sample_camera_extrinsic
from .refine import RefineConfig, default_frames, refine
from .render import render
from .se3 import (
    Extrinsic,
    PoseTangent,
    retract,
    rotation_geodesic_deg,
    transform_points,
    translation_dist_m,
)

DEFAULT_AUC_MAX_THRESHOLD_M = 0.10
DEFAULT_AUC_BINS = 100
DEFAULT_MAX_EVAL_POINTS = 2000

VERDICT_CONVERGED = "converged"
VERDICT_PARTIAL = "partial"
VERDICT_FAILED = "failed"

# The likely-to-converge rule needs the error at most this fraction of the
# injected noise, and inside the cell's own noise range.
GREEN_CONTRACTION = 0.5


@dataclass(frozen=True)
class MetricConfig:
    eval_points: np.ndarray
    auc_max_threshold: float = DEFAULT_AUC_MAX_THRESHOLD_M
    auc_bins: int = DEFAULT_AUC_BINS

    def __post_init__(self):
        pts = np.asarray(self.eval_points, dtype=np.float64).reshape(-1, 3)
        if len(pts) < 1:
            raise ValueError("need at least one evaluation point")
        if self.auc_max_threshold <= 0 or self.auc_bins <= 0:
            raise ValueError("AUC threshold and bin count must be positive")
        pts.flags.writeable = False
        object.__setattr__(self, "eval_points", pts)

    @classmethod
    def for_robot(cls, model, max_points: int = DEFAULT_MAX_EVAL_POINTS, **kwargs):
        """Eval points defaulted to the robot's mesh vertices at the home
        configuration, subsampled to at most `max_points`."""
        q = JointState(np.zeros(model.n_actuated))
        verts = np.concatenate([m.vertices for m in posed_meshes(model, q)])
        if len(verts) > max_points:
            idx = np.round(np.linspace(0, len(verts) - 1, max_points)).astype(int)
            verts = verts[np.unique(idx)]
        return cls(eval_points=verts, **kwargs)


def add_metric(T_pred: Extrinsic, T_gt: Extrinsic, cfg: MetricConfig) -> float:
    """Mean displacement of the eval points between the two transforms."""
    a = transform_points(T_pred, cfg.eval_points)
    b = transform_points(T_gt, cfg.eval_points)
    return float(np.linalg.norm(a - b, axis=1).mean())


def point_distances(T_pred: Extrinsic, T_gt: Extrinsic, cfg: MetricConfig) -> np.ndarray:
    a = transform_points(T_pred, cfg.eval_points)
    b = transform_points(T_gt, cfg.eval_points)
    return np.linalg.norm(a - b, axis=1)


def auc_metric(distances, cfg: MetricConfig) -> float:
    """Accuracy-vs-threshold area: thresholds are i * (max / bins) for
    i = 0..bins-1, accuracy uses a strict '<' comparison."""
    d = np.asarray(distances, dtype=np.float64)
    if np.any(d < 0):
        raise ValueError("distances must be non-negative")
    step = cfg.auc_max_threshold / cfg.auc_bins
    total = 0.0
    for i in range(cfg.auc_bins):
        total += float(np.mean(d < i * step))
    return total / cfg.auc_bins


def sample_noise(pos_range_cm, rot_range_deg, rng) -> PoseTangent:
    """Random pose perturbation: spherically uniform directions, uniform
    magnitudes inside the closed ranges (cm and degrees)."""

    def unit(rng):
        while True:
            v = rng.normal(size=3)
            n = np.linalg.norm(v)
            if n > 1e-12:
                return v / n

    pos_lo, pos_hi = pos_range_cm
    rot_lo, rot_hi = rot_range_deg
    if pos_lo > pos_hi or rot_lo > rot_hi or pos_lo < 0 or rot_lo < 0:
        raise ValueError("noise ranges must be ordered and non-negative")
    dist_m = rng.uniform(pos_lo, pos_hi) / 100.0
    angle_rad = math.radians(rng.uniform(rot_lo, rot_hi))
    return PoseTangent(omega=unit(rng) * angle_rad, nu=unit(rng) * dist_m)


@dataclass(frozen=True)
class NoiseGridSpec:
    pos_ranges: tuple
    rot_ranges: tuple
    n_poses: int = 20
    m_samples: int = 20
    seed: int = 0

    def __post_init__(self):
        pos = tuple((float(a), float(b)) for a, b in self.pos_ranges)
        rot = tuple((float(a), float(b)) for a, b in self.rot_ranges)
        for lo, hi in pos + rot:
            if lo > hi or lo < 0:
                raise ValueError(f"bad noise range ({lo}, {hi})")
        if self.n_poses < 1 or self.m_samples < 1:
            raise ValueError("n_poses and m_samples must be positive")
        object.__setattr__(self, "pos_ranges", pos)
        object.__setattr__(self, "rot_ranges", rot)


@dataclass
class GridCellResult:
    rot_range: tuple
    pos_range: tuple
    mean_rot_err: float
    std_rot_err: float
    mean_pos_err: float
    std_pos_err: float
    verdict: str
    injected_rot_mean: float
    injected_pos_mean: float
    failed_samples: int = 0


def _cell_verdict(mean_rot, mean_pos, rot_range, pos_range, inj_rot, inj_pos) -> str:
    # Guaranteed convergence per the strict thresholds.
    if mean_rot < 1.0 and mean_pos < 0.1:
        return VERDICT_CONVERGED
    # Refinement left the pose worse than the injected noise on either axis:
    # convergence is not achievable from this cell.
    if mean_rot > inj_rot or mean_pos > inj_pos:
        return VERDICT_FAILED
    # Likely convergent: errors contracted strongly and remain inside the
    # cell's own (tested) noise range, so iterating further stays in-basin.
    if (
        mean_rot <= rot_range[1]
        and mean_pos <= pos_range[1]
        and mean_rot <= GREEN_CONTRACTION * inj_rot
        and mean_pos <= GREEN_CONTRACTION * inj_pos
    ):
        return VERDICT_CONVERGED
    return VERDICT_PARTIAL


def convergence_grid(model, episode, spec: NoiseGridSpec, refine_cfg: RefineConfig):
    """Run the noise-grid study: for every (rotation, position) noise cell,
    perturb `n_poses` ground-truth camera placements `m_samples` times each,
    refine back, and aggregate the per-pose mean errors.

    Returns a list of rows (one per rot range) of GridCellResult.
    """
    frames = refine_cfg.frames if refine_cfg.frames else default_frames(len(episode.joints))
    refine_cfg = refine_cfg.with_frames(frames)
    joints_check = [episode.joints[k] for k in frames]
    Kc = episode.intrinsics

    workspace = np.concatenate(
        [m.vertices for m in posed_meshes(model, joints_check[0])]
    )
    center = workspace.mean(axis=0)
    radius = float(np.linalg.norm(workspace - center, axis=1).max())

    gt_poses = []
    gt_masks = []
    for i in range(spec.n_poses):
        rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(0, i)))
        # Desk-scale viewing distance: close enough that a centimeter spans
        # a couple of pixels, which is what the refinement resolves against.
        distance = rng.uniform(1.6, 2.2) * radius
        T_gt = sample_camera_extrinsic(
            model, joints_check, Kc, rng, distance, center, ss=1
        )
        masks = {
            k: render(model, episode.joints[k], T_gt, Kc, ss=refine_cfg.supersample).coverage
            for k in frames
        }
        gt_poses.append(T_gt)
        gt_masks.append(masks)

    rows = []
    for r_idx, rot_range in enumerate(spec.rot_ranges):
        row = []
        for p_idx, pos_range in enumerate(spec.pos_ranges):
            per_pose_rot = []
            per_pose_pos = []
            inj_rot_all = []
            inj_pos_all = []
            failed_samples = 0
            for i, (T_gt, masks) in enumerate(zip(gt_poses, gt_masks)):
                rot_errs = []
                pos_errs = []
                for j in range(spec.m_samples):
                    rng = np.random.default_rng(
                        np.random.SeedSequence(
                            spec.seed, spawn_key=(1, r_idx, p_idx, i, j)
                        )
                    )
                    tangent = sample_noise(pos_range, rot_range, rng)
                    inj_rot_all.append(math.degrees(np.linalg.norm(tangent.omega)))
                    inj_pos_all.append(100.0 * np.linalg.norm(tangent.nu))
                    T_start = retract(T_gt, tangent)
                    try:
                        report = refine(episode, model, T_start, masks, refine_cfg)
                        T_final = report.final_extrinsic
                        if report.collapsed:
                            failed_samples += 1
                    except CalibrationError:
                        failed_samples += 1
                        T_final = T_start
                    rot_errs.append(
                        rotation_geodesic_deg(T_gt.rotation, T_final.rotation)
                    )
                    pos_errs.append(
                        100.0
                        * translation_dist_m(T_gt.translation, T_final.translation)
                    )
                per_pose_rot.append(float(np.mean(rot_errs)))
                per_pose_pos.append(float(np.mean(pos_errs)))

            mean_rot = float(np.mean(per_pose_rot))
            mean_pos = float(np.mean(per_pose_pos))
            inj_rot = float(np.mean(inj_rot_all))
            inj_pos = float(np.mean(inj_pos_all))
            row.append(
                GridCellResult(
                    rot_range=rot_range,
                    pos_range=pos_range,
                    mean_rot_err=mean_rot,
                    std_rot_err=float(np.std(per_pose_rot)),
                    mean_pos_err=mean_pos,
                    std_pos_err=float(np.std(per_pose_pos)),
                    verdict=_cell_verdict(
                        mean_rot, mean_pos, rot_range, pos_range, inj_rot, inj_pos
                    ),
                    injected_rot_mean=inj_rot,
                    injected_pos_mean=inj_pos,
                    failed_samples=failed_samples,
                )
            )
        rows.append(row)
    return rows


def save_grid_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            [
                "rot_lo",
                "rot_hi",
                "pos_lo",
                "pos_hi",
                "mean_rot",
                "std_rot",
                "mean_pos",
                "std_pos",
                "verdict",
            ]
        )
        for row in rows:
            for cell in row:
                writer.writerow(
                    [
                        f"{cell.rot_range[0]:g}",
                        f"{cell.rot_range[1]:g}",
                        f"{cell.pos_range[0]:g}",
                        f"{cell.pos_range[1]:g}",
                        f"{cell.mean_rot_err:.4f}",
                        f"{cell.std_rot_err:.4f}",
                        f"{cell.mean_pos_err:.4f}",
                        f"{cell.std_pos_err:.4f}",
                        cell.verdict,
                    ]
                )


def format_grid_table(rows) -> str:
    """Text table: rotation ranges down, position ranges across, each cell
    'rot_err ± std / pos_err ± std [verdict initial]'."""
    if not rows:
        return "(empty grid)\n"
    pos_ranges = [cell.pos_range for cell in rows[0]]
    col_heads = [f"pos {lo:g}-{hi:g} cm" for lo, hi in pos_ranges]
    cells = []
    for row in rows:
        line = []
        for cell in row:
            line.append(
                f"{cell.mean_rot_err:.1f}±{cell.std_rot_err:.1f}° / "
                f"{cell.mean_pos_err:.1f}±{cell.std_pos_err:.1f}cm "
                f"[{cell.verdict[0].upper()}]"
            )
        cells.append(line)
    width = max(
        [len(h) for h in col_heads] + [len(c) for line in cells for c in line]
    )
    head_col = max(len(f"rot {lo:g}-{hi:g}°") for (lo, hi) in (r[0].rot_range for r in rows))
    out = [" " * head_col + " | " + " | ".join(h.ljust(width) for h in col_heads)]
    out.append("-" * len(out[0]))
    for row, line in zip(rows, cells):
        lo, hi = row[0].rot_range
        out.append(
            f"rot {lo:g}-{hi:g}°".ljust(head_col)
            + " | "
            + " | ".join(c.ljust(width) for c in line)
        )
    return "\n".join(out) + "\n"
