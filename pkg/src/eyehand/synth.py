"""Synthetic episode generator.

Builds fully self-consistent episodes (robot description, joint sweep,
camera, masks, track, feature maps, ground-truth extrinsic) so the rest of
the pipeline can be exercised and checked against a known answer without any
external model or dataset. The emitted mark is deliberately offset from the
kinematic end-effector point by default, reproducing the bias a surface
mark has against the tool origin.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from .correspondence import FeatureMap, Mark, save_fmap, save_mark
from .episode import load_episode, save_joints_csv
from .errors import PlacementFailure
from .kinematics import (
    JointState,
    LinkSpec,
    RobotModel,
    TriangleMesh,
    forward_kinematics,
    posed_meshes,
    save_robot,
)
from .placement import sample_camera_extrinsic
from .pnp import Track2D, save_track_csv
from .render import project_trajectory, render, save_mask_png
from .se3 import Intrinsics, transform_point

ARM_TYPES = ("single_link", "planar_3dof", "spatial_6dof")

FEATURE_CHANNELS = 8
REFERENCE_MAP_SIZE = 33

# Color per link index for the flat RGB frames.
LINK_PALETTE = np.array(
    [
        [204, 102, 51],
        [51, 128, 204],
        [77, 179, 77],
        [204, 178, 26],
        [153, 77, 204],
        [218, 112, 130],
        [64, 188, 188],
        [150, 150, 150],
    ],
    dtype=np.uint8,
)
BACKGROUND_RGB = np.array([230, 230, 230], dtype=np.uint8)


@dataclass(frozen=True)
class SynthSpec:
    arm: str = "spatial_6dof"
    n_frames: int = 60
    camera_distance: float = 1.0
    track_noise_px: float = 0.0
    mark_offset: tuple = (0.02, 0.0, 0.0)
    mask_noise: str = "none"
    seed: int = 0
    width: int = 320
    height: int = 240
    fov_deg: float = 60.0
    supersample: int = 2

    def __post_init__(self):
        if self.arm not in ARM_TYPES:
            raise ValueError(f"arm must be one of {ARM_TYPES}")
        if self.n_frames < 2:
            raise ValueError("need at least two frames")
        if self.camera_distance <= 0:
            raise ValueError("camera distance must be positive")
        if self.track_noise_px < 0:
            raise ValueError("track noise must be non-negative")
        _parse_mask_noise(self.mask_noise)

    def intrinsics(self) -> Intrinsics:
        fx = (self.width / 2.0) / math.tan(math.radians(self.fov_deg) / 2.0)
        return Intrinsics(
            fx=fx,
            fy=fx,
            cx=(self.width - 1) / 2.0,
            cy=(self.height - 1) / 2.0,
            width=self.width,
            height=self.height,
        )


def _parse_mask_noise(s: str):
    if s == "none":
        return ("none", 0.0)
    kind, _, arg = s.partition("_")
    if kind in ("dilate", "erode"):
        k = int(arg)
        if k < 1:
            raise ValueError(f"{kind} iterations must be >= 1")
        return (kind, k)
    if kind == "speckle":
        p = float(arg)
        if not (0.0 <= p <= 1.0):
            raise ValueError("speckle probability must be in [0, 1]")
        return (kind, p)
    raise ValueError(f"unknown mask noise {s!r}")


# --- primitive meshes -------------------------------------------------------


def make_box(extents, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    ex, ey, ez = (e / 2.0 for e in extents)
    cx, cy, cz = center
    verts = np.array(
        [
            [sx * ex + cx, sy * ey + cy, sz * ez + cz]
            for sx in (-1, 1)
            for sy in (-1, 1)
            for sz in (-1, 1)
        ]
    )
    tris = np.array(
        [
            [0, 1, 3], [0, 3, 2],  # -x
            [4, 6, 7], [4, 7, 5],  # +x
            [0, 4, 5], [0, 5, 1],  # -y
            [2, 3, 7], [2, 7, 6],  # +y
            [0, 2, 6], [0, 6, 4],  # -z
            [1, 5, 7], [1, 7, 3],  # +z
        ]
    )
    return TriangleMesh(verts, tris)


def make_cylinder(radius, p0, p1, segments=20) -> TriangleMesh:
    """Closed cylinder from point p0 to p1."""
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    axis = p1 - p0
    length = np.linalg.norm(axis)
    if length < 1e-12:
        raise ValueError("cylinder endpoints coincide")
    z = axis / length
    # Any vector not parallel to z seeds the orthonormal frame.
    a = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = np.cross(a, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)

    angles = 2.0 * np.pi * np.arange(segments) / segments
    ring = np.outer(np.cos(angles), x) + np.outer(np.sin(angles), y)
    bottom = p0 + radius * ring
    top = bottom + axis
    verts = np.concatenate([bottom, top, [p0], [p1]])
    i_bot, i_top = 2 * segments, 2 * segments + 1

    tris = []
    for k in range(segments):
        k2 = (k + 1) % segments
        tris.append([k, k2, segments + k])
        tris.append([k2, segments + k2, segments + k])
        tris.append([i_bot, k2, k])
        tris.append([i_top, segments + k, segments + k2])
    return TriangleMesh(verts, np.array(tris))


def merge_meshes(meshes) -> TriangleMesh:
    verts = []
    tris = []
    offset = 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + offset)
        offset += len(m.vertices)
    return TriangleMesh(np.concatenate(verts), np.concatenate(tris))


def _link_origin_step(alpha, a, d) -> np.ndarray:
    """Child frame origin expressed in the parent link frame."""
    return np.array([a, -math.sin(alpha) * d, math.cos(alpha) * d])


def _make_arm_model(arm: str) -> RobotModel:
    """Hand-designed MDH chains; each link's mesh is a cylinder spanning to
    the next joint plus a hub at its own joint, so any chain looks armlike."""
    if arm == "single_link":
        mdh = [(0.0, 0.0, 0.0, 0.0)]
        reach = [np.array([0.30, 0.0, 0.0])]
        eef_index = 0
        eef_offset = np.array([0.30, 0.0, 0.0])
    elif arm == "planar_3dof":
        mdh = [
            (0.0, 0.0, 0.0, 0.0),
            (0.0, 0.30, 0.0, 0.0),
            (0.0, 0.25, 0.0, 0.0),
        ]
        reach = [
            np.array([0.30, 0.0, 0.0]),
            np.array([0.25, 0.0, 0.0]),
            np.array([0.20, 0.0, 0.0]),
        ]
        eef_index = 2
        eef_offset = np.array([0.20, 0.0, 0.0])
    else:  # spatial_6dof
        mdh = [
            (0.0, 0.0, 0.30, 0.0),
            (-math.pi / 2.0, 0.0, 0.0, -math.pi / 2.0),
            (0.0, 0.30, 0.0, 0.0),
            (-math.pi / 2.0, 0.05, 0.28, 0.0),
            (math.pi / 2.0, 0.0, 0.0, 0.0),
            (-math.pi / 2.0, 0.0, 0.10, 0.0),
        ]
        # Between consecutive links the body spans to the child origin; the
        # final link carries a short flange toward the tool.
        reach = [_link_origin_step(*mdh[i + 1][:3]) for i in range(5)]
        reach.append(np.array([0.0, 0.0, 0.06]))
        eef_index = 5
        eef_offset = np.array([0.0, 0.0, 0.06])

    links = []
    for i, (alpha, a, d, theta) in enumerate(mdh):
        parts = [make_cylinder(0.030, (0.0, 0.0, -0.035), (0.0, 0.0, 0.035), segments=16)]
        span = reach[i]
        if np.linalg.norm(span) > 0.05:
            parts.append(make_cylinder(0.022, (0.0, 0.0, 0.0), span, segments=16))
        else:
            parts.append(make_box((0.06, 0.06, 0.06)))
        mesh = merge_meshes(parts)
        links.append(
            LinkSpec(
                name=f"link{i + 1}",
                alpha_prev=alpha,
                a_prev=a,
                d=d,
                theta_offset=theta,
                joint_type="revolute",
                mesh=mesh,
            )
        )
    # Base pedestal under the first joint, fixed to the base frame.
    base = LinkSpec(
        name="base",
        alpha_prev=0.0,
        a_prev=0.0,
        d=0.0,
        theta_offset=0.0,
        joint_type="fixed",
        mesh=make_cylinder(0.05, (0.0, 0.0, -0.02), (0.0, 0.0, 0.02), segments=16),
    )
    return RobotModel(
        links=(base, *links), eef_link_index=eef_index + 1, eef_offset=eef_offset
    )


def make_arm(arm: str) -> RobotModel:
    return _make_arm_model(arm)


def _joint_path(model: RobotModel, n_frames: int, rng) -> list:
    n = model.n_actuated
    amp = rng.uniform(0.35, 0.7, size=n)
    freq = rng.uniform(0.5, 1.2, size=n)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=n)
    center = rng.uniform(-0.3, 0.3, size=n)
    taus = np.linspace(0.0, 1.0, n_frames)
    return [
        JointState(center + amp * np.sin(2.0 * np.pi * freq * tau + phase), t=t)
        for t, tau in enumerate(taus)
    ]


def _corrupt_mask(coverage: np.ndarray, noise: str, rng) -> np.ndarray:
    kind, arg = _parse_mask_noise(noise)
    if kind == "none":
        return coverage
    img = np.floor(coverage * 255.0 + 0.5).astype(np.uint8)
    if kind == "dilate":
        out = cv2.dilate(img, np.ones((3, 3), np.uint8), iterations=int(arg))
    elif kind == "erode":
        out = cv2.erode(img, np.ones((3, 3), np.uint8), iterations=int(arg))
    else:  # speckle: flip a random subset of pixels
        out = img.copy()
        flip = rng.random(img.shape) < arg
        out[flip] = 255 - out[flip]
    return out.astype(np.float64) / 255.0


def _flat_frame_rgb(link_id: np.ndarray) -> np.ndarray:
    h, w = link_id.shape
    rgb = np.empty((h, w, 3), dtype=np.uint8)
    rgb[:] = BACKGROUND_RGB
    fg = link_id >= 0
    rgb[fg] = LINK_PALETTE[link_id[fg] % len(LINK_PALETTE)]
    return rgb


def _background_features(rng, h, w) -> np.ndarray:
    data = np.zeros((h, w, FEATURE_CHANNELS), dtype=np.float32)
    data[:, :, 1:] = rng.uniform(0.1, 1.0, size=(h, w, FEATURE_CHANNELS - 1)).astype(
        np.float32
    )
    return data


def _delta_feature() -> np.ndarray:
    e0 = np.zeros(FEATURE_CHANNELS, dtype=np.float32)
    e0[0] = 1.0
    return e0


def mark_point_3d(model: RobotModel, q: JointState, mark_offset) -> np.ndarray:
    """Base-frame position of the tracked mark: the EEF point plus a constant
    base-frame offset. The offset models the mark sitting away from the tool
    origin; keeping it fixed in the base frame bounds the coarse-stage bias
    by the offset length itself."""
    poses = forward_kinematics(model, q)
    eef = transform_point(poses[model.eef_link_index], model.eef_offset)
    return eef + np.asarray(mark_offset, dtype=np.float64)


def generate_episode(spec: SynthSpec, out_dir):
    """Write a complete synthetic episode into `out_dir`; returns the loaded
    Episode plus the ground-truth extrinsic."""
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)
    (out / "features").mkdir(exist_ok=True)

    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    model = make_arm(spec.arm)
    joints = _joint_path(model, spec.n_frames, rng)
    Kc = spec.intrinsics()

    save_robot(model, out / "robot.json")
    save_joints_csv(joints, out / "joints.csv")
    Kc.save(out / "intrinsics.json")

    # Camera placement: aim at the center of everything that must stay in
    # view (robot geometry plus the swept mark path).
    verts0 = np.concatenate([m.vertices for m in posed_meshes(model, joints[0])])
    mark_pts = [mark_point_3d(model, q, spec.mark_offset) for q in joints]
    in_view = np.concatenate([verts0, np.asarray(mark_pts)])
    target = (in_view.min(axis=0) + in_view.max(axis=0)) / 2.0

    def mark_mostly_visible(T):
        # Frame 0 seeds the tracker, so its mark must be in view; the rest
        # may dip out briefly (the in-and-out case downstream code handles).
        proj = project_trajectory(mark_pts, T, Kc)
        return proj[0][1] and np.mean([v for _, v in proj]) >= 0.9

    probe = [joints[0], joints[len(joints) // 2], joints[-1]]
    placement_rng = np.random.default_rng(
        np.random.SeedSequence(spec.seed, spawn_key=(2,))
    )
    # Wide sweeps may not fit the view at the requested distance; back the
    # camera off in stages, spending the 1000-attempt budget across them.
    T_gt = None
    for scale in (1.0, 1.25, 1.5, 2.0):
        try:
            T_gt = sample_camera_extrinsic(
                model,
                probe,
                Kc,
                placement_rng,
                spec.camera_distance * scale,
                target,
                ss=1,
                max_attempts=250,
                extra_accept=mark_mostly_visible,
            )
            break
        except PlacementFailure:
            continue
    if T_gt is None:
        raise PlacementFailure(
            "no camera pose keeps the robot and mark in view, even at "
            f"{2.0 * spec.camera_distance:g} m"
        )
    T_gt.save(out / "gt_extrinsic.json")

    # Track: projected surface mark with optional pixel noise.
    proj = project_trajectory(mark_pts, T_gt, Kc)
    points = np.array([uv for uv, _ in proj])
    visible = np.array([v for _, v in proj], dtype=bool)
    if spec.track_noise_px > 0:
        noise_rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(3,)))
        points = points + noise_rng.normal(0.0, spec.track_noise_px, size=points.shape)
        inside = (
            (points[:, 0] >= 0)
            & (points[:, 0] < Kc.width)
            & (points[:, 1] >= 0)
            & (points[:, 1] < Kc.height)
        )
        visible = visible & inside
    save_track_csv(Track2D(points, visible), out / "track.csv")

    # Frames and masks from ground-truth renders.
    mask_rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(4,)))
    for t, q in enumerate(joints):
        bundle = render(model, q, T_gt, Kc, ss=spec.supersample)
        Image.fromarray(_flat_frame_rgb(bundle.link_id)).save(
            out / "frames" / f"{t:06d}.png"
        )
        save_mask_png(
            _corrupt_mask(bundle.coverage, spec.mask_noise, mask_rng),
            out / "masks" / f"{t:06d}.png",
        )

    # Feature maps: a delta feature at the frame-0 mark pixel, and a small
    # reference map carrying the same delta at its center.
    fmap_rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(5,)))
    delta = _delta_feature()
    frame0 = _background_features(fmap_rng, Kc.height, Kc.width)
    mu = int(np.clip(round(points[0][0]), 0, Kc.width - 1))
    mv = int(np.clip(round(points[0][1]), 0, Kc.height - 1))
    frame0[mv, mu] = delta
    save_fmap(FeatureMap(frame0), out / "features" / "frame0.fmap")

    ref = _background_features(fmap_rng, REFERENCE_MAP_SIZE, REFERENCE_MAP_SIZE)
    ref_c = REFERENCE_MAP_SIZE // 2
    ref[ref_c, ref_c] = delta
    save_fmap(FeatureMap(ref), out / "features" / "reference.fmap")
    save_mark(
        Mark(u=float(ref_c), v=float(ref_c), source="human_annotated"),
        out / "features" / "reference_mark.json",
    )

    manifest = {
        "generator": "synthetic_episode",
        "spec": {
            "arm": spec.arm,
            "n_frames": spec.n_frames,
            "camera_distance": spec.camera_distance,
            "track_noise_px": spec.track_noise_px,
            "mark_offset": list(spec.mark_offset),
            "mask_noise": spec.mask_noise,
            "seed": spec.seed,
            "width": spec.width,
            "height": spec.height,
            "fov_deg": spec.fov_deg,
            "supersample": spec.supersample,
        },
    }
    with open(out / "synth_manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")

    return load_episode(out), T_gt
