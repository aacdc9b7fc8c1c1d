"""Episode directory layout and loading.

An episode directory looks like:

    frames/%06d.png      RGB frames
    joints.csv           header t,q1..qn, one row per frame
    intrinsics.json      fx, fy, cx, cy, width, height
    robot.json           robot description (+ meshes/*.obj)
    track.csv            optional: tracked 2D mark per frame
    masks/%06d.png       optional: target robot masks
    features/frame0.fmap optional: dense features of frame 0
    features/reference.fmap + features/reference_mark.json
                         optional: human-annotated reference pair
    mark.json            optional: mark on frame 0 (propagated or manual)
    gt_extrinsic.json    optional: ground truth, synthetic episodes only
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import EpisodeValidationError
from .kinematics import JointState, RobotModel, load_robot
from .pnp import Track2D, load_track_csv
from .render import load_mask_png
from .se3 import Extrinsic, Intrinsics


def save_joints_csv(joints, path) -> None:
    """joints: sequence of JointState (or raw vectors), equal lengths."""
    rows = [j.q if isinstance(j, JointState) else np.asarray(j) for j in joints]
    n = len(rows[0])
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["t"] + [f"q{i + 1}" for i in range(n)])
        for t, q in enumerate(rows):
            # 17 significant digits round-trips float64 exactly.
            writer.writerow([t] + [f"{v:.17g}" for v in q])


def load_joints_csv(path) -> list:
    joints = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if not header or header[0].strip() != "t":
            raise EpisodeValidationError(f"{path}: joints.csv must start with a 't' column")
        for row in reader:
            if not row:
                continue
            joints.append(JointState(np.array([float(v) for v in row[1:]]), t=int(row[0])))
    return joints


@dataclass
class Episode:
    root: Path
    frame_paths: list
    joints: list
    intrinsics: Intrinsics
    robot: RobotModel
    track: Track2D | None = None
    mask_paths: list | None = None
    gt_extrinsic: Extrinsic | None = None

    @property
    def n_frames(self) -> int:
        return len(self.joints)

    def frame_image(self, t: int) -> np.ndarray:
        return np.asarray(Image.open(self.frame_paths[t]).convert("RGB"))

    def mask(self, t: int) -> np.ndarray:
        if self.mask_paths is None:
            raise EpisodeValidationError(f"{self.root}: episode has no masks/ directory")
        return load_mask_png(self.mask_paths[t])

    def target_masks(self, frames) -> dict:
        return {int(k): self.mask(int(k)) for k in frames}

    # optional-file paths
    @property
    def fmap_path(self) -> Path:
        return self.root / "features" / "frame0.fmap"

    @property
    def reference_fmap_path(self) -> Path:
        return self.root / "features" / "reference.fmap"

    @property
    def reference_mark_path(self) -> Path:
        return self.root / "features" / "reference_mark.json"

    @property
    def mark_path(self) -> Path:
        return self.root / "mark.json"


def _numbered_pngs(directory: Path) -> list:
    return sorted(directory.glob("*.png"))


def load_episode(root) -> Episode:
    """Load and validate an episode directory.

    Raises EpisodeValidationError naming the first missing or inconsistent
    piece.
    """
    root = Path(root)
    if not root.is_dir():
        raise EpisodeValidationError(f"episode directory {root} does not exist")

    for required in ("joints.csv", "intrinsics.json", "robot.json"):
        if not (root / required).exists():
            raise EpisodeValidationError(f"{root}: missing required file {required}")

    joints = load_joints_csv(root / "joints.csv")
    if not joints:
        raise EpisodeValidationError(f"{root}: joints.csv holds no rows")
    intrinsics = Intrinsics.load(root / "intrinsics.json")
    robot = load_robot(root / "robot.json")
    for j in joints:
        if len(j.q) != robot.n_actuated:
            raise EpisodeValidationError(
                f"{root}: joints.csv row {j.t} has {len(j.q)} values, robot has "
                f"{robot.n_actuated} actuated joints"
            )

    frames_dir = root / "frames"
    if not frames_dir.is_dir():
        raise EpisodeValidationError(f"{root}: missing frames/ directory")
    frame_paths = _numbered_pngs(frames_dir)
    if len(frame_paths) != len(joints):
        raise EpisodeValidationError(
            f"{root}: {len(frame_paths)} frames but {len(joints)} joint rows"
        )
    with Image.open(frame_paths[0]) as im:
        if im.size != (intrinsics.width, intrinsics.height):
            raise EpisodeValidationError(
                f"{root}: frame size {im.size} does not match intrinsics "
                f"({intrinsics.width}, {intrinsics.height})"
            )

    track = None
    if (root / "track.csv").exists():
        track = load_track_csv(root / "track.csv")
        if len(track) != len(joints):
            raise EpisodeValidationError(
                f"{root}: track.csv has {len(track)} rows, episode has {len(joints)} frames"
            )

    mask_paths = None
    if (root / "masks").is_dir():
        mask_paths = _numbered_pngs(root / "masks")
        if len(mask_paths) != len(joints):
            raise EpisodeValidationError(
                f"{root}: masks/ holds {len(mask_paths)} files, episode has "
                f"{len(joints)} frames"
            )

    gt = None
    if (root / "gt_extrinsic.json").exists():
        gt = Extrinsic.load(root / "gt_extrinsic.json")

    return Episode(
        root=root,
        frame_paths=frame_paths,
        joints=joints,
        intrinsics=intrinsics,
        robot=robot,
        track=track,
        mask_paths=mask_paths,
        gt_extrinsic=gt,
    )
