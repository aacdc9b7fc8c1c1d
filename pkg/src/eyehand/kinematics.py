"""Robot description loading and Modified-DH forward kinematics.

A robot is an ordered chain of links. Each link carries the four MDH (Craig
convention) parameters of the transform from its parent plus a triangle mesh
expressed in the link frame. The per-link transform is

    T_i = RotX(alpha_prev) @ TransX(a_prev) @ RotZ(theta_offset + q_i) @ TransZ(d)

for revolute joints; prismatic joints add q_i to d instead, fixed links
consume no joint value.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import JointDimensionMismatch
from .se3 import Extrinsic, transform_point

ROBOT_CONVENTION = "mdh_craig"

JOINT_TYPES = ("revolute", "prismatic", "fixed")


@dataclass(frozen=True)
class TriangleMesh:
    """Triangle soup: vertices (V, 3) in meters, triangles (T, 3) vertex indices."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise ValueError("mesh vertices contain non-finite values")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle indices out of vertex range")
        v.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    def transformed(self, pose: Extrinsic) -> "TriangleMesh":
        """Mesh with vertices mapped through `pose`; topology unchanged."""
        return TriangleMesh(
            self.vertices @ pose.rotation.T + pose.translation, self.triangles
        )


@dataclass(frozen=True)
class LinkSpec:
    name: str
    alpha_prev: float
    a_prev: float
    d: float
    theta_offset: float
    joint_type: str
    mesh: TriangleMesh

    def __post_init__(self):
        if self.joint_type not in JOINT_TYPES:
            raise ValueError(f"unknown joint type {self.joint_type!r}")
        for v in (self.alpha_prev, self.a_prev, self.d, self.theta_offset):
            if not math.isfinite(v):
                raise ValueError(f"link {self.name!r} has non-finite MDH parameters")


@dataclass(frozen=True)
class JointState:
    """One time step of joint values (rad for revolute, m for prismatic)."""

    q: np.ndarray
    t: int = 0

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, dtype=np.float64))
        if not np.all(np.isfinite(q)):
            raise ValueError("joint vector contains non-finite values")
        q.flags.writeable = False
        object.__setattr__(self, "q", q)


@dataclass(frozen=True)
class RobotModel:
    links: tuple
    eef_link_index: int
    eef_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        links = tuple(self.links)
        if len(links) < 1:
            raise ValueError("robot needs at least one link")
        if not (0 <= self.eef_link_index < len(links)):
            raise ValueError("eef_link_index out of range")
        off = np.asarray(self.eef_offset, dtype=np.float64).reshape(3).copy()
        off.flags.writeable = False
        object.__setattr__(self, "links", links)
        object.__setattr__(self, "eef_offset", off)

    @property
    def n_actuated(self) -> int:
        return sum(1 for l in self.links if l.joint_type != "fixed")


def _mdh_rot_trans(link: LinkSpec, q: float):
    """RotX(alpha) @ TransX(a) @ RotZ(theta) @ TransZ(d), expanded."""
    alpha, a = link.alpha_prev, link.a_prev
    if link.joint_type == "revolute":
        theta, d = link.theta_offset + q, link.d
    elif link.joint_type == "prismatic":
        theta, d = link.theta_offset, link.d + q
    else:
        theta, d = link.theta_offset, link.d
    ca, sa = math.cos(alpha), math.sin(alpha)
    ct, st = math.cos(theta), math.sin(theta)
    rot = np.array(
        [
            [ct, -st, 0.0],
            [st * ca, ct * ca, -sa],
            [st * sa, ct * sa, ca],
        ]
    )
    return rot, np.array([a, -sa * d, ca * d])


def link_poses_raw(model: RobotModel, q: JointState) -> list:
    """(rotation, translation) per link as plain arrays; the validated
    Extrinsic wrapper is skipped so render loops stay cheap."""
    if len(q.q) != model.n_actuated:
        raise JointDimensionMismatch(
            f"robot has {model.n_actuated} actuated joints, got {len(q.q)} values"
        )
    poses = []
    rot = np.eye(3)
    trans = np.zeros(3)
    qi = 0
    for link in model.links:
        if link.joint_type == "fixed":
            qv = 0.0
        else:
            qv = float(q.q[qi])
            qi += 1
        r, t = _mdh_rot_trans(link, qv)
        trans = rot @ t + trans
        rot = rot @ r
        poses.append((rot, trans))
    return poses


def forward_kinematics(model: RobotModel, q: JointState) -> list:
    """Base-from-link pose for every link, accumulated along the chain."""
    return [Extrinsic(r, t) for r, t in link_poses_raw(model, q)]


def eef_point(model: RobotModel, q: JointState) -> np.ndarray:
    """The end-effector reference point in the base frame."""
    poses = forward_kinematics(model, q)
    return transform_point(poses[model.eef_link_index], model.eef_offset)


def posed_meshes(model: RobotModel, q: JointState) -> list:
    """Each link mesh transformed into the base frame."""
    poses = forward_kinematics(model, q)
    return [link.mesh.transformed(p) for link, p in zip(model.links, poses)]


# --- OBJ and robot.json serialization -------------------------------------


def load_obj(path) -> TriangleMesh:
    """Read an ASCII OBJ; polygon faces are fan-triangulated."""
    vertices = []
    triangles = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
            elif parts[0] == "f":
                # OBJ indices are 1-based and may carry /vt/vn suffixes.
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                for k in range(1, len(idx) - 1):
                    triangles.append([idx[0], idx[k], idx[k + 1]])
    return TriangleMesh(np.array(vertices, dtype=np.float64).reshape(-1, 3),
                        np.array(triangles, dtype=np.int64).reshape(-1, 3))


def save_obj(mesh: TriangleMesh, path) -> None:
    # 17 significant digits keeps the vertex round-trip lossless.
    with open(path, "w", encoding="utf-8") as f:
        for v in mesh.vertices:
            f.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for t in mesh.triangles:
            f.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


def load_robot(path) -> RobotModel:
    """Load robot.json plus its referenced OBJ meshes (paths relative to it)."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        d = json.load(f)
    convention = d.get("convention")
    if convention != ROBOT_CONVENTION:
        raise ValueError(
            f"robot file declares convention {convention!r}, expected {ROBOT_CONVENTION!r}"
        )
    links = []
    for entry in d["links"]:
        mesh = load_obj(path.parent / entry["mesh"])
        links.append(
            LinkSpec(
                name=entry["name"],
                alpha_prev=float(entry["alpha_prev"]),
                a_prev=float(entry["a_prev"]),
                d=float(entry["d"]),
                theta_offset=float(entry["theta_offset"]),
                joint_type=entry["joint_type"],
                mesh=mesh,
            )
        )
    return RobotModel(
        links=tuple(links),
        eef_link_index=int(d["eef_link_index"]),
        eef_offset=np.asarray(d.get("eef_offset", [0.0, 0.0, 0.0]), dtype=np.float64),
    )


def save_robot(model: RobotModel, path, mesh_dir: str = "meshes") -> None:
    """Write robot.json and one OBJ per link under `mesh_dir` next to it."""
    path = Path(path)
    (path.parent / mesh_dir).mkdir(parents=True, exist_ok=True)
    entries = []
    for i, link in enumerate(model.links):
        rel = f"{mesh_dir}/link{i:02d}_{link.name}.obj"
        save_obj(link.mesh, path.parent / rel)
        entries.append(
            {
                "name": link.name,
                "alpha_prev": link.alpha_prev,
                "a_prev": link.a_prev,
                "d": link.d,
                "theta_offset": link.theta_offset,
                "joint_type": link.joint_type,
                "mesh": rel,
            }
        )
    doc = {
        "convention": ROBOT_CONVENTION,
        "links": entries,
        "eef_link_index": model.eef_link_index,
        "eef_offset": [float(v) for v in model.eef_offset],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
