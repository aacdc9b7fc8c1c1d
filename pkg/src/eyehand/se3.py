"""Rigid-transform algebra, pinhole projection, and the pose tangent space.

Conventions used everywhere in this package:

* An extrinsic maps base-frame points into the camera frame, p_cam = R @ p_base + t.
* Camera axes: +Z forward (optical axis), +X right, +Y down.
* Angles are radians, lengths are meters, pixels are pixels.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConventionMismatch, PointBehindCamera

EXTRINSIC_CONVENTION = "camera_from_base, z_forward_y_down"

# Orthonormality tolerance on |R^T R - I| and |det(R) - 1|.
ROTATION_TOL = 1e-9

DEFAULT_Z_MIN = 1e-6


def _as_array(x, shape, name):
    a = np.asarray(x, dtype=np.float64)
    if a.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


@dataclass(frozen=True)
class Extrinsic:
    """Rigid transform camera-from-base: p_cam = rotation @ p_base + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _as_array(self.rotation, (3, 3), "rotation").copy()
        t = _as_array(self.translation, (3,), "translation").copy()
        err = np.abs(r.T @ r - np.eye(3)).max()
        if err > ROTATION_TOL:
            raise ValueError(f"rotation is not orthonormal (|R^T R - I| = {err:.3e})")
        det = float(np.linalg.det(r))
        if abs(det - 1.0) > ROTATION_TOL:
            raise ValueError(f"rotation determinant {det} != +1")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Extrinsic":
        return Extrinsic(np.eye(3), np.zeros(3))

    def compose(self, other: "Extrinsic") -> "Extrinsic":
        """Return self ∘ other, the transform applying `other` first."""
        return Extrinsic(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Extrinsic":
        rt = self.rotation.T.copy()
        return Extrinsic(rt, -rt @ self.translation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @classmethod
    def from_matrix(cls, m) -> "Extrinsic":
        m = _as_array(m, (4, 4), "matrix")
        if np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > 1e-9:
            raise ValueError("homogeneous matrix must end in row [0, 0, 0, 1]")
        return cls(m[:3, :3], m[:3, 3])

    def to_json_dict(self) -> dict:
        return {
            "matrix": [float(v) for v in self.matrix().reshape(-1)],
            "convention": EXTRINSIC_CONVENTION,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Extrinsic":
        convention = d.get("convention")
        if convention != EXTRINSIC_CONVENTION:
            raise ConventionMismatch(
                f"expected convention {EXTRINSIC_CONVENTION!r}, got {convention!r}"
            )
        m = np.asarray(d["matrix"], dtype=np.float64)
        if m.size != 16:
            raise ValueError(f"extrinsic matrix must hold 16 numbers, got {m.size}")
        return cls.from_matrix(m.reshape(4, 4))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json_dict(), f, indent=2)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "Extrinsic":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_json_dict(json.load(f))


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics; fx, fy, cx, cy in pixels, width/height in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width):
            raise ValueError("cx must lie inside [0, width)")
        if not (0 <= self.cy < self.height):
            raise ValueError("cy must lie inside [0, height)")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def to_json_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Intrinsics":
        return cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json_dict(), f, indent=2)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "Intrinsics":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_json_dict(json.load(f))


@dataclass(frozen=True)
class PoseTangent:
    """6-DoF pose increment: axis-angle rotation `omega` (rad), translation `nu` (m)."""

    omega: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega", _as_array(self.omega, (3,), "omega").copy())
        object.__setattr__(self, "nu", _as_array(self.nu, (3,), "nu").copy())

    @staticmethod
    def zero() -> "PoseTangent":
        return PoseTangent(np.zeros(3), np.zeros(3))

    @staticmethod
    def from_vector(v) -> "PoseTangent":
        v = _as_array(v, (6,), "tangent vector")
        return PoseTangent(v[:3], v[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.omega, self.nu])

    def __neg__(self) -> "PoseTangent":
        return PoseTangent(-self.omega, -self.nu)


def so3_exp(omega) -> np.ndarray:
    """Rodrigues' formula; series expansion below 1e-8 rad to avoid 0/0."""
    omega = _as_array(omega, (3,), "omega")
    angle = float(np.linalg.norm(omega))
    wx, wy, wz = omega
    k = np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])
    if angle < 1e-8:
        return np.eye(3) + k + 0.5 * (k @ k)
    a = math.sin(angle) / angle
    b = (1.0 - math.cos(angle)) / (angle * angle)
    return np.eye(3) + a * k + b * (k @ k)


def project_to_so3(m) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense (via SVD)."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=np.float64))
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] *= -1.0
        r = u @ vt
    return r


def transform_point(T: Extrinsic, p) -> np.ndarray:
    """Map a base-frame point into the camera frame: R @ p + t."""
    p = _as_array(p, (3,), "point")
    return T.rotation @ p + T.translation


def transform_points(T: Extrinsic, pts) -> np.ndarray:
    """Vectorized transform_point over an (N, 3) array."""
    pts = np.asarray(pts, dtype=np.float64)
    return pts @ T.rotation.T + T.translation


def project(Kc: Intrinsics, pc, z_min: float = DEFAULT_Z_MIN) -> np.ndarray:
    """Pinhole projection of a camera-frame point to pixel coordinates.

    Raises PointBehindCamera when the depth is at or below `z_min`.
    """
    pc = _as_array(pc, (3,), "point")
    if pc[2] <= z_min:
        raise PointBehindCamera(f"point depth {pc[2]:.3e} m is <= z_min {z_min:.1e} m")
    return np.array(
        [Kc.fx * pc[0] / pc[2] + Kc.cx, Kc.fy * pc[1] / pc[2] + Kc.cy]
    )


def retract(T: Extrinsic, d: PoseTangent) -> Extrinsic:
    """Left-multiplicative pose update: (exp(omega) @ R, t + nu)."""
    return Extrinsic(so3_exp(d.omega) @ T.rotation, T.translation + d.nu)


def rotation_geodesic_deg(Ra, Rb) -> float:
    """Geodesic angle between two rotations, in degrees."""
    Ra = _as_array(Ra, (3, 3), "Ra")
    Rb = _as_array(Rb, (3, 3), "Rb")
    c = (np.trace(Ra.T @ Rb) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def translation_dist_m(ta, tb) -> float:
    """Euclidean distance between two translations, in meters."""
    ta = _as_array(ta, (3,), "ta")
    tb = _as_array(tb, (3,), "tb")
    return float(np.linalg.norm(ta - tb))
