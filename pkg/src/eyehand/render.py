"""Software silhouette renderer: supersampled coverage, depth, and link IDs.

The rasterizer draws the posed robot into an (ss*H) x (ss*W) subsample grid
with a z-buffer, then box-filters coverage down to H x W. Depth and link id
are read from one designated subsample per pixel (index ss//2 along each
axis) so the three channels stay mutually consistent. Rasterization order is
link-major then triangle-major, and the z-test is strict, which makes depth
ties resolve to the lower link index, then the lower triangle index,
independent of any scheduling.

Pixel coordinate convention (shared with the whole package): pixel (i, j)
is centered at continuous coordinates (i, j) and covers the square
[i-0.5, i+0.5) x [j-0.5, j+0.5).
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numba
import numpy as np
from PIL import Image

from .kinematics import JointState, RobotModel, link_poses_raw
from .se3 import DEFAULT_Z_MIN, Extrinsic, Intrinsics

SUPERSAMPLE_FACTORS = (1, 2, 4)

# +Inf depth is stored as this sentinel inside PFM files (float32-safe).
PFM_INF = 3.4e38


@dataclass(frozen=True)
class RenderBundle:
    """Raster outputs of one render: coverage in [0,1], eye-space depth (m,
    +inf background), and per-pixel link index (-1 background)."""

    coverage: np.ndarray
    depth: np.ndarray
    link_id: np.ndarray
    supersample: int

    @property
    def empty(self) -> bool:
        """True when no geometry reached the image (the zero-gradient case)."""
        return not bool(np.any(self.coverage))


@numba.njit(cache=True)
def _raster_kernel(uv, invz, tri_link, ss, width, height, zbuf, idbuf, counts):
    n_tri = tri_link.shape[0]
    for t in range(n_tri):
        i = 3 * t
        x0, y0 = uv[i, 0], uv[i, 1]
        x1, y1 = uv[i + 1, 0], uv[i + 1, 1]
        x2, y2 = uv[i + 2, 0], uv[i + 2, 1]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if area == 0.0:
            continue
        inv_area = 1.0 / area
        ymin = max(int(np.floor(min(y0, min(y1, y2)) - 0.5)), 0)
        ymax = min(int(np.ceil(max(y0, max(y1, y2)) - 0.5)), height - 1)
        bxmin = max(int(np.floor(min(x0, min(x1, x2)) - 0.5)), 0)
        bxmax = min(int(np.ceil(max(x0, max(x1, x2)) - 0.5)), width - 1)
        if bxmax < bxmin or ymax < ymin:
            continue
        q0, q1, q2 = invz[i], invz[i + 1], invz[i + 2]
        link = tri_link[t]
        # Barycentrics as linear forms w_n(x, y) = (a_n + b_n*x + c_n*y)/area.
        a0 = x1 * y2 - x2 * y1
        b0 = (y1 - y2) * inv_area
        c0 = (x2 - x1) * inv_area
        a1 = x2 * y0 - x0 * y2
        b1 = (y2 - y0) * inv_area
        c1 = (x0 - x2) * inv_area
        a0 *= inv_area
        a1 *= inv_area
        b2 = -b0 - b1
        c2 = -c0 - c1
        dq = b0 * q0 + b1 * q1 + b2 * q2  # d(1/z)/dx along a row
        for py in range(ymin, ymax + 1):
            yc = py + 0.5
            r0 = a0 + c0 * yc
            r1 = a1 + c1 * yc
            r2 = (1.0 - a0 - a1) + c2 * yc
            # Clip the row to the half-planes w_n >= 0.
            xlo = bxmin + 0.5
            xhi = bxmax + 0.5
            row_ok = True
            for r, b in ((r0, b0), (r1, b1), (r2, b2)):
                if b > 1e-14:
                    bound = -r / b
                    if bound > xlo:
                        xlo = bound
                elif b < -1e-14:
                    bound = -r / b
                    if bound < xhi:
                        xhi = bound
                elif r < 0.0:
                    row_ok = False
                    break
            if not row_ok or xhi < xlo:
                continue
            px_lo = int(np.ceil(xlo - 0.5))
            px_hi = int(np.floor(xhi - 0.5))
            if px_lo < bxmin:
                px_lo = bxmin
            if px_hi > bxmax:
                px_hi = bxmax
            if px_hi < px_lo:
                continue
            xc = px_lo + 0.5
            iz = (
                (r0 + b0 * xc) * q0 + (r1 + b1 * xc) * q1 + (r2 + b2 * xc) * q2
            )
            for px in range(px_lo, px_hi + 1):
                if iz > 0.0:
                    # Compare at storage precision so equal depths never
                    # displace an earlier (lower link/triangle) write.
                    z = np.float32(1.0 / iz)
                    if z < zbuf[py, px]:
                        if idbuf[py, px] < 0:
                            counts[py // ss, px // ss] += 1
                        zbuf[py, px] = z
                        idbuf[py, px] = link
                iz += dq


@numba.njit(cache=True)
def _coverage_kernel(uv, ss, width, height, maskbuf, counts):
    n_tri = uv.shape[0] // 3
    for t in range(n_tri):
        i = 3 * t
        x0, y0 = uv[i, 0], uv[i, 1]
        x1, y1 = uv[i + 1, 0], uv[i + 1, 1]
        x2, y2 = uv[i + 2, 0], uv[i + 2, 1]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if area == 0.0:
            continue
        inv_area = 1.0 / area
        ymin = max(int(np.floor(min(y0, min(y1, y2)) - 0.5)), 0)
        ymax = min(int(np.ceil(max(y0, max(y1, y2)) - 0.5)), height - 1)
        bxmin = max(int(np.floor(min(x0, min(x1, x2)) - 0.5)), 0)
        bxmax = min(int(np.ceil(max(x0, max(x1, x2)) - 0.5)), width - 1)
        if bxmax < bxmin or ymax < ymin:
            continue
        a0 = (x1 * y2 - x2 * y1) * inv_area
        b0 = (y1 - y2) * inv_area
        c0 = (x2 - x1) * inv_area
        a1 = (x2 * y0 - x0 * y2) * inv_area
        b1 = (y2 - y0) * inv_area
        c1 = (x0 - x2) * inv_area
        b2 = -b0 - b1
        c2 = -c0 - c1
        for py in range(ymin, ymax + 1):
            yc = py + 0.5
            r0 = a0 + c0 * yc
            r1 = a1 + c1 * yc
            r2 = (1.0 - a0 - a1) + c2 * yc
            xlo = bxmin + 0.5
            xhi = bxmax + 0.5
            row_ok = True
            for r, b in ((r0, b0), (r1, b1), (r2, b2)):
                if b > 1e-14:
                    bound = -r / b
                    if bound > xlo:
                        xlo = bound
                elif b < -1e-14:
                    bound = -r / b
                    if bound < xhi:
                        xhi = bound
                elif r < 0.0:
                    row_ok = False
                    break
            if not row_ok or xhi < xlo:
                continue
            px_lo = max(int(np.ceil(xlo - 0.5)), bxmin)
            px_hi = min(int(np.floor(xhi - 0.5)), bxmax)
            for px in range(px_lo, px_hi + 1):
                if maskbuf[py, px] == 0:
                    maskbuf[py, px] = 1
                    counts[py // ss, px // ss] += 1


def _clip_near(v0, v1, v2, z_min):
    """Clip one camera-space triangle against z = z_min.

    Returns a list of vertex triples, orientation preserved.
    """
    verts = [v0, v1, v2]
    inside = [v[2] > z_min for v in verts]
    n_in = sum(inside)
    if n_in == 3:
        return [(v0, v1, v2)]
    if n_in == 0:
        return []

    def cross(a, b):
        s = (z_min - a[2]) / (b[2] - a[2])
        return a + s * (b - a)

    if n_in == 1:
        k = inside.index(True)
        a = verts[k]
        b, c = verts[(k + 1) % 3], verts[(k + 2) % 3]
        return [(a, cross(a, b), cross(c, a))]
    # Two inside: the clipped region is a quad, split into two triangles.
    k = inside.index(False)
    c = verts[k]
    a, b = verts[(k + 1) % 3], verts[(k + 2) % 3]
    b_edge = cross(b, c)
    a_edge = cross(c, a)
    return [(a, b, b_edge), (a, b_edge, a_edge)]


def _gather_camera_triangles(model, q, T, z_min):
    """Camera-space triangle list in link-major order, near-plane clipped."""
    blocks = []
    link_blocks = []
    poses = link_poses_raw(model, q)
    cam_rot, cam_t = T.rotation, T.translation
    for link_idx, (link, (rot, trans)) in enumerate(zip(model.links, poses)):
        mesh = link.mesh
        if len(mesh.triangles) == 0:
            continue
        r = cam_rot @ rot
        t = cam_rot @ trans + cam_t
        cam = mesh.vertices @ r.T + t
        tris = cam[mesh.triangles]  # (T, 3, 3)
        zmin_tri = tris[:, :, 2].min(axis=1)
        zmax_tri = tris[:, :, 2].max(axis=1)
        full_front = zmin_tri > z_min
        keep = tris[full_front]
        if len(keep):
            blocks.append(keep)
            link_blocks.append(np.full(len(keep), link_idx, dtype=np.int32))
        straddle = np.flatnonzero((~full_front) & (zmax_tri > z_min))
        if len(straddle):
            clipped = [
                np.stack(piece)
                for idx in straddle
                for piece in _clip_near(tris[idx, 0], tris[idx, 1], tris[idx, 2], z_min)
            ]
            if clipped:
                blocks.append(np.stack(clipped))
                link_blocks.append(np.full(len(clipped), link_idx, dtype=np.int32))
    if not blocks:
        return np.zeros((0, 3, 3)), np.zeros(0, dtype=np.int32)
    return np.concatenate(blocks), np.concatenate(link_blocks)


def render(
    model: RobotModel,
    q: JointState,
    T: Extrinsic,
    Kc: Intrinsics,
    ss: int = 4,
    z_min: float = DEFAULT_Z_MIN,
) -> RenderBundle:
    """Rasterize the robot at joint state `q` seen through extrinsic `T`."""
    if ss not in SUPERSAMPLE_FACTORS:
        raise ValueError(f"supersample factor must be one of {SUPERSAMPLE_FACTORS}")
    tris, links = _gather_camera_triangles(model, q, T, z_min)

    w_ss, h_ss = Kc.width * ss, Kc.height * ss
    zbuf = np.empty((h_ss, w_ss), dtype=np.float32)
    idbuf = np.empty((h_ss, w_ss), dtype=np.int16)
    counts = np.empty((Kc.height, Kc.width), dtype=np.int32)
    zbuf.fill(np.inf)
    idbuf.fill(-1)
    counts.fill(0)

    if len(tris):
        flat = tris.reshape(-1, 3)
        invz = 1.0 / flat[:, 2]
        # +0.5 moves from pixel-center coordinates to the subsample grid
        # whose cell (a, b) is centered at ((a+0.5)/ss - 0.5, ...).
        uv = np.empty((len(flat), 2))
        uv[:, 0] = (Kc.fx * flat[:, 0] * invz + Kc.cx + 0.5) * ss
        uv[:, 1] = (Kc.fy * flat[:, 1] * invz + Kc.cy + 0.5) * ss
    else:
        flat = np.zeros((0, 3))
        invz = np.zeros(0)
        uv = np.zeros((0, 2))
    _raster_kernel(uv, invz, links, ss, w_ss, h_ss, zbuf, idbuf, counts)

    coverage = counts / float(ss * ss)
    center = ss // 2
    depth = zbuf[center::ss, center::ss].astype(np.float64)
    link_id = idbuf[center::ss, center::ss].astype(np.int32)
    return RenderBundle(coverage=coverage, depth=depth, link_id=link_id, supersample=ss)


def render_coverage(model, q, T, Kc, ss=4, z_min=DEFAULT_Z_MIN) -> np.ndarray:
    """Coverage only, skipping the z-buffer (identical to render().coverage:
    a subsample is covered when any triangle contains it)."""
    if ss not in SUPERSAMPLE_FACTORS:
        raise ValueError(f"supersample factor must be one of {SUPERSAMPLE_FACTORS}")
    tris, _ = _gather_camera_triangles(model, q, T, z_min)
    w_ss, h_ss = Kc.width * ss, Kc.height * ss
    maskbuf = np.zeros((h_ss, w_ss), dtype=np.uint8)
    counts = np.zeros((Kc.height, Kc.width), dtype=np.int32)
    if len(tris):
        flat = tris.reshape(-1, 3)
        invz = 1.0 / flat[:, 2]
        uv = np.empty((len(flat), 2))
        uv[:, 0] = (Kc.fx * flat[:, 0] * invz + Kc.cx + 0.5) * ss
        uv[:, 1] = (Kc.fy * flat[:, 1] * invz + Kc.cy + 0.5) * ss
        _coverage_kernel(uv, ss, w_ss, h_ss, maskbuf, counts)
    return counts / float(ss * ss)


def project_trajectory(points3d, T: Extrinsic, Kc: Intrinsics, z_min=DEFAULT_Z_MIN):
    """Project base-frame points; visible=False behind the camera or off-image.

    Behind-camera points are projected at a clamped depth so the returned
    pixel stays finite; the flag is what callers should trust.
    """
    results = []
    for p in np.asarray(points3d, dtype=np.float64).reshape(-1, 3):
        pc = T.rotation @ p + T.translation
        z = pc[2]
        visible = z > z_min
        zc = z if visible else z_min
        u = Kc.fx * pc[0] / zc + Kc.cx
        v = Kc.fy * pc[1] / zc + Kc.cy
        if not (0 <= u < Kc.width and 0 <= v < Kc.height):
            visible = False
        results.append((np.array([u, v]), bool(visible)))
    return results


# --- file formats ----------------------------------------------------------


def save_mask_png(coverage: np.ndarray, path) -> None:
    """8-bit grayscale PNG, coverage * 255 rounded half-up."""
    arr = np.floor(np.clip(coverage, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def load_mask_png(path) -> np.ndarray:
    """Grayscale PNG back to float coverage in [0, 1]."""
    img = Image.open(path).convert("L")
    return np.asarray(img, dtype=np.float64) / 255.0


def save_depth_pfm(depth: np.ndarray, path) -> None:
    """Grayscale PFM ('Pf'), little-endian float32, rows bottom-up.

    +Inf is stored as the PFM_INF sentinel so readers without inf support
    still see a valid file.
    """
    data = np.asarray(depth, dtype=np.float32).copy()
    data[~np.isfinite(data)] = PFM_INF
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")  # negative scale => little-endian
        f.write(data[::-1].tobytes())


def load_depth_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.readline().strip() != b"Pf":
            raise ValueError("not a grayscale PFM file")
        w, h = (int(x) for x in f.readline().split())
        scale = float(f.readline())
        data = np.frombuffer(f.read(w * h * 4), dtype="<f4" if scale < 0 else ">f4")
    depth = data.reshape(h, w)[::-1].astype(np.float64).copy()
    depth[depth >= PFM_INF * 0.999] = np.inf
    return depth


def save_linkid_png(link_id: np.ndarray, path) -> None:
    """8-bit PNG: background 255, link i stored as value i (i < 255)."""
    arr = np.asarray(link_id)
    if arr.max(initial=-1) >= 255:
        raise ValueError("link ids >= 255 cannot be stored in an 8-bit PNG")
    out = np.where(arr < 0, 255, arr).astype(np.uint8)
    Image.fromarray(out, mode="L").save(path)


def load_linkid_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("L"), dtype=np.int32)
    return np.where(arr == 255, -1, arr)


def save_trajectory_json(track, path) -> None:
    """track: iterable of (t, (u, v), visible)."""
    rows = [
        {"t": int(t), "u": float(uv[0]), "v": float(uv[1]), "visible": bool(vis)}
        for t, uv, vis in track
    ]
    with open(path, "w", encoding="utf-8") as f:
        json.dump(rows, f, indent=2)
        f.write("\n")


def load_trajectory_json(path):
    with open(path, "r", encoding="utf-8") as f:
        rows = json.load(f)
    return [
        (int(r["t"]), np.array([float(r["u"]), float(r["v"])]), bool(r["visible"]))
        for r in rows
    ]
