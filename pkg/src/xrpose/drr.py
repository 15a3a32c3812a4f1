"""Perspective ray-cast rendering of attenuation volumes (DRRs).

Camera frame: the source sits at the camera origin and looks along camera +z;
detector columns follow camera +x, rows camera +y, and the detector plane is at
``z = SDD``.  Pixel centres sit at integer indices; the principal point is the
detector centre ``((cols - 1) / 2, (rows - 1) / 2)``.

World placement of the arrangement (the "P_Rot" rotations): the base view
looks along world +x with columns along world +y and rows along world +z.  The
arrangement is rolled by ``rotations[2]`` about the projection axis, tilted by
``rotations[1]`` about world y and turned by ``rotations[0]`` about world z,
all about the object centre (a Z-Y-Z sequence).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numba
import numpy as np

from .geometry import Pose, ProjectionGeometry
from .volume import Volume, resample

FORMAT_VERSION = 1
_BASE = np.column_stack([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])


def rot_z(deg):
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_y(deg):
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_x(deg):
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


@dataclass(frozen=True)
class ProjectionSetup:
    geom: ProjectionGeometry = field(default_factory=ProjectionGeometry)
    source_object_distance: float = 544.205
    offset: tuple[float, float] = (0.0, 0.0)  # (r mm, phi deg) orthogonal to the projection axis
    rotations: tuple[float, float, float] = (0.0, 0.0, 0.0)
    object_center: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not 0 < self.source_object_distance < self.geom.source_detector_distance:
            raise ValueError("need 0 < SOD < SDD")
        if self.offset[0] < 0:
            raise ValueError("offset radius must be non-negative")

    @property
    def camera_to_world(self) -> np.ndarray:
        a, b, c = self.rotations
        return rot_z(a) @ rot_y(b) @ _BASE @ rot_z(c)

    @property
    def translation(self) -> np.ndarray:
        r, phi = self.offset
        p = np.deg2rad(phi)
        return np.array([r * np.cos(p), r * np.sin(p), self.source_object_distance])

    def world_to_camera(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return (p - np.asarray(self.object_center)) @ self.camera_to_world + self.translation

    def camera_to_world_point(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        return (q - self.translation) @ self.camera_to_world.T + np.asarray(self.object_center)

    @property
    def source(self) -> np.ndarray:
        return self.camera_to_world_point(np.zeros(3))

    def to_dict(self) -> dict:
        return {
            "geom": self.geom.to_dict(),
            "source_object_distance": self.source_object_distance,
            "offset": list(self.offset),
            "rotations": list(self.rotations),
            "rotation_order": "roll about projection axis, tilt about world y, turn about world z",
            "object_center": list(self.object_center),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProjectionSetup":
        return cls(ProjectionGeometry.from_dict(d["geom"]), float(d["source_object_distance"]),
                   tuple(d["offset"]), tuple(d["rotations"]), tuple(d["object_center"]))


@dataclass
class Radiograph:
    pixels: np.ndarray  # [row, column] raw line integrals
    setup: ProjectionSetup
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        cols, rows = self.setup.geom.detector_size
        if self.pixels.shape != (rows, cols):
            raise ValueError(f"pixels must have shape {(rows, cols)}, got {self.pixels.shape}")


def project_point(setup: ProjectionSetup, p) -> tuple[np.ndarray, float]:
    """Pixel position ``(x, y)`` and depth (mm along the projection axis) of a world point."""
    q = setup.world_to_camera(p)
    if q[2] <= 0:
        raise ValueError("point lies at or behind the source")
    g = setup.geom
    scale = g.source_detector_distance / (q[2] * g.detector_pixel_spacing)
    cx, cy = g.center
    return np.array([cx + q[0] * scale, cy + q[1] * scale]), float(q[2])


def project_points(setup: ProjectionSetup, pts) -> tuple[np.ndarray, np.ndarray]:
    q = setup.world_to_camera(np.atleast_2d(pts))
    if np.any(q[:, 2] <= 0):
        raise ValueError("point lies at or behind the source")
    g = setup.geom
    scale = g.source_detector_distance / (q[:, 2] * g.detector_pixel_spacing)
    cx, cy = g.center
    return np.column_stack([cx + q[:, 0] * scale, cy + q[:, 1] * scale]), q[:, 2]


def pose_from_placement(setup: ProjectionSetup, position, axis) -> Pose:
    """Ground-truth pose of an instrument whose origin is at ``position``."""
    xy, depth = project_point(setup, position)
    n = np.asarray(axis, dtype=float) @ setup.camera_to_world
    n /= np.linalg.norm(n)
    alpha = np.rad2deg(np.arctan2(n[1], n[0]))
    tau = np.rad2deg(np.arcsin(np.clip(n[2], -1.0, 1.0)))
    return Pose(float(xy[0]), float(xy[1]), float(alpha), float(tau), depth)


def placement_from_pose(setup: ProjectionSetup, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`pose_from_placement`: world origin position and axis."""
    g = setup.geom
    cx, cy = g.center
    s = pose.depth * g.detector_pixel_spacing / g.source_detector_distance
    q = np.array([(pose.x - cx) * s, (pose.y - cy) * s, pose.depth])
    a, t = np.deg2rad(pose.alpha), np.deg2rad(pose.tau or 0.0)
    n_cam = np.array([np.cos(t) * np.cos(a), np.cos(t) * np.sin(a), np.sin(t)])
    return setup.camera_to_world_point(q), setup.camera_to_world @ n_cam


def interpolate_volume(volume: Volume, factor: int) -> Volume:
    """Trilinear upsampling by an integer factor; the covered extent is unchanged."""
    if factor not in (1, 2, 4):
        raise ValueError("factor must be 1, 2 or 4")
    if factor == 1:
        return volume.copy()
    s = np.array(volume.spacing)
    origin = np.array(volume.origin) + (0.5 / factor - 0.5) * s
    dims = tuple(n * factor for n in volume.dims)
    out = resample(volume, origin, s / factor, dims)
    out.meta = dict(volume.meta, interpolation_factor=factor)
    return out


def interpolate_window(volume: Volume, lo, hi, factor: int) -> Volume:
    """Upsampled sub-grid covering the world box ``[lo, hi]``.

    The fine voxel centres coincide with those :func:`interpolate_volume`
    would produce for the full grid; the window may extend past the grid, where
    it is zero.
    """
    s = np.array(volume.spacing)
    fine = s / factor
    origin0 = np.array(volume.origin) + (0.5 / factor - 0.5) * s
    i0 = np.floor((np.asarray(lo) - origin0) / fine).astype(int)
    i1 = np.ceil((np.asarray(hi) - origin0) / fine).astype(int)
    out = resample(volume, origin0 + i0 * fine, fine, tuple(np.maximum(i1 - i0 + 1, 1)))
    # beyond the scanned extent there is no anatomy
    vlo, vhi = volume.extent
    axes = [out.origin[a] + np.arange(out.dims[a]) * fine[a] for a in range(3)]
    keep = [(ax >= vlo[a]) & (ax <= vhi[a]) for a, ax in enumerate(axes)]
    out.data *= keep[0][:, None, None] & keep[1][None, :, None] & keep[2][None, None, :]
    return out


@numba.njit(cache=True, fastmath=True, error_model="numpy")
def _cast(padded, spacing, vol_origin, source, M, cx, cy, pix, sdd, col0, row0, ncols, nrows, step, out):
    # ``padded`` has a one-voxel zero border, so the trilinear support (-1, n)
    # of the original grid becomes (0, n + 1) and needs no bounds checks
    px, py, pz = padded.shape
    hi = np.array([px - 1.0, py - 1.0, pz - 1.0])
    o = np.empty(3)
    d = np.empty(3)
    for r in range(nrows):
        for c in range(ncols):
            u = (col0 + c - cx) * pix
            v = (row0 + r - cy) * pix
            norm = np.sqrt(u * u + v * v + sdd * sdd)
            dc0, dc1, dc2 = u / norm, v / norm, sdd / norm
            t_lo, t_hi = 0.0, 1e30
            hit = True
            for a in range(3):
                dw = M[a, 0] * dc0 + M[a, 1] * dc1 + M[a, 2] * dc2
                o[a] = (source[a] - vol_origin[a]) / spacing[a] + 1.0
                d[a] = dw / spacing[a]
                if d[a] == 0.0:
                    if o[a] <= 0.0 or o[a] >= hi[a]:
                        hit = False
                    continue
                ta = -o[a] / d[a]
                tb = (hi[a] - o[a]) / d[a]
                if ta > tb:
                    ta, tb = tb, ta
                t_lo = max(t_lo, ta)
                t_hi = min(t_hi, tb)
            if not hit or t_hi <= t_lo:
                out[r, c] = 0.0
                continue
            length = t_hi - t_lo
            n_steps = int(np.ceil(length / step))
            h = length / n_steps
            acc = 0.0
            for s in range(n_steps):
                t = t_lo + (s + 0.5) * h
                x = o[0] + t * d[0]
                y = o[1] + t * d[1]
                z = o[2] + t * d[2]
                i = min(max(int(x), 0), px - 2)
                j = min(max(int(y), 0), py - 2)
                k = min(max(int(z), 0), pz - 2)
                fx, fy, fz = x - i, y - j, z - k
                c00 = padded[i, j, k] * (1 - fx) + padded[i + 1, j, k] * fx
                c01 = padded[i, j, k + 1] * (1 - fx) + padded[i + 1, j, k + 1] * fx
                c10 = padded[i, j + 1, k] * (1 - fx) + padded[i + 1, j + 1, k] * fx
                c11 = padded[i, j + 1, k + 1] * (1 - fx) + padded[i + 1, j + 1, k + 1] * fx
                acc += (c00 * (1 - fy) + c10 * fy) * (1 - fz) + (c01 * (1 - fy) + c11 * fy) * fz
            out[r, c] = acc * h


def default_step(volume: Volume) -> float:
    return 0.5 * min(volume.spacing)


def render_window(volume: Volume, setup: ProjectionSetup, window, step_mm: float | None = None) -> np.ndarray:
    """Line integrals for the detector window ``(col0, row0, ncols, nrows)``.

    Midpoint rule along each ray clipped to the volume support, trilinear
    sampling, zero outside the grid.
    """
    step = default_step(volume) if step_mm is None else float(step_mm)
    if step <= 0:
        raise ValueError("step_mm must be positive")
    col0, row0, ncols, nrows = (int(w) for w in window)
    out = np.zeros((nrows, ncols))
    if ncols <= 0 or nrows <= 0 or not np.any(volume.data):
        return out
    g = setup.geom
    cx, cy = g.center
    _cast(np.pad(volume.data, 1), np.array(volume.spacing), np.array(volume.origin),
          setup.source, np.ascontiguousarray(setup.camera_to_world), cx, cy, g.detector_pixel_spacing,
          g.source_detector_distance, col0, row0, ncols, nrows, step, out)
    return out


def volume_footprint(volume: Volume, setup: ProjectionSetup, pad: int = 2):
    """Detector window covering the projected volume support, or None if off-detector."""
    lo, hi = volume.extent
    s = np.array(volume.spacing)
    lo, hi = lo - 0.5 * s, hi + 0.5 * s
    corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    q = setup.world_to_camera(corners)
    cols, rows = setup.geom.detector_size
    if np.any(q[:, 2] <= 0):
        return (0, 0, cols, rows)
    xy, _ = project_points(setup, corners)
    c0 = max(int(np.floor(xy[:, 0].min())) - pad, 0)
    r0 = max(int(np.floor(xy[:, 1].min())) - pad, 0)
    c1 = min(int(np.ceil(xy[:, 0].max())) + pad, cols - 1)
    r1 = min(int(np.ceil(xy[:, 1].max())) + pad, rows - 1)
    if c1 < c0 or r1 < r0:
        return None
    return (c0, r0, c1 - c0 + 1, r1 - r0 + 1)


def project_volume(volume: Volume, setup: ProjectionSetup, step_mm: float | None = None) -> Radiograph:
    cols, rows = setup.geom.detector_size
    pixels = np.zeros((rows, cols))
    win = volume_footprint(volume, setup)
    if win is not None:
        c0, r0, w, h = win
        pixels[r0:r0 + h, c0:c0 + w] = render_window(volume, setup, win, step_mm)
    return Radiograph(pixels, setup, {"step_mm": default_step(volume) if step_mm is None else step_mm})


def _polygon_area(poly) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _segment_distance(p, a, b) -> float:
    ab = b - a
    denom = np.dot(ab, ab)
    t = 0.0 if denom == 0 else np.clip(np.dot(p - a, ab) / denom, 0.0, 1.0)
    return float(np.linalg.norm(p - (a + t * ab)))


def point_in_polygon(p, poly, margin: float = 0.0) -> bool:
    """Even-odd containment; points within ``margin`` of the boundary count as inside."""
    p = np.asarray(p, dtype=float)
    poly = np.asarray(poly, dtype=float)
    n = len(poly)
    for i in range(n):
        if _segment_distance(p, poly[i], poly[(i + 1) % n]) <= max(margin, 1e-9):
            return True
    inside = False
    for i in range(n):
        (x1, y1), (x2, y2) = poly[i], poly[(i + 1) % n]
        if (y1 > p[1]) != (y2 > p[1]):
            x_cross = x1 + (p[1] - y1) * (x2 - x1) / (y2 - y1)
            if p[0] < x_cross:
                inside = not inside
    return inside


def validity_check(setup: ProjectionSetup, instrument_position, polys, margin_mm: float = 5.0) -> bool:
    """False when rays near the instrument cross a region without volume data."""
    if margin_mm < 0:
        raise ValueError("margin must be non-negative")
    xy, depth = project_point(setup, instrument_position)
    margin_px = setup.geom.mm_to_px(margin_mm, depth)
    for poly in (polys.lower, polys.upper):
        q = setup.world_to_camera(poly)
        if np.any(q[:, 2] <= 0):
            return False
        proj, _ = project_points(setup, poly)
        if _polygon_area(proj) < 1e-9:
            return False
        if point_in_polygon(xy, proj, margin_px):
            return False
    return True


def save_radiograph(img: Radiograph, path) -> Path:
    """16-bit binary PGM (min-max scaled) plus a JSON sidecar with the raw range."""
    path = Path(path).with_suffix(".pgm")
    raw = img.pixels
    lo, hi = float(raw.min()), float(raw.max())
    scaled = np.zeros_like(raw) if hi == lo else (raw - lo) / (hi - lo)
    q = np.round(scaled * 65535).astype(">u2")
    rows, cols = raw.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n65535\n".encode("ascii"))
        fh.write(q.tobytes())
    sidecar = {
        "format": "xrpose-radiograph",
        "format_version": FORMAT_VERSION,
        "raw_min": lo,
        "raw_max": hi,
        "setup": img.setup.to_dict(),
        "pixel_convention": "x=column, y=row, alpha from +x towards +y",
        "meta": img.meta,
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return path


def load_radiograph(path) -> Radiograph:
    path = Path(path).with_suffix(".pgm")
    blob = path.read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            pos = blob.index(b"\n", pos) + 1
            continue
        start = pos
        while not blob[pos:pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos].decode("ascii"))
    pos += 1
    if tokens[0] != "P5":
        raise ValueError("not a binary PGM")
    cols, rows, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    dtype = ">u2" if maxval > 255 else "u1"
    q = np.frombuffer(blob, dtype=dtype, count=rows * cols, offset=pos).reshape(rows, cols)
    side = json.loads(path.with_suffix(".json").read_text())
    lo, hi = side["raw_min"], side["raw_max"]
    pixels = lo + q.astype(np.float64) / maxval * (hi - lo)
    return Radiograph(pixels, ProjectionSetup.from_dict(side["setup"]), side.get("meta", {}))


def with_setup(setup: ProjectionSetup, **kw) -> ProjectionSetup:
    return replace(setup, **kw)
