"""Pose <-> keypoint geometry.

Pixel convention used throughout the package: ``x`` grows with the detector
column index, ``y`` grows with the row index, and the forward angle ``alpha``
is measured from +x towards +y.  With rows pointing down this is a clockwise
angle on screen.

A pose is the 5-tuple ``(x, y, alpha, tau, depth)``.  Six instrument-local
keypoints arranged as a cross (on the main axis and on its in-plane
perpendicular) are mapped to the image by a scaled-orthographic model at the
instrument depth; the inverse fits one line through each arm of the cross.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

DETECTOR_MM = 300.0
DETECTOR_PX = 1024
SDD_MM = 1064.0

# cos(tau) slightly above 1 is treated as rounding noise up to this slack
COS_TAU_SLACK = 1e-6
_COS_ULP_SNAP = 4 * np.finfo(float).eps


class DegenerateGeometryError(ValueError):
    """Raised when keypoints do not determine a pose (coincident or parallel)."""


@dataclass(frozen=True)
class ProjectionGeometry:
    source_detector_distance: float = SDD_MM
    detector_pixel_spacing: float = DETECTOR_MM / DETECTOR_PX
    detector_size: tuple[int, int] = (DETECTOR_PX, DETECTOR_PX)  # (columns, rows)

    def __post_init__(self):
        if self.source_detector_distance <= 0 or self.detector_pixel_spacing <= 0:
            raise ValueError("distances and pixel spacing must be positive")

    @property
    def d2p(self) -> float:
        """Detector-to-pixel scale ``spacing / SDD`` in 1/pixel."""
        return self.detector_pixel_spacing / self.source_detector_distance

    def mm_to_px(self, mm, depth):
        """Length in mm at ``depth`` from the source, as detector pixels."""
        return mm / (self.d2p * depth)

    def px_to_mm(self, px, depth):
        return px * self.d2p * depth

    @property
    def center(self) -> tuple[float, float]:
        return ((self.detector_size[0] - 1) / 2.0, (self.detector_size[1] - 1) / 2.0)

    def to_dict(self) -> dict:
        return {
            "source_detector_distance": self.source_detector_distance,
            "detector_pixel_spacing": self.detector_pixel_spacing,
            "detector_size": list(self.detector_size),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProjectionGeometry":
        return cls(
            float(d["source_detector_distance"]),
            float(d["detector_pixel_spacing"]),
            tuple(int(v) for v in d["detector_size"]),
        )


@dataclass(frozen=True)
class Pose:
    """Image-space pose. ``tau`` and ``depth`` may be ``None`` for initial estimates."""

    x: float
    y: float
    alpha: float
    tau: float | None = None
    depth: float | None = None
    flags: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "alpha", float(self.alpha) % 360.0)
        if self.tau is not None and not -90.0 <= self.tau <= 90.0:
            raise ValueError(f"tau must lie in [-90, 90], got {self.tau}")
        if self.depth is not None and not self.depth > 0:
            raise ValueError(f"depth must be positive, got {self.depth}")

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    def with_(self, **kw) -> "Pose":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "alpha": self.alpha, "tau": self.tau, "depth": self.depth}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(d["x"], d["y"], d["alpha"], d.get("tau"), d.get("depth"))


@dataclass(frozen=True)
class KeypointLayout:
    """Instrument-local keypoints (mm) forming a cross.

    ``axis_indices`` are the points on the main axis (``y_key == 0``) ordered by
    increasing ``x_key``; ``perp_indices`` the points with ``x_key == 0`` ordered
    by increasing ``y_key``.
    """

    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.shape != (6, 2):
            raise ValueError("layout needs exactly 6 two-dimensional points")
        on_axis = pts[:, 1] == 0
        on_perp = (pts[:, 0] == 0) & ~on_axis
        if not np.all(on_axis | on_perp):
            raise ValueError("every keypoint needs x_key == 0 or y_key == 0")
        if on_axis.sum() < 2 or on_perp.sum() < 2:
            raise ValueError("each arm of the cross needs at least two points")
        if np.ptp(pts[on_axis, 0]) == 0 or np.ptp(pts[on_perp, 1]) == 0:
            raise ValueError("arm points must not coincide")

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=float)

    @property
    def axis_indices(self) -> tuple[int, ...]:
        pts = self.array
        idx = np.flatnonzero(pts[:, 1] == 0)
        return tuple(int(i) for i in idx[np.argsort(pts[idx, 0], kind="stable")])

    @property
    def perp_indices(self) -> tuple[int, ...]:
        pts = self.array
        idx = np.flatnonzero((pts[:, 0] == 0) & (pts[:, 1] != 0))
        return tuple(int(i) for i in idx[np.argsort(pts[idx, 1], kind="stable")])

    def mirrored(self) -> "KeypointLayout":
        """Mirror on the instrument's Y-Z plane (flip the sign of ``x_key``)."""
        return KeypointLayout(tuple((-x + 0.0, y) for x, y in self.points))


DEFAULT_LAYOUT = KeypointLayout(((-3.0, 0.0), (-1.0, 0.0), (1.0, 0.0), (3.0, 0.0), (0.0, -2.0), (0.0, 2.0)))


@dataclass(frozen=True)
class KeypointSet:
    points: np.ndarray  # (6, 2) image pixels in layout order

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.shape != (6, 2) or not np.all(np.isfinite(pts)):
            raise ValueError("keypoints must be 6 finite 2-D points")
        object.__setattr__(self, "points", pts)

    def flat(self) -> np.ndarray:
        return self.points.reshape(-1).copy()


def rotation_2d(alpha_deg: float) -> np.ndarray:
    a = np.deg2rad(alpha_deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s], [s, c]])


def keypoints_from_pose(pose: Pose, layout: KeypointLayout = DEFAULT_LAYOUT,
                        geom: ProjectionGeometry = ProjectionGeometry()) -> KeypointSet:
    if pose.tau is None or pose.depth is None:
        raise ValueError("keypoints need a full pose (tau and depth)")
    pts = keypoints_from_pose_array([[pose.x, pose.y, pose.alpha, pose.tau, pose.depth]], layout, geom)
    return KeypointSet(pts[0])


def keypoints_from_pose_array(poses, layout: KeypointLayout = DEFAULT_LAYOUT,
                              geom: ProjectionGeometry = ProjectionGeometry()) -> np.ndarray:
    """Vectorized keypoints for rows ``(x, y, alpha, tau, depth)``; returns ``(n, 6, 2)``."""
    p = np.atleast_2d(np.asarray(poses, dtype=float))
    if np.any(np.abs(p[:, 3]) >= 90.0):
        raise DegenerateGeometryError("|tau| >= 90 collapses the axis arm")
    if np.any(p[:, 4] <= 0):
        raise ValueError("depth must be positive")
    local = layout.array
    a = np.deg2rad(p[:, 2])[:, None]
    u = local[None, :, 0] * np.cos(np.deg2rad(p[:, 3]))[:, None]
    v = local[None, :, 1]
    scale = 1.0 / (geom.d2p * p[:, 4])[:, None]
    x = p[:, 0:1] + scale * (np.cos(a) * u - np.sin(a) * v)
    y = p[:, 1:2] + scale * (np.sin(a) * u + np.cos(a) * v)
    return np.stack([x, y], axis=-1)


def fit_line(points) -> tuple[np.ndarray, np.ndarray]:
    """Total-least-squares line through ``points``.

    Returns ``(centroid, unit_direction)``; the direction is oriented so that it
    points from the first towards the last input point.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise ValueError("fit_line needs at least two 2-D points")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    if not np.any(centered):
        raise DegenerateGeometryError("all points coincide")
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    direction = vt[0]
    if np.dot(pts[-1] - pts[0], direction) < 0:
        direction = -direction
    return centroid, direction


def _fit_lines(pts):
    """Batched total-least-squares fit: centroids ``(n, 2)`` and unit directions oriented first -> last."""
    c = pts.mean(axis=1)
    d = pts - c[:, None]
    sxx, syy, sxy = (d[..., 0] ** 2).sum(1), (d[..., 1] ** 2).sum(1), (d[..., 0] * d[..., 1]).sum(1)
    if np.any(sxx + syy == 0):
        raise DegenerateGeometryError("all points of an arm coincide")
    theta = 0.5 * np.arctan2(2 * sxy, sxx - syy)
    u = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    flip = np.einsum("ij,ij->i", pts[:, -1] - pts[:, 0], u) < 0
    u[flip] *= -1
    return c, u


def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def pose_from_keypoints(kps: KeypointSet, layout: KeypointLayout = DEFAULT_LAYOUT,
                        geom: ProjectionGeometry = ProjectionGeometry()) -> Pose:
    """Invert :func:`keypoints_from_pose`.

    The returned ``tau`` is non-negative because its sign is not observable.
    If the foreshortening ratio exceeds one by more than ``COS_TAU_SLACK`` it is
    clamped and the pose carries the ``"cos_tau_clamped"`` flag.
    """
    out, clamped = pose_array_from_keypoints(kps.points[None], layout, geom)
    x, y, alpha, tau, depth = (float(v) for v in out[0])
    return Pose(x, y, alpha, tau, depth, flags=("cos_tau_clamped",) if clamped[0] else ())


def pose_array_from_keypoints(pts, layout: KeypointLayout = DEFAULT_LAYOUT,
                              geom: ProjectionGeometry = ProjectionGeometry()):
    """Vectorized inverse for ``(n, 6, 2)`` keypoints.

    Returns rows ``(x, y, alpha, |tau|, depth)`` and a boolean mask of clamped
    ``cos(tau)`` values.
    """
    pts = np.asarray(pts, dtype=float)
    local = layout.array
    ax, pp = list(layout.axis_indices), list(layout.perp_indices)

    p, u = _fit_lines(pts[:, ax])
    q, w = _fit_lines(pts[:, pp])
    den = _cross(u, w)
    if np.any(np.abs(den) < 1e-12):
        raise DegenerateGeometryError("axis and perpendicular lines are parallel")
    xy = p + (_cross(q - p, w) / den)[:, None] * u
    alpha = np.rad2deg(np.arctan2(u[:, 1], u[:, 0])) % 360.0

    # extreme points of each arm give the longest lever
    i, j = pp[0], pp[-1]
    perp_mm, perp_px = abs(local[j, 1] - local[i, 1]), np.linalg.norm(pts[:, j] - pts[:, i], axis=1)
    depth = perp_mm / (geom.d2p * perp_px)
    i, j = ax[0], ax[-1]
    axis_px = np.linalg.norm(pts[:, j] - pts[:, i], axis=1)
    # ratio of the two arms' magnifications; depth cancels, which saves rounding steps
    cos_tau = (axis_px * perp_mm) / (perp_px * abs(local[j, 0] - local[i, 0]))

    # keypoints carry about one ulp of their coordinate magnitude; cos(tau) closer to 1 than that
    # resolution is 1 (arccos would turn the rounding into tau ~ 1e-6 deg)
    resolution = _COS_ULP_SNAP * (1.0 + np.abs(pts).max(axis=(1, 2))) / np.minimum(perp_px, axis_px)
    cos_tau = np.where(np.abs(cos_tau - 1.0) <= resolution, 1.0, cos_tau)
    clamped = cos_tau > 1.0 + COS_TAU_SLACK
    tau = np.rad2deg(np.arccos(np.minimum(cos_tau, 1.0)))
    return np.column_stack([xy, alpha, tau, depth]), clamped


def angle_error(a, b):
    """Signed minimal difference ``a - b`` wrapped to (-180, 180]."""
    d = np.mod(np.asarray(a, dtype=float) - np.asarray(b, dtype=float), 360.0)
    d = np.where(d > 180.0, d - 360.0, d)
    return float(d) if np.ndim(d) == 0 else d

