"""Standard-pose patches, initial-estimate perturbations, keypoint normalization."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .geometry import DEFAULT_LAYOUT, KeypointLayout, KeypointSet, Pose, ProjectionGeometry, keypoints_from_pose, rotation_2d

PATCH_W, PATCH_H = 92, 48
ANCHOR = (30.0, 24.0)
MIRRORED_ANCHOR = (PATCH_W - 1 - ANCHOR[0], ANCHOR[1])
_FLAT_RTOL = 16 * np.finfo(float).eps


def anchor_for(kind: str) -> tuple[float, float]:
    """Screws extend in front of their origin, drills and robots behind it."""
    return ANCHOR if kind == "screw" else MIRRORED_ANCHOR


@dataclass
class Patch:
    pixels: np.ndarray  # (PATCH_H, PATCH_W), min-max normalized
    raw: np.ndarray  # same grid before normalization
    center: tuple[float, float]  # image point placed at the anchor
    alpha: float  # image rotation applied (degrees)
    anchor: tuple[float, float] = ANCHOR
    source_id: str | None = None

    def patch_to_image(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return np.asarray(self.center) + (pts - np.asarray(self.anchor)) @ rotation_2d(self.alpha).T

    def image_to_patch(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return (pts - np.asarray(self.center)) @ rotation_2d(self.alpha) + np.asarray(self.anchor)


def patch_grid(center, alpha: float, anchor=ANCHOR) -> tuple[np.ndarray, np.ndarray]:
    """Image coordinates ``(xs, ys)`` of every patch pixel, each ``(PATCH_H, PATCH_W)``."""
    cc, rr = np.meshgrid(np.arange(PATCH_W, dtype=float), np.arange(PATCH_H, dtype=float))
    R = rotation_2d(alpha)
    dx, dy = cc - anchor[0], rr - anchor[1]
    return center[0] + R[0, 0] * dx + R[0, 1] * dy, center[1] + R[1, 0] * dx + R[1, 1] * dy


def sample_patch(pixels: np.ndarray, center, alpha: float, anchor=ANCHOR, offset=(0, 0)) -> np.ndarray:
    """Bilinear patch samples; ``offset`` is the image position of ``pixels[0, 0]``."""
    xs, ys = patch_grid(center, alpha, anchor)
    return ndimage.map_coordinates(pixels, [ys - offset[1], xs - offset[0]], order=1, mode="constant", cval=0.0)


def patch_window(center, alpha: float, anchor=ANCHOR, pad: int = 2, shape=None) -> tuple[int, int, int, int]:
    """Pixel window ``(col0, row0, ncols, nrows)`` covering the patch footprint."""
    xs, ys = patch_grid(center, alpha, anchor)
    c0, r0 = int(np.floor(xs.min())) - pad, int(np.floor(ys.min())) - pad
    c1, r1 = int(np.ceil(xs.max())) + pad + 1, int(np.ceil(ys.max())) + pad + 1
    if shape is not None:
        c0, r0, c1, r1 = max(c0, 0), max(r0, 0), min(c1, shape[1]), min(r1, shape[0])
    return c0, r0, c1 - c0, r1 - r0


def extract_patch(image, estimate: Pose, anchor=ANCHOR, source_id=None) -> Patch:
    """Rotate the image about the estimate by ``-alpha`` and crop ``PATCH_W x PATCH_H``.

    The estimated position lands on ``anchor`` and the estimated axis on the
    patch +x direction.  Pixels beyond the image read as 0.
    """
    pixels = image.pixels if hasattr(image, "pixels") else np.asarray(image, dtype=float)
    rows, cols = pixels.shape
    if not (0 <= estimate.x <= cols - 1 and 0 <= estimate.y <= rows - 1):
        raise ValueError(f"estimate ({estimate.x:.1f}, {estimate.y:.1f}) lies outside the image")
    raw = sample_patch(pixels, (estimate.x, estimate.y), estimate.alpha, anchor)
    lo, hi = raw.min(), raw.max()
    # bilinear weights leave ulp-level ripple on flat regions; treat that as constant
    flat = hi - lo <= _FLAT_RTOL * max(abs(lo), abs(hi), np.finfo(float).tiny)
    norm = np.zeros_like(raw) if flat else (raw - lo) / (hi - lo)
    return Patch(norm, raw, (float(estimate.x), float(estimate.y)), float(estimate.alpha), tuple(anchor), source_id)


_HALF = np.array([(PATCH_W - 1) / 2.0, (PATCH_H - 1) / 2.0])


def normalize_keypoints(patch_points) -> np.ndarray:
    """Patch pixel coordinates -> 12 values in [-1, 1] (patch centre -> 0)."""
    pts = np.asarray(patch_points, dtype=float).reshape(-1, 2)
    return ((pts - _HALF) / _HALF).reshape(-1)


def unnormalize_keypoints(values, patch: Patch) -> KeypointSet:
    """Inverse of :func:`normalize_keypoints` followed by the inverse crop transform."""
    pts = np.asarray(values, dtype=float).reshape(-1, 2) * _HALF + _HALF
    return KeypointSet(patch.patch_to_image(pts))


def keypoint_targets(truth: Pose, patch: Patch, layout: KeypointLayout = DEFAULT_LAYOUT,
                     geom: ProjectionGeometry = ProjectionGeometry()) -> np.ndarray:
    """Normalized ground-truth keypoints for ``patch``."""
    kps = keypoints_from_pose(truth, layout, geom)
    return normalize_keypoints(patch.image_to_patch(kps.points))


@dataclass(frozen=True)
class AugmentationSpec:
    delta_x_initial: float = 2.5  # mm, upper bound of the radial offset
    delta_alpha_initial: float = 10.0  # degrees, std of the angle offset

    def __post_init__(self):
        if self.delta_x_initial <= 0 or self.delta_alpha_initial <= 0:
            raise ValueError("augmentation ranges must be positive")


def draw_initial_offset(spec: AugmentationSpec, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """Position offset (mm, image-plane x/y) and forward-angle offset (degrees).

    The radius is uniform, so the offsets concentrate near zero in area terms.
    """
    radius = rng.uniform(0.0, spec.delta_x_initial)
    beta = np.deg2rad(rng.uniform(0.0, 360.0))
    d_alpha = rng.normal(0.0, spec.delta_alpha_initial)
    return radius * np.array([np.cos(beta), np.sin(beta)]), float(d_alpha)


def perturb_pose(truth: Pose, offset_mm, d_alpha: float, geom: ProjectionGeometry, depth: float) -> Pose:
    """Initial estimate: only position and forward angle, no tau/depth."""
    d_px = np.asarray(offset_mm) / (geom.d2p * depth)
    return Pose(truth.x + d_px[0], truth.y + d_px[1], truth.alpha + d_alpha)


def training_patches(image, truth: Pose, n: int, rng: np.random.Generator, spec: AugmentationSpec = AugmentationSpec(),
                     layout: KeypointLayout = DEFAULT_LAYOUT, geom: ProjectionGeometry = ProjectionGeometry(),
                     anchor=ANCHOR) -> tuple[np.ndarray, np.ndarray]:
    """``n`` perturbed patches of one image and their 12-value targets."""
    xs, ys = [], []
    for _ in range(n):
        off, da = draw_initial_offset(spec, rng)
        est = perturb_pose(truth, off, da, geom, truth.depth)
        p = extract_patch(image, est, anchor)
        xs.append(p.pixels.astype(np.float32))
        ys.append(keypoint_targets(truth, p, layout, geom))
    return np.stack(xs), np.stack(ys)


def save_patch_archive(path, patches: np.ndarray, targets: np.ndarray, ids=None) -> None:
    """``<path>.bin`` float32 patches plus ``<path>.jsonl`` index with targets."""
    path = Path(path)
    patches = np.asarray(patches, dtype="<f4")
    patches.tofile(path.with_suffix(".bin"))
    with open(path.with_suffix(".jsonl"), "w") as fh:
        for i, t in enumerate(targets):
            row = {"i": i, "shape": [PATCH_H, PATCH_W], "offset": i * PATCH_H * PATCH_W * 4,
                   "targets": [float(v) for v in t]}
            if ids is not None:
                row["id"] = ids[i]
            fh.write(json.dumps(row) + "\n")


def load_patch_archive(path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    rows = [json.loads(l) for l in path.with_suffix(".jsonl").read_text().splitlines() if l.strip()]
    data = np.fromfile(path.with_suffix(".bin"), dtype="<f4").reshape(len(rows), PATCH_H, PATCH_W)
    return data, np.array([r["targets"] for r in rows])
