"""Procedural attenuation phantoms standing in for head CT volumes.

Every preset is a pure function of ``(preset, seed)``.  All presets share one
grid (64 x 64 x 80 voxels at 1.25 mm) centred on the world origin, with the
long axis along world z; the top and bottom faces of the grid mark where the
"scan" ends, which is what the validity polygons describe.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volume import Volume

PRESETS = ("shell-sphere", "layered-slab", "perlin-bone")
GRID_DIMS = (64, 64, 80)
GRID_SPACING = 1.25

MU_SHELL = 0.05
MU_INSIDE = 0.01
SPHERE_OUTER_MM = 36.0
SPHERE_SHELL_MM = 4.0


@dataclass(frozen=True)
class ValidityPolygons:
    """Planar loops (world mm) bounding the regions without volume data."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        for name in ("lower", "upper"):
            poly = np.asarray(getattr(self, name), dtype=float)
            if poly.ndim != 2 or poly.shape[1] != 3 or len(poly) < 3:
                raise ValueError(f"{name} polygon needs >= 3 vertices in 3-D")
            c = poly - poly.mean(axis=0)
            area = 0.5 * np.linalg.norm(sum(np.cross(c[i], c[(i + 1) % len(c)]) for i in range(len(c))))
            if area <= 0:
                raise ValueError(f"{name} polygon has zero area")
            object.__setattr__(self, name, poly)

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ValidityPolygons":
        return cls(np.array(d["lower"]), np.array(d["upper"]))


def _grid_centres():
    n = np.array(GRID_DIMS)
    origin = -(n - 1) / 2.0 * GRID_SPACING
    axes = [origin[a] + np.arange(n[a]) * GRID_SPACING for a in range(3)]
    return origin, np.meshgrid(*axes, indexing="ij")


def layered_slab_layers(seed: int) -> list[tuple[int, float]]:
    """Layer table ``[(thickness_voxels, mu), ...]`` along z for the slab preset.

    The outermost layer on each side is dense cortical bone (mu 0.08).
    """
    rng = np.random.default_rng([seed, 1])
    n_inner = int(rng.integers(4, 8))
    nz = GRID_DIMS[2]
    cortical = 4
    cuts = np.sort(rng.choice(np.arange(1, nz - 2 * cortical), size=n_inner - 1, replace=False))
    widths = np.diff(np.concatenate([[0], cuts, [nz - 2 * cortical]]))
    mus = rng.uniform(0.005, 0.05, size=n_inner)
    return [(cortical, 0.08)] + [(int(w), float(m)) for w, m in zip(widths, mus)] + [(cortical, 0.08)]


def _shell_sphere(seed):
    origin, (x, y, z) = _grid_centres()
    r = np.sqrt(x**2 + y**2 + z**2)
    data = np.zeros(GRID_DIMS)
    data[r <= SPHERE_OUTER_MM] = MU_SHELL
    data[r < SPHERE_OUTER_MM - SPHERE_SHELL_MM] = MU_INSIDE
    return origin, data


def _layered_slab(seed):
    origin, _ = _grid_centres()
    profile = np.concatenate([np.full(n, mu) for n, mu in layered_slab_layers(seed)])
    data = np.broadcast_to(profile, GRID_DIMS).copy()
    return origin, data


def _perlin_bone(seed):
    """Smoothed-noise 'temporal bone': cortical shell, trabecular interior, air cells."""
    rng = np.random.default_rng([seed, 2])
    origin, (x, y, z) = _grid_centres()
    ell = np.sqrt((x / 36.0) ** 2 + (y / 34.0) ** 2 + (z / 44.0) ** 2)
    coarse = ndimage.gaussian_filter(rng.standard_normal(GRID_DIMS), sigma=4.0, mode="wrap")
    fine = ndimage.gaussian_filter(rng.standard_normal(GRID_DIMS), sigma=1.5, mode="wrap")
    coarse /= coarse.std()
    fine /= fine.std()
    interior = np.clip(0.025 + 0.008 * coarse + 0.004 * fine, 0.008, 0.045)
    air_cells = (coarse + 0.5 * fine) > 1.6
    interior[air_cells] = 0.001
    data = np.zeros(GRID_DIMS)
    inside = ell <= 1.0
    data[inside] = interior[inside]
    shell = inside & (ell > 0.88)
    data[shell] = np.clip(0.07 + 0.01 * fine[shell], 0.05, 0.1)
    return origin, data


_BUILDERS = {"shell-sphere": _shell_sphere, "layered-slab": _layered_slab, "perlin-bone": _perlin_bone}


def build_phantom(seed: int, preset: str) -> Volume:
    try:
        builder = _BUILDERS[preset]
    except KeyError:
        raise ValueError(f"unknown phantom preset {preset!r}; choose from {PRESETS}") from None
    origin, data = builder(int(seed))
    return Volume(data, (GRID_SPACING,) * 3, tuple(origin), {"preset": preset, "seed": int(seed)})


def validity_polygons(volume: Volume) -> ValidityPolygons:
    """Bottom and top faces of the grid: beyond them the scan has no data."""
    lo, hi = volume.extent
    loop = lambda z: np.array([[lo[0], lo[1], z], [hi[0], lo[1], z], [hi[0], hi[1], z], [lo[0], hi[1], z]])
    return ValidityPolygons(loop(lo[2]), loop(hi[2]))


def frame_from_axis(axis) -> np.ndarray:
    """Rotation whose first column is ``axis`` (instrument local +x)."""
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    helper = np.array([0.0, 0.0, 1.0]) if abs(a[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    b = np.cross(helper, a)
    b /= np.linalg.norm(b)
    return np.column_stack([a, b, np.cross(a, b)])


def nominal_poses(preset: str, kind: str) -> list[tuple[np.ndarray, np.ndarray]]:
    """20 anchor placements ``(position_mm, rotation)``, 10 per side.

    Screws sit at the outer surface pointing inwards; drills and robots sit in
    the mastoid region (deeper) pointing inwards as well.
    """
    if preset not in PRESETS:
        raise ValueError(f"unknown phantom preset {preset!r}")
    radius = SPHERE_OUTER_MM - 1.0 if kind == "screw" else SPHERE_OUTER_MM - 9.0
    out = []
    for side in (-1.0, 1.0):
        for elev in (-16.0, -8.0, 0.0, 8.0, 16.0):
            for az in (-18.0, 18.0):
                phi = np.deg2rad(az) + (np.pi if side < 0 else 0.0)
                th = np.deg2rad(elev)
                pos = radius * np.array([np.cos(th) * np.cos(phi), np.cos(th) * np.sin(phi), np.sin(th)])
                out.append((pos, frame_from_axis(-pos)))
    return out
