"""Attenuation volumes and their on-disk format."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

FORMAT_VERSION = 1


@dataclass
class Volume:
    """Scalar attenuation grid (1/mm).

    ``data[i, j, k]`` is the voxel centred at ``origin + (i, j, k) * spacing``
    (world mm).  ``meta`` carries free-form notes such as voxelization warnings.
    """

    data: np.ndarray
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ValueError("volume data must be 3-D")
        self.spacing = tuple(float(s) for s in self.spacing)
        self.origin = tuple(float(o) for o in self.origin)
        if min(self.spacing) <= 0:
            raise ValueError("spacing must be positive")
        if np.any(self.data < 0):
            raise ValueError("attenuation must be non-negative")

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    @property
    def extent(self) -> tuple[np.ndarray, np.ndarray]:
        """Bounds of the voxel cells (not centres) in world mm."""
        o, s, n = np.array(self.origin), np.array(self.spacing), np.array(self.dims)
        return o - 0.5 * s, o + (n - 0.5) * s

    @property
    def center(self) -> np.ndarray:
        lo, hi = self.extent
        return 0.5 * (lo + hi)

    def world_to_index(self, p) -> np.ndarray:
        return (np.asarray(p, dtype=float) - np.array(self.origin)) / np.array(self.spacing)

    def copy(self) -> "Volume":
        return Volume(self.data.copy(), self.spacing, self.origin, dict(self.meta))


def resample(volume: Volume, origin, spacing, dims) -> Volume:
    """Trilinear resampling of ``volume`` onto a new regular grid.

    Samples outside the source grid take the nearest edge value, so constant
    volumes stay constant.
    """
    origin = np.asarray(origin, dtype=float)
    spacing = np.asarray(spacing, dtype=float)
    axes = [
        (origin[a] + np.arange(dims[a]) * spacing[a] - volume.origin[a]) / volume.spacing[a]
        for a in range(3)
    ]
    coords = np.meshgrid(*axes, indexing="ij")
    data = ndimage.map_coordinates(volume.data, coords, order=1, mode="nearest")
    return Volume(np.maximum(data, 0.0), tuple(spacing), tuple(origin))


def save_volume(volume: Volume, path) -> Path:
    """Write ``<path>.json`` header plus little-endian float32 ``<path>.raw``."""
    path = Path(path)
    header = {
        "format": "xrpose-volume",
        "format_version": FORMAT_VERSION,
        "dims": list(volume.dims),
        "spacing": list(volume.spacing),
        "origin": list(volume.origin),
        "units": "attenuation 1/mm",
        "axis_order": "x,y,z; last index varies fastest",
        "dtype": "<f4",
        "payload": path.with_suffix(".raw").name,
        "pixel_convention": "detector x=column, y=row, alpha from +x towards +y",
        "meta": volume.meta,
    }
    path.with_suffix(".json").write_text(json.dumps(header, indent=2, sort_keys=True))
    volume.data.astype("<f4").tofile(path.with_suffix(".raw"))
    return path.with_suffix(".json")


def load_volume(path) -> Volume:
    path = Path(path).with_suffix(".json")
    header = json.loads(path.read_text())
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported volume format version {header.get('format_version')}")
    data = np.fromfile(path.parent / header["payload"], dtype="<f4")
    data = data.reshape(header["dims"]).astype(np.float64)
    return Volume(data, tuple(header["spacing"]), tuple(header["origin"]), header.get("meta", {}))
