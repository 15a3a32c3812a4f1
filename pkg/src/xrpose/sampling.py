"""Scene sampling, the rejection loop for valid projections, and dataset files."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .drr import (ProjectionSetup, Radiograph, load_radiograph, pose_from_placement, project_point, rot_x,
                  rot_y, rot_z, save_radiograph, validity_check)
from .geometry import Pose, ProjectionGeometry
from .instruments import MU_INSTRUMENT, make_instrument, place_instrument
from .phantoms import ValidityPolygons
from .scene import UPSAMPLE, render_radiograph
from .volume import Volume

MANIFEST_VERSION = 1
INNER_RETRIES = 100
OUTER_RETRIES = 100
# origin must project at least this far inside the detector to be estimable
DETECTOR_MARGIN_PX = 32


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class DistributionSpec:
    """``normal(mu, sigma)``, ``uniform(lo, hi)``, ``polar(r_max)`` or ``fixed(v)``.

    ``size`` > 1 draws that many independent components.  ``polar`` returns
    ``(r, phi_deg)`` with both coordinates uniform.
    """

    kind: str
    params: tuple[float, ...]
    size: int = 1

    def __post_init__(self):
        if self.kind == "normal":
            if self.params[1] <= 0:
                raise ValueError("normal needs sigma > 0")
        elif self.kind == "uniform":
            if not self.params[0] < self.params[1]:
                raise ValueError("uniform needs min < max")
        elif self.kind == "polar":
            if self.params[0] < 0:
                raise ValueError("polar needs r_max >= 0")
        elif self.kind != "fixed":
            raise ValueError(f"unknown distribution kind {self.kind!r}")

    def to_dict(self):
        return {"kind": self.kind, "params": list(self.params), "size": self.size}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], tuple(d["params"]), d.get("size", 1))


def normal(mu, sigma, size=1):
    return DistributionSpec("normal", (float(mu), float(sigma)), size)


def uniform(lo, hi, size=1):
    return DistributionSpec("uniform", (float(lo), float(hi)), size)


def polar(r_max):
    return DistributionSpec("polar", (float(r_max),))


def fixed(v, size=1):
    return DistributionSpec("fixed", (float(v),), size)


def sample(spec: DistributionSpec, rng: np.random.Generator):
    if spec.kind == "fixed":
        out = np.full(spec.size, spec.params[0])
    elif spec.kind == "normal":
        out = rng.normal(spec.params[0], spec.params[1], size=spec.size)
    elif spec.kind == "uniform":
        out = rng.uniform(spec.params[0], spec.params[1], size=spec.size)
    else:
        return np.array([rng.uniform(0.0, spec.params[0]), rng.uniform(0.0, 360.0)])
    return float(out[0]) if spec.size == 1 else out


@dataclass(frozen=True)
class GenerationSpecs:
    position: DistributionSpec
    spin: DistributionSpec
    tilt: DistributionSpec
    source_object_distance: DistributionSpec = uniform(362.8, 725.61)
    offset: DistributionSpec = polar(100.0)
    rotations: tuple[DistributionSpec, DistributionSpec, DistributionSpec] = (
        uniform(0.0, 360.0), uniform(-60.0, 60.0), uniform(0.0, 360.0))
    robot_bend: DistributionSpec = uniform(-30.0, 30.0)

    def to_dict(self):
        return {
            "position": self.position.to_dict(), "spin": self.spin.to_dict(), "tilt": self.tilt.to_dict(),
            "source_object_distance": self.source_object_distance.to_dict(), "offset": self.offset.to_dict(),
            "rotations": [r.to_dict() for r in self.rotations], "robot_bend": self.robot_bend.to_dict(),
        }


TRAINING_SPECS = GenerationSpecs(normal(0.0, 5.0, 3), uniform(0.0, 360.0), normal(0.0, 30.0, 2))
EVALUATION_SPECS = GenerationSpecs(normal(0.0, 1.0, 3), uniform(0.0, 360.0), normal(0.0, 15.0, 2))


def orientation_deviation(spin: float, tilts) -> np.ndarray:
    """Spin about the instrument axis (local x), then tilt about local y and z."""
    return rot_z(tilts[1]) @ rot_y(tilts[0]) @ rot_x(spin)


@dataclass
class DatasetRecord:
    index: int
    seed: int
    split: str
    phantom: str
    phantom_seed: int
    instrument: str
    bend: float
    nominal_id: int
    nominal_position: np.ndarray
    position: np.ndarray
    rotation: np.ndarray
    setup: ProjectionSetup
    pose: Pose
    on_detector: bool
    attempts: int = 1
    image: str | None = None
    radiograph: Radiograph | None = field(default=None, repr=False, compare=False)

    @property
    def axis(self) -> np.ndarray:
        return self.rotation[:, 0]

    @property
    def geom(self) -> ProjectionGeometry:
        return self.setup.geom

    def placed_mesh(self):
        return place_instrument(make_instrument(self.instrument, bend=self.bend), self.position, self.rotation)

    def to_dict(self) -> dict:
        return {
            "schema_version": MANIFEST_VERSION,
            "index": self.index, "seed": self.seed, "split": self.split,
            "phantom": self.phantom, "phantom_seed": self.phantom_seed,
            "instrument": self.instrument, "bend": self.bend, "nominal_id": self.nominal_id,
            "nominal_position": self.nominal_position.tolist(), "position": self.position.tolist(),
            "rotation": self.rotation.tolist(), "setup": self.setup.to_dict(), "pose": self.pose.to_dict(),
            "on_detector": self.on_detector, "attempts": self.attempts, "image": self.image,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetRecord":
        if d.get("schema_version") != MANIFEST_VERSION:
            raise ValueError(f"unsupported manifest schema {d.get('schema_version')}")
        return cls(d["index"], d["seed"], d["split"], d["phantom"], d["phantom_seed"], d["instrument"],
                   d["bend"], d["nominal_id"], np.array(d["nominal_position"]), np.array(d["position"]),
                   np.array(d["rotation"]), ProjectionSetup.from_dict(d["setup"]), Pose.from_dict(d["pose"]),
                   d["on_detector"], d.get("attempts", 1), d.get("image"))


def draw_projection(specs: GenerationSpecs, rng, geom: ProjectionGeometry, center) -> ProjectionSetup:
    sod = sample(specs.source_object_distance, rng)
    r, phi = sample(specs.offset, rng)
    rot = tuple(sample(s, rng) for s in specs.rotations)
    return ProjectionSetup(geom, sod, (float(r), float(phi)), rot, tuple(center))


def on_detector(pose: Pose, geom: ProjectionGeometry, margin: float = DETECTOR_MARGIN_PX) -> bool:
    cols, rows = geom.detector_size
    return margin <= pose.x <= cols - 1 - margin and margin <= pose.y <= rows - 1 - margin


def sample_record(index: int, seed: int, phantom: Volume, kind: str, nominal, specs: GenerationSpecs,
                  polys: ValidityPolygons, geom: ProjectionGeometry, split: str = "train",
                  margin_mm: float = 5.0, inner: int = INNER_RETRIES, outer: int = OUTER_RETRIES) -> DatasetRecord:
    """One pass of the double rejection loop (no rendering)."""
    rng = np.random.default_rng([seed, index])
    nominal_id = index % len(nominal)
    nom_pos, nom_rot = nominal[nominal_id]
    bend = sample(specs.robot_bend, rng) if kind == "robot" else 0.0
    center = phantom.center
    attempts = 0
    for _ in range(outer):
        position = nom_pos + np.atleast_1d(sample(specs.position, rng))
        rotation = nom_rot @ orientation_deviation(sample(specs.spin, rng), np.atleast_1d(sample(specs.tilt, rng)))
        for _ in range(inner):
            attempts += 1
            setup = draw_projection(specs, rng, geom, center)
            if setup.world_to_camera(position)[2] <= 0:
                continue
            if validity_check(setup, position, polys, margin_mm):
                pose = pose_from_placement(setup, position, rotation[:, 0])
                return DatasetRecord(index, seed, split, phantom.meta.get("preset", "custom"),
                                     int(phantom.meta.get("seed", 0)), kind, float(bend), nominal_id,
                                     np.asarray(nom_pos, dtype=float), position, rotation, setup, pose,
                                     on_detector(pose, geom), attempts)
    raise GenerationError(
        f"no valid projection for record {index} after {outer} x {inner} draws "
        f"(position {specs.position.to_dict()}, projection {specs.source_object_distance.to_dict()})")


def generate_dataset(phantom: Volume, kind: str, nominal: Sequence, specs: GenerationSpecs, count: int,
                     polys: ValidityPolygons, seed: int = 0, split: str = "train", render: bool = True,
                     out_dir=None, geom: ProjectionGeometry = ProjectionGeometry(),
                     mu_instrument: float = MU_INSTRUMENT, factor: int = UPSAMPLE, margin_mm: float = 5.0,
                     start_index: int = 0) -> list[DatasetRecord]:
    """Sample ``count`` records and (optionally) render their radiographs.

    Each record draws from its own generator seeded by ``(seed, index)``, so
    any record can be regenerated alone and the output never depends on
    evaluation order.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    records = []
    for index in range(start_index, start_index + count):
        rec = sample_record(index, seed, phantom, kind, nominal, specs, polys, geom, split, margin_mm)
        if render:
            img = render_radiograph(phantom, rec.placed_mesh(), rec.setup, mu_instrument, factor)
            if out_dir is not None:
                rel = Path("images") / f"{split}_{rec.phantom}_{index:05d}"
                (Path(out_dir) / "images").mkdir(parents=True, exist_ok=True)
                save_radiograph(img, Path(out_dir) / rel)
                rec.image = str(rel.with_suffix(".pgm"))
            rec.radiograph = img
        records.append(rec)
    return records


def split_scenario(records: Sequence[DatasetRecord], instrument: str, holdout_preset: str):
    """Leave-one-phantom-out split: the holdout preset becomes the evaluation set."""
    mine = [r for r in records if r.instrument == instrument]
    presets = sorted({r.phantom for r in mine})
    if len(presets) < 2:
        raise ValueError(f"need records from >= 2 phantom presets, got {presets}")
    if holdout_preset not in presets:
        raise ValueError(f"holdout preset {holdout_preset!r} not present in {presets}")
    train = [r for r in mine if r.phantom != holdout_preset]
    evaluation = [r for r in mine if r.phantom == holdout_preset]
    return train, evaluation


def pose_consistency(rec: DatasetRecord) -> float:
    """Pixel distance between the stored pose and a fresh projection of the position."""
    xy, _ = project_point(rec.setup, rec.position)
    return float(np.hypot(xy[0] - rec.pose.x, xy[1] - rec.pose.y))


def save_manifest(records: Sequence[DatasetRecord], path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def load_manifest(path, load_images: bool = False) -> list[DatasetRecord]:
    path = Path(path)
    out = []
    for line in path.read_text().splitlines():
        if line.strip():
            rec = DatasetRecord.from_dict(json.loads(line))
            if load_images and rec.image:
                rec.radiograph = load_radiograph(path.parent / rec.image)
            out.append(rec)
    return out


RECORD_COLUMNS = ("index", "split", "phantom", "instrument", "bend", "nominal_id", "x", "y", "alpha", "tau",
                  "depth", "sod", "offset_r", "offset_phi", "rot_a", "rot_b", "rot_c", "on_detector", "attempts")


def write_records_csv(records: Sequence[DatasetRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_COLUMNS)
        for r in records:
            p, s = r.pose, r.setup
            w.writerow([r.index, r.split, r.phantom, r.instrument, repr(r.bend), r.nominal_id,
                        repr(p.x), repr(p.y), repr(p.alpha), repr(p.tau), repr(p.depth),
                        repr(s.source_object_distance), repr(s.offset[0]), repr(s.offset[1]),
                        *(repr(float(a)) for a in s.rotations), int(r.on_detector), r.attempts])
