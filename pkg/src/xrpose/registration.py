"""Intensity-based 2D/3D registration baseline.

The instrument is re-rendered for each candidate in-plane pose and compared
with the fixed radiograph on the same 92 x 48 patch that the landmark
estimator sees.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .cmaes import CMAConfig, cma_es_minimize
from .drr import Radiograph, placement_from_pose, render_window, volume_footprint
from .evaluation import _fmt, compute_errors, initial_estimate, trial_rng
from .geometry import Pose
from .instruments import MU_INSTRUMENT, make_instrument, place_instrument
from .patches import AugmentationSpec, anchor_for, patch_window, sample_patch
from .scene import UPSAMPLE, _clip_window, render_scene
from .volume import Volume

METRICS = ("gc", "mi")


def _ncc(a, b) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float(np.sum(a * a)) * float(np.sum(b * b)))
    return 0.0 if den == 0 else float(np.sum(a * b)) / den


def gradient_correlation(a, b) -> float:
    """Mean NCC of the central-difference gradients along rows and columns."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("images must have equal shape")
    gx = _ncc(a[:, 2:] - a[:, :-2], b[:, 2:] - b[:, :-2])
    gy = _ncc(a[2:, :] - a[:-2, :], b[2:, :] - b[:-2, :])
    return 0.5 * (gx + gy)


def mutual_information(a, b, bins: int = 32) -> float:
    """Histogram MI in nats, equal-width bins shared over the joint range."""
    a, b = np.asarray(a, dtype=float).ravel(), np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError("images must have equal shape")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    lo, hi = min(a.min(), b.min()), max(a.max(), b.max())
    if hi == lo:
        return 0.0
    edges = np.linspace(lo, hi, bins + 1)
    joint, _, _ = np.histogram2d(a, b, bins=(edges, edges))
    # integer marginals and an exactly rounded sum keep MI(a, b) == MI(b, a)
    counts = joint.astype(np.int64)
    n = counts.sum()
    ca, cb = counts.sum(axis=1), counts.sum(axis=0)
    i, j = np.nonzero(counts)
    c = counts[i, j].astype(float)
    terms = c / n * np.log(c * n / (ca[i].astype(float) * cb[j]))
    return max(math.fsum(terms), 0.0)


def histogram_entropy(a, bins: int = 32) -> float:
    a = np.asarray(a, dtype=float).ravel()
    lo, hi = a.min(), a.max()
    if hi == lo:
        return 0.0
    counts, _ = np.histogram(a, bins=np.linspace(lo, hi, bins + 1))
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)))


_METRIC_FNS = {"gc": gradient_correlation, "mi": mutual_information}


@dataclass(frozen=True)
class RegistrationConfig:
    metric: str = "gc"
    max_renders: int = 400
    sigma0: float = 1.0
    scale_mm: float = 1.0  # in-plane search unit, converted to pixels at the initial depth
    scale_deg: float = 5.0
    popsize: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.metric not in _METRIC_FNS:
            raise ValueError(f"metric must be one of {METRICS}")
        if self.sigma0 <= 0 or self.scale_mm <= 0 or self.scale_deg <= 0:
            raise ValueError("sigma0 and scales must be positive")


def _align(a, b) -> np.ndarray:
    """Smallest rotation taking unit vector ``a`` to unit vector ``b``."""
    v = np.cross(a, b)
    c = float(np.dot(a, b))
    if c < -1 + 1e-12:
        raise ValueError("axes are opposite")
    K = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + K + K @ K / (1 + c)


class RegistrationScene:
    """Anatomy, instrument and projection known to the registration.

    The spin about the instrument axis is taken from ``rotation``; candidate
    poses only re-aim the axis.
    """

    def __init__(self, anatomy: Volume, kind: str, rotation, setup, bend: float = 0.0,
                 mu_instrument: float = MU_INSTRUMENT, factor: int = UPSAMPLE):
        self.anatomy = anatomy
        self.mesh = make_instrument(kind, bend=bend)
        self.kind = kind
        self.rotation = np.asarray(rotation, dtype=float)
        self.setup = setup
        self.mu = mu_instrument
        self.factor = factor
        self.renders = 0
        self._cache = {}

    @classmethod
    def from_record(cls, anatomy: Volume, rec) -> "RegistrationScene":
        return cls(anatomy, rec.instrument, rec.rotation, rec.setup, rec.bend)

    def anatomy_image(self, window) -> np.ndarray:
        if window not in self._cache:
            c0, r0, w, h = window
            img = np.zeros((h, w))
            sub = _clip_window(volume_footprint(self.anatomy, self.setup), window)
            if sub is not None:
                a0, b0, aw, bh = sub
                img[b0 - r0:b0 - r0 + bh, a0 - c0:a0 - c0 + aw] = render_window(self.anatomy, self.setup, sub)
            self._cache[window] = img
        return self._cache[window]

    def render(self, pose: Pose, window) -> np.ndarray:
        position, axis = placement_from_pose(self.setup, pose)
        R = _align(self.rotation[:, 0], axis / np.linalg.norm(axis)) @ self.rotation
        mesh = place_instrument(self.mesh, position, R)
        self.renders += 1
        return render_scene(self.anatomy, mesh, self.setup, window, self.mu, self.factor,
                            anatomy_image=self.anatomy_image(window))


@dataclass
class RegistrationResult:
    pose: Pose
    score: float
    renders: int
    generations: int
    flags: tuple[str, ...]


def register_pose(fixed: Radiograph | np.ndarray, initial: Pose, scene: RegistrationScene,
                  cfg: RegistrationConfig = RegistrationConfig()) -> RegistrationResult:
    """Search ``(x, y, alpha)`` maximizing the metric; tau and depth stay at ``initial``."""
    if initial.tau is None or initial.depth is None:
        raise ValueError("registration needs tau and depth in the initial pose")
    pixels = fixed.pixels if hasattr(fixed, "pixels") else np.asarray(fixed, dtype=float)
    anchor = anchor_for(scene.kind)
    center, alpha = (initial.x, initial.y), initial.alpha
    window = patch_window(center, alpha, anchor, shape=pixels.shape)
    fixed_patch = sample_patch(pixels, center, alpha, anchor)
    metric = _METRIC_FNS[cfg.metric]
    px = scene.setup.geom.mm_to_px(cfg.scale_mm, initial.depth)
    scale = np.array([px, px, cfg.scale_deg])
    start_renders = scene.renders

    def pose_of(z):
        return initial.with_(x=initial.x + z[0] * scale[0], y=initial.y + z[1] * scale[1],
                             alpha=initial.alpha + z[2] * scale[2])

    def objective(z):
        moving = scene.render(pose_of(z), window)
        return -metric(fixed_patch, sample_patch(moving, center, alpha, anchor, window[:2]))

    res = cma_es_minimize(objective, np.zeros(3),
                          CMAConfig(cfg.sigma0, cfg.max_renders, cfg.popsize, seed=cfg.seed), evaluate_start=True)
    used = scene.renders - start_renders
    flags = ("budget_exhausted",) if res.stop == "budget" else ()
    return RegistrationResult(pose_of(res.x), -res.f, used, res.generations, flags)


TRIAL_COLUMNS = ("record", "trial", "metric", "init_position_mm", "final_position_mm", "init_forward_angle_deg",
                 "final_forward_angle_deg", "score", "renders", "improved", "flags", "runtime_s")


def registration_trials(records, anatomy_for, metrics=("gc", "mi"), trials: int = 2, seed: int = 0,
                        cfg: RegistrationConfig = RegistrationConfig(),
                        aug: AugmentationSpec = AugmentationSpec()) -> list[dict]:
    """Register each record from the same seeded initial estimates the landmark estimator uses.

    Tau and depth of the initial estimate are set to ground truth because the
    search covers only the in-plane parameters.
    """
    rows = []
    for rec in records:
        scene = RegistrationScene.from_record(anatomy_for(rec), rec)
        for trial in range(trials):
            init = initial_estimate(rec, trial_rng(seed, rec.index, trial), aug)
            init = init.with_(tau=rec.pose.tau, depth=rec.pose.depth)
            e0 = compute_errors(init, rec.pose, rec.geom)
            for m in metrics:
                c = RegistrationConfig(m, cfg.max_renders, cfg.sigma0, cfg.scale_mm, cfg.scale_deg, cfg.popsize,
                                       seed=int(np.random.SeedSequence([seed, rec.index, trial]).generate_state(1)[0]))
                t0 = time.perf_counter()
                res = register_pose(rec.radiograph, init, scene, c)
                e1 = compute_errors(res.pose, rec.pose, rec.geom)
                rows.append({"record": rec.index, "trial": trial, "metric": m,
                             "init_position_mm": e0.position_mm, "final_position_mm": e1.position_mm,
                             "init_forward_angle_deg": e0.forward_angle_deg,
                             "final_forward_angle_deg": e1.forward_angle_deg, "score": res.score,
                             "renders": res.renders, "improved": int(e1.position_mm < e0.position_mm),
                             "flags": "|".join(res.flags), "runtime_s": time.perf_counter() - t0})
    return rows


def trial_rows_csv(rows, path, with_runtime: bool = False) -> None:
    cols = TRIAL_COLUMNS if with_runtime else TRIAL_COLUMNS[:-1]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(r[c]) for c in cols) + "\n")
