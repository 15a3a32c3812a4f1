"""Iterative pose estimation: patch -> landmarks -> geometric pose, repeated."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .geometry import DEFAULT_LAYOUT, KeypointLayout, Pose, ProjectionGeometry, pose_from_keypoints
from .patches import ANCHOR, Patch, extract_patch, unnormalize_keypoints


class Predictor(Protocol):
    def predict(self, patch: Patch) -> np.ndarray: ...


class EstimationError(RuntimeError):
    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


@dataclass(frozen=True)
class EstimatorConfig:
    k_max: int = 3
    tau_validity_limit: float = 80.0
    layout: KeypointLayout = DEFAULT_LAYOUT
    anchor: tuple[float, float] = ANCHOR
    geom: ProjectionGeometry = field(default_factory=ProjectionGeometry)

    def __post_init__(self):
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")


def estimate_iterative(image, initial: Pose, predictor: Predictor, cfg: EstimatorConfig = EstimatorConfig()):
    """Run ``cfg.k_max`` refinement steps from ``initial``.

    Only ``x``, ``y`` and ``alpha`` of an estimate place the next patch, so the
    initial estimate needs no tau or depth.  Returns ``(pose, trace)`` where
    ``trace[k - 1]`` is the estimate after iteration ``k``.
    """
    rows, cols = (image.pixels if hasattr(image, "pixels") else image).shape
    trace: list[Pose] = []
    est = initial
    for k in range(1, cfg.k_max + 1):
        if not (0 <= est.x <= cols - 1 and 0 <= est.y <= rows - 1):
            raise EstimationError(f"estimate left the image before iteration {k}", trace)
        patch = extract_patch(image, est, cfg.anchor)
        kps = unnormalize_keypoints(predictor.predict(patch), patch)
        est = pose_from_keypoints(kps, cfg.layout, cfg.geom)
        trace.append(est)
    return est, trace
