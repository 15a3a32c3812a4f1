"""Ground-truth landmark predictor with optional pixel noise.

Stands in for a trained network so the geometric pipeline can be checked in
isolation.  ``deviation_gain`` lets the noise grow with the distance of the
instrument from the standard pose in the patch, which is how a regressor
trained mostly on near-standard patches behaves.
"""
from __future__ import annotations

import numpy as np

from .geometry import DEFAULT_LAYOUT, KeypointLayout, Pose, ProjectionGeometry, angle_error, keypoints_from_pose
from .patches import Patch, normalize_keypoints

# deviation at which the noise level doubles for deviation_gain == 1
DEVIATION_PX = 10.0
DEVIATION_DEG = 10.0


def standard_pose_deviation(truth: Pose, patch: Patch) -> float:
    """Dimensionless distance of the true pose from the patch's standard pose."""
    origin = patch.image_to_patch(truth.xy)[0]
    shift = float(np.hypot(*(origin - np.asarray(patch.anchor))))
    turn = abs(angle_error(truth.alpha, patch.alpha))
    return shift / DEVIATION_PX + turn / DEVIATION_DEG


def oracle_predict(truth: Pose, patch: Patch, noise_px: float = 0.0, rng: np.random.Generator | None = None,
                   layout: KeypointLayout = DEFAULT_LAYOUT, geom: ProjectionGeometry = ProjectionGeometry(),
                   deviation_gain: float = 0.0) -> np.ndarray:
    """True keypoints in patch coordinates, plus i.i.d. Gaussian noise, normalized."""
    pts = patch.image_to_patch(keypoints_from_pose(truth, layout, geom).points)
    if noise_px > 0:
        if rng is None:
            raise ValueError("a random generator is required for noisy predictions")
        sigma = noise_px * (1.0 + deviation_gain * standard_pose_deviation(truth, patch))
        pts = pts + rng.normal(0.0, sigma, size=pts.shape)
    return normalize_keypoints(pts)


class OraclePredictor:
    def __init__(self, truth: Pose, noise_px=0.0, rng=None, layout=DEFAULT_LAYOUT,
                 geom=ProjectionGeometry(), deviation_gain=0.0):
        self.truth = truth
        self.noise_px = noise_px
        self.rng = rng
        self.layout = layout
        self.geom = geom
        self.deviation_gain = deviation_gain

    def predict(self, patch: Patch) -> np.ndarray:
        return oracle_predict(self.truth, patch, self.noise_px, self.rng, self.layout, self.geom,
                              self.deviation_gain)
