"""Rounded-rectangle toy task: predict the in-plane angle directly or via two end points."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import angle_error

SIZE = 30
LENGTH, WIDTH = 15.0, 9.0
CORNER_RADIUS = 4.0
SUPERSAMPLE = 4
_HALF_DIAG = float(np.hypot(LENGTH / 2, WIDTH / 2))
_C = (SIZE - 1) / 2.0


def _inside(u, v):
    """Rectangle along +u whose corners at +u are rounded."""
    a, b, r = LENGTH / 2, WIDTH / 2, CORNER_RADIUS
    box = (np.abs(u) <= a) & (np.abs(v) <= b)
    corner = (u > a - r) & (np.abs(v) > b - r)
    round_ok = (u - (a - r)) ** 2 + (np.abs(v) - (b - r)) ** 2 <= r * r
    return box & (~corner | round_ok)


def render_rectangle(center, angle_deg) -> np.ndarray:
    """White image, black rectangle; pixel values are area coverage from supersampling."""
    s = SUPERSAMPLE
    off = (np.arange(s) + 0.5) / s - 0.5
    g = (np.arange(SIZE)[:, None] + off[None, :]).ravel()
    ys, xs = np.meshgrid(g, g, indexing="ij")
    a = np.deg2rad(angle_deg)
    dx, dy = xs - center[0], ys - center[1]
    u = np.cos(a) * dx + np.sin(a) * dy
    v = -np.sin(a) * dx + np.cos(a) * dy
    cover = _inside(u, v).reshape(SIZE, s, SIZE, s).mean(axis=(1, 3))
    return 1.0 - cover


def endpoints(center, angle_deg) -> np.ndarray:
    """Back and front end of the long axis, ``[[xb, yb], [xf, yf]]``; the front is rounded."""
    a = np.deg2rad(angle_deg)
    d = LENGTH / 2 * np.array([np.cos(a), np.sin(a)])
    c = np.asarray(center, dtype=float)
    return np.stack([c - d, c + d])


def angle_from_endpoints(pts) -> float:
    p = np.asarray(pts, dtype=float).reshape(2, 2)
    return float(np.rad2deg(np.arctan2(p[1, 1] - p[0, 1], p[1, 0] - p[0, 0])) % 360.0)


def make_rectangle_dataset(count: int, seed: int):
    """Images ``(count, 30, 30)``, angles in [0, 360), end points ``(count, 2, 2)``.

    Centres are uniform over positions that keep the whole rectangle in view.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng([seed, 23])
    centers = rng.uniform(_HALF_DIAG, SIZE - 1 - _HALF_DIAG, size=(count, 2))
    angles = rng.uniform(0.0, 360.0, size=count)
    images = np.stack([render_rectangle(c, a) for c, a in zip(centers, angles)]).astype(np.float32)
    pts = np.stack([endpoints(c, a) for c, a in zip(centers, angles)])
    return images, angles, pts


# network targets: direct head regresses the raw angle rescaled to [-1, 1)
def direct_targets(angles):
    return (np.asarray(angles, dtype=float) / 180.0 - 1.0)[:, None]


def direct_angles(outputs):
    return (np.asarray(outputs, dtype=float)[:, 0] + 1.0) * 180.0


def indirect_targets(pts):
    return ((np.asarray(pts, dtype=float) - _C) / _C).reshape(len(pts), 4)


def indirect_angles(outputs):
    pts = np.asarray(outputs, dtype=float).reshape(-1, 2, 2) * _C + _C
    return np.array([angle_from_endpoints(p) for p in pts])


def angle_errors(pred, truth) -> np.ndarray:
    return np.abs(angle_error(np.asarray(pred), np.asarray(truth)))


WRAP_ERROR_DEG = 90.0
WRAP_BAND_DEG = 30.0


def wrap_failures(errors, truth, threshold=WRAP_ERROR_DEG, band=WRAP_BAND_DEG) -> np.ndarray:
    """Errors above ``threshold`` whose true angle lies within ``band`` of 0/360."""
    t = np.asarray(truth, dtype=float) % 360.0
    return (np.asarray(errors) > threshold) & (np.minimum(t, 360.0 - t) < band)


@dataclass
class HeadResult:
    head: str
    net: object
    train_config: object
    curve: list
    truth: np.ndarray
    predicted: np.ndarray
    errors: np.ndarray

    @property
    def median(self) -> float:
        return float(np.median(self.errors))

    @property
    def wrap_count(self) -> int:
        return int(wrap_failures(self.errors, self.truth).sum())


def run_head(head: str, seed: int = 0, train_count: int = 2000, test_count: int = 500, epochs: int = 30,
             channels: int = 8, fc_base: int = 16, optimizer: str = "adam", lr: float = 1e-3,
             batch_size: int = 32, log=None) -> HeadResult:
    """Train one head on fresh rectangles and score it on a disjoint test set."""
    from .convnet import ConvNetConfig, build_network
    from .train import TrainConfig, train

    if head not in ("direct", "indirect"):
        raise ValueError("head must be 'direct' or 'indirect'")
    xtr, atr, ptr = make_rectangle_dataset(train_count, seed)
    xte, ate, _ = make_rectangle_dataset(test_count, seed + 1_000_003)
    cfg = ConvNetConfig(start_channels=channels, fc_base=fc_base, outputs=1 if head == "direct" else 4,
                        input_shape=(1, SIZE, SIZE))
    net = build_network(cfg, seed)
    y = direct_targets(atr) if head == "direct" else indirect_targets(ptr)
    tcfg = TrainConfig(optimizer, lr, batch_size=batch_size, epochs=epochs, seed=seed)
    curve = train(net, xtr, y, tcfg, log=log)
    out = net.predict(xte)
    pred = direct_angles(out) if head == "direct" else indirect_angles(out)
    return HeadResult(head, net, tcfg, curve, ate, pred, angle_errors(pred, ate))
