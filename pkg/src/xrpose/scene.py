"""Rendering an instrument placed inside an anatomy volume.

``combine(interpolate(anatomy), instrument)`` is never built at full
resolution.  Projection is linear, so the image is rendered as the coarse
anatomy plus a fine local correction volume ``combined - interpolated`` that is
non-zero only inside the instrument.  Inside the local window the two agree
with the full upsampled volume up to the sampling step.
"""
from __future__ import annotations

import numpy as np

from .drr import (ProjectionSetup, Radiograph, default_step, interpolate_window, render_window,
                  volume_footprint)
from .instruments import MU_INSTRUMENT, InstrumentMesh, voxelize_and_combine
from .volume import Volume

UPSAMPLE = 4


def instrument_delta(anatomy: Volume, mesh: InstrumentMesh, mu_instrument: float = MU_INSTRUMENT,
                     factor: int = UPSAMPLE) -> Volume:
    """Fine-grid volume holding ``mu_instrument - anatomy`` inside the instrument, 0 elsewhere."""
    pad = 2 * np.array(anatomy.spacing) / factor
    lo, hi = mesh.bounds
    local = interpolate_window(anatomy, lo - pad, hi + pad, factor)
    combined = voxelize_and_combine(local, mesh, mu_instrument)
    return Volume(combined.data - local.data, local.spacing, local.origin, {"upsample": factor})


def _clip_window(win, bounds):
    if win is None:
        return None
    c0, r0, w, h = win
    C0, R0, W, H = bounds
    a0, b0 = max(c0, C0), max(r0, R0)
    a1, b1 = min(c0 + w, C0 + W), min(r0 + h, R0 + H)
    if a1 <= a0 or b1 <= b0:
        return None
    return (a0, b0, a1 - a0, b1 - b0)


def render_scene(anatomy: Volume, mesh: InstrumentMesh, setup: ProjectionSetup, window=None,
                 mu_instrument: float = MU_INSTRUMENT, factor: int = UPSAMPLE,
                 anatomy_image: np.ndarray | None = None) -> np.ndarray:
    """Line-integral image of anatomy plus placed instrument over ``window``.

    ``window`` is ``(col0, row0, ncols, nrows)`` (default: whole detector).
    ``anatomy_image`` may pass a cached rendering of the anatomy for the same
    window and setup.
    """
    cols, rows = setup.geom.detector_size
    window = (0, 0, cols, rows) if window is None else tuple(int(v) for v in window)
    c0, r0, w, h = window
    if anatomy_image is None:
        img = np.zeros((h, w))
        sub = _clip_window(volume_footprint(anatomy, setup), window)
        if sub is not None:
            a0, b0, aw, bh = sub
            img[b0 - r0:b0 - r0 + bh, a0 - c0:a0 - c0 + aw] = render_window(anatomy, setup, sub)
    else:
        img = anatomy_image.copy()
    delta = instrument_delta(anatomy, mesh, mu_instrument, factor)
    sub = _clip_window(volume_footprint(delta, setup), window)
    if sub is not None and np.any(delta.data):
        a0, b0, aw, bh = sub
        img[b0 - r0:b0 - r0 + bh, a0 - c0:a0 - c0 + aw] += render_window(delta, setup, sub, default_step(delta))
    return np.maximum(img, 0.0)


def render_radiograph(anatomy: Volume, mesh: InstrumentMesh, setup: ProjectionSetup,
                      mu_instrument: float = MU_INSTRUMENT, factor: int = UPSAMPLE) -> Radiograph:
    pixels = render_scene(anatomy, mesh, setup, None, mu_instrument, factor)
    return Radiograph(pixels, setup, {"mu_instrument": mu_instrument, "upsample": factor,
                                      "step_mm": default_step(anatomy)})
