"""Procedural bracketed scenes with a moving foreground, for toy training."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import GAMMA, ExposureStack, HdrImage, LdrImage

EVS = (-1.0, 0.0, 1.0)  # scaled by ev_step


@dataclass
class SynthScene:
    stack: ExposureStack
    ground_truth: HdrImage
    motion_mask: np.ndarray
    radiance: tuple  # per-frame radiance, H x W x 3 each


def _size(size):
    h, w = (size, size) if np.isscalar(size) else tuple(size)
    if h < 32 or w < 32:
        raise ValueError(f"scenes must be at least 32x32, got {h}x{w}")
    return int(h), int(w)


def quantize(x, gamma=GAMMA):
    """Clip linear exposure to [0, 1], gamma-encode and round to 8 bits."""
    return np.round(np.clip(x, 0.0, 1.0) ** (1.0 / gamma) * 255.0) / 255.0


def synth_scene(seed, size=32, motion_px=0, ev_step=2.0, gamma=GAMMA):
    """Render one scene as a 3-exposure stack plus its reference radiance.

    The radiance field holds a smooth background, a bright disk that clips
    in the reference and long exposures, and a checkered patch. The patch
    sits at ``-d, 0, +d`` in the three frames, with ``d`` a ``motion_px``
    step along a random direction. Exposure times are ``2**(ev + ev_step)``
    so the shortest frame has ``t = 1``.
    """
    if motion_px < 0 or int(motion_px) != motion_px:
        raise ValueError(f"motion_px must be a nonnegative integer, got {motion_px}")
    motion_px = int(motion_px)
    h, w = _size(size)
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    tint = rng.uniform(0.6, 1.0, 3)
    a, b, c = rng.uniform(0.02, 0.08), rng.uniform(-0.04, 0.04), rng.uniform(-0.04, 0.04)
    bg = (a + 0.04 + b * xx / w + c * yy / h)[..., None] * tint

    r = rng.uniform(0.08, 0.14) * min(h, w)
    cy = rng.uniform(r, h / 3.0)
    cx = rng.uniform(r, w - r)
    disk = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    light = rng.uniform(0.9, 0.98, 3)
    bg = np.where(disk[..., None], light, bg)

    ph, pw = max(4, h // 4), max(4, w // 4)
    cell = max(1, ph // 4)
    lo, hi = rng.uniform(0.03, 0.08, 3), rng.uniform(0.12, 0.2, 3)
    iy, ix = np.mgrid[0:ph, 0:pw]
    checker = ((iy // cell + ix // cell) % 2).astype(bool)
    patch = np.where(checker[..., None], hi, lo)

    angle = rng.integers(8) * np.pi / 4.0
    dy = int(round(motion_px * np.sin(angle)))
    dx = int(round(motion_px * np.cos(angle)))
    ay, ax = abs(dy), abs(dx)
    y_lo, y_hi = max(h // 2, ay), h - ph - ay
    x_lo, x_hi = ax, w - pw - ax
    if y_lo > y_hi or x_lo > x_hi:
        raise ValueError(
            f"foreground patch leaves the {h}x{w} frame with motion {motion_px}px; "
            "use a smaller motion or a larger scene"
        )
    y0 = int(rng.integers(y_lo, y_hi + 1))
    x0 = int(rng.integers(x_lo, x_hi + 1))
    offsets = [(-dy, -dx), (0, 0), (dy, dx)]
    radiance, images = [], []
    mask = np.zeros((h, w), dtype=bool)
    for (oy, ox), ev in zip(offsets, EVS):
        rad = bg.copy()
        rad[y0 + oy:y0 + oy + ph, x0 + ox:x0 + ox + pw] = patch
        if motion_px > 0:
            mask[y0 + oy:y0 + oy + ph, x0 + ox:x0 + ox + pw] = True
        t = 2.0 ** (ev * ev_step + ev_step)
        radiance.append(rad)
        images.append(LdrImage(quantize(rad * t, gamma), t, ev * ev_step))
    return SynthScene(ExposureStack(images), HdrImage(radiance[1]), mask, tuple(radiance))
