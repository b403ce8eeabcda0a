"""Image-domain math: gamma mapping, IPT, enhancement stop, mu-law, Sobel.

Images are ``H x W x C`` float64 arrays unless a :class:`Tensor` is passed
(``mu_law`` accepts both so the same code serves metrics and losses).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import functional as F
from . import tensor as T
from .tensor import Tensor, no_grad

GAMMA = 2.2
MU = 5000.0
ESI_CLAMP = 1.0

SRGB_TO_XYZ = np.array(
    [
        [0.4124, 0.3576, 0.1805],
        [0.2126, 0.7152, 0.0722],
        [0.0193, 0.1192, 0.9505],
    ]
)
XYZ_TO_LMS = np.array(
    [
        [0.4002, 0.7075, -0.0807],
        [-0.2280, 1.1500, 0.0612],
        [0.0000, 0.0000, 0.9184],
    ]
)
LMS_TO_IPT = np.array(
    [
        [0.4000, 0.4000, 0.2000],
        [4.4550, -4.8510, 0.3960],
        [0.8056, 0.3572, -1.1628],
    ]
)
IPT_EXPONENT = 0.43


def _rgb_to_lms_matrix():
    m = XYZ_TO_LMS @ SRGB_TO_XYZ
    # D65 white (linear RGB 1,1,1) -> LMS (1,1,1) exactly
    return m / m.sum(axis=1, keepdims=True)


RGB_TO_LMS = _rgb_to_lms_matrix()


@dataclass
class LdrImage:
    pixels: np.ndarray
    exposure_time: float
    ev: float = 0.0

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"LDR pixels must be H x W x 3, got {self.pixels.shape}")
        if self.exposure_time <= 0:
            raise ValueError(f"exposure time must be positive, got {self.exposure_time}")
        if self.pixels.min() < 0 or self.pixels.max() > 1:
            raise ValueError("LDR pixels must lie in [0, 1]")


@dataclass
class HdrImage:
    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if not np.all(np.isfinite(self.pixels)) or self.pixels.min() < 0:
            raise ValueError("HDR pixels must be finite and nonnegative")


@dataclass
class ExposureStack:
    """Under, reference and over exposures; the middle frame is the reference."""

    images: tuple
    reference_index: int = field(default=1, init=False)

    def __post_init__(self):
        self.images = tuple(self.images)
        if len(self.images) != 3:
            raise ValueError(f"an exposure stack holds 3 images, got {len(self.images)}")
        shapes = {im.pixels.shape for im in self.images}
        if len(shapes) != 1:
            raise ValueError(f"exposures disagree on size: {sorted(shapes)}")
        t = [im.exposure_time for im in self.images]
        if not (t[0] < t[1] < t[2]):
            raise ValueError(f"exposure times must strictly increase, got {t}")

    @property
    def reference(self):
        return self.images[self.reference_index]

    @property
    def shape(self):
        return self.images[0].pixels.shape[:2]


@dataclass
class EsiImage:
    values: np.ndarray
    c: float = ESI_CLAMP


def gamma_correct(ldr, gamma=GAMMA):
    """Map an LDR exposure to linear radiance: ``L**gamma / t``."""
    if ldr.exposure_time <= 0:
        raise ValueError(f"exposure time must be positive, got {ldr.exposure_time}")
    return HdrImage(ldr.pixels**gamma / ldr.exposure_time)


def srgb_to_linear(v):
    v = np.asarray(v, dtype=np.float64)
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def rgb_to_ipt(rgb):
    """sRGB-encoded ``H x W x 3`` in [0, 1] to IPT (I, P, T channels)."""
    lin = srgb_to_linear(np.clip(rgb, 0.0, 1.0))
    lms = lin @ RGB_TO_LMS.T
    lms_p = np.sign(lms) * np.abs(lms) ** IPT_EXPONENT
    return lms_p @ LMS_TO_IPT.T


def enhancement_stop_pt(p, t, c=ESI_CLAMP):
    """Chroma magnitude ``sqrt(P^2 + T^2)``, replaced by 1 where it reaches ``c``."""
    v = np.sqrt(np.asarray(p, dtype=np.float64) ** 2 + np.asarray(t, dtype=np.float64) ** 2)
    return np.where(v >= c, 1.0, v)


def enhancement_stop(ldr, c=ESI_CLAMP):
    pixels = ldr.pixels if isinstance(ldr, LdrImage) else np.asarray(ldr, dtype=np.float64)
    ipt = rgb_to_ipt(pixels)
    return EsiImage(enhancement_stop_pt(ipt[..., 1], ipt[..., 2], c), c)


def mu_law(h, mu=MU):
    """``log(1 + mu*h) / log(1 + mu)`` after clamping ``h`` to [0, 1]."""
    denom = np.log(1.0 + mu)
    if isinstance(h, Tensor):
        return T.div_const(T.log(T.clip(h, 0.0, 1.0) * mu + 1.0), denom)
    if isinstance(h, HdrImage):
        h = h.pixels
    return np.log(1.0 + mu * np.clip(h, 0.0, 1.0)) / denom


def sobel_grad(img):
    """``H x W x C`` image to ``H x W x 2C``: x-gradients then y-gradients."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    with no_grad():
        out = F.sobel(Tensor(img.transpose(2, 0, 1)))
    return out.data.transpose(1, 2, 0)


def pack_input(ldr, gamma=GAMMA):
    """``[L, L**gamma / t]`` as a ``6 x H x W`` tensor."""
    hdr = gamma_correct(ldr, gamma)
    return Tensor(np.concatenate([ldr.pixels, hdr.pixels], axis=2).transpose(2, 0, 1))


def to_chw(img):
    return np.ascontiguousarray(np.asarray(img, dtype=np.float64).transpose(2, 0, 1))


def to_hwc(arr):
    return np.ascontiguousarray(np.asarray(arr).transpose(1, 2, 0))
