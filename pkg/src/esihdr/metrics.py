"""PSNR and windowed SSIM in the linear and mu-law domains.

``ssim_tensor`` is differentiable and is shared by the loss; ``ssim`` and
``psnr`` are the numpy-facing metric entry points.
"""
from __future__ import annotations

import math

import numpy as np

from . import functional as F
from . import tensor as T
from .imaging import MU, mu_law
from .tensor import Tensor, no_grad

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03

# psnr of identical images
PSNR_IDENTICAL = math.inf


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _filter(x, window):
    c = x.shape[1]
    k = window.shape[0]
    return F.conv2d(x, np.broadcast_to(window, (c, 1, k, k)), depthwise=True, padding=0)


def ssim_tensor(a, b, data_range=1.0, window=None):
    """Mean SSIM over batch, channels and valid window positions.

    ``a`` and ``b`` are ``[B, C, H, W]`` tensors; ``b`` may be a constant.
    """
    a, b = T.as_tensor(a), T.as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"SSIM inputs differ in shape: {a.shape} vs {b.shape}")
    window = gaussian_window() if window is None else window
    k = window.shape[0]
    if a.shape[-1] < k or a.shape[-2] < k:
        raise ValueError(f"images of size {a.shape[-2:]} are smaller than the {k}x{k} window")
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mu_a = _filter(a, window)
    mu_b = _filter(b, window)
    mu_ab = mu_a * mu_b
    mu_aa = mu_a * mu_a
    mu_bb = mu_b * mu_b
    s_aa = _filter(a * a, window) - mu_aa
    s_bb = _filter(b * b, window) - mu_bb
    s_ab = _filter(a * b, window) - mu_ab
    num = (mu_ab * 2.0 + c1) * (s_ab * 2.0 + c2)
    den = (mu_aa + mu_bb + c1) * (s_aa + s_bb + c2)
    return T.mean(num / den)


def _to_batch(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    if img.ndim != 3:
        raise ValueError(f"expected H x W or H x W x C image, got shape {img.shape}")
    return img.transpose(2, 0, 1)[None]


def ssim(a, b, data_range=1.0):
    """SSIM of two ``H x W`` or ``H x W x C`` images (mean over channels)."""
    with no_grad():
        return ssim_tensor(Tensor(_to_batch(a)), Tensor(_to_batch(b)), data_range).item()


def psnr(a, b, mode="linear", mu=MU):
    """``10 log10(1 / MSE)``; ``mode="mu"`` tone-maps both inputs first.

    Identical inputs return :data:`PSNR_IDENTICAL` (infinity).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"PSNR inputs differ in shape: {a.shape} vs {b.shape}")
    if mode == "mu":
        a, b = mu_law(a, mu), mu_law(b, mu)
    elif mode != "linear":
        raise ValueError(f"unknown PSNR mode {mode!r}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_IDENTICAL
    return 10.0 * math.log10(1.0 / mse)


def evaluate(pred, gt, mu=MU):
    """The four fidelity metrics between two ``H x W x 3`` HDR images."""
    pred = np.asarray(getattr(pred, "pixels", pred), dtype=np.float64)
    gt = np.asarray(getattr(gt, "pixels", gt), dtype=np.float64)
    return {
        "psnr_l": psnr(pred, gt, "linear"),
        "psnr_mu": psnr(pred, gt, "mu", mu),
        "ssim_l": ssim(pred, gt),
        "ssim_mu": ssim(mu_law(pred, mu), mu_law(gt, mu)),
    }
