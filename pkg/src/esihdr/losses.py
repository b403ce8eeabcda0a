"""Training objective: tone-mapped L1, SSIM and Sobel-gradient terms per branch."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import functional as F
from . import tensor as T
from .imaging import MU, mu_law
from .metrics import ssim_tensor
from .tensor import Tensor


@dataclass
class BranchLoss:
    total: float
    re: float
    ssim: float
    gradient: float


@dataclass
class LossBreakdown:
    total: float
    m: BranchLoss
    s: BranchLoss | None
    lam: float
    alpha: float
    beta: float

    def to_dict(self):
        return asdict(self)


def _as_batch(x):
    if isinstance(x, Tensor):
        return x if x.ndim == 4 else T.reshape(x, (1,) + x.shape)
    arr = np.asarray(getattr(x, "pixels", x), dtype=np.float64)
    if arr.ndim == 3 and arr.shape[-1] == 3:
        arr = arr.transpose(2, 0, 1)
    return Tensor(arr[None] if arr.ndim == 3 else arr)


def branch_loss(h, h_gt, alpha=0.2, beta=0.5, mu=MU):
    """``L_re + alpha * L_ssim + beta * L_grad`` as a Tensor plus its parts."""
    h, h_gt = _as_batch(h), _as_batch(h_gt)
    if h.shape != h_gt.shape:
        raise ValueError(f"prediction {h.shape} and ground truth {h_gt.shape} differ")
    th, tg = mu_law(h, mu), mu_law(h_gt, mu)
    l_re = T.mean(T.absolute(th - tg))
    l_ssim = 1.0 - ssim_tensor(th, tg)
    # gradient term acts on the linear images, not the tone-mapped ones
    l_grad = T.mean(T.absolute(F.sobel(h) - F.sobel(h_gt)))
    total = l_re + l_ssim * alpha + l_grad * beta
    parts = BranchLoss(total.item(), l_re.item(), l_ssim.item(), l_grad.item())
    return total, parts


def loss_total(h_m, h_s, h_gt, lam=0.5, alpha=0.2, beta=0.5, mu=MU):
    """``L = L_M + lam * L_S``; ``h_s=None`` (single-frame branch ablated) drops ``L_S``.

    Returns ``(objective_tensor, LossBreakdown)``.
    """
    obj, m = branch_loss(h_m, h_gt, alpha, beta, mu)
    s = None
    if h_s is not None:
        obj_s, s = branch_loss(h_s, h_gt, alpha, beta, mu)
        obj = obj + obj_s * lam
    return obj, LossBreakdown(obj.item(), m, s, lam, alpha, beta)
