"""Per-modality training losses with analytic gradients, and their weighted sum.

Every loss returns ``(value, d_render, components)`` where ``d_render`` has the
render's shape.  Images are (H, W, C) float arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .scene import LossKind, ModalityDescriptor

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
LAMBDA_DSSIM = 0.2


def _as_image(x) -> np.ndarray:
    x = getattr(x, "data", x)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
    return x


def _check_pair(render, truth):
    render, truth = _as_image(render), _as_image(truth)
    if render.shape != truth.shape:
        raise ValueError(f"shape mismatch: render {render.shape} vs truth {truth.shape}")
    return render, truth


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - size // 2
    w = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return w / w.sum()


def _blur(x, w):
    # zero padding, window centred; self-adjoint because w is symmetric
    x = correlate1d(x, w, axis=0, mode="constant", cval=0.0)
    return correlate1d(x, w, axis=1, mode="constant", cval=0.0)


def ssim_with_grad(render, truth, data_range: float = 1.0):
    """Mean SSIM over pixels and channels, and its gradient w.r.t. ``render``."""
    x, y = _check_pair(render, truth)
    w = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mx, my = _blur(x, w), _blur(y, w)
    exx, eyy, exy = _blur(x * x, w), _blur(y * y, w), _blur(x * y, w)
    vx, vy, cxy = exx - mx * mx, eyy - my * my, exy - mx * my
    a1 = 2.0 * mx * my + c1
    a2 = 2.0 * cxy + c2
    b1 = mx * mx + my * my + c1
    b2 = vx + vy + c2
    smap = (a1 * a2) / (b1 * b2)
    n = smap.size
    value = float(smap.mean())

    dmx = (2.0 * my * (a2 - a1) - 2.0 * mx * smap * (b2 - b1)) / (b1 * b2) / n
    dexx = -smap / b2 / n
    dexy = 2.0 * a1 / (b1 * b2) / n
    grad = _blur(dmx, w) + 2.0 * x * _blur(dexx, w) + y * _blur(dexy, w)
    return value, grad


def l1_with_grad(render, truth):
    x, y = _check_pair(render, truth)
    diff = x - y
    return float(np.abs(diff).mean()), np.sign(diff) / diff.size


def total_variation(render):
    """Mean absolute forward difference: (sum |dx| + sum |dy|) / element count."""
    x = _as_image(render)
    dx = x[:, 1:] - x[:, :-1]
    dy = x[1:] - x[:-1]
    value = (np.abs(dx).sum() + np.abs(dy).sum()) / x.size
    grad = np.zeros_like(x)
    sx, sy = np.sign(dx), np.sign(dy)
    grad[:, 1:] += sx
    grad[:, :-1] -= sx
    grad[1:] += sy
    grad[:-1] -= sy
    return float(value), grad / x.size


def loss_rgb_like(render, truth, lambda_dssim: float = LAMBDA_DSSIM):
    """(1 - lambda) L1 + lambda (1 - SSIM)."""
    l1, dl1 = l1_with_grad(render, truth)
    s, ds = ssim_with_grad(render, truth)
    value = (1.0 - lambda_dssim) * l1 + lambda_dssim * (1.0 - s)
    grad = (1.0 - lambda_dssim) * dl1 - lambda_dssim * ds
    return value, grad, {"l1": l1, "dssim": 1.0 - s}


def loss_thermal(render, truth, smooth_weight: float = 0.6, lambda_dssim: float = LAMBDA_DSSIM,
                 smooth: str = "tv"):
    """RGB-style loss plus a total-variation smoothness penalty on the render."""
    value, grad, comps = loss_rgb_like(render, truth, lambda_dssim)
    if smooth == "tv":
        tv, dtv = total_variation(render)
    elif smooth == "none":
        tv, dtv = 0.0, 0.0
    else:
        raise ValueError(f"unknown smoothness term {smooth!r}")
    comps["smooth"] = tv
    return value + smooth_weight * tv, grad + smooth_weight * dtv, comps


def loss_language(render, truth):
    """Mean absolute error over pixels and feature channels."""
    value, grad = l1_with_grad(render, truth)
    return value, grad, {"feature_l1": value}


def modality_loss(desc: ModalityDescriptor, render, truth, *, lambda_dssim: float = LAMBDA_DSSIM,
                  smooth: str = "tv"):
    if desc.loss_kind is LossKind.L1_DSSIM:
        return loss_rgb_like(render, truth, lambda_dssim)
    if desc.loss_kind is LossKind.L1_DSSIM_SMOOTH:
        return loss_thermal(render, truth, desc.smooth_weight, lambda_dssim, smooth)
    return loss_language(render, truth)


@dataclass
class LossReport:
    losses: dict[str, float]
    weights: dict[str, float]
    components: dict[str, dict[str, float]] = field(default_factory=dict)
    total: float = 0.0

    def to_dict(self) -> dict:
        return {"total": self.total, "losses": dict(self.losses), "weights": dict(self.weights),
                "components": {k: dict(v) for k, v in self.components.items()}}


def total_loss(losses: dict[str, float], weights: dict[str, float], components=None) -> LossReport:
    """Weighted sum of per-modality losses; one weight per loss is required."""
    if set(losses) != set(weights):
        raise ValueError(f"losses {sorted(losses)} and weights {sorted(weights)} disagree")
    total = 0.0
    for name in losses:
        total += weights[name] * losses[name]
    if not np.isfinite(total):
        raise ValueError("non-finite total loss")
    return LossReport(dict(losses), dict(weights), dict(components or {}), total)
