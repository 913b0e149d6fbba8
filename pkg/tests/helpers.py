"""Independent oracles and random-scene factories shared by the tests.

Nothing here calls into the tile kernels: the naive compositor evaluates the
blend term by term with an explicit matrix inverse, and gradients are
checked against central differences of the public forward render.
"""

import math

import numpy as np

from mmsplat.rasterizer import render_modality
from mmsplat.scene import (LossKind, ModalityDescriptor, Mode, Scene, Viewport,
                           evaluate_gaussian, sigmoid)

ROSTERS = [
    [ModalityDescriptor(0, "rgb", 3)],
    [ModalityDescriptor(0, "rgb", 3), ModalityDescriptor(1, "thermal", 1, LossKind.L1_DSSIM_SMOOTH)],
    [ModalityDescriptor(0, "rgb", 3), ModalityDescriptor(1, "thermal", 1, LossKind.L1_DSSIM_SMOOTH),
     ModalityDescriptor(2, "language", 3, LossKind.FEATURE_L1)],
]


def random_scene(rng, n=None, width=None, height=None, n_modalities=None, mode=None,
                 scale=None, min_px=1.0, max_px=4.0, p_off=0.2):
    """Random small scene; Gaussian std drawn in pixels then mapped to world units."""
    n = int(rng.integers(1, 9)) if n is None else n
    width = int(rng.integers(4, 17)) if width is None else width
    height = int(rng.integers(4, 17)) if height is None else height
    m = int(rng.integers(1, 4)) if n_modalities is None else n_modalities
    if mode is None:
        mode = Mode.SHARED_OPACITY if rng.uniform() < 0.25 else Mode.PER_MODALITY_INDICATOR
    scale = float(rng.choice([1.0, 2.0, 4.0])) if scale is None else scale
    vp = Viewport(width, height, scale)
    mods = ROSTERS[m - 1]
    std_px = rng.uniform(min_px, max_px, (n, 2))
    return Scene(
        mods, vp, mode,
        means=rng.uniform([-1, -1], [width + 1, height + 1], (n, 2)) / scale,
        log_scales=np.log(std_px / scale),
        rotations=rng.uniform(-math.pi, math.pi, n),
        depths=rng.uniform(0, 10, n),
        opacity_logits=rng.normal(0, 1.5, n),
        indicator_logits=rng.normal(0, 1.5, (n, m)),
        indicator_on=rng.uniform(size=(n, m)) > p_off,
        features=[rng.uniform(-0.2, 1.2, (n, d.feature_dim)) for d in mods],
    )


def naive_render(scene, modality_id, cutoff=0.0, background=None):
    """Per-pixel blend, one Gaussian at a time, no tiling or early stop."""
    vp = scene.viewport
    d = scene.modalities[modality_id].feature_dim
    bg = np.zeros(d) if background is None else np.asarray(background, float)
    out = np.zeros((vp.height, vp.width, d))
    order = sorted(range(len(scene)), key=lambda i: (scene.depths[i], i))
    gs = [scene.gaussian(i) for i in range(len(scene))]
    for y in range(vp.height):
        for x in range(vp.width):
            pos = ((x + 0.5 - vp.origin[0]) / vp.scale, (y + 0.5 - vp.origin[1]) / vp.scale)
            trans = 1.0
            value = np.zeros(d)
            for i in order:
                if scene.mode is Mode.SHARED_OPACITY:
                    alpha = 1.0 / (1.0 + math.exp(-scene.opacity_logits[i]))
                else:
                    if not scene.indicator_on[i, modality_id]:
                        continue
                    alpha = 1.0 / (1.0 + math.exp(-scene.indicator_logits[i, modality_id]))
                g = evaluate_gaussian(gs[i], pos)
                if g < cutoff:
                    continue
                value = value + trans * alpha * g * scene.features[modality_id][i]
                trans = trans * (1.0 - alpha * g)
            out[y, x] = value + trans * bg
    return out


PARAMS = ("means", "log_scales", "rotations", "opacity_logits", "indicator_logits", "features")


def param_arrays(scene, modality_id):
    return {
        "means": scene.means, "log_scales": scene.log_scales, "rotations": scene.rotations,
        "opacity_logits": scene.opacity_logits, "indicator_logits": scene.indicator_logits,
        "features": scene.features[modality_id],
    }


def grad_arrays(gs, modality_id):
    return {
        "means": gs.d_means, "log_scales": gs.d_log_scales, "rotations": gs.d_rotations,
        "opacity_logits": gs.d_opacity_logits, "indicator_logits": gs.d_indicator_logits,
        "features": gs.d_features[modality_id],
    }


def central_difference(scene, modality_id, objective, eps=1e-3):
    """Central differences of ``objective(render)`` for every parameter entry."""
    out = {}
    for name, arr in param_arrays(scene, modality_id).items():
        num = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + eps
            fp = objective(render_modality(scene, modality_id, 0.0)[0].data)
            arr[idx] = old - eps
            fm = objective(render_modality(scene, modality_id, 0.0)[0].data)
            arr[idx] = old
            num[idx] = (fp - fm) / (2.0 * eps)
        out[name] = num
    return out


def extrapolated_difference(scene, modality_id, objective, eps=2e-4):
    """Richardson extrapolation of central differences at ``eps`` and ``eps/2``.

    Cancels the O(eps^2) truncation term, leaving O(eps^4).
    """
    coarse = central_difference(scene, modality_id, objective, eps)
    fine = central_difference(scene, modality_id, objective, eps / 2)
    return {k: (4.0 * fine[k] - coarse[k]) / 3.0 for k in coarse}


def gradient_errors(analytic, numeric, near_zero=1e-8):
    """(max relative error, max absolute error where |analytic| < near_zero)."""
    worst_rel, worst_abs = 0.0, 0.0
    for name in analytic:
        a, n = analytic[name].ravel(), numeric[name].ravel()
        small = np.abs(a) < near_zero
        if small.any():
            worst_abs = max(worst_abs, float(np.max(np.abs(a[small] - n[small]))))
        if (~small).any():
            rel = np.abs(a[~small] - n[~small]) / np.maximum(np.abs(a[~small]), np.abs(n[~small]))
            worst_rel = max(worst_rel, float(np.max(rel)))
    return worst_rel, worst_abs


def brute_iou(a, b):
    inter = union = 0
    for x, y in zip(np.ravel(a), np.ravel(b)):
        inter += bool(x) and bool(y)
        union += bool(x) or bool(y)
    return inter / union if union else 1.0


def sigmoid_scalar(x):
    return float(sigmoid(x))
