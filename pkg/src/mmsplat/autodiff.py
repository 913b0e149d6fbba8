"""Analytic reverse pass through the compositing of one modality."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .rasterizer import CompositeTrace, ModalityImage, scene_digest
from .scene import Mode, Scene


class TraceMismatch(ValueError):
    """The trace was not produced by a forward render of this scene."""


@dataclass
class GradientSet:
    d_means: np.ndarray
    d_log_scales: np.ndarray
    d_rotations: np.ndarray
    d_opacity_logits: np.ndarray
    d_indicator_logits: np.ndarray
    d_features: list[np.ndarray]
    touched: np.ndarray

    @classmethod
    def zeros(cls, scene: Scene) -> "GradientSet":
        n, m = len(scene), scene.num_modalities
        return cls(np.zeros((n, 2)), np.zeros((n, 2)), np.zeros(n), np.zeros(n),
                   np.zeros((n, m)), [np.zeros_like(f) for f in scene.features],
                   np.zeros(n, dtype=bool))

    def arrays(self) -> list[np.ndarray]:
        return [self.d_means, self.d_log_scales, self.d_rotations, self.d_opacity_logits,
                self.d_indicator_logits, *self.d_features]

    def __add__(self, other: "GradientSet") -> "GradientSet":
        return GradientSet(
            self.d_means + other.d_means, self.d_log_scales + other.d_log_scales,
            self.d_rotations + other.d_rotations,
            self.d_opacity_logits + other.d_opacity_logits,
            self.d_indicator_logits + other.d_indicator_logits,
            [a + b for a, b in zip(self.d_features, other.d_features)],
            self.touched | other.touched)

    def __mul__(self, k: float) -> "GradientSet":
        return GradientSet(self.d_means * k, self.d_log_scales * k, self.d_rotations * k,
                           self.d_opacity_logits * k, self.d_indicator_logits * k,
                           [f * k for f in self.d_features], self.touched.copy())

    __rmul__ = __mul__

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def _conic_to_params(d_conic, log_scales, rotations):
    """Chain d(a, b, c) through the inverse covariance to log-scales and angle."""
    c = np.cos(rotations)
    s = np.sin(rotations)
    u = np.exp(-2.0 * log_scales[:, 0])
    v = np.exp(-2.0 * log_scales[:, 1])
    da, db, dc = d_conic[:, 0], d_conic[:, 1], d_conic[:, 2]
    d_ls = np.empty((len(rotations), 2))
    d_ls[:, 0] = -2.0 * u * (da * c * c + db * c * s + dc * s * s)
    d_ls[:, 1] = -2.0 * v * (da * s * s - db * c * s + dc * c * c)
    d_rot = (v - u) * (2.0 * c * s * (da - dc) - db * (c * c - s * s))
    return d_ls, d_rot


def backward_modality(scene: Scene, modality_id, trace: CompositeTrace,
                      d_image) -> GradientSet:
    """Gradients of ``sum(d_image * render)`` w.r.t. every Gaussian parameter."""
    m = scene.modality(modality_id).id
    if (trace.modality_id != m or trace.n_gaussians != len(scene)
            or trace.digest != scene_digest(scene, m)):
        raise TraceMismatch(f"trace does not belong to modality {m} of this scene")
    if isinstance(d_image, ModalityImage):
        d_image = d_image.data
    vp = scene.viewport
    d_image = np.ascontiguousarray(d_image, dtype=np.float64)
    d = scene.modalities[m].feature_dim
    if d_image.shape != (vp.height, vp.width, d):
        raise ValueError(f"d_image shape {d_image.shape} != {(vp.height, vp.width, d)}")

    out = GradientSet.zeros(scene)
    out.touched = trace.touched.copy()
    order = trace.order
    if len(order) == 0 or len(trace.ids) == 0:
        return out

    kern = kernels.get()
    entry = kern.backward(vp.width, vp.height, vp.scale, vp.origin[0], vp.origin[1],
                          trace.tile, trace.means, trace.conic, trace.alpha, trace.features,
                          trace.background, trace.ptr, trace.ids, trace.bbox, trace.cutoff, trace.qlim,
                          trace.early_stop, d_image)
    local = kern.reduce_entries(trace.ids, entry, len(order))

    d_ls, d_rot = _conic_to_params(local[:, 2:5], scene.log_scales[order], scene.rotations[order])
    d_logit = local[:, 5] * trace.alpha * (1.0 - trace.alpha)
    out.d_means[order] = local[:, 0:2]
    out.d_log_scales[order] = d_ls
    out.d_rotations[order] = d_rot
    if scene.mode is Mode.SHARED_OPACITY:
        out.d_opacity_logits[order] = d_logit
    else:
        out.d_indicator_logits[order, m] = d_logit
    out.d_features[m][order] = local[:, 6:]
    return out


def accumulate_positional_grads(scene: Scene, grad_sets) -> None:
    """Add this step's per-modality positional gradient statistics to the scene.

    ``grad_sets[m]`` must hold the gradient of modality ``m``'s (weighted)
    loss alone.  Slots that are switched off are left untouched.
    """
    grad_sets = list(grad_sets)
    if len(grad_sets) != scene.num_modalities:
        raise ValueError("need exactly one gradient set per modality")
    active = scene.active_mask()
    for m, gs in enumerate(grad_sets):
        sel = active[:, m] & gs.touched
        norms = np.sqrt(np.sum(gs.d_means ** 2, axis=1))
        scene.grad_accum[sel, m] += norms[sel]
        scene.grad_vec_accum[sel, m] += gs.d_means[sel]
        scene.grad_count[sel, m] += 1
