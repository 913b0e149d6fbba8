"""Depth-sorted front-to-back compositing of one modality at a time."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .scene import Mode, Scene, conics, covariances, sigmoid

DEFAULT_CUTOFF = 1.0 / 255.0
TILE_SIZE = 16


@dataclass
class ModalityImage:
    """Dense (H, W, d) raster of one modality."""

    modality_id: int
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim == 2:
            self.data = self.data[:, :, None]
        if self.data.ndim != 3:
            raise ValueError(f"modality image must be (H, W, d), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("modality image has non-finite entries")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass
class CompositeTrace:
    """Everything the backward pass needs to replay one forward render.

    Per-pixel contribution lists are not stored; they are recomputed from the
    tile buckets on demand, which keeps memory at O(entries) instead of
    O(pixels x depth).
    """

    modality_id: int
    order: np.ndarray          # global indices of the composited Gaussians, front to back
    means: np.ndarray
    conic: np.ndarray
    alpha: np.ndarray
    features: np.ndarray
    background: np.ndarray
    ptr: np.ndarray
    ids: np.ndarray
    bbox: np.ndarray           # half-open pixel box per composited Gaussian
    cutoff: float
    qlim: float
    early_stop: float
    tile: int
    final_transmittance: np.ndarray
    touched: np.ndarray        # (N,) Gaussian composited into at least one pixel
    n_gaussians: int
    digest: str

    def pixel_entries(self, x: int, y: int, viewport) -> list[tuple[int, float]]:
        """Ordered ``(gaussian index, T * alpha * g)`` pairs at pixel (x, y)."""
        tiles_x = (viewport.width + self.tile - 1) // self.tile
        t = (y // self.tile) * tiles_x + x // self.tile
        wx, wy = viewport.pixel_to_world((x + 0.5, y + 0.5))
        trans = 1.0
        out = []
        for e in range(self.ptr[t], self.ptr[t + 1]):
            k = self.ids[e]
            dx, dy = wx - self.means[k, 0], wy - self.means[k, 1]
            a, b, c = self.conic[k]
            q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
            if q > self.qlim:
                continue
            g = math.exp(-0.5 * q)
            if g < self.cutoff:
                continue
            w = self.alpha[k] * g
            out.append((int(self.order[k]), trans * w))
            trans *= 1.0 - w
            if trans < self.early_stop:
                break
        return out


def scene_digest(scene: Scene, modality_id: int) -> str:
    h = hashlib.blake2b(digest_size=16)
    for arr in (scene.means, scene.log_scales, scene.rotations, scene.depths,
                scene.opacity_logits, scene.indicator_logits[:, modality_id],
                scene.indicator_on[:, modality_id], scene.features[modality_id]):
        h.update(np.ascontiguousarray(arr).tobytes())
    h.update(scene.mode.value.encode())
    return h.hexdigest()


def sort_for_compositing(scene: Scene) -> np.ndarray:
    """Indices by ascending depth, ties by ascending index."""
    if not np.all(np.isfinite(scene.depths)):
        raise ValueError("non-finite depth")
    return np.argsort(scene.depths, kind="stable")


def _pixel_bboxes(means, log_scales, rotations, viewport, qmax):
    k = len(means)
    if not math.isfinite(qmax):
        box = np.array([0, 0, viewport.width, viewport.height], dtype=np.int64)
        return np.tile(box, (k, 1))
    cov = covariances(log_scales, rotations)
    centre = viewport.world_to_pixel(means)
    hx = viewport.scale * np.sqrt(qmax * cov[:, 0])
    hy = viewport.scale * np.sqrt(qmax * cov[:, 2])
    # one pixel of slack; the per-pixel cutoff test is the exact criterion
    x0 = np.clip(np.floor(centre[:, 0] - hx - 0.5) - 1, 0, viewport.width)
    x1 = np.clip(np.ceil(centre[:, 0] + hx - 0.5) + 2, 0, viewport.width)
    y0 = np.clip(np.floor(centre[:, 1] - hy - 0.5) - 1, 0, viewport.height)
    y1 = np.clip(np.ceil(centre[:, 1] + hy - 0.5) + 2, 0, viewport.height)
    return np.stack([x0, y0, x1, y1], axis=1).astype(np.int64)


def _prepare(scene: Scene, modality_id, cutoff: float, background, tile: int):
    desc = scene.modality(modality_id)
    m = desc.id
    if not 0.0 <= cutoff < 1.0:
        raise ValueError(f"cutoff must lie in [0, 1), got {cutoff}")
    if background is None:
        background = np.zeros(desc.feature_dim)
    background = np.asarray(background, dtype=np.float64).reshape(desc.feature_dim)

    order = sort_for_compositing(scene)
    if scene.mode is Mode.PER_MODALITY_INDICATOR:
        order = order[scene.indicator_on[order, m]]
        alpha = sigmoid(scene.indicator_logits[order, m])
    else:
        alpha = sigmoid(scene.opacity_logits[order])
    means = np.ascontiguousarray(scene.means[order])
    log_scales = scene.log_scales[order]
    rotations = scene.rotations[order]
    if not (np.all(np.isfinite(means)) and np.all(np.isfinite(log_scales))
            and np.all(np.isfinite(rotations))):
        raise ValueError("non-finite Gaussian geometry")
    conic = conics(log_scales, rotations)
    if not np.all(np.isfinite(conic)):
        raise ValueError("singular covariance (scale underflow)")
    feats = np.ascontiguousarray(scene.features[m][order])

    qmax = -2.0 * math.log(cutoff) if cutoff > 0.0 else math.inf
    qlim = qmax * (1.0 + 1e-9) + 1e-9 if math.isfinite(qmax) else math.inf
    vp = scene.viewport
    bbox = _pixel_bboxes(means, log_scales, rotations, vp, qmax)
    tiles_x = (vp.width + tile - 1) // tile
    tiles_y = (vp.height + tile - 1) // tile
    kern = kernels.get()
    ptr, ids = kern.bin_tiles(bbox, tiles_x, tiles_y, tile)
    return dict(desc=desc, order=order, means=means, conic=conic, alpha=alpha, feats=feats,
                background=background, ptr=ptr, ids=ids, bbox=bbox, qlim=qlim, kern=kern)


def render_modality(scene: Scene, modality_id, cutoff: float = DEFAULT_CUTOFF, *,
                    early_stop: float = 0.0, background=None,
                    tile: int = TILE_SIZE) -> tuple[ModalityImage, CompositeTrace]:
    """Composite one modality front to back.

    Gaussians whose switch is off for this modality are skipped entirely in
    indicator mode; shared-opacity mode composites every Gaussian with its
    shared opacity.  A Gaussian is skipped at a pixel where ``g(x) < cutoff``.
    Compositing stops at a pixel once transmittance drops below
    ``early_stop`` (0 disables it).
    """
    p = _prepare(scene, modality_id, cutoff, background, tile)
    vp = scene.viewport
    image, final_t, hit = p["kern"].forward(
        vp.width, vp.height, vp.scale, vp.origin[0], vp.origin[1], tile,
        p["means"], p["conic"], p["alpha"], p["feats"], p["background"],
        p["ptr"], p["ids"], p["bbox"], cutoff, p["qlim"], early_stop)
    touched = np.zeros(len(scene), dtype=bool)
    local_hit = np.zeros(len(p["order"]), dtype=bool)
    local_hit[p["ids"][hit.astype(bool)]] = True
    touched[p["order"][local_hit]] = True
    m = p["desc"].id
    trace = CompositeTrace(
        modality_id=m, order=p["order"], means=p["means"], conic=p["conic"],
        alpha=p["alpha"], features=p["feats"], background=p["background"],
        ptr=p["ptr"], ids=p["ids"], bbox=p["bbox"], cutoff=cutoff, qlim=p["qlim"],
        early_stop=early_stop,
        tile=tile, final_transmittance=final_t, touched=touched,
        n_gaussians=len(scene), digest=scene_digest(scene, m))
    return ModalityImage(m, image), trace


def render_all(scene: Scene, cutoff: float = DEFAULT_CUTOFF, *, early_stop: float = 0.0,
               backgrounds=None, return_traces: bool = False):
    """Render every declared modality independently."""
    images, traces = [], []
    for desc in scene.modalities:
        bg = None if backgrounds is None else backgrounds[desc.id]
        img, trace = render_modality(scene, desc.id, cutoff, early_stop=early_stop, background=bg)
        images.append(img)
        traces.append(trace)
    if return_traces:
        return images, traces
    return images
