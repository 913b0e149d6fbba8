"""Synthetic multimodal ground truth with a built-in granularity gap.

RGB carries fine stripe texture inside each object, thermal is the blurred
occupancy/temperature field, and language is piecewise constant per object.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.spatial import cKDTree

from .rasterizer import ModalityImage
from .scene import Mode, Scene, Viewport, inverse_sigmoid, standard_modalities

DEFAULT_LABELS = (
    ("red_block", (0.9, 0.15, 0.1)),
    ("green_disk", (0.1, 0.85, 0.2)),
    ("blue_box", (0.15, 0.2, 0.9)),
    ("yellow_mug", (0.85, 0.85, 0.1)),
    ("cyan_plate", (0.1, 0.8, 0.85)),
)


@dataclass
class SyntheticSceneSpec:
    seed: int = 0
    width: int = 128
    height: int = 128
    n_objects: int = 6
    min_size: float = 0.12  # fraction of the shorter side
    max_size: float = 0.35
    rgb_texture_freq: float = 0.18  # stripe cycles per pixel
    thermal_blur_sigma: float = 5.0  # pixels
    label_table: tuple = DEFAULT_LABELS
    noise_sigma: float = 0.0
    background_rgb: tuple = (0.25, 0.3, 0.35)

    def __post_init__(self):
        self.label_table = tuple((str(n), tuple(float(v) for v in f)) for n, f in self.label_table)
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        if self.n_objects < 0 or self.thermal_blur_sigma < 0 or self.noise_sigma < 0:
            raise ValueError("object count, blur and noise must be >= 0")
        if self.n_objects and not self.label_table:
            raise ValueError("objects need at least one label")
        feats = [np.asarray(f) for _, f in self.label_table]
        if any(len(f) != 3 for f in feats):
            raise ValueError("label features must be 3-vectors")
        for a, b in itertools.combinations(feats, 2):
            if np.linalg.norm(a - b) < 0.2:
                raise ValueError("label features must be at least 0.2 apart")
        names = [n for n, _ in self.label_table]
        if len(set(names)) != len(names):
            raise ValueError("label names must be unique")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["label_table"] = [[n, list(f)] for n, f in self.label_table]
        d["background_rgb"] = list(self.background_rgb)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSceneSpec":
        d = dict(d)
        if "label_table" in d:
            d["label_table"] = tuple((n, tuple(f)) for n, f in d["label_table"])
        if "background_rgb" in d:
            d["background_rgb"] = tuple(d["background_rgb"])
        return cls(**d)


@dataclass
class SyntheticDataset:
    spec: SyntheticSceneSpec
    images: dict[str, ModalityImage]
    masks: dict[str, np.ndarray]
    label_features: np.ndarray
    background_feature: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def label_names(self) -> list[str]:
        return list(self.masks)


def standard_fixture_spec(seed: int = 0) -> SyntheticSceneSpec:
    """The 128x128 three-modality benchmark scene."""
    return SyntheticSceneSpec(seed=seed)


def blur(field_: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflected borders; sigma 0 is the identity."""
    if sigma <= 0:
        return field_.copy()
    return gaussian_filter(field_, sigma=sigma, mode="reflect")


def _object_mask(kind, cx, cy, rx, ry, xx, yy):
    if kind == "disk":
        return ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
    return (np.abs(xx - cx) <= rx) & (np.abs(yy - cy) <= ry)


def generate(spec: SyntheticSceneSpec) -> SyntheticDataset:
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    short = min(w, h)

    label_id = np.full((h, w), -1, dtype=np.int64)
    temperature = np.zeros((h, w))
    rgb = np.empty((h, w, 3))
    ramp = (xx / w + yy / h) / 2.0
    for c in range(3):
        rgb[:, :, c] = spec.background_rgb[c] * (0.8 + 0.4 * ramp)

    n_labels = len(spec.label_table)
    for k in range(spec.n_objects):
        kind = "disk" if rng.uniform() < 0.5 else "rect"
        rx, ry = rng.uniform(spec.min_size, spec.max_size, 2) * short / 2.0
        cx = rng.uniform(rx, w - rx)
        cy = rng.uniform(ry, h - ry)
        inside = _object_mask(kind, cx, cy, rx, ry, xx, yy)
        base = rng.uniform(0.2, 0.95, 3)
        phi = rng.uniform(0, math.pi)
        phase = rng.uniform(0, 2 * math.pi)
        stripes = 0.5 + 0.5 * np.sin(2 * math.pi * spec.rgb_texture_freq
                                     * (xx * math.cos(phi) + yy * math.sin(phi)) + phase)
        texture = base[None, None, :] * (0.55 + 0.45 * stripes[:, :, None])
        rgb[inside] = texture[inside]
        temperature[inside] = rng.uniform(0.45, 1.0)
        label_id[inside] = k % n_labels

    if spec.noise_sigma > 0:
        rgb = rgb + rng.normal(0.0, spec.noise_sigma, rgb.shape)
    rgb = np.clip(rgb, 0.0, 1.0)
    thermal = np.clip(blur(temperature, spec.thermal_blur_sigma), 0.0, 1.0)

    table = np.array([f for _, f in spec.label_table], dtype=np.float64).reshape(-1, 3)
    language = np.zeros((h, w, 3))
    masks = {}
    for k, (name, _) in enumerate(spec.label_table):
        mask = label_id == k
        language[mask] = table[k]
        masks[name] = mask

    images = {
        "rgb": ModalityImage(0, rgb),
        "thermal": ModalityImage(1, thermal[:, :, None]),
        "language": ModalityImage(2, language),
    }
    return SyntheticDataset(spec, images, masks, table)


def edge_strength(image) -> np.ndarray:
    data = np.asarray(getattr(image, "data", image), dtype=np.float64)
    lum = data.mean(axis=2) if data.ndim == 3 else data
    gy, gx = np.gradient(lum)
    return np.hypot(gx, gy)


def init_scene_from_truth(truth, n: int, seed: int = 0, *, modalities=None, viewport=None,
                          mode=Mode.PER_MODALITY_INDICATOR, edge_modality: int = 0,
                          initial_opacity: float = 0.1) -> Scene:
    """Seed ``n`` Gaussians on strong edges of the first modality.

    The first Gaussian sits on the strongest edge pixel; the rest are drawn
    without replacement with probability proportional to edge strength plus
    a floor, so flat regions are still covered.
    """
    if n < 1:
        raise ValueError("need at least one Gaussian")
    modalities = standard_modalities() if modalities is None else list(modalities)
    if isinstance(truth, dict):
        truth = [truth[d.name] for d in modalities]
    truth = [np.asarray(getattr(t, "data", t), dtype=np.float64) for t in truth]
    truth = [t[:, :, None] if t.ndim == 2 else t for t in truth]
    h, w = truth[0].shape[:2]
    viewport = Viewport.unit(w, h) if viewport is None else viewport
    if n > h * w:
        raise ValueError(f"cannot seed {n} Gaussians on {h * w} pixels")

    rng = np.random.default_rng(seed)
    strength = edge_strength(truth[edge_modality]).ravel()
    first = int(np.argmax(strength))
    picks = [first]
    if n > 1:
        weights = strength + 0.1 * strength.mean() + 1e-12
        weights[first] = 0.0
        rest = rng.choice(h * w, size=n - 1, replace=False, p=weights / weights.sum())
        picks.extend(int(i) for i in rest)
    picks = np.array(picks)
    rows, cols = np.divmod(picks, w)
    means = viewport.pixel_to_world(np.stack([cols + 0.5, rows + 0.5], axis=1))

    if n > 1:
        dist, _ = cKDTree(means).query(means, k=2)
        spacing = float(dist[:, 1].mean())
    else:
        spacing = 0.5 * max(w, h) / viewport.scale
    logit = float(inverse_sigmoid(initial_opacity))
    m = len(modalities)
    return Scene(
        modalities, viewport, mode,
        means=means,
        log_scales=np.full((n, 2), math.log(spacing)),
        rotations=np.zeros(n),
        depths=rng.uniform(0.0, 1.0, n),
        opacity_logits=np.full(n, logit),
        indicator_logits=np.full((n, m), logit),
        indicator_on=np.ones((n, m), dtype=bool),
        features=[t[rows, cols].copy() for t in truth],
    )
