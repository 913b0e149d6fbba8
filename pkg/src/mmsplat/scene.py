"""Gaussians, modalities and scenes.

A scene is stored column-wise (one array per attribute, one row per Gaussian)
so the kernels can consume it without copying.  ``ModalGaussian`` is the
single-splat view used by the per-Gaussian operations.
"""

from __future__ import annotations

import copy
import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit


class LossKind(str, enum.Enum):
    L1_DSSIM = "l1_dssim"
    L1_DSSIM_SMOOTH = "l1_dssim_smooth"
    FEATURE_L1 = "feature_l1"


class Mode(str, enum.Enum):
    SHARED_OPACITY = "shared_opacity"
    PER_MODALITY_INDICATOR = "per_modality_indicator"


@dataclass(frozen=True)
class ModalityDescriptor:
    id: int
    name: str
    feature_dim: int
    loss_kind: LossKind = LossKind.L1_DSSIM
    loss_weight: float = 1.0
    smooth_weight: float = 0.0

    def __post_init__(self):
        if self.feature_dim < 1:
            raise ValueError(f"modality {self.name!r}: feature_dim must be >= 1")
        for attr in ("loss_weight", "smooth_weight"):
            value = getattr(self, attr)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"modality {self.name!r}: {attr} must be finite and >= 0")
        object.__setattr__(self, "loss_kind", LossKind(self.loss_kind))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "feature_dim": self.feature_dim,
            "loss_kind": self.loss_kind.value,
            "loss_weight": self.loss_weight,
            "smooth_weight": self.smooth_weight,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModalityDescriptor":
        return cls(
            id=int(d["id"]),
            name=str(d["name"]),
            feature_dim=int(d["feature_dim"]),
            loss_kind=LossKind(d.get("loss_kind", "l1_dssim")),
            loss_weight=float(d.get("loss_weight", 1.0)),
            smooth_weight=float(d.get("smooth_weight", 0.0)),
        )


def standard_modalities() -> list[ModalityDescriptor]:
    """RGB, thermal and 3-d language with the weights used for three-modality scenes."""
    return [
        ModalityDescriptor(0, "rgb", 3, LossKind.L1_DSSIM, 0.5),
        ModalityDescriptor(1, "thermal", 1, LossKind.L1_DSSIM_SMOOTH, 0.5, smooth_weight=0.6),
        ModalityDescriptor(2, "language", 3, LossKind.FEATURE_L1, 0.2),
    ]


@dataclass(frozen=True)
class Viewport:
    """Raster size plus the affine map ``pixel = origin + scale * world``.

    Pixel ``(i, j)`` (column, row) has its center at ``(i + 0.5, j + 0.5)``.
    """

    width: int
    height: int
    scale: float = 1.0
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("viewport must be at least 1x1")
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise ValueError("viewport scale must be positive")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @classmethod
    def unit(cls, width: int, height: int) -> "Viewport":
        """World unit equals the longer image side."""
        return cls(width, height, float(max(width, height)))

    def pixel_centers(self) -> np.ndarray:
        """World coordinates of every pixel center, shape (H, W, 2)."""
        xs = (np.arange(self.width) + 0.5 - self.origin[0]) / self.scale
        ys = (np.arange(self.height) + 0.5 - self.origin[1]) / self.scale
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx, gy], axis=-1)

    def world_to_pixel(self, xy):
        xy = np.asarray(xy, dtype=np.float64)
        return np.asarray(self.origin) + self.scale * xy

    def pixel_to_world(self, pix):
        pix = np.asarray(pix, dtype=np.float64)
        return (pix - np.asarray(self.origin)) / self.scale

    def to_dict(self) -> dict:
        return {"width": self.width, "height": self.height, "scale": self.scale,
                "origin": list(self.origin)}

    @classmethod
    def from_dict(cls, d: dict) -> "Viewport":
        return cls(int(d["width"]), int(d["height"]), float(d["scale"]),
                   tuple(d.get("origin", (0.0, 0.0))))


def sigmoid(x):
    return expit(np.asarray(x, dtype=np.float64))


def inverse_sigmoid(p):
    return logit(np.asarray(p, dtype=np.float64))


def activate_indicator(logit: float) -> float:
    """Map an indicator logit to its activated value in (0, 1)."""
    logit = float(logit)
    if not math.isfinite(logit):
        raise ValueError(f"indicator logit must be finite, got {logit}")
    if logit >= 0.0:
        return 1.0 / (1.0 + math.exp(-logit))
    z = math.exp(logit)
    return z / (1.0 + z)


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass
class ModalGaussian:
    mean: np.ndarray
    log_scales: np.ndarray
    rotation: float
    depth: float
    shared_opacity_logit: float
    indicator_logit: np.ndarray
    indicator_on: np.ndarray
    features: list[np.ndarray]
    grad_accum: np.ndarray = None
    grad_vec_accum: np.ndarray = None
    grad_count: np.ndarray = None

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(2)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(2)
        self.rotation = float(self.rotation)
        self.depth = float(self.depth)
        self.shared_opacity_logit = float(self.shared_opacity_logit)
        self.indicator_logit = np.asarray(self.indicator_logit, dtype=np.float64).reshape(-1)
        self.indicator_on = np.asarray(self.indicator_on, dtype=bool).reshape(-1)
        self.features = [np.asarray(f, dtype=np.float64).reshape(-1) for f in self.features]
        m = self.num_modalities
        if len(self.indicator_on) != m or len(self.features) != m:
            raise ValueError("every modality needs one indicator and one feature slot")
        if self.grad_accum is None:
            self.grad_accum = np.zeros(m)
        if self.grad_vec_accum is None:
            self.grad_vec_accum = np.zeros((m, 2))
        if self.grad_count is None:
            self.grad_count = np.zeros(m, dtype=np.int64)

    @property
    def num_modalities(self) -> int:
        return len(self.indicator_logit)

    @property
    def active_modalities(self) -> list[int]:
        return [int(m) for m in np.flatnonzero(self.indicator_on)]

    def copy(self) -> "ModalGaussian":
        return copy.deepcopy(self)


def covariance(g: ModalGaussian) -> np.ndarray:
    """World-space covariance ``R diag(s^2) R^T``."""
    if not (np.all(np.isfinite(g.log_scales)) and math.isfinite(g.rotation)):
        raise ValueError("non-finite scale or rotation")
    r = rotation_matrix(g.rotation)
    cov = r @ np.diag(np.exp(2.0 * g.log_scales)) @ r.T
    # exact symmetry; the two off-diagonal products can differ in the last ulp
    off = 0.5 * (cov[0, 1] + cov[1, 0])
    cov[0, 1] = cov[1, 0] = off
    return cov


def evaluate_gaussian(g: ModalGaussian, x) -> float:
    """Unnormalized density ``exp(-0.5 (x-mu)^T Sigma^-1 (x-mu))``."""
    cov = covariance(g)
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
    if not (det > 0.0 and math.isfinite(det)):
        raise ValueError("singular covariance")
    inv = np.array([[cov[1, 1], -cov[0, 1]], [-cov[1, 0], cov[0, 0]]]) / det
    d = np.asarray(x, dtype=np.float64) - g.mean
    return float(math.exp(-0.5 * float(d @ inv @ d)))


def conics(log_scales: np.ndarray, rotations: np.ndarray) -> np.ndarray:
    """Inverse covariances as (a, b, c) with ``q = a dx^2 + 2 b dx dy + c dy^2``."""
    c = np.cos(rotations)
    s = np.sin(rotations)
    u = np.exp(-2.0 * log_scales[:, 0])
    v = np.exp(-2.0 * log_scales[:, 1])
    out = np.empty((len(rotations), 3))
    out[:, 0] = c * c * u + s * s * v
    out[:, 1] = c * s * (u - v)
    out[:, 2] = s * s * u + c * c * v
    return out


def covariances(log_scales: np.ndarray, rotations: np.ndarray) -> np.ndarray:
    """Covariances as (xx, xy, yy)."""
    c = np.cos(rotations)
    s = np.sin(rotations)
    u = np.exp(2.0 * log_scales[:, 0])
    v = np.exp(2.0 * log_scales[:, 1])
    return np.stack([c * c * u + s * s * v, c * s * (u - v), s * s * u + c * c * v], axis=1)


_FIELDS = ("means", "log_scales", "rotations", "depths", "opacity_logits",
           "indicator_logits", "indicator_on", "grad_accum", "grad_vec_accum", "grad_count")


@dataclass
class Scene:
    """Column-wise collection of Gaussians with the modality roster."""

    modalities: list[ModalityDescriptor]
    viewport: Viewport
    mode: Mode = Mode.PER_MODALITY_INDICATOR
    means: np.ndarray = None
    log_scales: np.ndarray = None
    rotations: np.ndarray = None
    depths: np.ndarray = None
    opacity_logits: np.ndarray = None
    indicator_logits: np.ndarray = None
    indicator_on: np.ndarray = None
    features: list[np.ndarray] = field(default=None)
    grad_accum: np.ndarray = None
    grad_vec_accum: np.ndarray = None
    grad_count: np.ndarray = None

    def __post_init__(self):
        self.mode = Mode(self.mode)
        ids = [m.id for m in self.modalities]
        if ids != list(range(len(ids))):
            raise ValueError(f"modality ids must be dense 0..m-1, got {ids}")
        m = len(self.modalities)
        n = 0 if self.means is None else len(self.means)
        defaults = {
            "means": np.zeros((n, 2)),
            "log_scales": np.zeros((n, 2)),
            "rotations": np.zeros(n),
            "depths": np.zeros(n),
            "opacity_logits": np.zeros(n),
            "indicator_logits": np.zeros((n, m)),
            "indicator_on": np.ones((n, m), dtype=bool),
            "grad_accum": np.zeros((n, m)),
            "grad_vec_accum": np.zeros((n, m, 2)),
            "grad_count": np.zeros((n, m), dtype=np.int64),
        }
        for name in _FIELDS:
            value = getattr(self, name)
            want = defaults[name]
            if value is None:
                value = want
            value = np.ascontiguousarray(value, dtype=want.dtype).reshape(want.shape)
            setattr(self, name, value)
        if self.features is None:
            self.features = [np.zeros((n, d.feature_dim)) for d in self.modalities]
        self.features = [np.ascontiguousarray(f, dtype=np.float64).reshape(n, d.feature_dim)
                         for f, d in zip(self.features, self.modalities, strict=True)]

    def __len__(self) -> int:
        return len(self.means)

    @property
    def num_modalities(self) -> int:
        return len(self.modalities)

    def modality(self, key) -> ModalityDescriptor:
        """Look up a modality by id or name."""
        for d in self.modalities:
            if d.id == key or d.name == key:
                return d
        raise KeyError(f"undeclared modality {key!r}")

    @classmethod
    def empty(cls, modalities, viewport, mode=Mode.PER_MODALITY_INDICATOR) -> "Scene":
        return cls(list(modalities), viewport, mode)

    @classmethod
    def from_gaussians(cls, gaussians, modalities, viewport,
                       mode=Mode.PER_MODALITY_INDICATOR) -> "Scene":
        modalities = list(modalities)
        if not gaussians:
            return cls.empty(modalities, viewport, mode)
        for g in gaussians:
            if g.num_modalities != len(modalities):
                raise ValueError("gaussian modality slots do not match the roster")
        return cls(
            modalities, viewport, mode,
            means=np.stack([g.mean for g in gaussians]),
            log_scales=np.stack([g.log_scales for g in gaussians]),
            rotations=np.array([g.rotation for g in gaussians]),
            depths=np.array([g.depth for g in gaussians]),
            opacity_logits=np.array([g.shared_opacity_logit for g in gaussians]),
            indicator_logits=np.stack([g.indicator_logit for g in gaussians]),
            indicator_on=np.stack([g.indicator_on for g in gaussians]),
            features=[np.stack([g.features[m] for g in gaussians])
                      for m in range(len(modalities))],
            grad_accum=np.stack([g.grad_accum for g in gaussians]),
            grad_vec_accum=np.stack([g.grad_vec_accum for g in gaussians]),
            grad_count=np.stack([g.grad_count for g in gaussians]),
        )

    def gaussian(self, i: int) -> ModalGaussian:
        return ModalGaussian(
            mean=self.means[i].copy(),
            log_scales=self.log_scales[i].copy(),
            rotation=self.rotations[i],
            depth=self.depths[i],
            shared_opacity_logit=self.opacity_logits[i],
            indicator_logit=self.indicator_logits[i].copy(),
            indicator_on=self.indicator_on[i].copy(),
            features=[f[i].copy() for f in self.features],
            grad_accum=self.grad_accum[i].copy(),
            grad_vec_accum=self.grad_vec_accum[i].copy(),
            grad_count=self.grad_count[i].copy(),
        )

    def gaussians(self) -> list[ModalGaussian]:
        return [self.gaussian(i) for i in range(len(self))]

    def take(self, index) -> "Scene":
        """New scene holding the rows selected by ``index`` (ints or boolean mask)."""
        index = np.asarray(index)
        kw = {name: getattr(self, name)[index] for name in _FIELDS}
        return Scene(list(self.modalities), self.viewport, self.mode,
                     features=[f[index] for f in self.features], **kw)

    def concat(self, other: "Scene") -> "Scene":
        kw = {name: np.concatenate([getattr(self, name), getattr(other, name)])
              for name in _FIELDS}
        feats = [np.concatenate([a, b]) for a, b in zip(self.features, other.features)]
        return Scene(list(self.modalities), self.viewport, self.mode, features=feats, **kw)

    def copy(self) -> "Scene":
        return self.take(np.arange(len(self)))

    def replace_rows(self, other: "Scene") -> None:
        """Adopt ``other``'s Gaussians in place (roster and viewport unchanged)."""
        for name in _FIELDS:
            setattr(self, name, getattr(other, name))
        self.features = other.features

    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def active_mask(self) -> np.ndarray:
        """(N, M) mask of slots that take part in rendering."""
        if self.mode is Mode.SHARED_OPACITY:
            return np.ones_like(self.indicator_on)
        return self.indicator_on.copy()

    def activated_opacity(self) -> np.ndarray:
        """(N, M) effective opacity per slot; switched-off slots read 0."""
        if self.mode is Mode.SHARED_OPACITY:
            alpha = sigmoid(self.opacity_logits)
            return np.repeat(alpha[:, None], self.num_modalities, axis=1)
        return np.where(self.indicator_on, sigmoid(self.indicator_logits), 0.0)

    def reset_accumulators(self) -> None:
        self.grad_accum[:] = 0.0
        self.grad_vec_accum[:] = 0.0
        self.grad_count[:] = 0

    def equals(self, other: "Scene") -> bool:
        """Bit-exact comparison of roster, viewport, mode and every field."""
        if (self.modalities != other.modalities or self.viewport != other.viewport
                or self.mode != other.mode):
            return False
        for name in _FIELDS:
            a, b = getattr(self, name), getattr(other, name)
            if a.shape != b.shape or a.tobytes() != b.tobytes():
                return False
        return all(a.shape == b.shape and a.tobytes() == b.tobytes()
                   for a, b in zip(self.features, other.features))
