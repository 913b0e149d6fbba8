"""Adam over the scene's parameter groups, with switched-off slots frozen."""

from __future__ import annotations

import math

import numpy as np

from .autodiff import GradientSet
from .scene import Mode, Scene


def group_names(scene: Scene) -> list[str]:
    names = ["means", "log_scales", "rotations"]
    names.append("opacity_logits" if scene.mode is Mode.SHARED_OPACITY else "indicator_logits")
    names.extend(f"features/{d.name}" for d in scene.modalities)
    return names


def _param(scene: Scene, name: str) -> np.ndarray:
    if name.startswith("features/"):
        return scene.features[scene.modality(name.split("/", 1)[1]).id]
    return getattr(scene, name)


def _grad(grads: GradientSet, scene: Scene, name: str) -> np.ndarray:
    if name.startswith("features/"):
        return grads.d_features[scene.modality(name.split("/", 1)[1]).id]
    return getattr(grads, "d_" + name)


def _lr_key(name: str) -> str:
    return "features" if name.startswith("features/") else name


def _mask(scene: Scene, name: str, shape) -> np.ndarray:
    """Entries the optimizer may touch."""
    active = scene.active_mask()
    if name == "indicator_logits":
        return active
    if name.startswith("features/"):
        m = scene.modality(name.split("/", 1)[1]).id
        rows = active[:, m]
    else:
        rows = active.any(axis=1)
    return np.broadcast_to(rows.reshape((-1,) + (1,) * (len(shape) - 1)), shape)


class Adam:
    """Per-group first/second moment state; one step counter per group."""

    def __init__(self, betas=(0.9, 0.999), eps=1e-15):
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.exp_avg: dict[str, np.ndarray] = {}
        self.exp_avg_sq: dict[str, np.ndarray] = {}
        self.steps: dict[str, int] = {}

    def _ensure(self, name, shape):
        if name not in self.exp_avg or self.exp_avg[name].shape != shape:
            self.exp_avg[name] = np.zeros(shape)
            self.exp_avg_sq[name] = np.zeros(shape)
            self.steps.setdefault(name, 0)

    def step(self, scene: Scene, grads: GradientSet, lrs: dict[str, float]) -> None:
        """Update ``scene`` in place.

        Raises FloatingPointError naming the first Gaussian with a non-finite
        gradient; nothing is modified in that case.
        """
        names = group_names(scene)
        for name in names:
            g = _grad(grads, scene, name)
            bad = ~np.isfinite(g)
            if bad.any():
                row = int(np.flatnonzero(bad.reshape(len(g), -1).any(axis=1))[0])
                raise FloatingPointError(f"non-finite gradient in {name} of Gaussian {row}")
        for name in names:
            param = _param(scene, name)
            g = _grad(grads, scene, name)
            lr = lrs[_lr_key(name)]
            self._ensure(name, param.shape)
            self.steps[name] += 1
            t = self.steps[name]
            mask = _mask(scene, name, param.shape)
            m, v = self.exp_avg[name], self.exp_avg_sq[name]
            m[mask] = self.beta1 * m[mask] + (1.0 - self.beta1) * g[mask]
            v[mask] = self.beta2 * v[mask] + (1.0 - self.beta2) * g[mask] ** 2
            bc1 = 1.0 - self.beta1 ** t
            bc2 = 1.0 - self.beta2 ** t
            step = lr * (m[mask] / bc1) / (np.sqrt(v[mask] / bc2) + self.eps)
            param[mask] = param[mask] - step

    def remap(self, source: np.ndarray, fresh: np.ndarray) -> None:
        """Follow a densification: row i now comes from ``source[i]``."""
        for store in (self.exp_avg, self.exp_avg_sq):
            for name, arr in store.items():
                new = arr[source].copy()
                new[fresh] = 0.0
                store[name] = new

    def state_dict(self) -> dict:
        out = {"betas": [self.beta1, self.beta2], "eps": self.eps, "steps": dict(self.steps)}
        arrays = {}
        for name in self.exp_avg:
            arrays[f"adam/{name}/exp_avg"] = self.exp_avg[name]
            arrays[f"adam/{name}/exp_avg_sq"] = self.exp_avg_sq[name]
        return {"meta": out, "arrays": arrays}

    @classmethod
    def from_state(cls, meta: dict, arrays: dict) -> "Adam":
        opt = cls(tuple(meta["betas"]), meta["eps"])
        opt.steps = {k: int(v) for k, v in meta["steps"].items()}
        for key, arr in arrays.items():
            name, kind = key.split("/", 1)[1].rsplit("/", 1)
            (opt.exp_avg if kind == "exp_avg" else opt.exp_avg_sq)[name] = np.array(arr)
        return opt


def exponential_lr(step: int, total: int, lr_init: float, lr_final: float) -> float:
    """Log-linear decay from ``lr_init`` at step 0 to ``lr_final`` at ``total``."""
    if total <= 0:
        return lr_final
    t = min(max(step / total, 0.0), 1.0)
    return math.exp((1.0 - t) * math.log(lr_init) + t * math.log(lr_final))
