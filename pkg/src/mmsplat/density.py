"""Adaptive density control with multimodal decomposition and soft pruning."""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .scene import ModalGaussian, Mode, Scene, sigmoid


class PruneMode(str, enum.Enum):
    JOINT = "joint"  # drop a Gaussian only when every active slot is weak
    HARD = "hard_prune"  # drop a Gaussian when any active slot is weak
    SOFT = "soft_prune"  # switch weak slots off; stricter bar for single-modal Gaussians


@dataclass
class DensifyConfig:
    grad_threshold: float = 0.0002
    decomp_threshold: float = 0.0002
    size_split_threshold: float = 0.01
    opacity_prune_threshold: float = 0.005
    single_modal_prune_threshold: float = 0.5
    interval: int = 100
    mode: PruneMode = PruneMode.SOFT
    decomposition: bool = True
    partial_fanout: bool = False
    max_world_size: float | None = None
    clone_nudge: float = 0.5
    split_children: int = 2
    split_shrink: float = 1.6

    def __post_init__(self):
        self.mode = PruneMode(self.mode)
        for name in ("grad_threshold", "decomp_threshold", "size_split_threshold",
                     "opacity_prune_threshold", "single_modal_prune_threshold", "clone_nudge"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {value}")
        if self.interval < 1:
            raise ValueError("interval must be >= 1")
        if self.split_children < 1 or self.split_shrink <= 0:
            raise ValueError("split_children must be >= 1 and split_shrink > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        return d


@dataclass
class DensifyReport:
    before: int = 0
    after: int = 0
    cloned: int = 0
    split: int = 0
    split_added: int = 0
    decomposed: int = 0
    decomposition_added: int = 0
    soft_pruned: int = 0
    hard_pruned: int = 0
    # row i of the new scene came from row source[i] of the old one; fresh rows
    # (clones, split children) start with empty optimizer state
    source: np.ndarray = field(default=None, repr=False)
    fresh: np.ndarray = field(default=None, repr=False)

    def counts(self) -> dict:
        return {k: getattr(self, k) for k in ("before", "after", "cloned", "split", "split_added", "decomposed",
                                              "decomposition_added", "soft_pruned", "hard_pruned")}

    def reconciles(self) -> bool:
        return self.after == (self.before + self.cloned + self.split_added
                              + self.decomposition_added - self.hard_pruned)


def mean_gradients(scene: Scene) -> tuple[np.ndarray, np.ndarray]:
    """Per-slot mean gradient norm (N, M) and mean gradient vector (N, M, 2)."""
    count = scene.grad_count
    safe = np.maximum(count, 1)
    norms = np.where(count > 0, scene.grad_accum / safe, 0.0)
    vecs = np.where((count > 0)[..., None], scene.grad_vec_accum / safe[..., None], 0.0)
    return norms, vecs


def gradient_difference(g: ModalGaussian, m_i: int, m_j: int) -> float:
    """L2 distance between two modalities' mean positional gradients."""
    if g.grad_count[m_i] == 0 or g.grad_count[m_j] == 0:
        return 0.0
    gi = g.grad_vec_accum[m_i] / g.grad_count[m_i]
    gj = g.grad_vec_accum[m_j] / g.grad_count[m_j]
    return float(np.linalg.norm(gi - gj))


def _fanout_groups(active, pair=None, partial=False) -> list[list[int]]:
    if partial and pair is not None:
        _, j = pair
        return [[m for m in active if m != j], [j]]
    return [[m] for m in active]


def decompose(g: ModalGaussian, active=None, *, partial_pair=None) -> list[ModalGaussian]:
    """Split a multi-modal Gaussian into copies that each carry one modality.

    Geometry, logits and features are copied verbatim; only the switches
    differ.  With ``partial_pair=(i, j)`` only modality ``j`` is split off.
    """
    active = g.active_modalities if active is None else [int(m) for m in active]
    if len(active) < 2:
        raise ValueError("decompose needs a Gaussian with at least two active modalities")
    out = []
    for group in _fanout_groups(active, partial_pair, partial_pair is not None):
        c = g.copy()
        c.indicator_on[:] = False
        c.indicator_on[group] = True
        out.append(c)
    return out


def soft_prune(scene: Scene, index: int, modality: int) -> bool:
    """Switch one modality of one Gaussian off; remove the Gaussian if nothing is left.

    Returns True when the Gaussian was removed.
    """
    if scene.mode is not Mode.PER_MODALITY_INDICATOR:
        raise ValueError("soft prune needs per-modality indicators")
    if not scene.indicator_on[index, modality]:
        raise ValueError(f"modality {modality} of Gaussian {index} is already off")
    scene.indicator_on[index, modality] = False
    if not scene.indicator_on[index].any():
        keep = np.ones(len(scene), dtype=bool)
        keep[index] = False
        scene.replace_rows(scene.take(keep))
        return True
    return False


def _decomposition_mask(scene, vecs, cfg):
    n, m = len(scene), scene.num_modalities
    gd_max = np.zeros(n)
    best = np.full((n, 2), -1, dtype=np.int64)
    if scene.mode is Mode.SHARED_OPACITY or not cfg.decomposition:
        return np.zeros(n, dtype=bool), best
    usable = scene.indicator_on & (scene.grad_count > 0)
    for i, j in itertools.combinations(range(m), 2):
        both = usable[:, i] & usable[:, j]
        gd = np.sqrt(np.sum((vecs[:, i] - vecs[:, j]) ** 2, axis=1))
        better = both & (gd > gd_max)
        gd_max = np.where(better, gd, gd_max)
        best[better] = (i, j)
    return gd_max > cfg.decomp_threshold, best


def prune_mask(scene: Scene, cfg: DensifyConfig) -> tuple[np.ndarray, int]:
    """Apply the prune phase in place to switches; return (remove mask, slots switched off)."""
    active = scene.active_mask()
    opacity = scene.activated_opacity()
    n_active = active.sum(axis=1)
    switched = 0
    if cfg.mode is PruneMode.SOFT:
        if scene.mode is not Mode.PER_MODALITY_INDICATOR:
            raise ValueError("soft prune needs per-modality indicators")
        weak = active & (opacity < cfg.opacity_prune_threshold) & (n_active >= 2)[:, None]
        switched = int(weak.sum())
        scene.indicator_on[weak] = False
        active = scene.active_mask()
        n_active = active.sum(axis=1)
        sole = np.where(active, opacity, -np.inf).max(axis=1)
        remove = (n_active == 0) | ((n_active == 1) & (sole < cfg.single_modal_prune_threshold))
    elif cfg.mode is PruneMode.HARD:
        weakest = np.where(active, opacity, np.inf).min(axis=1)
        remove = (n_active == 0) | (weakest < cfg.opacity_prune_threshold)
    else:
        strongest = np.where(active, opacity, -np.inf).max(axis=1)
        remove = (n_active == 0) | (strongest < cfg.opacity_prune_threshold)
    if cfg.max_world_size is not None:
        remove |= scene.scales().max(axis=1) > cfg.max_world_size
    return remove, switched


def densify_and_prune(scene: Scene, cfg: DensifyConfig, rng: np.random.Generator) -> DensifyReport:
    """Decompose, clone/split, prune and reset accumulators, in that order.

    Mutates ``scene`` in place and returns the counts plus the row provenance
    needed to carry optimizer state across.
    """
    n = len(scene)
    report = DensifyReport(before=n)
    if n == 0:
        report.source = np.zeros(0, dtype=np.int64)
        report.fresh = np.zeros(0, dtype=bool)
        return report

    norms, vecs = mean_gradients(scene)
    decomp, best_pair = _decomposition_mask(scene, vecs, cfg)
    active = scene.active_mask()
    stat = np.where(active, norms, 0.0).max(axis=1)
    big = scene.scales().max(axis=1) > cfg.size_split_threshold
    grow = (stat > cfg.grad_threshold) & ~decomp
    clone = grow & ~big
    split = grow & big

    # decomposition copies stay in place so depth ties keep their order
    src, on_rows = [], []
    for i in range(n):
        if split[i]:
            continue
        if decomp[i]:
            act = [int(m) for m in np.flatnonzero(active[i])]
            pair = tuple(best_pair[i]) if cfg.partial_fanout else None
            groups = _fanout_groups(act, pair, cfg.partial_fanout)
            for group in groups:
                row = np.zeros(scene.num_modalities, dtype=bool)
                row[group] = True
                src.append(i)
                on_rows.append(row)
            report.decomposition_added += len(groups) - 1
        else:
            src.append(i)
            on_rows.append(scene.indicator_on[i])
    base_src = np.array(src, dtype=np.int64)
    base = scene.take(base_src)
    if len(base_src):
        base.indicator_on = np.array(on_rows, dtype=bool).reshape(len(base_src), -1)
    report.decomposed = int(decomp.sum())

    clone_idx = np.flatnonzero(clone)
    clones = scene.take(clone_idx)
    if len(clone_idx):
        direction = vecs[clone_idx].sum(axis=1)
        length = np.linalg.norm(direction, axis=1, keepdims=True)
        unit = np.where(length > 0, direction / np.where(length > 0, length, 1.0), 0.0)
        reach = cfg.clone_nudge * clones.scales().max(axis=1, keepdims=True)
        clones.means = clones.means - reach * unit
    report.cloned = len(clone_idx)

    split_idx = np.flatnonzero(split)
    child_src = np.repeat(split_idx, cfg.split_children)
    children = scene.take(child_src)
    if len(child_src):
        z = rng.standard_normal((len(child_src), 2)) * children.scales()
        c, s = np.cos(children.rotations), np.sin(children.rotations)
        offset = np.stack([c * z[:, 0] - s * z[:, 1], s * z[:, 0] + c * z[:, 1]], axis=1)
        children.means = children.means + offset
        children.log_scales = children.log_scales - math.log(cfg.split_shrink)
    report.split = len(split_idx)
    # children replace the parent: net growth per split is split_children - 1
    report.split_added = len(child_src) - len(split_idx)

    grown = base.concat(clones).concat(children)
    source = np.concatenate([base_src, clone_idx, child_src])
    fresh = np.concatenate([np.zeros(len(base_src), bool), np.ones(len(clone_idx), bool),
                            np.ones(len(child_src), bool)])

    remove, switched = prune_mask(grown, cfg)
    report.soft_pruned = switched
    report.hard_pruned = int(remove.sum())
    final = grown.take(~remove)
    final.reset_accumulators()
    scene.replace_rows(final)
    report.source = source[~remove]
    report.fresh = fresh[~remove]
    report.after = len(scene)
    return report
