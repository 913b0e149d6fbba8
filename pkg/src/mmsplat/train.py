"""Training loop, evaluation, ablation tables and threshold calibration."""

from __future__ import annotations

import dataclasses
import itertools
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .autodiff import GradientSet, accumulate_positional_grads, backward_modality
from .config import ConfigError, TrainConfig
from .density import densify_and_prune, mean_gradients
from .losses import modality_loss, total_loss
from .metrics import language_queries, localization_accuracy, miou, psnr, ssim
from .optim import Adam, exponential_lr
from .rasterizer import render_modality
from .scene import Mode, Scene
from .synth import init_scene_from_truth

INDICATOR_BINS = 20
DIFFERENCE_BINS = 40


@dataclass
class RunReport:
    metrics: dict[str, dict[str, float]]
    n_gaussians: int
    counts: list[tuple[int, int]] = field(default_factory=list)
    densify_log: list[dict] = field(default_factory=list)
    loss_history: list[dict] = field(default_factory=list)
    histograms: dict = field(default_factory=dict)
    iterations: int = 0
    wall_clock: float = 0.0
    scene: Scene | None = field(default=None, repr=False, compare=False)

    def to_dict(self, timing: bool = True) -> dict:
        out = {
            "metrics": self.metrics,
            "n_gaussians": self.n_gaussians,
            "iterations": self.iterations,
            "counts": [list(c) for c in self.counts],
            "densify_log": self.densify_log,
            "loss_history": self.loss_history,
            "histograms": self.histograms,
        }
        if timing:
            out["timing"] = {"wall_clock_s": self.wall_clock}
        return out

    def fingerprint(self) -> str:
        """Canonical JSON of everything except timing; equal runs give equal strings."""
        return json.dumps(self.to_dict(timing=False), sort_keys=True)

    def reconciles(self) -> bool:
        if not self.counts:
            return True
        total = self.counts[0][1]
        for row in self.densify_log:
            total += (row["cloned"] + row["split_added"] + row["decomposition_added"]
                      - row["hard_pruned"])
        return total == self.n_gaussians

    def mean_psnr(self, names=None) -> float:
        names = names or [k for k, v in self.metrics.items() if "psnr" in v]
        return float(np.mean([self.metrics[k]["psnr"] for k in names]))


# -- pieces ----------------------------------------------------------------

def indicator_histograms(scene: Scene) -> dict:
    """Per-modality histograms of activated indicators and of pairwise differences.

    Switched-off slots are counted separately in the per-modality histogram
    and read as 0 in the difference histograms.
    """
    alpha = scene.activated_opacity()
    active = scene.active_mask()
    names = [d.name for d in scene.modalities]
    edges = np.linspace(0.0, 1.0, INDICATOR_BINS + 1)
    diff_edges = np.linspace(-1.0, 1.0, DIFFERENCE_BINS + 1)
    out = {"edges": edges.tolist(), "difference_edges": diff_edges.tolist(),
           "modalities": {}, "differences": {}}
    for m, name in enumerate(names):
        counts, _ = np.histogram(alpha[active[:, m], m], bins=edges)
        out["modalities"][name] = {"counts": counts.tolist(), "off": int((~active[:, m]).sum())}
    for i, j in itertools.combinations(range(len(names)), 2):
        d = alpha[:, i] - alpha[:, j]
        counts, _ = np.histogram(d, bins=diff_edges)
        out["differences"][f"{names[i]}-{names[j]}"] = {
            "counts": counts.tolist(), "exact_zero": int(np.sum(d == 0.0))}
    return out


def _loss_weights(cfg: TrainConfig, modalities) -> dict[str, float]:
    weights = {d.name: d.loss_weight for d in modalities}
    for name, w in (cfg.loss_weights or {}).items():
        if name not in weights:
            raise ConfigError(f"loss weight given for unknown modality {name!r}")
        weights[name] = float(w)
    return weights


def _apply_smooth_weight(cfg: TrainConfig, modalities):
    if cfg.smooth_weight is None:
        return list(modalities)
    return [dataclasses.replace(d, smooth_weight=cfg.smooth_weight) for d in modalities]


def training_step(scene: Scene, dataset: io.Dataset, cfg: TrainConfig, weights):
    """Render, compute losses and backpropagate; returns (loss report, per-modality grads)."""
    losses, components, per_mod = {}, {}, []
    for desc, truth in zip(scene.modalities, dataset.images):
        img, trace = render_modality(scene, desc.id, cfg.cutoff, early_stop=cfg.early_stop)
        value, grad, comp = modality_loss(desc, img, truth, lambda_dssim=cfg.lambda_dssim,
                                          smooth=cfg.smooth)
        losses[desc.name] = value
        components[desc.name] = comp
        per_mod.append(backward_modality(scene, desc.id, trace, weights[desc.name] * grad))
    return total_loss(losses, weights, components), per_mod


def optimizer_step(scene: Scene, grads: GradientSet, lrs: dict[str, float],
                   optimizer: Adam | None = None) -> Adam:
    """One Adam update of ``scene`` in place; returns the optimizer for reuse."""
    optimizer = optimizer or Adam()
    optimizer.step(scene, grads, lrs)
    return optimizer


def _lrs(cfg: TrainConfig, it: int) -> dict[str, float]:
    lr = cfg.lr
    return {
        "means": exponential_lr(it, cfg.iterations, lr.means, lr.means_final),
        "log_scales": lr.log_scales,
        "rotations": lr.rotations,
        "indicator_logits": lr.indicator_logits,
        "opacity_logits": lr.opacity_logits,
        "features": lr.features,
    }


def _check_roster(scene: Scene, dataset: io.Dataset) -> None:
    have = {d.name: d for d in dataset.modalities}
    for desc in scene.modalities:
        if desc.name not in have:
            raise io.DataError(f"modality {desc.name!r} is missing from the dataset")
        if have[desc.name].feature_dim != desc.feature_dim:
            raise io.DataError(f"modality {desc.name!r}: feature dim {desc.feature_dim} "
                               f"vs dataset {have[desc.name].feature_dim}")


def _dataset_for(scene: Scene, dataset: io.Dataset) -> io.Dataset:
    """Reorder dataset images to the scene's roster."""
    _check_roster(scene, dataset)
    images = [dataset.image(d.name) for d in scene.modalities]
    return io.Dataset(list(scene.modalities), images, dataset.label_names,
                      dataset.label_features, dataset.masks, dataset.background_feature,
                      dataset.language_modality, dataset.manifest)


def compute_metrics(scene: Scene, dataset: io.Dataset, cfg: TrainConfig | None = None) -> dict:
    cutoff = cfg.cutoff if cfg else 1.0 / 255.0
    early = cfg.early_stop if cfg else 0.0
    out = {}
    for desc, truth in zip(scene.modalities, dataset.images):
        img, _ = render_modality(scene, desc.id, cutoff, early_stop=early)
        row = {"psnr": psnr(img, truth), "ssim": ssim(img, truth)}
        if desc.name == dataset.language_modality and len(dataset.label_names):
            masks, points = language_queries(img, dataset.label_features,
                                             dataset.background_feature)
            row["miou"] = miou(masks, dataset.masks)
            row["localization_accuracy"] = localization_accuracy(points, dataset.masks)
        out[desc.name] = row
    return out


# -- train -----------------------------------------------------------------

def _initial_state(cfg: TrainConfig, dataset: io.Dataset):
    scene = init_scene_from_truth(dataset.images, cfg.n_init, seed=cfg.seed,
                                  modalities=dataset.modalities, mode=cfg.mode)
    return scene, Adam(), np.random.default_rng([cfg.seed, 1]), {
        "counts": [(0, len(scene))], "densify_log": [], "loss_history": []}


def save_training_checkpoint(path, scene, optimizer, rng, iteration, cfg, history) -> Path:
    state = optimizer.state_dict()
    extra = {"iteration": iteration, "rng": rng.bit_generator.state, "config": cfg.to_dict(),
             "history": {"counts": [list(c) for c in history["counts"]],
                         "densify_log": history["densify_log"],
                         "loss_history": history["loss_history"]},
             "adam": state["meta"]}
    return io.save_checkpoint(path, scene, extra=extra, arrays=state["arrays"])


def load_training_checkpoint(path):
    scene, extra, arrays = io.load_checkpoint(path)
    adam_arrays = {k: v for k, v in arrays.items() if k.startswith("adam/")}
    optimizer = Adam.from_state(extra["adam"], adam_arrays) if "adam" in extra else Adam()
    rng = np.random.default_rng()
    if "rng" in extra:
        rng.bit_generator.state = extra["rng"]
    history = extra.get("history", {})
    history = {"counts": [tuple(c) for c in history.get("counts", [(0, len(scene))])],
               "densify_log": list(history.get("densify_log", [])),
               "loss_history": list(history.get("loss_history", []))}
    return scene, optimizer, rng, int(extra.get("iteration", 0)), history


def train(cfg: TrainConfig, dataset_dir, out_dir=None, *, stop_after: int | None = None,
          resume_from=None, progress=None) -> RunReport:
    """Optimize a scene against the dataset.

    ``stop_after`` halts after that many completed iterations (used to
    checkpoint mid-run); ``resume_from`` continues from a checkpoint written
    by an earlier call with the same config.
    """
    cfg.validate()
    dataset = io.load_dataset(dataset_dir)
    modalities = _apply_smooth_weight(cfg, dataset.modalities)
    weights = _loss_weights(cfg, modalities)
    t0 = time.perf_counter()

    if resume_from is not None:
        scene, optimizer, rng, start, history = load_training_checkpoint(resume_from)
        if scene.mode is not cfg.mode:
            raise ConfigError(f"checkpoint mode {scene.mode.value} != config mode {cfg.mode.value}")
        scene.modalities = modalities
    else:
        if cfg.n_init > dataset.width * dataset.height:
            raise ConfigError(f"n_init {cfg.n_init} exceeds the {dataset.width}x{dataset.height} "
                              "pixels available for seeding")
        dataset.modalities = modalities
        scene, optimizer, rng, history = _initial_state(cfg, dataset)
        start = 0
    dataset = _dataset_for(scene, dataset)
    end = cfg.iterations if stop_after is None else min(cfg.iterations, stop_after)

    for it in range(start, end):
        report, per_mod = training_step(scene, dataset, cfg, weights)
        if it % cfg.log_every == 0 or it == cfg.iterations - 1:
            history["loss_history"].append({"iteration": it, "total": report.total,
                                            **report.losses})
            if progress:
                progress(it, report, len(scene))
        if cfg.densify_start <= it < cfg.densify_stop:
            accumulate_positional_grads(scene, per_mod)
        grads = per_mod[0]
        for g in per_mod[1:]:
            grads = grads + g
        optimizer.step(scene, grads, _lrs(cfg, it))

        k = it + 1
        interval = cfg.densify.interval
        if cfg.densify_start < k <= cfg.densify_stop and k % interval == 0:
            rep = densify_and_prune(scene, cfg.densify, rng)
            optimizer.remap(rep.source, rep.fresh)
            history["densify_log"].append({"iteration": k, **rep.counts(), "total": len(scene)})
            history["counts"].append((k, len(scene)))

    # the end marker goes to the report only, so a resumed run's history
    # matches a straight run's
    counts = [tuple(c) for c in history["counts"]]
    if counts[-1][0] != end:
        counts.append((end, len(scene)))
    run = RunReport(
        metrics=compute_metrics(scene, dataset, cfg), n_gaussians=len(scene),
        counts=counts, densify_log=history["densify_log"],
        loss_history=history["loss_history"], histograms=indicator_histograms(scene),
        iterations=end, wall_clock=time.perf_counter() - t0, scene=scene)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_training_checkpoint(out / "checkpoint.npz", scene, optimizer, rng, end, cfg, history)
        io.write_json(out / "report.json", run.to_dict())
        io.write_csv(out / "densify_log.csv", history["densify_log"] or
                     [{"iteration": "", "total": ""}])
        io.write_csv(out / "metrics.csv", [{"modality": k, **v} for k, v in run.metrics.items()])
    return run


def evaluate(checkpoint, dataset_dir, cfg: TrainConfig | None = None) -> RunReport:
    """Metrics of a saved scene; the checkpoint file is only read."""
    scene, extra, _ = io.load_checkpoint(checkpoint)
    if cfg is None and "config" in extra:
        cfg = TrainConfig.from_dict(extra["config"])
    dataset = _dataset_for(scene, io.load_dataset(dataset_dir))
    history = extra.get("history", {})
    iteration = int(extra.get("iteration", 0))
    counts = [tuple(c) for c in history.get("counts", [])]
    if not counts or counts[-1][0] != iteration:
        counts.append((iteration, len(scene)))
    return RunReport(
        metrics=compute_metrics(scene, dataset, cfg), n_gaussians=len(scene),
        counts=counts,
        densify_log=list(history.get("densify_log", [])),
        loss_history=list(history.get("loss_history", [])),
        histograms=indicator_histograms(scene), iterations=iteration)


# -- ablation --------------------------------------------------------------

def table_row(name: str, run: RunReport | None, error: str | None = None) -> dict:
    row = {"name": name, "status": "ok" if error is None else f"FAILED: {error}"}
    if run is None:
        return row
    row["n_gaussians"] = run.n_gaussians
    for mod, vals in run.metrics.items():
        for key, v in vals.items():
            row[f"{mod}_{key}"] = v
    row["mean_psnr"] = run.mean_psnr()
    row["wall_clock_s"] = run.wall_clock
    return row


def ablate(rows, dataset_dir, out_dir=None, *, progress=None,
           runs: dict | None = None) -> list[dict]:
    """Train every (name, config) row and collect one table.

    A failing row is recorded with a failure marker and the remaining rows
    still run.  The table is rewritten after every row so partial results
    survive an interruption.  Pass a dict as ``runs`` to keep each RunReport.
    """
    rows = list(rows)
    if not rows:
        raise ConfigError("ablation matrix is empty")
    table = []
    runs = {} if runs is None else runs
    out = Path(out_dir) if out_dir is not None else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    for name, cfg in rows:
        try:
            run = train(cfg, dataset_dir, None if out is None else out / _slug(name))
            runs[name] = run
            table.append(table_row(name, run))
        except (ConfigError, io.DataError, FloatingPointError, ValueError) as exc:
            table.append(table_row(name, None, str(exc)))
        if progress:
            progress(table[-1])
        if out:
            io.write_csv(out / "ablation.csv", table)
            io.write_json(out / "ablation.json", table)
    return table


def _slug(name: str) -> str:
    keep = "".join(c if c.isalnum() else "_" for c in name)
    return keep.strip("_") or "row"


# -- calibration -----------------------------------------------------------

def calibrate_thresholds(cfg: TrainConfig, dataset_dir, *, iterations: int = 200,
                         quantiles=(0.5, 0.75, 0.9, 0.95, 0.99)) -> dict:
    """Statistics of the densification signals on a short warm-up run.

    Trains ``iterations`` steps without densification while accumulating
    per-modality positional gradients, then reports quantiles of the
    clone/split signal (max per-modality mean gradient norm) and of the
    decomposition signal (max pairwise gradient difference).
    """
    warm = cfg.with_overrides({"iterations": iterations, "densify_start": 0,
                               "densify_stop": iterations,
                               "densify": {"interval": iterations + 1}})
    run = train(warm, dataset_dir)
    scene = run.scene
    norms, vecs = mean_gradients(scene)
    active = scene.active_mask() & (scene.grad_count > 0)
    clone_signal = np.where(active, norms, 0.0).max(axis=1)
    gd = np.zeros(len(scene))
    for i, j in itertools.combinations(range(scene.num_modalities), 2):
        both = active[:, i] & active[:, j]
        d = np.linalg.norm(vecs[:, i] - vecs[:, j], axis=1)
        gd = np.maximum(gd, np.where(both, d, 0.0))
    qs = [float(q) for q in quantiles]
    return {
        "iterations": iterations,
        "n_gaussians": len(scene),
        "quantiles": qs,
        "grad_signal": [float(np.quantile(clone_signal, q)) for q in qs],
        "decomp_signal": [float(np.quantile(gd, q)) for q in qs],
        "current": {"grad_threshold": cfg.densify.grad_threshold,
                    "decomp_threshold": cfg.densify.decomp_threshold},
    }


__all__ = ["RunReport", "train", "evaluate", "ablate", "optimizer_step", "calibrate_thresholds",
           "indicator_histograms", "compute_metrics", "Mode"]
