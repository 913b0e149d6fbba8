"""On-disk formats: rasters, PNG previews, datasets, checkpoints and CSV logs.

Layouts are described field by field in docs/formats.md.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .rasterizer import ModalityImage
from .scene import ModalityDescriptor, Mode, Scene, Viewport
from .synth import SyntheticDataset

RASTER_FORMAT = "mmsplat-raster"
DATASET_FORMAT = "mmsplat-dataset"
CHECKPOINT_FORMAT = "mmsplat-checkpoint"
VERSION = 1


class DataError(ValueError):
    """Missing or malformed dataset/checkpoint files."""


# -- rasters ---------------------------------------------------------------

def write_raster(path, image, *, name: str = "") -> Path:
    """Write ``<path>.raw`` (little-endian float64, row-major H x W x C) and ``<path>.json``."""
    path = Path(path)
    data = np.ascontiguousarray(getattr(image, "data", image), dtype="<f8")
    if data.ndim == 2:
        data = data[:, :, None]
    header = {"format": RASTER_FORMAT, "version": VERSION, "dtype": "<f8", "order": "C",
              "shape": list(data.shape), "name": name,
              "modality_id": int(getattr(image, "modality_id", -1))}
    path.with_suffix(".raw").write_bytes(data.tobytes())
    path.with_suffix(".json").write_text(json.dumps(header, indent=2))
    return path.with_suffix(".raw")


def read_raster(path) -> ModalityImage:
    path = Path(path)
    try:
        header = json.loads(path.with_suffix(".json").read_text())
        raw = path.with_suffix(".raw").read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read raster {path}: {exc}") from exc
    if header.get("format") != RASTER_FORMAT or header.get("version") != VERSION:
        raise DataError(f"{path}: not a {RASTER_FORMAT} v{VERSION} header")
    shape = tuple(header["shape"])
    data = np.frombuffer(raw, dtype=header["dtype"])
    if data.size != int(np.prod(shape)):
        raise DataError(f"{path}: {data.size} values for shape {shape}")
    return ModalityImage(int(header.get("modality_id", -1)), data.reshape(shape).astype(np.float64))


def write_png(path, image) -> None:
    """8-bit PNG of a 1- or 3-channel image, clamped to [0, 1]."""
    data = np.asarray(getattr(image, "data", image), dtype=np.float64)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[:, :, 0]
    if data.ndim == 3 and data.shape[2] != 3:
        raise ValueError("PNG export needs 1 or 3 channels")
    pixels = np.round(np.clip(data, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(pixels).save(path)


def write_mask(path, mask) -> None:
    Image.fromarray(np.asarray(mask, bool).astype(np.uint8) * 255).save(path)


def read_mask(path) -> np.ndarray:
    return np.asarray(Image.open(path)) > 127


# -- datasets --------------------------------------------------------------

@dataclass
class Dataset:
    modalities: list[ModalityDescriptor]
    images: list[ModalityImage]
    label_names: list[str]
    label_features: np.ndarray
    masks: list[np.ndarray]
    background_feature: np.ndarray
    language_modality: str | None
    manifest: dict

    @property
    def width(self) -> int:
        return self.images[0].width

    @property
    def height(self) -> int:
        return self.images[0].height

    def image(self, name: str) -> ModalityImage:
        for d, img in zip(self.modalities, self.images):
            if d.name == name:
                return img
        raise KeyError(name)


def save_dataset(ds: SyntheticDataset, directory, modalities) -> Path:
    directory = Path(directory)
    (directory / "masks").mkdir(parents=True, exist_ok=True)
    entries = []
    for desc in modalities:
        img = ds.images[desc.name]
        write_raster(directory / desc.name, img, name=desc.name)
        entry = dict(desc.to_dict(), raster=f"{desc.name}.raw", header=f"{desc.name}.json")
        if img.channels in (1, 3):
            write_png(directory / f"{desc.name}.png", img)
            entry["png"] = f"{desc.name}.png"
        entries.append(entry)
    labels = []
    for (name, mask), feat in zip(ds.masks.items(), ds.label_features):
        write_mask(directory / "masks" / f"{name}.png", mask)
        labels.append({"name": name, "feature": [float(v) for v in feat],
                       "mask": f"masks/{name}.png"})
    manifest = {
        "format": DATASET_FORMAT, "version": VERSION,
        "width": ds.spec.width, "height": ds.spec.height,
        "modalities": entries,
        "language_modality": "language",
        "labels": labels,
        "background_feature": [float(v) for v in ds.background_feature],
        "spec": ds.spec.to_dict(),
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return directory


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    path = directory / "manifest.json"
    if not path.is_file():
        raise DataError(f"no dataset manifest at {path}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if manifest.get("format") != DATASET_FORMAT or manifest.get("version") != VERSION:
        raise DataError(f"{path}: not a {DATASET_FORMAT} v{VERSION} manifest")
    try:
        modalities = [ModalityDescriptor.from_dict(e) for e in manifest["modalities"]]
        images = []
        for desc, entry in zip(modalities, manifest["modalities"]):
            img = read_raster(directory / entry["raster"])
            if img.channels != desc.feature_dim:
                raise DataError(f"{desc.name}: raster has {img.channels} channels, "
                                f"manifest says {desc.feature_dim}")
            images.append(ModalityImage(desc.id, img.data))
        labels = manifest.get("labels", [])
        masks = [read_mask(directory / lab["mask"]) for lab in labels]
    except (KeyError, TypeError, OSError) as exc:
        raise DataError(f"{path}: malformed manifest ({exc})") from exc
    return Dataset(
        modalities=modalities, images=images,
        label_names=[lab["name"] for lab in labels],
        label_features=np.array([lab["feature"] for lab in labels], dtype=np.float64).reshape(-1, 3),
        masks=masks,
        background_feature=np.asarray(manifest.get("background_feature", [0, 0, 0]), float),
        language_modality=manifest.get("language_modality"),
        manifest=manifest,
    )


# -- checkpoints -----------------------------------------------------------

SCENE_ARRAYS = ("means", "log_scales", "rotations", "depths", "opacity_logits",
                "indicator_logits", "indicator_on", "grad_accum", "grad_vec_accum", "grad_count")


def save_checkpoint(path, scene: Scene, *, extra: dict | None = None,
                    arrays: dict | None = None) -> Path:
    """Uncompressed .npz: a JSON header, then the scene arrays in a fixed order."""
    path = Path(path)
    header = {
        "format": CHECKPOINT_FORMAT, "version": VERSION,
        "mode": scene.mode.value,
        "viewport": scene.viewport.to_dict(),
        "modalities": [d.to_dict() for d in scene.modalities],
        "n_gaussians": len(scene),
        "extra": extra or {},
    }
    payload = {"header": np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)}
    for name in SCENE_ARRAYS:
        payload[name] = getattr(scene, name)
    for d, f in zip(scene.modalities, scene.features):
        payload[f"features/{d.name}"] = f
    payload.update(arrays or {})
    with open(path, "wb") as fh:
        np.savez(fh, **payload)
    return path


def load_checkpoint(path) -> tuple[Scene, dict, dict]:
    """Return (scene, header extra, remaining arrays)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no checkpoint at {path}")
    with np.load(path, allow_pickle=False) as z:
        arrays = {k: z[k] for k in z.files}
    header = json.loads(arrays.pop("header").tobytes().decode())
    if header.get("format") != CHECKPOINT_FORMAT or header.get("version") != VERSION:
        raise DataError(f"{path}: not a {CHECKPOINT_FORMAT} v{VERSION} file")
    modalities = [ModalityDescriptor.from_dict(d) for d in header["modalities"]]
    kw = {name: arrays.pop(name) for name in SCENE_ARRAYS}
    feats = [arrays.pop(f"features/{d.name}") for d in modalities]
    scene = Scene(modalities, Viewport.from_dict(header["viewport"]), Mode(header["mode"]),
                  features=feats, **kw)
    return scene, header["extra"], arrays


# -- logs ------------------------------------------------------------------

def append_csv(path, row: dict) -> None:
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(row))
        if new:
            writer.writeheader()
        writer.writerow(row)


def write_csv(path, rows: list[dict]) -> None:
    fields = []
    for row in rows:
        fields.extend(k for k in row if k not in fields)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=False))
