import json

import numpy as np
import pytest

from helpers import random_scene
from mmsplat import io
from mmsplat.rasterizer import ModalityImage
from mmsplat.scene import standard_modalities
from mmsplat.synth import SyntheticSceneSpec, generate


def test_raster_round_trip_is_exact(tmp_path):
    data = np.random.default_rng(0).normal(size=(5, 7, 4))
    io.write_raster(tmp_path / "r", ModalityImage(2, data), name="feat")
    raw = (tmp_path / "r.raw").read_bytes()
    assert len(raw) == 5 * 7 * 4 * 8
    assert np.frombuffer(raw, "<f8")[1] == data[0, 0, 1]
    header = json.loads((tmp_path / "r.json").read_text())
    assert header["shape"] == [5, 7, 4] and header["dtype"] == "<f8" and header["order"] == "C"
    back = io.read_raster(tmp_path / "r")
    assert back.modality_id == 2
    np.testing.assert_array_equal(back.data, data)


def test_bad_raster_raises(tmp_path):
    io.write_raster(tmp_path / "r", np.zeros((2, 2, 1)))
    (tmp_path / "r.raw").write_bytes(b"\0" * 8)
    with pytest.raises(io.DataError):
        io.read_raster(tmp_path / "r")
    with pytest.raises(io.DataError):
        io.read_raster(tmp_path / "missing")


def test_png_export_clamps(tmp_path):
    from PIL import Image
    img = np.array([[[-0.5, 0.5, 2.0]]])
    io.write_png(tmp_path / "a.png", img)
    assert np.asarray(Image.open(tmp_path / "a.png")).tolist() == [[[0, 128, 255]]]
    with pytest.raises(ValueError):
        io.write_png(tmp_path / "b.png", np.zeros((2, 2, 4)))


def test_dataset_round_trip(tmp_path):
    ds = generate(SyntheticSceneSpec(seed=1, width=24, height=20, n_objects=3))
    io.save_dataset(ds, tmp_path, standard_modalities())
    back = io.load_dataset(tmp_path)
    assert [d.name for d in back.modalities] == ["rgb", "thermal", "language"]
    assert back.modalities == standard_modalities()
    for d, img in zip(back.modalities, back.images):
        np.testing.assert_array_equal(img.data, ds.images[d.name].data)
    for name, mask in zip(back.label_names, back.masks):
        np.testing.assert_array_equal(mask, ds.masks[name])
    np.testing.assert_array_equal(back.label_features, ds.label_features)
    assert (back.width, back.height) == (24, 20)


def test_dataset_errors(tmp_path):
    with pytest.raises(io.DataError):
        io.load_dataset(tmp_path)
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(io.DataError):
        io.load_dataset(tmp_path)
    (tmp_path / "manifest.json").write_text(json.dumps({"format": "other", "version": 1}))
    with pytest.raises(io.DataError):
        io.load_dataset(tmp_path)


def test_dataset_channel_mismatch(tmp_path):
    ds = generate(SyntheticSceneSpec(seed=1, width=8, height=8, n_objects=1))
    io.save_dataset(ds, tmp_path, standard_modalities())
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    manifest["modalities"][1]["feature_dim"] = 3
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(io.DataError, match="thermal"):
        io.load_dataset(tmp_path)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    scene = random_scene(rng, n=7, n_modalities=3)
    scene.grad_accum[:] = rng.uniform(size=scene.grad_accum.shape)
    io.save_checkpoint(tmp_path / "c.npz", scene, extra={"k": [1, 2]},
                       arrays={"adam/means/exp_avg": np.ones((7, 2))})
    back, extra, arrays = io.load_checkpoint(tmp_path / "c.npz")
    assert back.equals(scene)
    np.testing.assert_array_equal(back.grad_accum, scene.grad_accum)
    assert extra == {"k": [1, 2]}
    assert list(arrays) == ["adam/means/exp_avg"]
    with np.load(tmp_path / "c.npz") as z:
        assert z.files[:len(io.SCENE_ARRAYS) + 1] == ["header", *io.SCENE_ARRAYS]


def test_missing_checkpoint(tmp_path):
    with pytest.raises(io.DataError):
        io.load_checkpoint(tmp_path / "nope.npz")


def test_csv_helpers(tmp_path):
    io.append_csv(tmp_path / "a.csv", {"x": 1, "y": 2})
    io.append_csv(tmp_path / "a.csv", {"x": 3, "y": 4})
    assert (tmp_path / "a.csv").read_text().splitlines() == ["x,y", "1,2", "3,4"]
    io.write_csv(tmp_path / "b.csv", [{"a": 1}, {"a": 2, "b": 3}])
    assert (tmp_path / "b.csv").read_text().splitlines() == ["a,b", "1,", "2,3"]
