import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mmsplat.losses import total_variation
from mmsplat.synth import (SyntheticSceneSpec, edge_strength, generate, init_scene_from_truth,
                           standard_fixture_spec)


def small(**kw):
    return SyntheticSceneSpec(**dict(dict(width=48, height=40, n_objects=4), **kw))


def test_zero_objects_gives_background_only():
    ds = generate(small(n_objects=0))
    assert not ds.images["thermal"].data.any()
    assert not ds.images["language"].data.any()
    assert all(not m.any() for m in ds.masks.values())
    assert ds.images["rgb"].data.std() > 0


def test_same_seed_same_bytes():
    a, b = generate(small(seed=11, noise_sigma=0.02)), generate(small(seed=11, noise_sigma=0.02))
    for name in a.images:
        assert a.images[name].data.tobytes() == b.images[name].data.tobytes()
    for name in a.masks:
        assert a.masks[name].tobytes() == b.masks[name].tobytes()
    c = generate(small(seed=12))
    assert c.images["rgb"].data.tobytes() != a.images["rgb"].data.tobytes()


def test_zero_blur_keeps_sharp_occupancy():
    ds = generate(small(thermal_blur_sigma=0.0))
    occupied = np.any(np.stack(list(ds.masks.values())), axis=0)
    thermal = ds.images["thermal"].data[..., 0]
    np.testing.assert_array_equal(thermal > 0, occupied)
    assert len(np.unique(thermal)) <= 5


def test_language_regions_align_with_masks():
    ds = generate(small(n_objects=5))
    lang = ds.images["language"].data
    for k, (name, mask) in enumerate(ds.masks.items()):
        np.testing.assert_array_equal(lang[mask], np.broadcast_to(ds.label_features[k], lang[mask].shape))
    background = ~np.any(np.stack(list(ds.masks.values())), axis=0)
    assert not lang[background].any()


def test_rgb_is_textured_inside_objects_and_thermal_is_smooth():
    ds = generate(standard_fixture_spec(0))
    rgb_tv = total_variation(ds.images["rgb"].data)[0]
    thermal_tv = total_variation(ds.images["thermal"].data)[0]
    assert rgb_tv > thermal_tv
    for mask in ds.masks.values():
        if mask.sum() > 20:
            assert ds.images["rgb"].data[mask].std(axis=0).max() > 0.02


def test_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSceneSpec(label_table=(("a", (0, 0, 0)), ("b", (0.1, 0, 0))))
    with pytest.raises(ValueError):
        SyntheticSceneSpec(width=0)
    spec = small(seed=3)
    assert SyntheticSceneSpec.from_dict(spec.to_dict()) == spec


@given(st.integers(0, 2 ** 31))
def test_language_has_few_distinct_values(seed):
    ds = generate(small(seed=seed, n_objects=7))
    values = np.unique(ds.images["language"].data.reshape(-1, 3), axis=0)
    assert len(values) <= len(ds.spec.label_table) + 1


@given(st.integers(0, 2 ** 31))
def test_thermal_tv_decreases_with_blur(seed):
    tvs = [total_variation(generate(small(seed=seed, n_objects=3, thermal_blur_sigma=s))
                           .images["thermal"].data)[0] for s in (0.0, 1.0, 2.0, 4.0, 8.0)]
    assert all(a > b for a, b in zip(tvs, tvs[1:]))


def test_init_single_gaussian_sits_on_strongest_edge():
    ds = generate(small(seed=5))
    scene = init_scene_from_truth(ds.images, 1, seed=0)
    row, col = np.unravel_index(np.argmax(edge_strength(ds.images["rgb"])), (40, 48))
    np.testing.assert_allclose(scene.viewport.world_to_pixel(scene.means)[0], [col + 0.5, row + 0.5])


def test_init_is_seeded_and_matches_truth_pixels():
    ds = generate(small(seed=6))
    a = init_scene_from_truth(ds.images, 50, seed=4)
    assert a.equals(init_scene_from_truth(ds.images, 50, seed=4))
    assert not a.equals(init_scene_from_truth(ds.images, 50, seed=5))
    cols, rows = np.floor(a.viewport.world_to_pixel(a.means)).astype(int).T
    for d, feats in zip(a.modalities, a.features):
        np.testing.assert_array_equal(feats, ds.images[d.name].data[rows, cols])
    np.testing.assert_allclose(a.activated_opacity(), 0.1)
    assert len(np.unique(a.log_scales)) == 1


def test_init_rejects_bad_counts():
    ds = generate(small(width=4, height=4))
    with pytest.raises(ValueError):
        init_scene_from_truth(ds.images, 0)
    with pytest.raises(ValueError):
        init_scene_from_truth(ds.images, 17)
