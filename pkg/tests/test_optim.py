import numpy as np
import pytest

from helpers import random_scene
from mmsplat.autodiff import GradientSet
from mmsplat.optim import Adam, exponential_lr, group_names
from mmsplat.scene import Mode

LRS = {"means": 1e-3, "log_scales": 5e-3, "rotations": 1e-3, "opacity_logits": 5e-2,
       "indicator_logits": 5e-2, "features": 2.5e-3}


def scene_and_grads(seed=0, mode=Mode.PER_MODALITY_INDICATOR):
    rng = np.random.default_rng(seed)
    scene = random_scene(rng, n=5, n_modalities=3, mode=mode, p_off=0.0)
    gs = GradientSet.zeros(scene)
    for arr in gs.arrays():
        arr[:] = rng.normal(size=arr.shape)
    return scene, gs


def test_zero_gradients_leave_parameters_unchanged():
    scene, _ = scene_and_grads()
    before = scene.copy()
    Adam().step(scene, GradientSet.zeros(scene), LRS)
    assert scene.equals(before)


def test_constant_gradient_step_approaches_lr():
    scene, _ = scene_and_grads()
    gs = GradientSet.zeros(scene)
    gs.d_rotations[:] = 0.37
    opt = Adam()
    steps = []
    for _ in range(50):
        before = scene.rotations[0]
        opt.step(scene, gs, LRS)
        steps.append(before - scene.rotations[0])
    np.testing.assert_allclose(steps, LRS["rotations"], rtol=1e-9)


def test_off_slots_are_frozen_for_100_steps():
    scene, gs = scene_and_grads(1)
    scene.indicator_on[1, 2] = False
    scene.indicator_on[3, :] = False
    frozen_logit = scene.indicator_logits[1, 2]
    frozen_feat = scene.features[2][1].copy()
    frozen_row = scene.take([3])
    opt = Adam()
    for _ in range(100):
        opt.step(scene, gs, LRS)
    assert scene.indicator_logits[1, 2] == frozen_logit
    np.testing.assert_array_equal(scene.features[2][1], frozen_feat)
    assert scene.take([3]).equals(frozen_row)


def test_non_finite_gradient_names_the_gaussian():
    scene, gs = scene_and_grads(2)
    before = scene.copy()
    gs.d_features[1][3, 0] = np.nan
    with pytest.raises(FloatingPointError, match="Gaussian 3"):
        Adam().step(scene, gs, LRS)
    assert scene.equals(before)


def test_shared_mode_updates_opacity_not_indicators():
    scene, gs = scene_and_grads(3, Mode.SHARED_OPACITY)
    assert "opacity_logits" in group_names(scene) and "indicator_logits" not in group_names(scene)
    before = scene.copy()
    Adam().step(scene, gs, LRS)
    np.testing.assert_array_equal(scene.indicator_logits, before.indicator_logits)
    assert not np.array_equal(scene.opacity_logits, before.opacity_logits)


def test_remap_and_state_round_trip():
    scene, gs = scene_and_grads(4)
    opt = Adam()
    opt.step(scene, gs, LRS)
    old = opt.exp_avg["means"].copy()
    opt.remap(np.array([0, 0, 4]), np.array([False, True, False]))
    np.testing.assert_array_equal(opt.exp_avg["means"], [old[0], [0, 0], old[4]])
    state = opt.state_dict()
    again = Adam.from_state(state["meta"], state["arrays"])
    assert again.steps == opt.steps
    for name in opt.exp_avg:
        np.testing.assert_array_equal(again.exp_avg[name], opt.exp_avg[name])
        np.testing.assert_array_equal(again.exp_avg_sq[name], opt.exp_avg_sq[name])


def test_exponential_lr_endpoints():
    assert exponential_lr(0, 100, 1.6e-4, 1.6e-6) == pytest.approx(1.6e-4)
    assert exponential_lr(100, 100, 1.6e-4, 1.6e-6) == pytest.approx(1.6e-6)
    assert exponential_lr(50, 100, 1.6e-4, 1.6e-6) == pytest.approx(1.6e-5)
