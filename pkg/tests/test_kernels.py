import json
import os
import subprocess
import sys
import textwrap

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import naive_render, random_scene
from mmsplat import kernels
from mmsplat.autodiff import backward_modality
from mmsplat.rasterizer import render_modality


@pytest.fixture
def backend(monkeypatch):
    def use(name):
        monkeypatch.setenv(kernels.BACKEND_ENV, name)
    return use


def render_and_grads(scene, m, cutoff, early_stop, d_image):
    img, trace = render_modality(scene, m, cutoff, early_stop=early_stop)
    return img.data, trace, backward_modality(scene, m, trace, d_image)


def test_backend_selection(backend):
    backend("numpy")
    assert kernels.get() is kernels._numpy
    backend("numba")
    assert kernels.get() is kernels._numba
    backend("cuda")
    with pytest.raises(ValueError):
        kernels.get()


@settings(max_examples=40)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([0.0, 1.0 / 255.0]), st.sampled_from([0.0, 1e-4]))
def test_backends_agree(seed, cutoff, early_stop):
    rng = np.random.default_rng(seed)
    scene = random_scene(rng, width=int(rng.integers(4, 40)), height=int(rng.integers(4, 40)))
    m = int(rng.integers(scene.num_modalities))
    d = rng.normal(size=(scene.viewport.height, scene.viewport.width,
                         scene.modalities[m].feature_dim))
    old = os.environ.get(kernels.BACKEND_ENV)
    try:
        os.environ[kernels.BACKEND_ENV] = "numba"
        a_img, a_trace, a_gs = render_and_grads(scene, m, cutoff, early_stop, d)
        os.environ[kernels.BACKEND_ENV] = "numpy"
        b_img, b_trace, b_gs = render_and_grads(scene, m, cutoff, early_stop, d)
    finally:
        if old is None:
            os.environ.pop(kernels.BACKEND_ENV, None)
        else:
            os.environ[kernels.BACKEND_ENV] = old
    np.testing.assert_allclose(a_img, b_img, atol=1e-12, rtol=0)
    np.testing.assert_array_equal(a_trace.touched, b_trace.touched)
    for x, y in zip(a_gs.arrays(), b_gs.arrays()):
        np.testing.assert_allclose(x, y, atol=1e-10, rtol=1e-10)


def test_numpy_backend_matches_oracle(backend):
    backend("numpy")
    rng = np.random.default_rng(11)
    for _ in range(10):
        scene = random_scene(rng)
        np.testing.assert_allclose(render_modality(scene, 0, 0.0)[0].data, naive_render(scene, 0),
                                   atol=1e-6, rtol=0)


SCRIPT = textwrap.dedent("""
    import hashlib, json, sys
    import numpy as np
    sys.path.insert(0, {tests!r})
    from helpers import random_scene
    from mmsplat.autodiff import backward_modality
    from mmsplat.rasterizer import render_modality
    import numba
    h = hashlib.sha256()
    rng = np.random.default_rng(5)
    for _ in range(4):
        scene = random_scene(rng, n=300, width=96, height=80, n_modalities=3, max_px=10.0)
        for m in range(3):
            img, trace = render_modality(scene, m, early_stop=1e-4)
            gs = backward_modality(scene, m, trace, img.data - 0.5)
            h.update(img.data.tobytes())
            for a in gs.arrays():
                h.update(a.tobytes())
    print(json.dumps({{"digest": h.hexdigest(), "threads": numba.get_num_threads()}}))
""")


def run_with_threads(n, tests_dir):
    env = dict(os.environ, NUMBA_NUM_THREADS="4", MMSPLAT_NUM_THREADS=str(n), MMSPLAT_BACKEND="numba")
    out = subprocess.run([sys.executable, "-c", SCRIPT.format(tests=tests_dir)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def test_results_do_not_depend_on_worker_count():
    tests_dir = os.path.dirname(__file__)
    one, four = run_with_threads(1, tests_dir), run_with_threads(4, tests_dir)
    assert (one["threads"], four["threads"]) == (1, 4)
    assert one["digest"] == four["digest"]
