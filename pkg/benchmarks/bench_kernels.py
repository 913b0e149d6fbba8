"""Time the numba and numpy rasterizer backends on a training-sized scene.

    python3 benchmarks/bench_kernels.py [--n 1500] [--size 128] [--repeat 5]

Both backends render and backpropagate every modality of the same scene;
the script also reports the largest output difference between them.
"""

import argparse
import os
import time

import numpy as np

from mmsplat import kernels
from mmsplat.autodiff import backward_modality
from mmsplat.rasterizer import render_modality
from mmsplat.synth import SyntheticSceneSpec, generate, init_scene_from_truth


def one_pass(scene, early_stop):
    out = []
    for d in scene.modalities:
        img, trace = render_modality(scene, d.id, early_stop=early_stop)
        gs = backward_modality(scene, d.id, trace, img.data - 0.5)
        out.append((img.data, gs.d_means))
    return out


def timed(scene, early_stop, repeat):
    one_pass(scene, early_stop)  # warm-up: JIT compile / caches
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        result = one_pass(scene, early_stop)
        best = min(best, time.perf_counter() - t0)
    return best, result


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=1500, help="Gaussians")
    p.add_argument("--size", type=int, default=128, help="image side in pixels")
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--numpy-repeat", type=int, default=1)
    args = p.parse_args()

    ds = generate(SyntheticSceneSpec(seed=0, width=args.size, height=args.size))
    scene = init_scene_from_truth(ds.images, args.n, seed=0)
    scene.indicator_logits[:] = 1.0  # closer to a trained scene than the 0.1 init
    print(f"{args.n} Gaussians, {args.size}x{args.size}, 3 modalities, forward + backward")

    results = {}
    for name, repeat in (("numba", args.repeat), ("numpy", args.numpy_repeat)):
        os.environ[kernels.BACKEND_ENV] = name
        seconds, out = timed(scene, 1e-4, repeat)
        results[name] = (seconds, out)
        print(f"  {name:6s} {seconds * 1e3:10.1f} ms / pass")
    diff = max(float(np.max(np.abs(a - b)))
               for (ia, ga), (ib, gb) in zip(results["numba"][1], results["numpy"][1])
               for a, b in ((ia, ib), (ga, gb)))
    print(f"  speedup {results['numpy'][0] / results['numba'][0]:.1f}x, max |difference| {diff:.1e}")


if __name__ == "__main__":
    main()
