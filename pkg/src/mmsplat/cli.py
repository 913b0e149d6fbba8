"""Command-line entry point: ``mmsplat <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


def _base_config(args):
    from .config import TrainConfig, load_config, method_config

    cfg = load_config(args.config) if getattr(args, "config", None) else TrainConfig()
    if getattr(args, "method", None):
        cfg = method_config(args.method, cfg)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "iterations", None) is not None:
        # keep the densify window inside a shortened run
        n = args.iterations
        overrides.update(iterations=n, densify_start=min(cfg.densify_start, n),
                         densify_stop=min(cfg.densify_stop, n))
    return cfg.with_overrides(overrides) if overrides else cfg


def cmd_generate(args) -> int:
    from . import io
    from .scene import standard_modalities
    from .synth import SyntheticSceneSpec, generate

    spec = {"seed": args.seed}
    if args.spec:
        import yaml
        try:
            spec.update(yaml.safe_load(Path(args.spec).read_text()) or {})
        except (OSError, yaml.YAMLError) as exc:
            raise _ConfigFailure(f"cannot read fixture spec: {exc}") from exc
    for key in ("width", "height", "n_objects", "noise_sigma"):
        value = getattr(args, key)
        if value is not None:
            spec[key] = value
    try:
        spec = SyntheticSceneSpec.from_dict(spec)
    except (TypeError, ValueError) as exc:
        raise _ConfigFailure(str(exc)) from exc
    io.save_dataset(generate(spec), args.out, standard_modalities())
    print(f"wrote fixture (seed {spec.seed}, {spec.width}x{spec.height}) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .config import save_config
    from .train import train

    cfg = _base_config(args)

    def progress(it, report, n):
        print(f"iter {it:5d}  loss {report.total:.6f}  gaussians {n}", flush=True)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.yaml")
    run = train(cfg, args.data, out, stop_after=args.stop_after, resume_from=args.resume,
                progress=None if args.quiet else progress)
    _print_metrics(run)
    print(f"checkpoint: {out / 'checkpoint.npz'}")
    return EXIT_OK


def cmd_render(args) -> int:
    from . import io
    from .rasterizer import DEFAULT_CUTOFF, render_modality

    scene, _, _ = io.load_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = args.modality or [d.name for d in scene.modalities]
    for name in names:
        try:
            desc = scene.modality(name)
        except KeyError:
            raise io.DataError(f"checkpoint has no modality {name!r}") from None
        img, _ = render_modality(scene, desc.id, DEFAULT_CUTOFF)
        io.write_raster(out / name, img, name=name)
        if img.channels in (1, 3):
            io.write_png(out / f"{name}.png", img)
        print(f"rendered {name} -> {out / name}.raw")
    return EXIT_OK


def cmd_eval(args) -> int:
    from . import io
    from .train import evaluate

    run = evaluate(args.checkpoint, args.data)
    _print_metrics(run)
    if args.out:
        io.write_json(args.out, run.to_dict(timing=False))
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .config import ablation_matrix, load_matrix
    from .train import ablate

    base = _base_config(args)
    rows = load_matrix(args.matrix, base) if args.matrix else ablation_matrix(base)
    if args.rows:
        known = dict(rows)
        missing = [r for r in args.rows if r not in known]
        if missing:
            raise _ConfigFailure(f"unknown rows {missing}; have {list(known)}")
        rows = [(r, known[r]) for r in args.rows]

    def progress(row):
        print(json.dumps(row), flush=True)

    table = ablate(rows, args.data, args.out, progress=progress)
    print(f"table: {Path(args.out) / 'ablation.csv'}")
    return EXIT_OK if all(r["status"] == "ok" for r in table) else 1


def cmd_calibrate(args) -> int:
    from .train import calibrate_thresholds

    result = calibrate_thresholds(_base_config(args), args.data, iterations=args.warmup)
    print(json.dumps(result, indent=2))
    return EXIT_OK


def _print_metrics(run) -> None:
    for name, vals in run.metrics.items():
        print(name.ljust(10) + "  ".join(f"{k} {v:.4f}" for k, v in vals.items()))
    print(f"gaussians {run.n_gaussians}")


class _ConfigFailure(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmsplat", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, help="worker threads (sets MMSPLAT_NUM_THREADS)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic fixture dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--spec", help="YAML file with fixture parameters")
    g.add_argument("--width", type=int)
    g.add_argument("--height", type=int)
    g.add_argument("--n-objects", dest="n_objects", type=int)
    g.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    g.set_defaults(func=cmd_generate)

    def config_args(sp):
        sp.add_argument("--config", help="YAML/JSON training config")
        sp.add_argument("--method", help="ablation row preset (MM-J, +MM, Prune(H), Prune(S), Decomp.)")
        sp.add_argument("--iterations", type=int,
                        help="override the iteration count; the densify window is clipped to it")
        sp.add_argument("--seed", type=int)

    t = sub.add_parser("train", help="optimize a scene against a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    config_args(t)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--stop-after", dest="stop_after", type=int)
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("render", help="render a checkpoint to rasters and PNGs")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--modality", action="append")
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("eval", help="metrics of a checkpoint against a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", help="write the report as JSON")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train a matrix of configurations")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--matrix", help="YAML matrix file; default is the five method rows")
    a.add_argument("--rows", nargs="+", help="subset of row names")
    config_args(a)
    a.set_defaults(func=cmd_ablate)

    c = sub.add_parser("calibrate-thresholds", help="quantiles of the densification signals")
    c.add_argument("--data", required=True)
    c.add_argument("--warmup", type=int, default=200)
    config_args(c)
    c.set_defaults(func=cmd_calibrate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads:
        os.environ["MMSPLAT_NUM_THREADS"] = str(args.threads)
    from .config import ConfigError
    from .io import DataError

    try:
        return args.func(args)
    except (ConfigError, _ConfigFailure) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
