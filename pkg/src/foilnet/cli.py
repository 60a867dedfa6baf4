"""Command-line pipeline: gen-data, train, eval, infer, bench, inspect.

Flag precedence is flags > --config file ("key = value" lines, keys named
after the long flags with dashes as underscores) > built-in defaults.
Errors derived from FoilnetError exit with code 1 and a one-line cause;
usage errors (unknown flags/commands) exit with code 2.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluate as ev
from .data import (Dataset, FlowSample, generate_dataset, normalize_sample,
                   read_manifest, read_sample, write_sample)
from .errors import ConfigInvalid, FoilnetError
from .train import TrainConfig, multi_seed
from .train import train as run_training
from .unet import UNetConfig, build, count_parameters, load_checkpoint


def _parse_config_file(path: str) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigInvalid(f"cannot read config {path}: {e}") from e
    out = {}
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigInvalid(f"{path}:{ln}: expected 'key = value', got {line!r}")
        k, _, v = line.partition("=")
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def _merge(args: argparse.Namespace, defaults: dict[str, object]) -> argparse.Namespace:
    """Fill in None-valued flags from --config, then from defaults."""
    cfg = _parse_config_file(args.config) if getattr(args, "config", None) else {}
    unknown = set(cfg) - set(defaults)
    if unknown:
        raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
    for name, default in defaults.items():
        if getattr(args, name, None) is not None:
            continue
        if name in cfg:
            cast = type(default) if default is not None else str
            if cast is bool:
                value = cfg[name].lower() in ("1", "true", "yes")
            else:
                value = cast(cfg[name])
        else:
            value = default
        setattr(args, name, value)
    return args


def _cmd_gen_data(args) -> int:
    _merge(args, {"airfoils": "airfoils", "out": "dataset", "count": 890,
                  "seed": 0, "variant": "C", "shear": "none",
                  "test_shapes": None, "jobs": os.cpu_count() or 1})
    manifest = generate_dataset(args.airfoils, args.out, count=args.count,
                                seed=args.seed, variant=args.variant,
                                shear_mode=args.shear,
                                test_shapes_path=args.test_shapes,
                                jobs=max(1, args.jobs))
    m = read_manifest(manifest)
    per = {sp: sum(e.split == sp for e in m.entries) for sp in ("train", "val", "test")}
    print(f"wrote {len(m.entries)} samples ({per['train']} train / {per['val']} val / "
          f"{per['test']} test), variant {m.variant}")
    print(manifest)
    return 0


def _cmd_train(args) -> int:
    _merge(args, {"data": "dataset/manifest.txt", "ci": 5, "iters": 4_000,
                  "batch": 10, "lr": 4e-4, "seed": 0, "runs": 1, "out": "runs"})
    config = TrainConfig(data=args.data, out_dir=args.out,
                         channel_exponent=args.ci, iterations=args.iters,
                         batch_size=args.batch, lr=args.lr, seed=args.seed)
    if args.runs > 1:
        result = multi_seed(config, n_runs=args.runs)
        for rec in result.records:
            print(f"seed {rec.seed}: final train {rec.final_train_loss:.6g}, "
                  f"checkpoint {rec.final_checkpoint}")
        print(f"final validation loss over {args.runs} runs: "
              f"mean {result.mean:.6g} sem {result.sem:.6g}")
    else:
        rec = run_training(config)
        line = f"final train loss {rec.final_train_loss:.6g}"
        try:
            line += f", final val loss {rec.final_val_loss:.6g}"
        except FoilnetError:
            pass
        print(line)
        print(rec.final_checkpoint)
    return 0


def _cmd_eval(args) -> int:
    _merge(args, {"ckpt": None, "data": None, "split": "test", "out": None,
                  "images": None, "image_count": 1})
    if not args.ckpt or not args.data:
        raise ConfigInvalid("eval needs --ckpt and --data")
    model, _ = load_checkpoint(args.ckpt)
    dataset = Dataset(args.data)
    report = ev.evaluate_model(model, dataset, split=args.split)
    sys.stdout.write(report.to_text())
    if args.out:
        report.write(args.out)
    if args.images:
        idx = dataset.split_indices[args.split][:max(0, args.image_count)]
        outputs = ev.predict(model, dataset.inputs[idx])
        for row, i in enumerate(idx):
            ev.export_field_images(dataset.targets[i], outputs[row],
                                   f"{args.images}_{int(i):05d}")
    return 0


def _cmd_infer(args) -> int:
    _merge(args, {"ckpt": None, "sample": None, "out": "prediction.dfp",
                  "images": None})
    if not args.ckpt or not args.sample:
        raise ConfigInvalid("infer needs --ckpt and --sample")
    model, meta = load_checkpoint(args.ckpt)
    variant = meta.get("variant", "A")
    norms = np.array([float(meta[f"norm_{n}"]) for n in
                      ("mask", "in_vx", "in_vy", "pressure", "vel_x", "vel_y")])
    sample = read_sample(args.sample, variant)
    normed = normalize_sample(sample, norms)
    out = ev.predict(model, normed.input[None])[0]
    predicted = FlowSample(input=sample.input,
                           target=np.asarray(out * norms[3:, None, None], dtype=np.float32),
                           freestream=sample.freestream,
                           shape_name=sample.shape_name, variant=variant)
    write_sample(args.out, predicted)
    print(args.out)
    if args.images:
        ev.export_field_images(normed.target, out, args.images)
    return 0


def _cmd_bench(args) -> int:
    _merge(args, {"ckpt": None, "ci": 5, "resolution": 128, "batches": "1,8",
                  "repeats": 20})
    if args.ckpt:
        model, _ = load_checkpoint(args.ckpt)
    else:
        model = build(UNetConfig(channel_exponent=args.ci, resolution=args.resolution))
    sizes = tuple(int(s) for s in str(args.batches).split(",") if s)
    print(f"parameters {count_parameters(model)}")
    print("batch_size median_ms_per_sample mean_ms_per_sample min_ms_per_sample")
    for row in ev.bench_inference(model, sizes, repeats=args.repeats):
        print(f"{int(row['batch_size'])} {row['median_ms_per_sample']:.3f} "
              f"{row['mean_ms_per_sample']:.3f} {row['min_ms_per_sample']:.3f}")
    return 0


def _cmd_inspect(args) -> int:
    _merge(args, {"ckpt": None, "data": None})
    if args.ckpt:
        model, meta = load_checkpoint(args.ckpt)
        cfg = model.config
        print(f"checkpoint {args.ckpt}")
        print(f"channel_exponent {cfg.channel_exponent}")
        print(f"resolution {cfg.resolution}")
        print(f"parameters {count_parameters(model)}")
        for k in sorted(meta):
            print(f"meta.{k} {meta[k]}")
    if args.data:
        m = read_manifest(args.data)
        print(f"manifest {args.data}")
        print(f"variant {m.variant}")
        print(f"seed {m.seed}")
        print(f"resolution {m.resolution}")
        for sp in ("train", "val", "test"):
            print(f"{sp} {sum(e.split == sp for e in m.entries)}")
        if m.norms is not None:
            for name, c in zip(("mask", "in_vx", "in_vy", "pressure", "vel_x", "vel_y"), m.norms):
                print(f"norm_{name} {float(c):.9g}")
    if not args.ckpt and not args.data:
        raise ConfigInvalid("inspect needs --ckpt and/or --data")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="foilnet",
                                     description="Airfoil flow surrogate pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a dataset from airfoil files")
    p.add_argument("--airfoils")
    p.add_argument("--out")
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", choices=("A", "B", "C"))
    p.add_argument("--shear", choices=("none", "mixed", "only"))
    p.add_argument("--test-shapes", dest="test_shapes")
    p.add_argument("--jobs", type=int)
    p.add_argument("--config")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--data")
    p.add_argument("--ci", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--out")
    p.add_argument("--config")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--ckpt")
    p.add_argument("--data")
    p.add_argument("--split", choices=("train", "val", "test"))
    p.add_argument("--out")
    p.add_argument("--images")
    p.add_argument("--image-count", dest="image_count", type=int)
    p.add_argument("--config")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("infer", help="run one sample file through a checkpoint")
    p.add_argument("--ckpt")
    p.add_argument("--sample")
    p.add_argument("--out")
    p.add_argument("--images")
    p.add_argument("--config")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("bench", help="benchmark inference latency")
    p.add_argument("--ckpt")
    p.add_argument("--ci", type=int)
    p.add_argument("--resolution", type=int)
    p.add_argument("--batches")
    p.add_argument("--repeats", type=int)
    p.add_argument("--config")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("inspect", help="print checkpoint / manifest metadata")
    p.add_argument("--ckpt")
    p.add_argument("--data")
    p.add_argument("--config")
    p.set_defaults(func=_cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FoilnetError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
