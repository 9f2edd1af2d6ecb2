"""Command-line entry point.

Subcommands: make-toy-data, train, translate, interpolate, evaluate, serve.
Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .types import RelativeAttributes


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; we map usage errors to 1
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_rel_spec(spec: str, names) -> RelativeAttributes:
    """Parse "name=+1,name=-0.5" into a relative vector; omitted names stay 0."""
    values = np.zeros(len(names), dtype=np.float64)
    spec = (spec or "").strip()
    if not spec:
        return RelativeAttributes(values)
    index = {name: i for i, name in enumerate(names)}
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise UsageError(f"bad relative-attribute entry {part!r}; expected name=value")
        name, _, raw = part.partition("=")
        name = name.strip()
        if name not in index:
            raise UsageError(
                f"unknown attribute {name!r}; checkpoint knows {', '.join(names)}"
            )
        try:
            value = float(raw)
        except ValueError:
            raise UsageError(f"bad value {raw!r} for attribute {name!r}") from None
        if not -1.0 <= value <= 1.0:
            raise UsageError(
                f"value {value} for {name!r} out of range: relative values are in [-1, 1]"
            )
        values[index[name]] = value
    return RelativeAttributes(values)


def _coerce(value: str, target_type):
    if target_type is bool:
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"bad boolean {value!r}")
    if target_type is type(None):
        # optional numeric field left at its None default
        if value.lower() in ("none", "null", ""):
            return None
        return float(value)
    return target_type(value)


def load_train_config(path, overrides):
    from .trainer import TrainConfig

    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read config {path}: {e}") from e
    field_types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    concrete = {f.name: type(getattr(TrainConfig(), f.name)) for f in dataclasses.fields(TrainConfig)}
    unknown = set(raw) - set(field_types)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for item in overrides or ():
        if "=" not in item:
            raise UsageError(f"bad --override {item!r}; expected key=value")
        key, _, value = item.partition("=")
        if key not in field_types:
            raise UsageError(f"unknown config key {key!r}")
        raw[key] = _coerce(value, concrete[key])
    try:
        return TrainConfig(**raw)
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid training config: {e}") from e


def _load_dataset(selector: str, seed: int):
    """Dataset selector: "toy", "toy:DIR", or "folder:ATTR_FILE:IMAGE_DIR:SIZE"."""
    from .data import ToySpec, build_toy_dataset, load_image_folder, load_toy_dataset

    if selector == "toy":
        return build_toy_dataset(ToySpec(seed=seed), 4000, 500)
    if selector.startswith("toy:"):
        return load_toy_dataset(selector[len("toy:"):])
    if selector.startswith("folder:"):
        parts = selector.split(":")
        if len(parts) != 4:
            raise UsageError("folder selector must be folder:ATTR_FILE:IMAGE_DIR:SIZE")
        _, attr_file, image_dir, size = parts
        return load_image_folder(attr_file, image_dir, int(size))
    raise UsageError(f"unknown dataset selector {selector!r}")


def _cmd_make_toy_data(args) -> int:
    from .data import ToySpec, make_toy_dataset

    spec = ToySpec(n_attributes=args.n_attributes, image_size=args.image_size, seed=args.seed)
    manifest = make_toy_dataset(spec, args.train, args.eval, args.out)
    print(f"wrote {args.train}+{args.eval} images to {args.out} ({manifest.name})")
    return 0


def _cmd_train(args) -> int:
    from .trainer import train

    config = load_train_config(args.config, args.override)
    dataset = _load_dataset(config.dataset, config.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "train_log.jsonl", "a") as log:
        final = train(config, dataset, out, log_sink=log, resume_from=args.resume)
    print(f"finished {config.total_iterations} iterations; checkpoint at {final}")
    return 0


def _cmd_translate(args) -> int:
    from .data import load_png, save_png
    from .networks import generator_forward, load_models

    generator, _, payload = load_models(args.checkpoint)
    names = payload["attribute_names"]
    v = parse_rel_spec(args.rel, names)
    image = load_png(args.infile, size=generator.config.image_size)
    out = generator_forward(generator, image, v)
    save_png(out, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_interpolate(args) -> int:
    from .data import save_png
    from .data import load_png
    from .metrics import (
        interpolation_frames,
        interpolation_smoothness,
        sequences_from_frames,
    )
    from .networks import load_models
    from .report import montage
    from .types import ImageBatch

    if not 1 <= args.steps <= 50:
        raise UsageError(f"--steps must be in [1, 50], got {args.steps}")
    generator, _, payload = load_models(args.checkpoint)
    names = payload["attribute_names"]
    v = parse_rel_spec(args.rel, names)
    image = load_png(args.infile, size=generator.config.image_size)
    frames = interpolation_frames(generator, image, v, args.steps)
    seq = sequences_from_frames(frames)[0]
    sigma = interpolation_smoothness(seq)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        save_png(ImageBatch(frame), out / f"x_{i:02d}.png")
    strip = montage([seq.frames])
    from PIL import Image

    Image.fromarray(np.clip(strip * 255.0, 0, 255).astype(np.uint8)).save(out / "strip.png")
    print(json.dumps({"steps": args.steps, "sigma": sigma, "frames": args.steps + 1}))
    return 0


def _cmd_evaluate(args) -> int:
    from .data import ToyDataset
    from .networks import load_models
    from .report import run_evaluation, write_report

    generator, _, _ = load_models(args.checkpoint)
    dataset = _load_dataset(args.data, args.seed)
    if not isinstance(dataset, ToyDataset):
        # evaluation needs labeled train/eval splits to fit the probe classifier
        raise UsageError("evaluate requires a toy dataset selector (toy or toy:DIR)")
    report, artifacts = run_evaluation(
        generator, dataset,
        n_reconstruction=args.n_images, n_translation=args.n_images,
        n_interpolation=args.n_images, m=args.steps, seed=args.seed,
    )
    outputs = write_report(report, artifacts, args.report, figures=not args.no_figures)
    rec = report["reconstruction"]
    cls = report["classification"]["average"]
    print(f"reconstruction: L1 {rec['l1']:.4f}  L2 {rec['l2']:.5f}  SSIM {rec['ssim']:.3f}")
    print(f"translation:    target {cls['target_accuracy']:.3f}  preserved {cls['preservation']:.3f}")
    print(f"interpolation:  sigma {report['interpolation']['average']:.4f} (m={report['interpolation']['m']})")
    print(f"frechet:        {report['frechet']['value']:.3f} ({report['frechet']['embedder']})")
    print(f"report: {outputs['report']}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.checkpoint)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="relattr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-toy-data", help="render a synthetic attribute dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-attributes", type=int, default=4)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--train", type=int, default=4000)
    p.add_argument("--eval", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_make_toy_data)

    p = sub.add_parser("train", help="run the training loop")
    p.add_argument("--config", help="JSON file with training-config fields")
    p.add_argument("--override", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("translate", help="apply one relative edit to an image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--rel", default="", help='e.g. "warm_hue=+1,border=-1"; omitted names stay 0')
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_translate)

    p = sub.add_parser("interpolate", help="emit frames G(x, (i/m) v) and the smoothness score")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--rel", default="")
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_interpolate)

    p = sub.add_parser("evaluate", help="score a checkpoint and write report, CSV, figures")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--n-images", type=int, default=100)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("serve", help="serve translation over HTTP")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=_cmd_serve)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        raise
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
