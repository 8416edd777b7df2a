"""Command-line entry point.

Exit codes: 0 success, 1 config/data error, 2 usage error, 3 verification failure.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys

import numpy as np

from . import tensor as T
from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig
from .data import DatasetError, generate_dataset, load_dataset
from .imaging import NetpbmError, colorize_labels, read_ppm, write_pgm, write_ppm
from .metrics import fps_bench, label_boundary
from .model import SegModel, image_tensor
from .training import evaluate_model, run_ablation, run_training

EXIT_OK, EXIT_CONFIG, EXIT_USAGE, EXIT_VERIFY = 0, 1, 2, 3

log = logging.getLogger("boundseg")


def _load_config(path: str | None) -> RunConfig:
    return RunConfig.load(path) if path else RunConfig()


def _config_for_checkpoint(args) -> RunConfig:
    if args.config:
        return RunConfig.load(args.config)
    sidecar = os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)), "config.json")
    if os.path.exists(sidecar):
        return RunConfig.load(sidecar)
    raise ConfigError(f"no --config given and no config.json next to {args.checkpoint}")


def _load_model(args, run: RunConfig) -> SegModel:
    if getattr(args, "checkpoint", None):
        return SegModel.from_checkpoint(args.checkpoint, run.model)
    return SegModel(run.model, seed=run.train.seed)


def _bench(model: SegModel, run: RunConfig, warmup: int, timed: int) -> dict:
    x = image_tensor(np.full((*run.model.image_size, 3), 0.5))

    def forward():
        with T.no_grad():
            model.forward(x)

    return fps_bench(forward, warmup, timed, "float64", run.model.image_size)


def cmd_gen_data(args) -> int:
    run = _load_config(args.config)
    if args.out:
        run.data.data_dir = args.out
    manifest = generate_dataset(run.data)
    print(manifest)
    return EXIT_OK


def cmd_train(args) -> int:
    run = _load_config(args.config)
    if args.ablation:
        report = run_ablation(run, args.lambda3_values, args.seeds)
        print(json.dumps(report, indent=2))
        return EXIT_OK
    res = run_training(run)
    print(json.dumps({"out_dir": res.out_dir, "best_epoch": res.best_epoch,
                      "best_val_miou": res.best_val_miou, "loss_csv": res.loss_csv}, indent=2))
    return EXIT_OK


def cmd_eval(args) -> int:
    run = _config_for_checkpoint(args)
    if args.data_dir:
        run.train.data_dir = args.data_dir
    model = _load_model(args, run)
    splits = load_dataset(run.train.data_dir, run.model.num_classes)
    if args.split not in splits:
        raise DatasetError(f"split {args.split!r} not in manifest")
    rep = evaluate_model(model, splits[args.split])
    bench = _bench(model, run, args.warmup, args.timed)
    rep.fps = bench["fps"]
    rep.bench = bench
    text = rep.to_json()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def cmd_infer(args) -> int:
    run = _config_for_checkpoint(args)
    model = _load_model(args, run)
    os.makedirs(args.out_dir, exist_ok=True)
    if args.inputs:
        items = [(os.path.splitext(os.path.basename(p))[0], read_ppm(p)) for p in args.inputs]
    else:
        splits = load_dataset(args.data_dir or run.train.data_dir, run.model.num_classes)
        items = [(s.id, s.image) for s in splits[args.split][: args.limit]]
    for name, image in items:
        labels = model.predict(image)
        write_ppm(os.path.join(args.out_dir, f"{name}_pred.ppm"), colorize_labels(labels, run.model.num_classes))
        write_pgm(os.path.join(args.out_dir, f"{name}_boundary.pgm"), label_boundary(labels).astype(np.float64))
        print(os.path.join(args.out_dir, f"{name}_pred.ppm"))
    return EXIT_OK


def cmd_bench(args) -> int:
    run = _config_for_checkpoint(args) if args.checkpoint else _load_config(args.config)
    model = _load_model(args, run)
    print(json.dumps(_bench(model, run, args.warmup, args.timed), indent=2))
    return EXIT_OK


def cmd_verify(args) -> int:
    from . import verify

    suites = args.suites or list(verify.SUITES)
    unknown = [s for s in suites if s not in verify.SUITES]
    if unknown:
        print(f"unknown suite(s): {', '.join(unknown)}", file=sys.stderr)
        return EXIT_USAGE
    if args.inject_fault and args.inject_fault not in T.BACKWARD_RULES:
        print(f"unknown op {args.inject_fault!r}; choose from {', '.join(sorted(T.BACKWARD_RULES))}", file=sys.stderr)
        return EXIT_USAGE
    ok = True
    with T.inject_fault(args.inject_fault) if args.inject_fault else contextlib.nullcontext():
        for name in suites:
            res = verify.SUITES[name]()
            print(res.line(), flush=True)
            ok &= res.passed
    return EXIT_OK if ok else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="boundseg", description="Boundary-enhanced query segmentation at desk scale.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="{gen-data,train,eval,infer,bench,verify}")

    g = sub.add_parser("gen-data", help="write the synthetic dataset and manifest")
    g.add_argument("--config", help="JSON run configuration")
    g.add_argument("--out", help="override data_dir")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model (or the lambda3 ablation)")
    t.add_argument("--config", help="JSON run configuration")
    t.add_argument("--ablation", action="store_true", help="train one arm per --lambda3-values entry")
    t.add_argument("--lambda3-values", type=float, nargs="+", default=[0.0, 0.1])
    t.add_argument("--seeds", type=int, nargs="+", default=None, help="ablation seeds (default: seed, seed+1, seed+2)")
    t.set_defaults(func=cmd_train)

    for name, fn, hlp in (("eval", cmd_eval, "metrics JSON for one split"),
                          ("infer", cmd_infer, "colorized predictions and boundary maps"),
                          ("bench", cmd_bench, "forward-pass throughput")):
        c = sub.add_parser(name, help=hlp)
        c.add_argument("--checkpoint", required=name != "bench")
        c.add_argument("--config", help="JSON run configuration (default: config.json beside the checkpoint)")
        c.add_argument("--data-dir", help="override data_dir")
        c.set_defaults(func=fn)
        if name in ("eval", "bench"):
            c.add_argument("--warmup", type=int, default=5)
            c.add_argument("--timed", type=int, default=50)
        if name == "eval":
            c.add_argument("--split", default="val", choices=["train", "val", "test"])
            c.add_argument("--out", help="also write the JSON report here")
        if name == "infer":
            c.add_argument("--split", default="test", choices=["train", "val", "test"])
            c.add_argument("--limit", type=int, default=8)
            c.add_argument("--out-dir", required=True)
            c.add_argument("inputs", nargs="*", help="PPM images (default: samples from --split)")

    v = sub.add_parser("verify", help="gradient checks and oracle suites")
    v.add_argument("suites", nargs="*", help="subset of: ops composite conv sobel metrics")
    v.add_argument("--inject-fault", metavar="OP", help="scale OP's backward rule by 1.5 (self-test)")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, NetpbmError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
