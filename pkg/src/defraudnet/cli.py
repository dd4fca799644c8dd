"""Command-line entry point: synth, preprocess, train, eval, predict, inspect.

Exit status is 0 on success, 1 on a usage error and 2 on a runtime error.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys

from .errors import DeFraudNetError

SYNOPSIS = """\
usage: defraudnet <command> [options]

commands:
  synth       --out DIR --per-class N --delta D --seed S
  preprocess  --manifest F --cache DIR
  train       --manifest F [--config F] --out CKPT
  eval        --checkpoint CKPT --manifest F [--protocol auto] [--report out.json]
  predict     --checkpoint CKPT --image PATH
  inspect     --checkpoint CKPT
"""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _csv(text: str) -> list[str]:
    return [t for t in text.split(",") if t]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="defraudnet", description="Fingerprint liveness detection with patch-attention fusion.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic live/fake dataset")
    s.add_argument("--out", required=True, help="output directory (images + manifest.jsonl)")
    s.add_argument("--per-class", type=int, default=10, help="images per class and split per cell")
    s.add_argument("--delta", type=float, default=1.0, help="fake-vs-live separation, 0 makes classes identical")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--side", type=int, default=224, help="image side in pixels (>= 64, multiple of 4)")
    s.add_argument("--sensors", type=_csv, default=["synA"], help="comma-separated sensor ids")
    s.add_argument("--materials", type=_csv, default=["gelatin"], help="comma-separated fake materials")
    s.add_argument("--years", type=_csv, default=["2015"], help="comma-separated dataset years")
    s.add_argument("--splits", type=_csv, default=["train", "test"], help="comma-separated splits")

    s = sub.add_parser("preprocess", help="cache the 3-plane network inputs of a manifest")
    s.add_argument("--manifest", required=True, help="manifest.jsonl to read")
    s.add_argument("--cache", required=True, help="directory for the cached .npy inputs")
    s.add_argument("--image-size", type=int, default=224)

    s = sub.add_parser("train", help="train a model on the train split of a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--config", help='JSON file {"model": {...}, "train": {...}}')
    s.add_argument("--out", required=True, help="checkpoint path to write")
    s.add_argument("--cache", help="preprocess cache directory")
    s.add_argument("--log", help="epoch log path (JSON lines)")
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--momentum", type=float)
    s.add_argument("--weight-decay", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--fingerprints-per-step", type=int, help="fingerprints per joint batch and optimizer step")
    s.add_argument("--augment", action="store_const", const=True, help="random rotation/scale/shift per sample")

    s = sub.add_parser("eval", help="ACE report for a checkpoint on a manifest")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--protocol", default="auto", help="protocol label, or auto to infer it from metadata")
    s.add_argument("--split", default="test", help="split to score, or all")
    s.add_argument("--report", help="report path; the format follows the extension unless --format is given")
    s.add_argument("--format", choices=("json", "csv"))
    s.add_argument("--cache", help="preprocess cache directory")

    s = sub.add_parser("predict", help="classify one image")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--image", required=True)

    s = sub.add_parser("inspect", help="print a checkpoint's config and parameter count")
    s.add_argument("--checkpoint", required=True)
    return p


# ---------------------------------------------------------------- commands

def cmd_synth(args):
    from .synthetic import SynthConfig, generate_dataset

    cfg = SynthConfig(count=args.per_class, side=args.side, delta=args.delta, seed=args.seed)
    entries = generate_dataset(cfg, args.out, sensors=tuple(args.sensors), materials=tuple(args.materials),
                               years=tuple(args.years), splits=tuple(args.splits))
    print(f"wrote {len(entries)} images and {os.path.join(args.out, 'manifest.jsonl')}")


def cmd_preprocess(args):
    from .evaluation import DatasetManifest, cache_name
    from .imageio import load_image
    from .preproc import assemble_channels, write_cache

    manifest = DatasetManifest.load(args.manifest)
    os.makedirs(args.cache, exist_ok=True)
    for e in manifest.entries:
        path = manifest.resolve(e)
        planes = assemble_channels(load_image(path, min_side=64), size=args.image_size)
        write_cache(os.path.join(args.cache, cache_name(path)), planes)
    print(f"cached {len(manifest)} inputs in {args.cache}")


def _read_config(path) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    unknown = set(cfg) - {"model", "train"}
    if unknown:
        raise UsageError(f"config file {path}: unknown sections {sorted(unknown)}")
    return cfg


def cmd_train(args):
    from .evaluation import DatasetManifest, default_loader
    from .model import DeFraudNetConfig, build_model
    from .training import TrainConfig, save_checkpoint, train, write_epoch_log

    cfg = _read_config(args.config)
    model_cfg = DeFraudNetConfig.from_dict(cfg.get("model", {}))
    model_cfg.validate()
    tdict = dict(cfg.get("train", {}))
    for flag, key in (("epochs", "epochs"), ("lr", "lr"), ("momentum", "momentum"),
                      ("weight_decay", "weight_decay"), ("seed", "seed"), ("augment", "augment"),
                      ("fingerprints_per_step", "fingerprints_per_step")):
        if getattr(args, flag) is not None:
            tdict[key] = getattr(args, flag)
    tcfg = TrainConfig.from_dict(tdict)
    tcfg.validate()

    manifest = DatasetManifest.load(args.manifest)
    sub = manifest.split("train")
    if len(sub) == 0:
        sub = manifest
    load = default_loader(model_cfg.image_size, args.cache)
    data = [(load(sub.resolve(e)), e.label_index) for e in sub.entries]
    model = build_model(model_cfg, seed=tcfg.seed)
    result = train(model, data, tcfg)
    meta = {"train_meta": sub.metadata().to_dict(), "train_config": tcfg.to_dict()}
    save_checkpoint(args.out, result.model, result.state, len(result.log), result.rng_state, meta)
    if args.log:
        write_epoch_log(result.log, args.log)
    last = result.log[-1] if result.log else {"loss": float("nan"), "train_ace": float("nan")}
    print(f"trained {len(result.log)} epochs on {len(data)} images: "
          f"loss {last['loss']:.4f}, train ACE {last['train_ace']:.2f}; wrote {args.out}")


def cmd_eval(args):
    from .evaluation import PROTOCOLS, DatasetManifest, ManifestMeta, classify_protocol, default_loader, emit_report, evaluate
    from .training import load_checkpoint

    if args.protocol != "auto" and args.protocol not in PROTOCOLS:
        raise UsageError(f"--protocol must be 'auto' or one of {', '.join(PROTOCOLS)}")
    ckpt = load_checkpoint(args.checkpoint)
    manifest = DatasetManifest.load(args.manifest)
    split = None if args.split == "all" else args.split
    report = evaluate(ckpt.model, manifest, split=split,
                      loader=default_loader(ckpt.config.image_size, args.cache))
    train_meta = ckpt.meta.get("train_meta")
    if train_meta:
        tm = ManifestMeta.from_dict(train_meta)
        report.train_sensor = "+".join(sorted(tm.sensors))
        report.train_dataset = "+".join(sorted(tm.years))
    if args.protocol == "auto":
        report.protocol = classify_protocol(tm, manifest.split(split).metadata()) if train_meta else "other"
    else:
        report.protocol = args.protocol
    fmt = args.format or ("csv" if args.report and args.report.endswith(".csv") else "json")
    if args.report:
        emit_report([report], fmt, args.report)
    sys.stdout.write(emit_report([report], "csv"))
    if report.failures:
        print(f"{report.failures} entries could not be evaluated", file=sys.stderr)


def cmd_predict(args):
    from .imageio import load_image
    from .preproc import assemble_channels
    from .training import load_checkpoint

    ckpt = load_checkpoint(args.checkpoint)
    img = assemble_channels(load_image(args.image, min_side=64), size=ckpt.config.image_size)
    pred = ckpt.model.forward(img)
    print(f"label: {pred.label}")
    print(f"probability_fake: {pred.probability_fake:.6f}")
    print("patch_weights: " + " ".join(f"{w:.6f}" for w in pred.patch_weights))


def cmd_inspect(args):
    from .training import load_checkpoint

    ckpt = load_checkpoint(args.checkpoint)
    print(json.dumps({"model": ckpt.config.to_dict(), "epoch": ckpt.epoch, "meta": ckpt.meta}, indent=2))
    print(f"parameters: {ckpt.model.num_params()}")


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "inspect": cmd_inspect,
}


@contextlib.contextmanager
def thread_cap():
    """Honour ``DFN_THREADS`` by capping the BLAS thread pools."""
    n = os.environ.get("DFN_THREADS")
    if not n:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=max(1, int(n))):
        yield


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(SYNOPSIS)
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.command is None:
        sys.stderr.write(SYNOPSIS)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        with thread_cap():
            COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(SYNOPSIS)
        print(exc, file=sys.stderr)
        return 1
    except (DeFraudNetError, OSError, ValueError, KeyError) as exc:
        print(f"defraudnet {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
