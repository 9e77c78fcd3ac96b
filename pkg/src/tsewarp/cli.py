"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .core import DataError, NumericError, TseError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _overrides(pairs):
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise UsageError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        out[k.strip().replace("-", "_")] = _parse_value(v)
    return out


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tsewarp", description="Time-weighted DTW nearest-centroid classification.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("gen-synth", help="write a seeded synthetic dataset",
                       description="Write a seeded synthetic dataset and its unweighted baseline accuracy.")
    g.add_argument("out", help="output directory")
    g.add_argument("--preset", choices=["default", "weight-sensitive"], default="default",
                   help="generator preset (default: %(default)s)")
    g.add_argument("--seed", type=int, default=None, help="root seed (default: preset's)")
    g.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a generator field")
    g.add_argument("--no-baseline", action="store_true", help="skip the unweighted baseline run")
    g.add_argument("--workers", type=_positive, default=None, help="thread bound for compiled kernels")

    i = sub.add_parser("init-centroids", help="barycenter-average class centroids",
                       description="Barycenter-average one centroid per class into a checkpoint file.")
    i.add_argument("data", help="dataset directory")
    i.add_argument("--out", required=True, help="checkpoint to write")
    i.add_argument("--seed", type=int, default=0, help="root seed (default: %(default)s)")
    i.add_argument("--samples-per-class", type=_positive, default=50, help="default: %(default)s")
    i.add_argument("--iterations", type=_positive, default=100, help="default: %(default)s")
    i.add_argument("--centroid-len", type=_positive, default=8, help="default: %(default)s")

    t = sub.add_parser("train", help="train centroids and weights",
                       description="Train centroids and log-weights; writes report.jsonl, "
                                   "loss_log.tsv, best.ckpt and last.ckpt into --out.")
    t.add_argument("data", help="dataset directory")
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--config", help="JSON file with training config keys")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    t.add_argument("--epochs", type=_positive, help="number of epochs")
    t.add_argument("--batch-size", type=_positive, help="mini-batch size")
    t.add_argument("--lr", type=float, help="learning rate of the log-weights")
    t.add_argument("--seed", type=int, help="root seed")
    t.add_argument("--weight-init", choices=["one", "random"], help="log-weight initialization")
    t.add_argument("--freeze-weights", action="store_true", help="never update the weights")
    t.add_argument("--freeze-centroids", action="store_true", help="never update the centroids")
    t.add_argument("--diagonal", action="store_true", help="allow diagonal transitions (reference engine)")
    t.add_argument("--no-fecw", action="store_true", help="take paths from live parameters every batch")
    t.add_argument("--init", help="checkpoint with initial centroids (skips barycenter averaging)")
    t.add_argument("--resume", help="checkpoint to resume; its config hash must match")
    t.add_argument("--workers", type=_positive, default=None, help="thread bound for compiled kernels")

    e = sub.add_parser("eval", help="evaluate a checkpoint", description="Top-1/top-k accuracy of a checkpoint.")
    e.add_argument("data", help="dataset directory")
    e.add_argument("--checkpoint", required=True, help="checkpoint file")
    e.add_argument("--split", choices=["train", "val"], default="val", help="default: %(default)s")
    e.add_argument("--topk", type=_positive, default=5, help="default: %(default)s")
    e.add_argument("--diagonal", action="store_true", help="allow diagonal transitions (reference engine)")
    e.add_argument("--workers", type=_positive, default=None, help="thread bound for compiled kernels")

    d = sub.add_parser("dist", help="warp distance between two TSE files",
                       description="Print the (weighted) warp distance between two TSE files.")
    d.add_argument("a", help="first TSE file (carries the weights)")
    d.add_argument("b", help="second TSE file")
    d.add_argument("--weights", help="TSE file of positive weights shaped like A")
    d.add_argument("--diagonal", action="store_true", help="allow diagonal transitions")
    d.add_argument("--engine", choices=["reference", "wavefront"], default="reference",
                   help="default: %(default)s")
    d.add_argument("--path", action="store_true", help="also print the optimal path")

    b = sub.add_parser("bench", help="wavefront vs reference throughput",
                       description="Time batched wavefront evaluation against the single-threaded "
                                   "reference after checking that both agree.")
    b.add_argument("--n", type=_positive, default=512, help="centroid length (default: %(default)s)")
    b.add_argument("--m", type=_positive, default=512, help="sample length (default: %(default)s)")
    b.add_argument("--nf", type=_positive, default=64, help="features (default: %(default)s)")
    b.add_argument("--pairs", type=_positive, default=64, help="(sample, class) pairs (default: %(default)s)")
    b.add_argument("--repeat", type=_positive, default=3, help="timed repetitions (default: %(default)s)")
    b.add_argument("--workers", type=_positive, default=None, help="wavefront threads (default: all)")
    b.add_argument("--dtype", choices=["float64", "float32"], default="float64", help="default: %(default)s")
    b.add_argument("--seed", type=int, default=0, help="default: %(default)s")
    return p


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_synth(args):
    from .synth import PRESETS, SynthSpec, generate_synthetic

    spec = PRESETS[args.preset]
    kw = _overrides(args.set)
    if args.seed is not None:
        kw["seed"] = args.seed
    unknown = set(kw) - set(SynthSpec.__dataclass_fields__)
    if unknown:
        raise UsageError(f"unknown generator fields: {', '.join(sorted(unknown))}")
    try:
        spec = replace(spec, **kw)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    out = generate_synthetic(spec, args.out)
    print(f"wrote {spec.n_classes * spec.samples_per_class} samples to {out}")
    if not args.no_baseline:
        from .dataio import load_dataset
        from .dba import init_all_centroids
        from .trainer import TrainConfig, evaluate, init_state

        ds = load_dataset(out)
        cfg = TrainConfig(seed=spec.seed, centroid_len=spec.centroid_len)
        state = init_state(init_all_centroids(ds, cfg.dba()), cfg)
        ev = evaluate(state, ds.split("val"), k=cfg.topk, workers=args.workers)
        baseline = {"unweighted_top1": ev.top1, "unweighted_topk": ev.topk, "k": ev.k}
        (out / "baseline.json").write_text(json.dumps(baseline, sort_keys=True) + "\n", encoding="utf-8")
        print(f"unweighted nearest-centroid baseline top1={ev.top1:.4f}")
    return EXIT_OK


def cmd_init_centroids(args):
    from .dataio import load_dataset, save_checkpoint
    from .dba import DbaConfig, init_all_centroids
    from .trainer import TrainConfig, init_state

    ds = load_dataset(args.data)
    cfg = DbaConfig(args.samples_per_class, args.iterations, args.centroid_len, args.seed)
    C = init_all_centroids(ds, cfg)
    state = init_state(C, TrainConfig(seed=args.seed, centroid_len=args.centroid_len))
    state.config_hash = ""
    save_checkpoint(state, args.out)
    print(f"wrote {C.shape[0]} centroids of shape {C.shape[1:]} to {args.out}")
    return EXIT_OK


def resolve_train_config(args):
    from .trainer import TrainConfig

    d = TrainConfig().to_dict()
    if args.config:
        try:
            file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read config {args.config}: {exc}") from exc
        d.update(file_cfg)
    d.update(_overrides(args.set))
    flags = {"epochs": args.epochs, "batch_size": args.batch_size, "lr_logw": args.lr,
             "seed": args.seed, "weight_init": args.weight_init}
    d.update({k: v for k, v in flags.items() if v is not None})
    if args.freeze_weights:
        d["freeze_weights"] = True
    if args.freeze_centroids:
        d["freeze_centroids"] = True
    if args.diagonal:
        d["allow_diagonal"] = True
    if args.no_fecw:
        d["fecw"] = False
    try:
        return TrainConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def cmd_train(args):
    from .dataio import load_checkpoint, load_dataset
    from .trainer import run_training

    cfg = resolve_train_config(args)
    print(json.dumps({"config": cfg.to_dict(), "config_hash": cfg.hash()}, sort_keys=True))
    ds = load_dataset(args.data)
    init = load_checkpoint(args.init) if args.init else None
    resume = load_checkpoint(args.resume, expected_hash=cfg.hash()) if args.resume else None
    report = run_training(ds, cfg, out_dir=args.out, init=init, resume=resume, workers=args.workers)
    print(json.dumps(report.summary(), sort_keys=True))
    return EXIT_OK


def cmd_eval(args):
    from .dataio import load_checkpoint, load_dataset
    from .trainer import evaluate

    ds = load_dataset(args.data)
    state = load_checkpoint(args.checkpoint)
    if state.C.shape[2] != ds.n_features or state.C.shape[0] != ds.n_classes:
        raise DataError(f"checkpoint shape {state.C.shape} does not fit dataset "
                        f"({ds.n_classes} classes, {ds.n_features} features)")
    ev = evaluate(state, ds.split(args.split), k=args.topk, class_names=ds.class_names,
                  allow_diagonal=args.diagonal, workers=args.workers)
    print(json.dumps({"split": args.split, **ev.to_dict()}, sort_keys=True))
    return EXIT_OK


def cmd_dist(args):
    from .dataio import read_tse
    from .kernel import dtw_reference, dtw_wavefront, extract_path

    if args.engine == "wavefront" and args.diagonal:
        raise UsageError("--diagonal is only supported by the reference engine")
    a = read_tse(args.a)
    b = read_tse(args.b)
    u = read_tse(args.weights).data if args.weights else None
    if u is not None and np.any(u <= 0):
        raise DataError("weights must be strictly positive")
    try:
        if args.engine == "wavefront":
            dist, result = dtw_wavefront(a, b, u)
        else:
            dist, result = dtw_reference(a, b, u, allow_diagonal=args.diagonal)
    except TseError as exc:
        raise DataError(str(exc)) from exc
    print(f"{dist:.12f}")
    if args.path:
        print(" ".join(f"({i},{j})" for i, j in extract_path(result).cells))
    return EXIT_OK


def cmd_bench(args):
    from .bench import run_bench

    res = run_bench(args.n, args.m, args.nf, args.pairs, args.repeat, args.workers, args.dtype, args.seed)
    print(res.table())
    return EXIT_OK


COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "init-centroids": cmd_init_centroids,
    "train": cmd_train,
    "eval": cmd_eval,
    "dist": cmd_dist,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"tsewarp: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"tsewarp: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (TseError, OSError) as exc:
        print(f"tsewarp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"tsewarp: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
