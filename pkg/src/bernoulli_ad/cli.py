"""Command-line entry point: ``bernoulli-ad <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import RunConfig
from .datagen import PhantomSpec, make_splits
from .denoiser import ConvDenoiser
from .diffusion import generate
from .eval import (AGGREGATE_FIELDS, ROW_FIELDS, MetricsRow, dice, grid_search, psnr,
                   rows_to_csv)
from .anomaly import detect
from .codec import binarize
from .rng import RngStream
from .training import train_diffusion

logger = logging.getLogger("bernoulli_ad")

STOCHASTIC = {"datagen", "train-ae", "train-diffusion", "sample", "detect", "eval", "gridsearch"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n\n{self.format_help()}")


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser():
    p = _Parser(prog="bernoulli-ad", description="Masked Bernoulli latent diffusion anomaly detection")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, seed=True):
        sp.add_argument("--config", help="key = value run configuration file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
        if seed:
            sp.add_argument("--seed", type=int)
        return sp

    sp = common(sub.add_parser("datagen", help="write a synthetic phantom dataset"))
    sp.add_argument("--out", required=True)
    sp.add_argument("--n-train", type=int, default=64)
    sp.add_argument("--n-healthy", type=int, default=32)
    sp.add_argument("--n-anomalous", type=int, default=32)
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--channels", type=int, default=1)

    sp = common(sub.add_parser("train-ae", help="fit the codec on healthy images"))
    sp.add_argument("--data", help="BDT1 file of training images (n, c, h, w)")
    sp.add_argument("--out", help="codec directory")

    sp = common(sub.add_parser("train-diffusion", help="train the flip predictor"))
    sp.add_argument("--data")
    sp.add_argument("--codec")
    sp.add_argument("--out", help="model checkpoint directory")

    sp = common(sub.add_parser("sample", help="generate images from noise"))
    sp.add_argument("--model")
    sp.add_argument("--codec")
    sp.add_argument("--n", type=int, default=4)
    sp.add_argument("--out", required=True)

    sp = common(sub.add_parser("detect", help="run masked inference on images"))
    sp.add_argument("--input", required=True)
    sp.add_argument("--truth", help="optional BDT1 ground-truth masks")
    sp.add_argument("--model")
    sp.add_argument("--codec")
    sp.add_argument("--out", required=True)
    sp.add_argument("--L", type=int)
    sp.add_argument("--P", type=float)
    sp.add_argument("--unmasked", action="store_true")

    for name, helptext in (("eval", "score a labelled test set at one (P, L)"),
                           ("gridsearch", "score a labelled test set over a (P, L) grid")):
        sp = common(sub.add_parser(name, help=helptext))
        sp.add_argument("--data", help="dataset directory written by datagen")
        sp.add_argument("--model")
        sp.add_argument("--codec")
        sp.add_argument("--out", required=True)
        sp.add_argument("--timing", action="store_true", help="record wall-clock seconds")
        if name == "eval":
            sp.add_argument("--L", type=int)
            sp.add_argument("--P", type=float)
        else:
            sp.add_argument("--P", type=_floats, required=True, help="comma-separated thresholds")
            sp.add_argument("--L", type=_ints, required=True, help="comma-separated noise levels")

    sp = common(sub.add_parser("schedule-dump", help="write the schedule as CSV"), seed=False)
    sp.add_argument("--out", help="CSV path (stdout if omitted)")
    return p


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    try:
        cfg.update_from(overrides)
    except io.FormatError as exc:
        raise UsageError(str(exc)) from exc
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    for flag, key in (("L", "inference.L"), ("P", "inference.P")):
        v = getattr(args, flag, None)
        if v is not None and not isinstance(v, list):
            cfg[key] = v
    return cfg


def _path(args, attr, cfg, key, what):
    value = getattr(args, attr, None) or cfg[key]
    if not value:
        raise UsageError(f"missing {what}: pass --{attr} or set {key}")
    return Path(value)


def _load_model(args, cfg):
    den, sched, _ = io.load_checkpoint(_path(args, "model", cfg, "paths.model", "model"))
    codec = io.load_codec(_path(args, "codec", cfg, "paths.codec", "codec"))
    return den, sched, codec


def cmd_datagen(args, cfg):
    spec = PhantomSpec(size=args.size, channels=args.channels, seed=cfg["seed"])
    splits = make_splits(spec, args.n_train, args.n_healthy, args.n_anomalous, cfg["seed"])
    out = Path(args.out)
    io.write_tensor(out / "train.bdt", splits["train"], "float64")
    io.write_tensor(out / "test_healthy.bdt", splits["test_healthy"], "float64")
    io.write_tensor(out / "test_anomalous.bdt", splits["test_anomalous"], "float64")
    io.write_tensor(out / "test_masks.bdt", splits["test_masks"].astype(np.uint8), "bits")
    for i in range(min(4, args.n_anomalous)):
        io.write_image_pgms(out / "previews" / f"anomalous-{i:04d}", splits["test_anomalous"][i])
        io.write_pgm(out / "previews" / f"anomalous-{i:04d}_truth.pgm", splits["test_masks"][i])
    for i in range(min(4, args.n_train)):
        io.write_image_pgms(out / "previews" / f"train-{i:04d}", splits["train"][i])
    print(f"wrote dataset to {out}")


def cmd_train_ae(args, cfg):
    X = io.read_tensor(_path(args, "data", cfg, "paths.data", "training images"))
    codec = cfg.codec()
    codec.fit(X)
    out = _path(args, "out", cfg, "paths.codec", "codec output directory")
    io.save_codec(out, codec)
    if hasattr(codec, "loss_history_"):
        io.atomic_write_text(out / "loss.csv", "iteration,loss\n" + "".join(
            f"{i + 1},{float(v)!r}\n" for i, v in enumerate(codec.loss_history_)))
    print(f"wrote codec to {out}")


def cmd_train_diffusion(args, cfg):
    X = io.read_tensor(_path(args, "data", cfg, "paths.data", "training images"))
    codec = io.load_codec(_path(args, "codec", cfg, "paths.codec", "codec"))
    rng = RngStream(cfg["seed"]).child("encode-train")
    Z = binarize(codec.encode(X), cfg["inference.binarize_mode"], rng)
    sched = cfg.schedule()
    den = ConvDenoiser(cfg.architecture(Z.shape[1]), seed=cfg["seed"])
    out = _path(args, "out", cfg, "paths.model", "model output directory")
    tc = cfg.train_config()
    den, history = train_diffusion(Z, den, sched, tc, checkpoint_path=out)
    io.save_checkpoint(out, den, sched, iteration=tc.iterations, seed=cfg["seed"])
    io.atomic_write_text(out / "loss.csv", "iteration,loss\n" + "".join(
        f"{i + 1},{float(v)!r}\n" for i, v in enumerate(history)))
    print(f"wrote model to {out}; final loss {history[-1]:.5f}")


def cmd_sample(args, cfg):
    den, sched, codec = _load_model(args, cfg)
    out = Path(args.out)
    root = RngStream(cfg["seed"]).child("sample")
    if not getattr(codec, "image_shape_", None):
        raise UsageError("codec has no recorded image shape")
    shape = codec.encode(np.zeros((1,) + tuple(codec.image_shape_)))[0].shape
    Z = np.stack([generate(den, shape, sched, root.child(i)) for i in range(args.n)])
    X = codec.decode(Z)
    io.write_tensor(out / "samples.bdt", X, "float64")
    for i, x in enumerate(X):
        io.write_image_pgms(out / f"sample-{i:04d}", x)
    print(f"wrote {args.n} samples to {out}")


def cmd_detect(args, cfg):
    den, sched, codec = _load_model(args, cfg)
    X = io.read_tensor(args.input)
    if X.ndim == 3:
        X = X[None]
    truth = io.read_tensor(args.truth).astype(bool) if args.truth else None
    if truth is not None and truth.ndim == 2:
        truth = truth[None]
    icfg = cfg.inference_config()
    results = detect(X, codec, den, sched, icfg, masked=not args.unmasked)
    out = Path(args.out)
    rows = []
    for i, (x, r) in enumerate(zip(X, results)):
        tag = f"img-{i:04d}"
        io.write_image_pgms(out / f"{tag}_recon", r.reconstruction)
        io.write_pgm(out / f"{tag}_anomaly.pgm", r.anomaly_map, normalize=True)
        io.write_pgm(out / f"{tag}_mask.pgm", r.mask.mean(axis=0))
        io.write_pgm(out / f"{tag}_seg.pgm", r.segmentation.astype(float))
        d = dice(r.segmentation, truth[i]) if truth is not None else float("nan")
        rows.append({"image_id": tag, "mask_fraction": r.mask_fraction, "dice": d,
                     "psnr": psnr(x, r.reconstruction)})
    io.write_tensor(out / "reconstruction.bdt", np.stack([r.reconstruction for r in results]))
    io.write_tensor(out / "anomaly_map.bdt", np.stack([r.anomaly_map for r in results]))
    io.write_tensor(out / "segmentation.bdt",
                    np.stack([r.segmentation for r in results]).astype(np.uint8), "bits")
    io.atomic_write_text(out / "metrics.csv",
                         rows_to_csv(rows, ["image_id", "mask_fraction", "dice", "psnr"]))
    print(f"wrote {len(results)} results to {out}")


def _dataset(args, cfg):
    d = _path(args, "data", cfg, "paths.data", "dataset directory")
    ds = {"anomalous": io.read_tensor(d / "test_anomalous.bdt"),
          "masks": io.read_tensor(d / "test_masks.bdt").astype(bool)}
    if (d / "test_healthy.bdt").exists():
        ds["healthy"] = io.read_tensor(d / "test_healthy.bdt")
    return ds


def _run_grid(args, cfg, P_list, L_list, aggregate_name):
    den, sched, codec = _load_model(args, cfg)
    ds = _dataset(args, cfg)
    cells, rows = grid_search(ds, codec, den, sched, P_list, L_list, cfg["seed"],
                              base_cfg=cfg.inference_config(), timing=args.timing)
    out = Path(args.out)
    io.atomic_write_text(out / aggregate_name, rows_to_csv(cells, AGGREGATE_FIELDS))
    io.atomic_write_text(out / "per_image.csv", rows_to_csv(rows, ROW_FIELDS))
    for c in cells:
        print(f"P={c['P']:g} L={c['L']}: dice {c['mean_dice']:.4f} "
              f"auprc {c['mean_auprc']:.4f} psnr {c['mean_psnr']:.2f}")


def cmd_eval(args, cfg):
    _run_grid(args, cfg, [cfg["inference.P"]], [cfg["inference.L"]], "metrics.csv")


def cmd_gridsearch(args, cfg):
    _run_grid(args, cfg, args.P, args.L, "grid.csv")


def cmd_schedule_dump(args, cfg):
    text = cfg.schedule().to_csv()
    if args.out:
        io.atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)


COMMANDS = {
    "datagen": cmd_datagen, "train-ae": cmd_train_ae, "train-diffusion": cmd_train_diffusion,
    "sample": cmd_sample, "detect": cmd_detect, "eval": cmd_eval, "gridsearch": cmd_gridsearch,
    "schedule-dump": cmd_schedule_dump,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        if args.command in STOCHASTIC and args.seed is None:
            raise UsageError(f"{args.command}: --seed is required for stochastic commands")
        cfg = _load_config(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    if args.command in STOCHASTIC:
        print(f"seed: {cfg['seed']}")
    try:
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        logger.debug("command failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
