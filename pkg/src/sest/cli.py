"""``sest`` command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric
failure. Settings come from the registry defaults, then ``--config``, then
``--set key=value``, then dedicated flags; later sources win.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import re
import sys
from typing import Optional, Sequence

import numpy as np

from . import __version__, config as config_mod, maps_io, plotting
from ._atomic import atomic_write
from .dataset import load_dataset, write_dataset
from .errors import ConfigError, DataError, NumericError, SestError, UsageError
from .esim import Frame, simulate
from .event_core import SensorGeometry, read_events, voxelize, write_events
from .metrics import FixationSet, MetricReport, evaluate_all, mean_reports
from .model import SestModel
from .synthetic import Sample, make_dataset
from .tensor_engine import load_checkpoint, save_checkpoint
from .training import (
    ABLATIONS,
    EvalResult,
    evaluate,
    model_grad_check,
    predict,
    run_ablation,
    train,
)

log = logging.getLogger("sest")

CSV_FIELDS = ("sample", "bin") + MetricReport.FIELDS


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; this tool reserves 2 for data errors."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(UsageError.exit_code, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- helpers

def _settings(args, flags: dict[str, object]) -> config_mod.Config:
    overrides = {}
    for item in args.set or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    overrides["train.seed"] = str(args.seed)
    for key, val in flags.items():
        if val is not None:
            overrides[key] = str(val)
    return config_mod.load(args.config, overrides)


def _header(args, command: str) -> str:
    return f"# sest {__version__} {command} seed={args.seed}"


def _fmt(v: Optional[float]) -> str:
    return "NA" if v is None else f"{v:.6f}"


def _metric_csv(header: str, rows: Sequence[tuple[str, str, MetricReport]]) -> str:
    buf = io.StringIO()
    buf.write(header + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for sample, b, rep in rows:
        w.writerow([sample, b] + [_fmt(getattr(rep, k)) for k in MetricReport.FIELDS])
    return buf.getvalue()


def _eval_rows(names: Sequence[str], res: EvalResult) -> list[tuple[str, str, MetricReport]]:
    rows = []
    for name, bins, whole in zip(names, res.per_bin, res.per_sample):
        rows += [(name, str(b), rep) for b, rep in enumerate(bins)]
        rows.append((name, "mean", whole))
    rows.append(("all", "mean", res.report))
    return rows


def _table(rep: MetricReport, counts: Optional[dict[str, int]] = None) -> str:
    names = {"auc_j": "AUC-J", "cc": "CC", "sim": "SIM", "nss": "NSS"}
    head = "".join(f"{names[k]:>10}" for k in MetricReport.FIELDS)
    vals = "".join(f"{_fmt(getattr(rep, k)):>10}" for k in MetricReport.FIELDS)
    out = head + "\n" + vals
    if counts is not None:
        out += "\n" + "".join(f"{'n=' + str(counts[k]):>10}" for k in MetricReport.FIELDS)
    return out


def _sidecar(ckpt: str) -> str:
    return ckpt + ".cfg"


def _load_model(ckpt: str, args) -> tuple[SestModel, config_mod.Config]:
    side = _sidecar(ckpt)
    if not os.path.exists(side):
        raise DataError(f"{ckpt}: missing config sidecar {side}")
    with open(side, encoding="utf-8") as fh:
        cfg = config_mod.parse(fh.read(), source=side)
    for item in args.set or ():
        k, _, v = item.partition("=")
        if not k.strip().startswith("model."):
            cfg = config_mod.parse(f"{k}={v}", cfg, "--set")
    model = SestModel(config_mod.model_config(cfg), seed=args.seed)
    model.load_state_dict(load_checkpoint(ckpt))
    return model.eval(), cfg


def _out_base(path: str) -> str:
    root, ext = os.path.splitext(path)
    return root if ext else path


# ---------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    cfg = _settings(args, {"sim.fps": args.fps, "sim.c_pos": args.c_pos, "sim.c_neg": args.c_neg})
    if not os.path.isdir(args.frames_dir):
        raise DataError(f"{args.frames_dir}: not a directory")
    names = sorted(n for n in os.listdir(args.frames_dir) if n.lower().endswith(".pgm"))
    if not names:
        raise DataError(f"{args.frames_dir}: no .pgm frames")
    fps = cfg["sim.fps"]
    if not fps > 0:
        raise UsageError("fps must be positive")
    frames = [
        Frame(int(round(i * 1e6 / fps)), maps_io.read_pgm(os.path.join(args.frames_dir, n)))
        for i, n in enumerate(names)
    ]
    stream = simulate(frames, config_mod.sim_config(cfg))
    write_events(stream, args.out)
    span_s = (frames[-1].timestamp - frames[0].timestamp) / 1e6
    rate = len(stream) / span_s if span_s > 0 else 0.0
    print(_header(args, "simulate"))
    print(f"events {len(stream)}  rate {rate:.1f} ev/s  frames {len(frames)}  -> {args.out}")
    return 0


def cmd_voxelize(args) -> int:
    cfg = _settings(args, {"model.bins": args.bins, "voxel.bin_ms": args.bin_ms, "voxel.origin_us": args.origin_us})
    stream = read_events(args.events)
    bins = cfg["model.bins"]
    grid = voxelize(stream, bins, cfg.bin_us, cfg["voxel.origin_us"])
    os.makedirs(args.out_dir, exist_ok=True)
    lines = [_header(args, "voxelize"), f"# bins={bins} bin_us={grid.bin_duration} origin_us={grid.origin}"]
    for b in range(bins):
        for c, pol in enumerate(("pos", "neg")):
            name = f"voxel_{b:03d}_{pol}.pfm"
            maps_io.write_pfm(os.path.join(args.out_dir, name), grid.counts[b, c])
            lines.append(f"{b} {pol} {name} {int(grid.counts[b, c].sum())}")
    atomic_write(os.path.join(args.out_dir, "index.txt"), "\n".join(lines) + "\n")
    print(lines[0])
    print(f"in-window events {int(grid.counts.sum())} of {len(stream)}  -> {args.out_dir}")
    return 0


def cmd_synth(args) -> int:
    cfg = _settings(args, {"synth.samples": args.samples, "model.bins": args.bins})
    samples = make_dataset(
        cfg["synth.samples"],
        seed=args.seed,
        height=cfg["model.height"],
        width=cfg["model.width"],
        bins=cfg["model.bins"],
        bin_us=cfg.bin_us,
        frames_per_bin=cfg["synth.frames_per_bin"],
        sim=config_mod.sim_config(cfg),
    )
    path = write_dataset(samples, args.out_dir)
    print(_header(args, "synth"))
    print(f"{len(samples)} samples -> {path}")
    return 0


def _datasets(args, cfg):
    bins, bin_us, origin = cfg["model.bins"], cfg.bin_us, cfg["voxel.origin_us"]
    train_set = load_dataset(args.manifest, bins, bin_us, origin)
    val_set = load_dataset(args.val, bins, bin_us, origin) if args.val else train_set
    return train_set, val_set


def cmd_train(args) -> int:
    cfg = _settings(args, {"train.max_epochs": args.epochs, "train.lr": args.lr, "train.batch_size": args.batch_size})
    train_set, val_set = _datasets(args, cfg)
    model = SestModel(config_mod.model_config(cfg), seed=args.seed)
    res = train(model, train_set, val_set, config_mod.train_config(cfg), config_mod.loss_weights(cfg))
    save_checkpoint(args.out, res.model.state_dict(optimizer=True))
    cfg.save(_sidecar(args.out), ("model", "voxel", "sim", "loss"))

    base = _out_base(args.out)
    buf = io.StringIO()
    buf.write(_header(args, "train") + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("epoch", "train_loss", "val_loss", "lr"))
    for r in res.history:
        w.writerow((r.epoch, f"{r.train_loss:.8f}", f"{r.val_loss:.8f}", f"{r.lr:.6g}"))
    atomic_write(base + "_history.csv", buf.getvalue())
    plotting.plot_history(res.history, base + "_history.png")

    print(_header(args, "train"))
    print(f"epochs {len(res.history)}  best epoch {res.best_epoch}  best val {res.best_val:.6f}")
    print(f"checkpoint -> {args.out}  history -> {base}_history.csv")
    return 0


def cmd_infer(args) -> int:
    model, cfg = _load_model(args.checkpoint, args)
    stream = read_events(args.events)
    grid = voxelize(stream, model.cfg.bins, cfg.bin_us, cfg["voxel.origin_us"])
    maps = predict(model, Sample(grid, np.zeros((grid.bins,) + grid.counts.shape[2:]), ()))
    os.makedirs(args.out_dir, exist_ok=True)
    for b in range(maps.shape[0]):
        maps_io.write_pfm(os.path.join(args.out_dir, f"pred_{b:03d}.pfm"), maps[b])
    plotting.plot_maps(maps, None, os.path.join(args.out_dir, "pred.png"))
    print(_header(args, "infer"))
    print(f"{maps.shape[0]} maps {maps.shape[1]}x{maps.shape[2]} -> {args.out_dir}")
    return 0


def _expand(pattern: str, b: int) -> str:
    return pattern.format(bin=b) if "{" in pattern else pattern


def cmd_eval(args) -> int:
    cfg = _settings(args, {"model.bins": args.bins})
    if args.checkpoint or args.manifest:
        if not (args.checkpoint and args.manifest):
            raise UsageError("--checkpoint and --manifest go together")
        model, mcfg = _load_model(args.checkpoint, args)
        data = load_dataset(args.manifest, model.cfg.bins, mcfg.bin_us, mcfg["voxel.origin_us"])
        res = evaluate(model, data)
        rows = _eval_rows([s.name for s in data], res)
        report, counts = res.report, res.counts
        figure_maps = (predict(model, data[0]), data[0].saliency, data[0].fixations)
    else:
        if not (args.pred and args.gt and args.fixations):
            raise UsageError("give PRED GT FIXATIONS, or --checkpoint with --manifest")
        bins = cfg["model.bins"] if "{" in args.pred else 1
        fix = maps_io.read_fixations(args.fixations)
        preds, gts, fixes, bin_reports = [], [], [], []
        for b in range(bins):
            p = maps_io.read_map(_expand(args.pred, b))
            g = maps_io.read_map(_expand(args.gt, b))
            f = FixationSet(maps_io.fixations_for_bin(fix, b), _geometry(g))
            bin_reports.append(evaluate_all(p, g, f))
            preds.append(p)
            gts.append(g)
            fixes.append(f)
        whole, _ = mean_reports(bin_reports)
        name = re.sub(r"\{[^}]*\}", "*", os.path.basename(args.pred))
        rows = [(name, str(b), r) for b, r in enumerate(bin_reports)] + [(name, "mean", whole)]
        report, counts = whole, None
        figure_maps = (np.stack(preds), np.stack(gts), fixes)

    out = args.out or "metrics.csv"
    atomic_write(out, _metric_csv(_header(args, "eval"), rows))
    pred, gt, fixes = figure_maps
    plotting.plot_maps(pred, np.clip(gt, 0, 1), _out_base(out) + "_maps.png", fixes)
    plotting.plot_metrics({"eval": report}, _out_base(out) + ".png")
    print(_header(args, "eval"))
    print(_table(report, counts))
    print(f"-> {out}")
    return 0


def _geometry(m: np.ndarray) -> SensorGeometry:
    return SensorGeometry(m.shape[1], m.shape[0])


def cmd_gradcheck(args) -> int:
    cfg = _settings(args, {"gradcheck.h": args.h, "gradcheck.tol": args.tol, "gradcheck.per_param": args.per_param})
    mcfg = config_mod.model_config(cfg)
    samples = make_dataset(
        2, seed=args.seed, height=mcfg.height, width=mcfg.width, bins=mcfg.bins, bin_us=cfg.bin_us,
        sim=config_mod.sim_config(cfg),
    )
    per = cfg["gradcheck.per_param"]
    res = model_grad_check(
        mcfg, samples, h=cfg["gradcheck.h"], per_param=per if per > 0 else None, seed=args.seed,
        weights=config_mod.loss_weights(cfg),
    )
    tol = cfg["gradcheck.tol"]
    print(_header(args, "gradcheck"))
    if args.verbose:
        for name, err in sorted(res.per_param.items(), key=lambda kv: -kv[1]):
            print(f"{name:24s} {err:.3e}")
    print(f"loss {res.loss:.6f}  parameters {len(res.per_param)}  max rel err {res.max_error:.3e}  tol {tol:.0e}")
    if not res.max_error < tol:
        raise NumericError(f"gradient check failed: {res.max_error:.3e} >= {tol:.0e}")
    print("PASS")
    return 0


def cmd_ablate(args) -> int:
    cfg = _settings(args, {"train.max_epochs": args.epochs})
    train_set, val_set = _datasets(args, cfg)
    res = run_ablation(
        args.kind,
        config_mod.model_config(cfg),
        config_mod.train_config(cfg),
        train_set,
        val_set,
        None,
        config_mod.loss_weights(cfg),
    )
    os.makedirs(args.out_dir, exist_ok=True)
    header = _header(args, f"ablate {args.kind}")
    names = [s.name for s in val_set]
    for tag, ev in (("baseline", res.baseline), ("variant", res.variant)):
        atomic_write(os.path.join(args.out_dir, f"{tag}.csv"), _metric_csv(header, _eval_rows(names, ev)))
    buf = io.StringIO()
    buf.write(header + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("metric", "baseline", "variant", "delta"))
    deltas = res.deltas
    for k in MetricReport.FIELDS:
        w.writerow((k, _fmt(getattr(res.baseline.report, k)), _fmt(getattr(res.variant.report, k)), _fmt(deltas[k])))
    atomic_write(os.path.join(args.out_dir, "delta.csv"), buf.getvalue())
    plotting.plot_metrics(
        {"baseline": res.baseline.report, args.kind: res.variant.report},
        os.path.join(args.out_dir, "ablation.png"),
        title=f"ablation: {args.kind}",
    )
    print(header)
    print("baseline\n" + _table(res.baseline.report))
    print(f"{args.kind}\n" + _table(res.variant.report))
    print(f"-> {args.out_dir}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value settings file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting (repeatable)")
    common.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = _Parser(prog="sest", description="Event-based saliency: simulate, voxelize, train, infer, evaluate.")
    p.add_argument("--version", action="version", version=f"sest {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="convert a directory of PGM frames to an EVS1 stream")
    s.add_argument("frames_dir")
    s.add_argument("out", help="output .evs file")
    s.add_argument("--fps", type=float, help="frame rate (default: sim.fps)")
    s.add_argument("--c-pos", type=float, help="positive contrast threshold")
    s.add_argument("--c-neg", type=float, help="negative contrast threshold")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("voxelize", parents=[common], help="bin an EVS1 stream into per-polarity PFM maps")
    s.add_argument("events")
    s.add_argument("out_dir")
    s.add_argument("--bins", type=int, help="number of temporal bins (default: model.bins)")
    s.add_argument("--bin-ms", type=float, help="bin duration in ms (default 100)")
    s.add_argument("--origin-us", type=int, help="time of the first bin edge in microseconds")
    s.set_defaults(func=cmd_voxelize)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic moving-blob dataset")
    s.add_argument("out_dir")
    s.add_argument("--samples", type=int)
    s.add_argument("--bins", type=int)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", parents=[common], help="train a model on a manifest")
    s.add_argument("manifest")
    s.add_argument("out", help="output checkpoint; a .cfg sidecar and history CSV/PNG are written next to it")
    s.add_argument("--val", help="validation manifest (default: the training manifest)")
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch-size", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", parents=[common], help="predict saliency maps for one event stream")
    s.add_argument("checkpoint")
    s.add_argument("events")
    s.add_argument("out_dir")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", parents=[common], help="score maps against ground truth and fixations")
    s.add_argument("pred", nargs="?", help="predicted map, or a pattern with {bin}")
    s.add_argument("gt", nargs="?", help="ground-truth map, or a pattern with {bin}")
    s.add_argument("fixations", nargs="?", help="fixation CSV (bin,x,y)")
    s.add_argument("--bins", type=int, help="bins to expand in the patterns")
    s.add_argument("--checkpoint", help="evaluate this model instead of stored maps")
    s.add_argument("--manifest", help="dataset to evaluate the checkpoint on")
    s.add_argument("--out", help="CSV path (default metrics.csv); figures go alongside")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the full model loss")
    s.add_argument("--h", type=float, help="central-difference step")
    s.add_argument("--tol", type=float, help="maximum allowed relative error")
    s.add_argument("--per-param", type=int, help="coordinates sampled per parameter; 0 checks all")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("ablate", parents=[common], help="train baseline and ablated variant, compare metrics")
    s.add_argument("kind", choices=ABLATIONS)
    s.add_argument("manifest")
    s.add_argument("out_dir")
    s.add_argument("--val", help="validation/evaluation manifest (default: the training manifest)")
    s.add_argument("--epochs", type=int)
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except SestError as exc:
        print(f"sest {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"sest {args.command}: {exc}", file=sys.stderr)
        return DataError.exit_code
    except OSError as exc:
        print(f"sest {args.command}: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
