"""``spikegate`` command line: train, eval, energy, bench, ablate, gen-data.

Exit codes: 0 ok, 1 usage/config error, 2 data/format error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .. import blocks
from ..detect import KittiFormatError, decode_maps, read_label_file, write_calib_file, write_label_file
from ..energy import energy_report, measure_activity
from ..metrics import R10, R11, evaluate
from ..tensor import SpikeTensor, checkpoint, no_grad
from .ablation import PRESETS, run_ablation
from .config import RunConfig
from .data import DataFormatError, gen_synthetic_scenes
from .model import build_model
from .plots import emit_plots
from .train import NumericError, load_data, single_thread, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("spikegate")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; we reserve 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key=value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, default=Path("runs"), help="output directory (default: runs)")
    p.add_argument("--single-thread", action="store_true", help="pin BLAS to one thread for bit-exact reruns")
    p.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="override a config field"
    )
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spikegate", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("train", help="train a model and write metrics, checkpoint and plots")
    _common(p)
    p.add_argument("--energy-every", type=int, default=0, help="energy snapshot every N epochs (0: off)")

    p = sub.add_parser("eval", help="AP|R11 over KITTI label directories")
    _common(p)
    p.add_argument("--gt", type=Path, help="ground-truth label_2 directory")
    p.add_argument("--pred", type=Path, help="prediction label directory (with scores)")
    p.add_argument("--checkpoint", type=Path, help="detector checkpoint: predict on generated scenes instead")
    p.add_argument("--scenes", type=int, default=32, help="generated scenes for --checkpoint")
    p.add_argument("--modes", default="2d,bev,3d")
    p.add_argument("--thresholds", default="0.5,0.7")
    p.add_argument("--difficulties", default="easy,moderate,hard")
    p.add_argument("--levels", choices=("r11", "r10"), default="r11", help="recall levels (r10 drops recall 0)")

    p = sub.add_parser("energy", help="measured SOP-based energy vs the dense ANN equivalent")
    _common(p)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--batch", type=int, default=50, help="samples in the measured batch")

    p = sub.add_parser("bench", help="analytic cost tables")
    p.add_argument("what", choices=("blocks",))
    p.add_argument("--c-in", default="16,32,64,128,256", help="comma list; c_out = c_in // 2 unless --c-out")
    p.add_argument("--c-out", default="")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--stride", type=int, default=2)
    p.add_argument("--size", type=int, default=32, help="input H = W")
    p.add_argument("--out", type=Path, help="CSV path (default: stdout)")

    p = sub.add_parser("ablate", help="run an experiment preset")
    p.add_argument("preset", choices=PRESETS)
    _common(p)

    p = sub.add_parser("gen-data", help="write synthetic scenes as KITTI labels/calib plus .npy images")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--out", type=Path, default=Path("synthetic"))
    return parser


def load_config(args) -> RunConfig:
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        over = {}
        for item in args.overrides:
            if "=" not in item:
                raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            over[k.strip()] = v.strip()
        if args.seed is not None:
            over["seed"] = str(args.seed)
        return cfg.with_overrides(over)
    except (KeyError, ValueError) as exc:
        raise UsageError(str(exc)) from None


# subcommands -----------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = load_config(args)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.txt")
    logs, model = train(cfg, dump_dir=out, energy_every=args.energy_every, progress=_progress)
    (out / "metrics.csv").write_text(logs.to_csv(), encoding="utf-8")
    checkpoint.save(out / "model.sgk", model.state_dict())
    emit_plots({cfg.coding: logs}, out)
    report = {"config": cfg.dumps(), "metric": logs.metric_name, **logs.to_dict()}
    (out / "report.json").write_text(json.dumps(report, indent=2), encoding="utf-8")
    last = logs.records[-1] if logs.records else None
    if last:
        print(f"epoch {last.epoch}: loss {last.loss:.4f} {logs.metric_name} {last.metric:.4f}")
    return EXIT_OK


def _progress(rec) -> None:
    log.info("epoch %d loss %.4f metric %.4f (%.1fs)", rec.epoch, rec.loss, rec.metric, rec.seconds)


def _label_dir(d: Path) -> dict[str, list]:
    if not d.is_dir():
        raise FileNotFoundError(f"label directory not found: {d}")
    return {p.stem: read_label_file(p) for p in sorted(d.glob("*.txt"))}


def _predict_scenes(cfg: RunConfig, ckpt: Path, n: int, out: Path) -> tuple[Path, Path]:
    cfg = cfg.replace(task="detect")
    model = build_model(cfg)
    model.load_state_dict(checkpoint.load(ckpt))
    scenes = gen_synthetic_scenes(n, cfg.seed + 7919, cfg.detect_width, cfg.detect_height)
    gt_dir, pred_dir = out / "gt", out / "pred"
    gt_dir.mkdir(parents=True, exist_ok=True)
    pred_dir.mkdir(parents=True, exist_ok=True)
    with no_grad():
        for i, s in enumerate(scenes):
            heat, reg = model(SpikeTensor(s.image[None]))
            prob = 1.0 / (1.0 + np.exp(-heat.data.astype(np.float64)))
            dets = decode_maps(prob, reg.data, s.calib, down_ratio=model.down_ratio)[0]
            write_label_file(gt_dir / f"{i:06d}.txt", s.objects)
            write_label_file(pred_dir / f"{i:06d}.txt", dets, with_score=True)
    return gt_dir, pred_dir


def cmd_eval(args) -> int:
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    if args.checkpoint:
        gt_dir, pred_dir = _predict_scenes(load_config(args), args.checkpoint, args.scenes, out)
    elif args.gt and args.pred:
        gt_dir, pred_dir = args.gt, args.pred
    else:
        raise UsageError("eval needs --gt and --pred, or --checkpoint")
    gts = _label_dir(gt_dir)
    preds = _label_dir(pred_dir)
    keys = sorted(gts)
    dets = [preds.get(k, []) for k in keys]
    try:
        modes = [m.strip().lower() for m in args.modes.split(",")]
        thresholds = [float(t) for t in args.thresholds.split(",")]
        diffs = [d.strip().lower() for d in args.difficulties.split(",")]
        rows, curves = evaluate(
            dets, [gts[k] for k in keys], modes, thresholds, diffs, levels=R11 if args.levels == "r11" else R10
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    report = {"levels": args.levels, "images": len(keys), "results": rows}
    (out / "report.json").write_text(json.dumps(report, indent=2), encoding="utf-8")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mode", "threshold", "difficulty", "recall", "precision"])
    for (mode, thr, diff), curve in curves.items():
        for r, p in curve.points():
            w.writerow([mode, thr, diff, repr(r), repr(p)])
    (out / "pr_curves.csv").write_text(buf.getvalue(), encoding="utf-8")
    for row in rows:
        aps = " ".join(f"{d}={v:.4f}" for d, v in row["ap"].items())
        print(f"{row['mode']}@{row['threshold']}: {aps}")
    return EXIT_OK


def cmd_energy(args) -> int:
    cfg = load_config(args)
    model = build_model(cfg)
    if args.checkpoint:
        model.load_state_dict(checkpoint.load(args.checkpoint))
    data = load_data(cfg.replace(samples=max(args.batch, 1)))
    if cfg.task == "classify":
        x = data[0][: args.batch]
    else:
        x = np.stack([s.image for s in data[: args.batch]])
    rep = energy_report(measure_activity(model, SpikeTensor(x), cfg.time_steps))
    args.out.mkdir(parents=True, exist_ok=True)
    text = json.dumps(rep.to_dict(), indent=2)
    (args.out / "energy.json").write_text(text, encoding="utf-8")
    print(f"EC_SNN {rep.ec_snn_pj:.6g} pJ  EC_ANN {rep.ec_ann_pj:.6g} pJ  reduction {rep.reduction:.4f}")
    return EXIT_OK


def bench_rows(c_ins, c_outs, k: int, stride: int, size: int) -> list[dict]:
    rows = []
    for c_in, c_out in zip(c_ins, c_outs):
        reg = blocks.count(blocks.BlockSpec("regular", c_in, c_out, k, stride, size, size))
        light = blocks.count(blocks.BlockSpec("lightweight", c_in, c_out, k, stride, size, size))
        for kind, rep in (("regular", reg), ("lightweight", light)):
            rows.append(
                {
                    "kind": kind,
                    "c_in": c_in,
                    "c_out": c_out,
                    "k": k,
                    "stride": stride,
                    "params": rep.params,
                    "flops": rep.flops,
                    "ratio": repr(rep.params / reg.params),
                }
            )
    return rows


def cmd_bench(args) -> int:
    try:
        c_ins = [int(c) for c in args.c_in.split(",") if c.strip()]
        c_outs = [int(c) for c in args.c_out.split(",") if c.strip()] or [max(c // 2, 1) for c in c_ins]
        if len(c_outs) != len(c_ins):
            raise ValueError("--c-out needs as many entries as --c-in")
        rows = bench_rows(c_ins, c_outs, args.k, args.stride, args.size)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["kind", "c_in", "c_out", "k", "stride", "params", "flops", "ratio"], lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(buf.getvalue(), encoding="utf-8")
    else:
        sys.stdout.write(buf.getvalue())
    for c_in in c_ins:
        # the closed form printed alongside the claimed ~27x saving
        print(f"# c_in={c_in}: closed-form ratio 1/(2Cin)+1/27 = {blocks.claimed_ratio(c_in):.4f}", file=sys.stderr)
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = load_config(args)
    result = run_ablation(args.preset, cfg, progress=lambda r: log.info("%s: metric %.4f", r["label"], r["metric"]))
    paths = result.write(args.out)
    for r in result.rows:
        print(f"{r['label']}: {result.metric_name} {r['metric']:.4f} loss {r['final_loss']:.4f}")
    print("wrote " + ", ".join(str(p) for p in paths))
    return EXIT_OK


def cmd_gen_data(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    scenes = gen_synthetic_scenes(args.n, args.seed, args.width, args.height)
    for sub in ("label_2", "calib", "image"):
        (args.out / sub).mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(scenes):
        write_label_file(args.out / "label_2" / f"{i:06d}.txt", s.objects)
        write_calib_file(args.out / "calib" / f"{i:06d}.txt", s.calib)
        np.save(args.out / "image" / f"{i:06d}.npy", s.image)
    print(f"wrote {len(scenes)} scenes to {args.out}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "energy": cmd_energy,
    "bench": cmd_bench,
    "ablate": cmd_ablate,
    "gen-data": cmd_gen_data,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    pin = getattr(args, "single_thread", False)
    try:
        with single_thread(pin):
            return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"spikegate: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"spikegate: numeric failure: {exc}", file=sys.stderr)
        if exc.dump:
            print(f"spikegate: offending batch saved to {exc.dump}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataFormatError, KittiFormatError, checkpoint.CheckpointError, FileNotFoundError) as exc:
        print(f"spikegate: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
