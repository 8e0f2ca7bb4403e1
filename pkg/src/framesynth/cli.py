"""Command-line entry point: ``framesynth <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as fio
from . import metrics
from .data import sample_times


class UsageError(Exception):
    pass


def _parse_times(text: str) -> list[float]:
    try:
        ts = [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--t expects comma-separated numbers, got {text!r}") from None
    if not ts:
        raise UsageError("--t needs at least one value")
    bad = [t for t in ts if not 0.0 < t < 1.0]
    if bad:
        raise UsageError(f"time steps must lie strictly between 0 and 1, got {bad[0]:g}")
    if len(set(ts)) != len(ts):
        raise UsageError("--t contains duplicate values")
    return sorted(ts)


def _need_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _load_model(path: str):
    from .model import Interpolator

    return Interpolator.load(_need_file(path, "checkpoint"))


def _read_pair(args):
    f0 = fio.read_image(_need_file(args.frame0, "frame"))
    f1 = fio.read_image(_need_file(args.frame1, "frame"))
    if f0.shape != f1.shape:
        raise ValueError(f"frames differ in shape: {f0.shape} vs {f1.shape}")
    return f0, f1


def cmd_interpolate(args) -> int:
    if args.count is not None:
        if args.count < 1:
            raise UsageError("--count must be >= 1")
        ts = sample_times(args.count)
    else:
        ts = _parse_times(args.t)
    model = _load_model(args.checkpoint)
    f0, f1 = _read_pair(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for k, t in enumerate(ts, start=1):
        name = f"frame_{k:04d}.png"
        (frame,) = model.interpolate(f0, f1, [t])
        fio.write_image(frame, out / name)
        lines.append(f"{name},{t!r}\n")
    (out / "index.txt").write_text("".join(lines))
    return 0


def cmd_export_flow(args) -> int:
    model = _load_model(args.checkpoint)
    f0, f1 = _read_pair(args)
    f01, f10 = model.compute_flows(f0, f1)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fio.write_flo(f01, out / "flow_01.flo")
    fio.write_flo(f10, out / "flow_10.flo")
    return 0


def cmd_train(args) -> int:
    from .model import Interpolator
    from .train import TrainConfig, build_dataset, load_config, train

    cfg = load_config(_need_file(args.config, "config")) if args.config else TrainConfig()
    overrides = {}
    if args.synthetic:
        overrides["synthetic"] = True
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.data:
        overrides["data_dir"] = args.data
    if args.out:
        overrides["out_dir"] = args.out
    if overrides:
        cfg = TrainConfig(**{**cfg.__dict__, **overrides})
    if not cfg.out_dir:
        raise UsageError("set out_dir in the config or pass --out")
    model = Interpolator.create(cfg.width_factor, seed=cfg.seed, cross_link=cfg.cross_link)
    result = train(model, build_dataset(cfg), cfg)
    print(f"{len(result.trace)} iterations; final loss {result.losses[-1]:.4f}; checkpoint {result.checkpoint}")
    return 0


def _png_names(d: Path) -> list[str]:
    if not d.is_dir():
        raise FileNotFoundError(f"directory not found: {d}")
    return sorted(p.name for p in d.iterdir() if p.suffix.lower() == ".png")


def cmd_eval(args) -> int:
    pred_dir, gt_dir = Path(args.pred_dir), Path(args.gt_dir)
    preds, gts = _png_names(pred_dir), _png_names(gt_dir)
    if not preds and not gts:
        raise UsageError("no PNG files in --pred-dir or --gt-dir")
    unmatched = sorted(set(preds) ^ set(gts))
    if unmatched:
        raise ValueError(f"unmatched file names: {', '.join(unmatched)}")
    mask_dir = Path(args.mask_dir) if args.mask_dir else None
    rows = []
    for name in preds:
        p, g = fio.read_image(pred_dir / name), fio.read_image(gt_dir / name)
        if p.shape != g.shape:
            raise ValueError(f"{name}: shape {p.shape} vs {g.shape}")
        mask = None
        if mask_dir is not None:
            m = fio.read_image(_need_file(mask_dir / name, "mask"))
            mask = m[0] >= 128
        e = metrics.mse(p, g, mask)
        psnr = metrics.psnr(p, g) if mask is None else (np.inf if e == 0 else 10 * np.log10(255.0 ** 2 / e))
        pixels = int(mask.sum()) if mask is not None else p.shape[1] * p.shape[2]
        rows.append((name, pixels, psnr, metrics.ssim(p, g), metrics.interpolation_error(p, g, mask)))
    rows.append(("mean", int(np.mean([r[1] for r in rows])), float(np.mean([r[2] for r in rows])),
                 float(np.mean([r[3] for r in rows])), float(np.mean([r[4] for r in rows]))))
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "pixels", "psnr", "ssim", "ie"])
        for name, pixels, psnr, ssim, ie in rows:
            w.writerow([name, pixels, f"{min(psnr, metrics.PSNR_CAP):.6f}", f"{ssim:.6f}", f"{ie:.6f}"])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def cmd_selftest(args) -> int:
    from . import selftest

    results = selftest.run(args.inject_fault or ())
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        print(f"error: failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="framesynth", description="Variable-length video frame interpolation.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("interpolate", help="synthesize intermediate frames between two images")
    p.add_argument("--frame0", required=True)
    p.add_argument("--frame1", required=True)
    p.add_argument("--checkpoint", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--count", type=int, help="evenly spaced frames at t = i/(count+1)")
    group.add_argument("--t", help="comma-separated time steps in (0, 1)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("export-flow", help="write the bi-directional flows as .flo files")
    p.add_argument("--frame0", required=True)
    p.add_argument("--frame1", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_export_flow)

    p = sub.add_parser("train", help="train both networks")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--synthetic", action="store_true", help="train on rendered synthetic scenes")
    p.add_argument("--data", help="directory of clip folders (overrides data_dir)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="PSNR/SSIM/IE of predicted frames against ground truth")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--mask-dir", help="PNG masks with matching names; pixels >= 128 are evaluated")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("selftest", help="run the invariant suite")
    p.add_argument("--inject-fault", action="append", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
