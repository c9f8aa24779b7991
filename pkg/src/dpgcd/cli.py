"""Command-line entry point: ``dpgcd <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .errors import DPGCDError


def _fractions(text: str) -> tuple[float, float, float]:
    parts = tuple(float(v) for v in text.split(","))
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated fractions")
    return parts


def _lambdas(text: str) -> tuple[float, float, float, float]:
    parts = tuple(float(v) for v in text.split(","))
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("expected four comma-separated loss weights")
    return parts


def _run_config(args):
    from .config import RunConfig, load_run_config

    return load_run_config(args.config) if getattr(args, "config", None) else RunConfig()


def cmd_gen_synthetic(args) -> int:
    from .data import gen_synthetic, save_samples

    rc = _run_config(args)
    cfg = replace(rc.data, seed=args.seed, tile_size=args.size)
    samples = gen_synthetic(cfg, args.tiles, args.split)
    manifest = save_samples(samples, args.out)
    print(f"wrote {len(samples)} tiles to {manifest}")
    return 0


def cmd_tile(args) -> int:
    from .data import tile_manifest

    out = tile_manifest(args.inp, args.size, args.stride, args.out)
    print(f"wrote {out}")
    return 0


def cmd_train_toy(args) -> int:
    from .config import model_config_from_dict, model_config_to_dict
    from .data import load_split
    from .losses import LossConfig
    from .train import train_toy

    rc = _run_config(args)
    model_cfg = rc.model.ablate(edp=not args.no_edp, ccab=not args.no_ccab, dssm=not args.no_dssm, cca=not args.no_cca)
    model_cfg = model_config_from_dict({**model_config_to_dict(model_cfg), "model.seed": str(args.seed)})
    loss_cfg = rc.loss if args.lambdas is None else LossConfig.from_lambdas(args.lambdas, model_cfg.decoder.num_2d_classes)
    train_cfg = replace(rc.train, seed=args.seed, **({} if args.steps is None else {"steps": args.steps}))
    samples = load_split(args.manifest, "train")
    curve = args.curve or str(Path(args.ckpt).with_suffix(".loss.csv"))
    result = train_toy(samples, model_cfg, loss_cfg, train_cfg, args.ckpt, curve)
    if result.aborted:
        print(f"training aborted: {result.abort_reason}", file=sys.stderr)
        return 2
    print(f"final total loss {result.curve[-1][-1]!r}; checkpoint {args.ckpt}; curve {curve}")
    return 0


def cmd_evaluate(args) -> int:
    from .data import load_split
    from .evaluate import evaluate_model, load_model
    from .report import emit_report

    model = load_model(args.ckpt)
    samples = load_split(args.manifest, args.split)
    report = evaluate_model(model, samples, args.mf1_over)
    emit_report(report, args.out)
    for k, v in report.summary().items():
        print(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradchecks import CHECKS, run_checks

    names = [args.module] if args.module else list(CHECKS)
    worst = 0.0
    for name, err in run_checks(names, seeds=range(args.seeds)):
        worst = max(worst, err)
        status = "ok" if err < args.tol else "FAIL"
        print(f"{name}: max_rel_err={err!r} {status}")
    return 0 if worst < args.tol else 1


def cmd_report(args) -> int:
    from .report import regenerate

    for k, v in regenerate(args.eval_dir).items():
        print(f"{k}={v}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dpgcd", description="Depth-prior guided 2D/3D change detection toolkit")
    p.add_argument("--config", help="flat key=value configuration file")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synthetic", help="generate a synthetic tile set")
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--tiles", type=int, default=250)
    g.add_argument("--out", required=True)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--split", type=_fractions, default=(0.7, 0.1, 0.2), help="train,val,test fractions")
    g.set_defaults(func=cmd_gen_synthetic)

    t = sub.add_parser("tile", help="cut a manifest's rasters into square tiles")
    t.add_argument("--in", dest="inp", required=True, help="input manifest.tsv")
    t.add_argument("--size", type=int, required=True)
    t.add_argument("--stride", type=int, default=None)
    t.add_argument("--out", default=None)
    t.set_defaults(func=cmd_tile)

    tr = sub.add_parser("train-toy", help="train on the manifest's train split")
    tr.add_argument("--manifest", required=True)
    tr.add_argument("--steps", type=int, default=None)
    tr.add_argument("--seed", type=int, default=42)
    tr.add_argument("--ckpt", required=True)
    tr.add_argument("--curve", default=None, help="loss curve CSV (default: next to the checkpoint)")
    for flag in ("edp", "ccab", "dssm", "cca"):
        tr.add_argument(f"--no-{flag}", action="store_true", help=f"disable the {flag.upper()} module")
    tr.add_argument("--lambda", dest="lambdas", type=_lambdas, default=None, help="wce,mse3d,grad,mse_dsm weights")
    tr.set_defaults(func=cmd_train_toy)

    e = sub.add_parser("evaluate", help="score a checkpoint on a split and write report files")
    e.add_argument("--manifest", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--mf1-over", choices=("all", "changed"), default="all")
    e.set_defaults(func=cmd_evaluate)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    gc.add_argument("--module", default=None)
    gc.add_argument("--seeds", type=int, default=3)
    gc.add_argument("--tol", type=float, default=1e-4)
    gc.set_defaults(func=cmd_gradcheck)

    r = sub.add_parser("report", help="rebuild KDE and histogram files from an evaluation directory")
    r.add_argument("--eval-dir", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except DPGCDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
