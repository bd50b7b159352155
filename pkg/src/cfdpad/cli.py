"""Command-line entry point: ``cfd train | eval | ablate | explain``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Optional, Sequence

import numpy as np

from . import checkpoint
from .config import VARIANTS, ConfigError, RunConfig, load_config
from .data import Dataset, load_dataset, save_dataset, synth_generate, write_pgm
from .explain import CLASS_NAMES, ORDERS, channel_removal_curve, curve_to_csv, grad_cam
from .metrics import all_metrics, metrics_to_csv, roc, roc_to_csv, scores_to_csv
from .train import checkpoint_arrays, load_checkpoint, run_training, score_dataset

log = logging.getLogger("cfdpad")

CKPT_NAME = "model.ckpt"
REPORT_NAME = "report.json"
TIMING_NAME = "timing.json"
TRAIN_DATA_NAME = "train.ds"
TEST_DATA_NAME = "test.ds"


class CliError(Exception):
    pass


def _write_text(path: str, text: str) -> None:
    checkpoint.atomic_write(path, text.encode("utf-8"))


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _check_compatible(cfg: RunConfig, ds: Dataset) -> None:
    want = (cfg.model.input_ch, cfg.model.input_h, cfg.model.input_w)
    if tuple(ds.images.shape[1:]) != want:
        raise CliError(f"data images have shape {tuple(ds.images.shape[1:])}, checkpoint expects {want}")


def train_to_dir(cfg: RunConfig, out: str) -> dict:
    """Train one run and write checkpoint, report, timing and both data splits into ``out``."""
    os.makedirs(out, exist_ok=True)
    data = synth_generate(cfg.synth)
    result = run_training(cfg, data)
    checkpoint.save(os.path.join(out, CKPT_NAME), checkpoint_arrays(result))
    report = result.report()
    _write_text(os.path.join(out, REPORT_NAME), _json(report))
    _write_text(os.path.join(out, TIMING_NAME), _json(result.times))
    save_dataset(result.train, os.path.join(out, TRAIN_DATA_NAME))
    save_dataset(result.test, os.path.join(out, TEST_DATA_NAME))
    return report


def cmd_train(args) -> None:
    cfg = load_config(args.config, args.seed)
    report = train_to_dir(cfg, args.out)
    m = report["metrics"]
    print(f"{cfg.variant} seed={cfg.seed}: ace={m['ace']:.4f} tdr@fdr1%={m['tdr_at_fdr_1']:.4f} eer={m['eer']:.4f}")


def evaluate_to_dir(ckpt_path: str, data_path: str, out: str, apply_mask: bool = True) -> dict:
    ckpt = load_checkpoint(ckpt_path)
    ds = load_dataset(data_path)
    _check_compatible(ckpt.config, ds)
    keep = ckpt.mask.keep if apply_mask else None
    scores = score_dataset(ckpt.model, ds, keep)
    metrics = all_metrics(scores)
    os.makedirs(out, exist_ok=True)
    _write_text(os.path.join(out, "scores.csv"), scores_to_csv(ds.ids.tolist(), scores))
    _write_text(os.path.join(out, "metrics.csv"), metrics_to_csv([metrics]))
    _write_text(os.path.join(out, "roc.csv"), roc_to_csv(roc(scores)))
    return metrics


def cmd_eval(args) -> None:
    m = evaluate_to_dir(args.ckpt, args.data, args.out, apply_mask=not args.no_mask)
    print(" ".join(f"{k}={v:.4f}" for k, v in m.items()))


def ablation_rows(cfg: RunConfig, seeds: Sequence[int]) -> tuple[list[dict], list[dict]]:
    """Train every variant on every seed; returns per-run cells and the mean/sd table."""
    if len(seeds) < 3:
        raise CliError(f"ablation needs at least 3 seeds, got {len(seeds)}")
    if len(set(seeds)) != len(seeds):
        raise CliError("ablation seeds must be distinct")
    cells = []
    for seed in seeds:
        base = cfg.replace(seed=seed)
        data = synth_generate(base.synth)
        for variant in VARIANTS:
            res = run_training(base.replace(variant=variant), data)
            cells.append(
                {
                    "variant": variant,
                    "seed": seed,
                    "ace": res.metrics["ace"],
                    "tdr_at_fdr_1": res.metrics["tdr_at_fdr_1"],
                    "eer": res.metrics["eer"],
                    "dis": ";".join(repr(float(v)) for v in res.dis.dis),
                }
            )
            log.info("ablate seed=%d %s ace=%.4f", seed, variant, res.metrics["ace"])
    table = []
    for variant in VARIANTS:
        rows = [c for c in cells if c["variant"] == variant]
        ace = np.array([r["ace"] for r in rows])
        tdr = np.array([r["tdr_at_fdr_1"] for r in rows])
        dis_total = np.mean([sum(float(v) for v in r["dis"].split(";")) for r in rows])
        table.append(
            {
                "variant": variant,
                "n_seeds": len(rows),
                "ace_mean": float(ace.mean()),
                "ace_sd": float(ace.std(ddof=1)),
                "tdr_at_fdr_1_mean": float(tdr.mean()),
                "tdr_at_fdr_1_sd": float(tdr.std(ddof=1)),
                "dis_total_mean": float(dis_total),
            }
        )
    return cells, table


def cmd_ablate(args) -> None:
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise CliError(f"--seeds must be comma-separated integers, got {args.seeds!r}") from None
    cfg = load_config(args.config)
    cells, table = ablation_rows(cfg, seeds)
    os.makedirs(args.out, exist_ok=True)
    _write_text(os.path.join(args.out, "ablation_runs.csv"), metrics_to_csv(cells))
    _write_text(os.path.join(args.out, "ablation.csv"), metrics_to_csv(table))
    for row in table:
        print(
            f"{row['variant']:>15}: ACE {100 * row['ace_mean']:.2f} +- {100 * row['ace_sd']:.2f}  "
            f"TDR@FDR=1% {100 * row['tdr_at_fdr_1_mean']:.2f} +- {100 * row['tdr_at_fdr_1_sd']:.2f}"
        )


def explain_to_dir(ckpt_path: str, data_path: str, ids: Sequence[int], out: str) -> list[str]:
    ckpt = load_checkpoint(ckpt_path)
    ds = load_dataset(data_path)
    _check_compatible(ckpt.config, ds)
    try:
        rows = [ds.index_of(i) for i in ids]
    except KeyError as exc:
        raise CliError(str(exc.args[0])) from None
    os.makedirs(out, exist_ok=True)
    written = []
    for sample_id, row in zip(ids, rows):
        for name in CLASS_NAMES:
            cam = grad_cam(ckpt.model, ds.images[row], name)
            path = os.path.join(out, f"{sample_id}_{name}.pgm")
            write_pgm(path, cam.normalized())
            written.append(path)
    curves = {order: channel_removal_curve(ckpt.model, ds, ckpt.dis, order) for order in ORDERS}
    path = os.path.join(out, "removal_curve.csv")
    _write_text(path, curve_to_csv(curves))
    written.append(path)
    return written


def cmd_explain(args) -> None:
    try:
        ids = [int(s) for s in args.ids.split(",") if s.strip()]
    except ValueError:
        raise CliError(f"--ids must be comma-separated integers, got {args.ids!r}") from None
    if not ids:
        raise CliError("--ids is empty")
    for path in explain_to_dir(args.ckpt, args.data, ids, args.out):
        print(path)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cfd", description="Channel-wise feature denoising for presentation-attack detection")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one run from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=None, help="override the config seed")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a dataset with a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True, help="dataset container file or PGM directory with labels.csv")
    e.add_argument("--no-mask", action="store_true", help="score with all channels instead of the frozen top-k mask")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train all variants over several seeds")
    a.add_argument("--config", required=True)
    a.add_argument("--seeds", required=True, help="comma-separated, at least 3")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ablate)

    x = sub.add_parser("explain", help="Grad-CAM maps and channel-removal curves")
    x.add_argument("--ckpt", required=True)
    x.add_argument("--data", required=True)
    x.add_argument("--ids", required=True, help="comma-separated sample ids")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_explain)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (CliError, ConfigError, ValueError, KeyError, OSError) as exc:
        print(f"cfd {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
