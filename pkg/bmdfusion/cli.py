"""operator entry point: python -m bmdfusion <command> [flags]"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from bmdfusion.config import (
    DEFAULT_SEED,
    AugmentationPolicy,
    GeneratorParams,
    RunConfig,
    ScreeningConfig,
    config_hash,
    load_run_config,
)
from bmdfusion.data.folds import FoldPlan, stratified_folds
from bmdfusion.data.manifest import FLOAT_FORMAT, load_manifest, save_manifest, summarize_manifest
from bmdfusion.data.synthetic import generate_synthetic
from bmdfusion.errors import BmdFusionError, CheckpointError, ConfigError, DataError, ParameterError
from bmdfusion.evaluation.attention import field_attention_table, top_fields
from bmdfusion.evaluation.perturbation import perturbation_test
from bmdfusion.evaluation.regression import regression_metrics
from bmdfusion.evaluation.report import EvaluationReport, write_json
from bmdfusion.evaluation.screening import screening_metrics, stratified_bootstrap_bands
from bmdfusion.model.fusion import IMG_TO_META
from bmdfusion.plots import svg
from bmdfusion.training.checkpoint import load_checkpoint, save_checkpoint
from bmdfusion.training.crossval import DEFAULT_VARIANTS, cross_validate, run_ablation_matrix
from bmdfusion.training.trainer import held_out_split, predict
from bmdfusion.utils.setup import setup_logging

logger = logging.getLogger(__name__)

PLAN_FILE = "fold_plan.json"
PREDICTIONS_FILE = "predictions.csv"
METRICS_FILE = "metrics.csv"
N_BEST_FOLDS = 3


class _Parser(argparse.ArgumentParser):
    """usage errors become ParameterError so they share the exit-code mapping"""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ParameterError(message)


# helpers

def _resolve(args) -> RunConfig:
    """run config from --config with flags applied on top"""
    run = load_run_config(Path(args.config) if args.config else None)
    model = run.model
    if getattr(args, "seed", None) is not None:
        run.seed = args.seed
        model = model.replace(seed=args.seed)
    if getattr(args, "epochs", None) is not None:
        model = model.replace(epochs=args.epochs)
    if getattr(args, "precision", None) is not None:
        model = model.replace(precision=args.precision)
    run.model = model
    for attr in ("dataset", "output", "workers"):
        if getattr(args, attr, None) is not None:
            setattr(run, attr, getattr(args, attr))
    return run


def _out_dir(run: RunConfig) -> Path:
    if not run.output:
        raise ConfigError("no output directory: pass --out or set output in the config")
    path = Path(run.output)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _dataset(run: RunConfig):
    if not run.dataset:
        raise ConfigError("no dataset: pass --data or set dataset in the config")
    return load_manifest(run.dataset)


def _workers(run: RunConfig) -> int:
    return int(run.workers) if run.workers else (os.cpu_count() or 1)


def _write_csv(frame: pd.DataFrame, path: Path, cfg_hash: str) -> Path:
    frame = frame.copy()
    frame["config_hash"] = cfg_hash
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def _write_run_sidecar(out: Path, command: str, run: RunConfig, args) -> None:
    arguments = {k: v for k, v in vars(args).items() if k != "func"}
    write_json(out / "run.json", {
        "command": command,
        "config_hash": config_hash(run.model),
        "seed": run.seed,
        "arguments": arguments,
        "config": run.to_dict(),
    })


def _variant_dir(name: str) -> str:
    return name.replace(":", "_")


def _run_dir(args) -> Path:
    path = Path(args.run)
    if not path.is_dir():
        raise DataError(f"run directory {path} not found")
    return path


def _run_hash(run_dir: Path) -> str:
    """config hash recorded by the cross-validate run that wrote run_dir"""
    try:
        sidecar = json.loads((run_dir / "run.json").read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read {run_dir / 'run.json'}: {exc}") from exc
    if "config_hash" not in sidecar:
        raise DataError(f"{run_dir / 'run.json'} has no config_hash")
    return sidecar["config_hash"]


def _checkpoint_path(run_dir: Path, fold: int) -> Path:
    return run_dir / "checkpoints" / f"fold_{fold}.ckpt"


def _load_fold_checkpoint(run_dir: Path, fold: int, expected_hash: str):
    path = _checkpoint_path(run_dir, fold)
    if not path.is_file():
        raise CheckpointError(f"no checkpoint for fold {fold} at {path}")
    return load_checkpoint(path, expected_hash)


def _parse_int_list(text: Optional[str]) -> Optional[List[int]]:
    if not text:
        return None
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ParameterError(f"expected a comma-separated list of integers, got {text!r}") from None


# commands

def cmd_gen_data(args) -> int:
    manifest = generate_synthetic(args.n, seed=args.seed if args.seed is not None else DEFAULT_SEED)
    out = save_manifest(manifest, args.out)
    summary = summarize_manifest(manifest)
    print(f"samples: {summary['n']}")
    print(f"bmd mean: {summary['bmd_mean']:.4f}  std: {summary['bmd_std']:.4f}  "
          f"range: {summary['bmd_min']:.4f}-{summary['bmd_max']:.4f}")
    for label, count in summary["bins"].items():
        print(f"  {label}: {count}")
    write_json(out / "summary.json", summary)
    write_json(out / "run.json", {
        "command": "gen-data",
        "seed": manifest.generator["seed"],
        "arguments": {"n": args.n, "seed": args.seed, "out": str(args.out)},
        "config_hash": config_hash(GeneratorParams.from_dict(manifest.generator["params"])),
    })
    return 0


def _fold_plan(run: RunConfig, manifest, n_folds: int, out: Path) -> FoldPlan:
    plan = stratified_folds(manifest, n_folds, run.seed)
    plan.save(out / PLAN_FILE)
    return plan


def _write_cv_outputs(cv, out: Path) -> EvaluationReport:
    cfg_hash = cv.config_hash
    for r in cv.folds:
        save_checkpoint(r.checkpoint, _checkpoint_path(out, r.fold))
        fold_dir = out / "folds" / f"fold_{r.fold}"
        fold_dir.mkdir(parents=True, exist_ok=True)
        _write_csv(r.history.to_frame(), fold_dir / "history.csv", cfg_hash)
        svg.write_svg(fold_dir / "loss.svg", svg.line_svg(
            f"fold {r.fold} loss", r.history.epoch,
            {"train": r.history.train_loss, "validation": r.history.val_loss}, "epoch", "loss"))
        m = regression_metrics(r.y_true, r.y_pred)
        svg.write_svg(fold_dir / "scatter.svg", svg.scatter_identity_svg(
            f"fold {r.fold}", r.y_true, r.y_pred, note=f"MSE {m.mse:.4f}  R2 {m.r2:.3f}"))
    _write_csv(cv.metrics_table(), out / METRICS_FILE, cfg_hash)
    oof = cv.predictions()
    _write_csv(oof, out / PREDICTIONS_FILE, cfg_hash)
    report = cv.report()
    note = f"r = {report.pearson['r']:.3f}" if report.pearson else ""
    svg.write_svg(out / "scatter_pooled.svg", svg.scatter_identity_svg(
        "out-of-fold predictions", oof["y_true"], oof["y_pred"], note=note))
    return report


def cmd_cross_validate(args) -> int:
    run = _resolve(args)
    opts = run.command("cross_validate")
    n_folds = args.n_folds or opts.get("n_folds", 10)
    out = _out_dir(run)
    manifest = _dataset(run)
    plan = _fold_plan(run, manifest, n_folds, out)
    cv = cross_validate(manifest, plan, run.model, _workers(run), AugmentationPolicy.training())
    report = _write_cv_outputs(cv, out)
    report.extra.update({"n_folds": n_folds, "fusion_mode": run.model.fusion_mode})
    report.to_json(out / "report.json")
    _write_run_sidecar(out, "cross-validate", run, args)
    summary = report.summary()
    logger.info("mse %.5f +- %.5f, r2 %.4f +- %.4f", summary["mse"]["mean"], summary["mse"]["sd"],
                summary["r2"]["mean"], summary["r2"]["sd"])
    return 0


def cmd_ablate(args) -> int:
    run = _resolve(args)
    opts = run.command("ablate")
    variants = [v.strip() for v in args.variants.split(",")] if args.variants else list(opts.get("variants", DEFAULT_VARIANTS))
    n_folds = args.n_folds or opts.get("n_folds", 10)
    out = _out_dir(run)
    manifest = _dataset(run)
    plan = _fold_plan(run, manifest, n_folds, out)
    result = run_ablation_matrix(manifest, plan, run.model, variants, _workers(run), AugmentationPolicy.training())
    cfg_hash = config_hash(run.model)
    for name, cv in result.variants.items():
        vdir = out / "variants" / _variant_dir(name)
        vdir.mkdir(parents=True, exist_ok=True)
        _write_cv_outputs(cv, vdir).to_json(vdir / "report.json")
    _write_csv(result.per_fold(), out / "ablation_per_fold.csv", cfg_hash)
    summary = result.summary()
    _write_csv(summary, out / "ablation_summary.csv", cfg_hash)
    if "bidirectional" in result.variants:
        _write_csv(result.t_tests(), out / "ttests.csv", cfg_hash)
    else:
        logger.warning("no bidirectional variant; paired t-tests skipped")
    errors = [(m - s, m + s) if np.isfinite(s) else (m, m)
              for m, s in zip(summary["mse_mean"], summary["mse_sd"])]
    svg.write_svg(out / "ablation_mse.svg", svg.bar_svg(
        "mean MSE per variant", list(summary["variant"]), list(summary["mse_mean"]), errors, "MSE"))
    _write_run_sidecar(out, "ablate", run, args)
    return 0


def _best_folds(run_dir: Path, k: int = N_BEST_FOLDS) -> List[int]:
    metrics = pd.read_csv(run_dir / METRICS_FILE, dtype={"fold": str})
    per_fold = metrics[metrics["fold"].str.fullmatch(r"\d+")].copy()
    per_fold["fold"] = per_fold["fold"].astype(int)
    return [int(f) for f in per_fold.sort_values(["r2", "fold"], ascending=[False, True])["fold"].head(k)]


def cmd_perturb(args) -> int:
    run = _resolve(args)
    opts = run.command("perturb")
    run_dir = _run_dir(args)
    out = _out_dir(run)
    manifest = _dataset(run)
    plan = FoldPlan.load(run_dir / PLAN_FILE)
    folds = _parse_int_list(args.folds) or opts.get("folds") or _best_folds(run_dir)
    n_variants = args.variants or opts.get("n_variants", 20)
    cfg_hash = _run_hash(run_dir)
    rows = []
    for fold in folds:
        ckpt = _load_fold_checkpoint(run_dir, fold, cfg_hash)
        result = perturbation_test(ckpt, held_out_split(manifest, plan, fold, ckpt),
                                   AugmentationPolicy.perturbation(), n_variants, run.seed)
        o, p = result.original_metrics, result.perturbed_metrics
        rows.append({"fold": fold, "n": o.n, "n_variants": n_variants,
                     "original_mse": o.mse, "original_mae": o.mae, "original_r2": o.r2,
                     "perturbed_mse": p.mse, "perturbed_mae": p.mae, "perturbed_r2": p.r2})
        svg.write_svg(out / f"perturb_fold_{fold}.svg", svg.scatter_identity_svg(
            f"fold {fold}: mean of {n_variants} perturbed predictions", result.y_true, result.perturbed_mean,
            note=f"R2 {o.r2:.3f} -> {p.r2:.3f}"))
    _write_csv(pd.DataFrame(rows), out / "perturbation.csv", cfg_hash)
    _write_run_sidecar(out, "perturb", run, args)
    return 0


def cmd_screen(args) -> int:
    run = _resolve(args)
    opts = run.command("screen")
    cfg = opts.get("screening") or ScreeningConfig()
    run_dir = _run_dir(args)
    out = _out_dir(run)
    path = run_dir / PREDICTIONS_FILE
    if not path.is_file():
        raise DataError(f"out-of-fold predictions not found at {path}")
    oof = pd.read_csv(path)
    y, y_hat = oof["y_true"].to_numpy(), oof["y_pred"].to_numpy()
    metrics = screening_metrics(y, y_hat, cfg)
    report = {"config_hash": _run_hash(run_dir), "screening": metrics.to_dict(), "partial": metrics.single_class}
    if not metrics.single_class:
        seed = args.seed if args.seed is not None else run.seed
        bands = stratified_bootstrap_bands(y, y_hat, cfg, seed=seed)
        report["bootstrap"] = bands.to_dict()
        svg.write_svg(out / "roc.svg", svg.curve_band_svg(
            "ROC, low BMD vs normal", bands.fpr_grid, bands.tpr, bands.tpr_lo, bands.tpr_hi,
            "false positive rate", "true positive rate",
            note=f"AUC {bands.auc:.3f} ({bands.auc_ci[0]:.3f}-{bands.auc_ci[1]:.3f})", diagonal=True))
        svg.write_svg(out / "pr.svg", svg.curve_band_svg(
            "precision-recall, low BMD", bands.recall_grid, bands.precision, bands.precision_lo,
            bands.precision_hi, "recall", "precision",
            note=f"AP {bands.ap:.3f} ({bands.ap_ci[0]:.3f}-{bands.ap_ci[1]:.3f})"))
    classes = list(metrics.per_class)
    svg.write_svg(out / "class_metrics.svg", svg.grouped_bar_svg(
        "per-class screening metrics", classes,
        {k: [getattr(metrics.per_class[c], k) for c in classes] for k in ("precision", "recall", "f1")}))
    svg.write_svg(out / "sens_spec.svg", svg.bar_svg(
        "sensitivity and specificity (Wilson CI)", ["sensitivity", "specificity"],
        [metrics.sensitivity, metrics.specificity], [metrics.sensitivity_ci, metrics.specificity_ci]))
    write_json(out / "screening.json", report)
    _write_run_sidecar(out, "screen", run, args)
    logger.info("screening at %.3f g/cm^2: accuracy %.3f, auc %.3f", metrics.threshold,
                metrics.accuracy, metrics.roc_auc)
    return 0


def cmd_export_attention(args) -> int:
    run = _resolve(args)
    opts = run.command("export_attention")
    fold = args.fold if args.fold is not None else opts.get("fold", 0)
    run_dir = _run_dir(args)
    out = _out_dir(run)
    manifest = _dataset(run)
    plan = FoldPlan.load(run_dir / PLAN_FILE)
    cfg_hash = _run_hash(run_dir)
    ckpt = _load_fold_checkpoint(run_dir, fold, cfg_hash)
    if ckpt.config.fusion_mode not in ("bidirectional", IMG_TO_META):
        raise ConfigError(f"fusion mode {ckpt.config.fusion_mode!r} has no image-to-metadata attention")
    split = held_out_split(manifest, plan, fold, ckpt)
    _, traces = predict(ckpt.build_model(), split.images, split.meta, ckpt.config.eval_batch, with_traces=True)
    table = field_attention_table([t[IMG_TO_META] for t in traces])
    _write_csv(table, out / f"field_attention_fold_{fold}.csv", cfg_hash)
    fields = [c for c in table.columns if c != "layer"]
    for _, row in table.iterrows():
        svg.write_svg(out / f"field_attention_fold_{fold}_{row['layer']}.svg", svg.bar_svg(
            f"fold {fold} field attention ({row['layer']})", fields, [row[f] for f in fields], ylabel="attention"))
    write_json(out / f"field_attention_fold_{fold}.json",
               {"config_hash": cfg_hash, "fold": fold, "top_fields": top_fields(table)})
    _write_run_sidecar(out, "export-attention", run, args)
    return 0


# parser

def _common(p: argparse.ArgumentParser, data: bool = True) -> None:
    p.add_argument("--config", help="yaml run config")
    p.add_argument("--out", dest="output", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    if data:
        p.add_argument("--data", dest="dataset", help="dataset directory")


def _training(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int)
    p.add_argument("--precision", choices=("float32", "float64"))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bmdfusion", description="cross-attention fusion of radiographs and clinical metadata")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    p.add_argument("--n", type=int, default=233)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("cross-validate", help="k-fold training and evaluation")
    _common(p)
    _training(p)
    p.add_argument("--n-folds", type=int)
    p.set_defaults(func=cmd_cross_validate)

    p = sub.add_parser("ablate", help="cross-validate several fusion modes and losses")
    _common(p)
    _training(p)
    p.add_argument("--variants", help="comma-separated <mode> or <mode>:<loss> names")
    p.add_argument("--n-folds", type=int)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("perturb", help="perturbed-image robustness of trained folds")
    _common(p)
    p.add_argument("--run", required=True, help="cross-validate output directory")
    p.add_argument("--folds", help="comma-separated fold indices (default: best 3 by R2)")
    p.add_argument("--variants", type=int, help="perturbed copies per image")
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("screen", help="t-score screening of out-of-fold predictions")
    _common(p, data=False)
    p.add_argument("--run", required=True, help="cross-validate output directory")
    p.set_defaults(func=cmd_screen)

    p = sub.add_parser("export-attention", help="field-level attention of one fold")
    _common(p)
    p.add_argument("--run", required=True, help="cross-validate output directory")
    p.add_argument("--fold", type=int)
    p.set_defaults(func=cmd_export_attention)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    setup_logging()
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except BmdFusionError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    except OSError as exc:
        logger.error("i/o error on %s: %s", exc.filename or "?", exc)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
