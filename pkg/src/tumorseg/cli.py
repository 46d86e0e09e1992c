"""Command-line surface: preprocess, train, predict, evaluate, postprocess,
and synthetic phantom generation for end-to-end runs without real data."""

from __future__ import annotations

import csv
import math
import sys
from pathlib import Path

import click
import numpy as np

from . import inference
from .config import PipelineConfig, load_config
from .data import find_cases, load_case, save_case, save_labelmap
from .network import load_checkpoint, save_checkpoint
from .nifti import read_nifti
from .objectives import evaluate_case
from .phantoms import PhantomSpec, make_phantom
from .postprocess import postprocess as apply_postprocess_rules
from .preprocess import zscore_normalize
from .trainer import STAGES, TrainingError, train_cascaded, train_multitask
from .validation import split_cases
from .volumes import LabelMap, brain_mask, labels_to_subregions


def _fail(message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _load_labeled_cases(data_root: Path):
    records = find_cases(data_root)
    if not records:
        _fail(f"no cases found under {data_root}")
    cases = []
    for record in records:
        volume, labels = load_case(record.modality_paths["flair"].parent)
        if labels is None:
            _fail(f"case {record.case_id} has no segmentation; cannot train on it")
        cases.append((zscore_normalize(volume, brain_mask(volume)), labels))
    return records, cases


@click.group()
def main():
    """Brain tumour subregion segmentation pipeline."""


@main.command()
@click.option("--data", "data_root", required=True, type=click.Path(exists=True))
@click.option("--out", "out_root", required=True, type=click.Path())
def preprocess(data_root, out_root):
    """Z-score normalize every case and write it back in BraTS layout."""
    try:
        records = find_cases(Path(data_root))
        if not records:
            _fail(f"no cases found under {data_root}")
        for record in records:
            volume, labels = load_case(record.modality_paths["flair"].parent)
            normalized = zscore_normalize(volume, brain_mask(volume))
            save_case(normalized, record.case_id, Path(out_root), labels=labels)
            click.echo(f"normalized {record.case_id}")
    except (ValueError, OSError) as exc:
        _fail(str(exc))


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--framework", type=click.Choice(["multitask", "cascaded"]),
              default=None)
@click.option("--stage", type=click.Choice(list(STAGES)), default=None,
              help="train a single cascaded stage instead of all three")
@click.option("--data", "data_root", type=click.Path(exists=True), default=None)
@click.option("--out", "out_root", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None, help="override the config seed")
def train(config_path, framework, stage, data_root, out_root, seed):
    """Train networks; emits one checkpoint and one history CSV per model."""
    try:
        cfg = load_config(config_path)
        framework = framework or cfg.framework
        if framework == "ensemble":
            _fail("train the multitask and cascaded frameworks separately")
        train_cfg = cfg.train_config()
        if seed is not None:
            import dataclasses

            train_cfg = dataclasses.replace(train_cfg, seed=seed)
        data_path = Path(data_root or cfg.data_root)
        out_path = Path(out_root) if out_root else cfg.resolved_output_root()
        out_path.mkdir(parents=True, exist_ok=True)

        _, cases = _load_labeled_cases(data_path)
        train_cases, val_cases = split_cases(cases, cfg.val_fraction, train_cfg.seed)

        if framework == "multitask":
            jobs = [("multitask", None)]
        else:
            jobs = [(f"cascaded_{s}", s) for s in ([stage] if stage else STAGES)]
        for name, job_stage in jobs:
            if job_stage is None:
                model, history = train_multitask(
                    train_cases, cfg.network_config(3), train_cfg,
                    val_cases=val_cases or None,
                )
            else:
                model, history = train_cascaded(
                    train_cases, cfg.network_config(1), train_cfg, job_stage,
                    val_cases=val_cases or None,
                )
            save_checkpoint(model, out_path / f"{name}.pt", stage=job_stage)
            history.to_csv(out_path / f"{name}_history.csv")
            click.echo(
                f"{name}: best val dice {history.best_metric:.4f} "
                f"at epoch {history.best_epoch} ({len(history.records)} epochs)"
            )
    except (ValueError, OSError, TrainingError) as exc:
        _fail(str(exc))


def _sorted_checkpoints(paths):
    models = {}
    multitask = None
    for path in paths:
        model, stage = load_checkpoint(path)
        if model.config.out_channels == 3:
            if multitask is not None:
                raise ValueError("more than one multitask checkpoint given")
            multitask = model
        else:
            if stage not in STAGES:
                raise ValueError(f"{path}: cascaded checkpoint lacks a stage tag")
            if stage in models:
                raise ValueError(f"duplicate checkpoint for stage {stage}")
            models[stage] = model
    return multitask, models


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--checkpoints", "checkpoint_paths", required=True, multiple=True,
              type=click.Path(exists=True))
@click.option("--case", "case_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--framework", type=click.Choice(["multitask", "cascaded", "ensemble"]),
              default=None)
def predict(config_path, checkpoint_paths, case_dir, out_path, framework):
    """Full inference on one case: localize, predict, threshold, post-process."""
    try:
        cfg = load_config(config_path)
        framework = framework or cfg.framework
        multitask, stage_models = _sorted_checkpoints(checkpoint_paths)
        if framework == "multitask" and multitask is None:
            raise ValueError("multitask prediction needs a 3-channel checkpoint")
        if framework in ("cascaded", "ensemble") and set(stage_models) != set(STAGES):
            raise ValueError(
                "cascaded prediction needs wt, tc and et stage checkpoints"
            )
        if framework == "ensemble" and multitask is None:
            raise ValueError(
                "ensemble prediction needs the multitask checkpoint and the "
                "cascaded trio"
            )

        volume, _ = load_case(case_dir)
        normalized = zscore_normalize(volume, brain_mask(volume))
        tta = cfg.tta_config()
        policy = cfg.threshold_policy()
        if framework == "multitask":
            probs = inference.predict_multitask(multitask, normalized, tta, policy)
        elif framework == "cascaded":
            probs = inference.predict_cascaded(stage_models, normalized, tta, policy)
        else:
            probs = inference.ensemble(
                inference.predict_multitask(multitask, normalized, tta, policy),
                inference.predict_cascaded(stage_models, normalized, tta, policy),
            )
        masks = inference.threshold_subregions(probs, policy)
        labels = apply_postprocess_rules(
            masks, cfg.postprocess_config(),
            spacing=volume.spacing, affine=volume.affine,
        )
        save_labelmap(labels, out_path)
        click.echo(f"wrote {out_path}")
    except (ValueError, OSError) as exc:
        _fail(str(exc))


def _find_truth(truth_root: Path, case_id: str) -> Path | None:
    candidates = (
        truth_root / case_id / f"{case_id}_seg.nii.gz",
        truth_root / f"{case_id}_seg.nii.gz",
        truth_root / f"{case_id}.nii.gz",
    )
    for path in candidates:
        if path.exists():
            return path
    return None


def _load_seg(path: Path) -> LabelMap:
    image = read_nifti(path)
    return LabelMap(labels=np.asarray(image.data).astype(np.uint8),
                    spacing=image.spacing, affine=image.affine)


@main.command()
@click.option("--pred", "pred_root", required=True, type=click.Path(exists=True))
@click.option("--truth", "truth_root", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def evaluate(pred_root, truth_root, out_path):
    """Per-case Dice and HD95 per subregion, plus a trailing MEAN row."""
    try:
        pred_root, truth_root = Path(pred_root), Path(truth_root)
        pred_files = sorted(pred_root.glob("*.nii.gz"))
        if not pred_files:
            _fail(f"no predictions (*.nii.gz) under {pred_root}")
        rows = []
        for pred_file in pred_files:
            case_id = pred_file.name[: -len(".nii.gz")]
            if case_id.endswith("_seg"):
                case_id = case_id[: -len("_seg")]
            truth_file = _find_truth(truth_root, case_id)
            if truth_file is None:
                raise ValueError(f"no ground truth found for case {case_id}")
            metrics = evaluate_case(_load_seg(pred_file), _load_seg(truth_file))
            rows.append((case_id, metrics.as_row()))

        out = Path(out_path)
        out.parent.mkdir(parents=True, exist_ok=True)
        tmp = out.with_suffix(out.suffix + ".tmp")
        with open(tmp, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["case_id", "dice_wt", "dice_tc", "dice_et",
                             "hd95_wt", "hd95_tc", "hd95_et"])
            for case_id, values in rows:
                writer.writerow([case_id] + [f"{v:.6f}" for v in values])
            means = []
            for col in range(6):
                finite = [v[1][col] for v in rows if math.isfinite(v[1][col])]
                means.append(float(np.mean(finite)) if finite else float("inf"))
            writer.writerow(["MEAN"] + [f"{v:.6f}" for v in means])
        tmp.replace(out)
        click.echo(f"wrote {out} ({len(rows)} cases)")
    except (ValueError, OSError) as exc:
        _fail(str(exc))


@main.command("postprocess")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def postprocess_cmd(in_path, out_path, config_path):
    """Apply only the component rules to an existing segmentation."""
    try:
        cfg = load_config(config_path)
        labels = _load_seg(Path(in_path))
        cleaned = apply_postprocess_rules(
            labels_to_subregions(labels), cfg.postprocess_config(),
            spacing=labels.spacing, affine=labels.affine,
        )
        save_labelmap(cleaned, out_path)
        click.echo(f"wrote {out_path}")
    except (ValueError, OSError) as exc:
        _fail(str(exc))


@main.command("make-phantoms")
@click.option("--out", "out_root", required=True, type=click.Path())
@click.option("--count", type=int, default=3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--size", type=int, default=64, show_default=True,
              help="cubic volume edge length in voxels")
def make_phantoms(out_root, count, seed, size):
    """Generate nested-sphere phantom cases in BraTS layout."""
    try:
        rng = np.random.default_rng(seed)
        for index in range(count):
            case_id = f"phantom_{index:03d}"
            r_wt = float(rng.uniform(0.14, 0.18) * size)
            centre = tuple(
                float(c)
                for c in rng.uniform(0.4 * size, 0.6 * size, size=3)
            )
            spec = PhantomSpec(
                shape=(size, size, size),
                tumour_centre=centre,
                r_wt=r_wt,
                r_tc=r_wt * 0.7,
                r_et=r_wt * 0.45,
                seed=int(rng.integers(0, 2**31)),
            )
            volume, labels = make_phantom(spec)
            save_case(volume, case_id, Path(out_root), labels=labels)
            click.echo(f"wrote {case_id}")
    except (ValueError, OSError) as exc:
        _fail(str(exc))


if __name__ == "__main__":
    main()
