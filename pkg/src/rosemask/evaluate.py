"""Threshold sweep, end-to-end experiment runs and report emission.

The sweep protocol: for each candidate top-percentage t, build the mask
from the training positives, mask both splits, train a short run (three
epochs by default, where threshold sensitivity is most visible), and score
the validation split. The selected t maximizes validation F1; ties within
1e-9 resolve toward the smaller t since a smaller retained region occludes
more of the face. Records with undefined F1 rank below every defined one.

A full experiment generates the synthetic splits, optionally builds and
applies the mask, trains for the full epoch budget, scores the test split
and emits a provenance-carrying JSON report. Reruns with the same master
seed produce byte-identical artifacts; nothing here reads the clock.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .classifier import (
    ModelConfig,
    TrainConfig,
    TrainedModel,
    predict,
    save_checkpoint,
    save_training_log,
    train,
)
from .dataset import LabeledDataset
from .metrics import Metrics, compute_metrics, confusion
from .roi_mask import (
    BinaryMask,
    MaskBuildReport,
    MaskSpec,
    build_mask,
    mask_dataset,
    privacy_audit,
    save_mask,
    save_mask_report,
)
from .synthgen import DEFAULT_FACE_PARAMS, FaceParams, SplitCounts, gen_dataset

__all__ = [
    "DEFAULT_SWEEP_RANGE",
    "SweepRecord",
    "comparison_table",
    "run_experiment",
    "select_threshold",
    "sweep",
    "write_sweep_csv",
    "write_sweep_svg",
]

DEFAULT_SWEEP_RANGE = tuple(range(20, 36))

F1_TIE_TOLERANCE = 1e-9

REPORT_NAME = "report.json"
CHECKPOINT_NAME = "model.rmck"
TRAINING_LOG_NAME = "training_log.jsonl"
MASK_PNG_NAME = "mask.png"
MASK_REPORT_NAME = "mask.json"


@dataclass(frozen=True)
class SweepRecord:
    t: float
    mask_report: MaskBuildReport
    metrics: Metrics
    epochs_used: int

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "mask": self.mask_report.to_dict(),
            "metrics": self.metrics.to_dict(),
            "epochs_used": self.epochs_used,
        }


def select_threshold(records: Sequence[SweepRecord]) -> float:
    """Best validation F1; ties within 1e-9 go to the smaller t."""
    if not records:
        raise ValueError("cannot select a threshold from zero sweep records")
    best = records[0]
    for rec in records[1:]:
        best_f1 = -np.inf if best.metrics.f1 is None else best.metrics.f1
        rec_f1 = -np.inf if rec.metrics.f1 is None else rec.metrics.f1
        if rec_f1 > best_f1 + F1_TIE_TOLERANCE:
            best = rec
    return best.t


def sweep(
    train_data: LabeledDataset,
    val_data: LabeledDataset,
    t_values: Iterable[float] = DEFAULT_SWEEP_RANGE,
    sweep_epochs: int = 3,
    mcfg: ModelConfig | None = None,
    tcfg: TrainConfig | None = None,
) -> tuple[list[SweepRecord], float]:
    """Run the threshold sweep; returns records ordered by t and the pick."""
    if len(train_data) == 0 or len(val_data) == 0:
        raise ValueError("sweep needs nonempty train and validation splits")
    ts = sorted(set(float(t) for t in t_values))
    if not ts:
        raise ValueError("sweep needs at least one threshold")
    mcfg = mcfg or ModelConfig.tiny(train_data.dims)
    tcfg = replace(tcfg or TrainConfig(epochs=sweep_epochs), epochs=sweep_epochs)

    records = []
    for t in ts:
        mask, mask_report = build_mask(train_data, MaskSpec(top_percent=t, dims=train_data.dims))
        model = train(mask_dataset(train_data, mask), None, mcfg, tcfg)
        preds = predict(model, mask_dataset(val_data, mask))
        metrics = compute_metrics(confusion(preds, val_data.labels))
        records.append(
            SweepRecord(t=t, mask_report=mask_report, metrics=metrics, epochs_used=sweep_epochs)
        )
    return records, select_threshold(records)


def _metric_cell(value: float | None) -> str:
    return "" if value is None else repr(value)


def write_sweep_csv(records: Sequence[SweepRecord], path: str | Path) -> None:
    """Sweep results as CSV; undefined metrics become empty cells."""
    lines = ["t,retention_fraction,threshold_value,accuracy,recall,precision,f1"]
    for rec in records:
        m = rec.metrics
        lines.append(
            ",".join(
                [
                    f"{rec.t:g}",
                    repr(rec.mask_report.retention_fraction),
                    repr(rec.mask_report.threshold_value),
                    repr(m.accuracy),
                    _metric_cell(m.recall),
                    _metric_cell(m.precision),
                    _metric_cell(m.f1),
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


_SVG_SERIES = (
    ("accuracy", "#1f77b4"),
    ("recall", "#d62728"),
    ("precision", "#2ca02c"),
    ("f1", "#9467bd"),
)


def write_sweep_svg(records: Sequence[SweepRecord], path: str | Path) -> None:
    """Validation metrics versus threshold as a small static SVG line chart.

    Hand-emitted markup (no plotting library) so reruns are byte-identical.
    Undefined metric values are simply skipped.
    """
    if not records:
        raise ValueError("cannot chart zero sweep records")
    width, height = 640, 400
    left, right, top, bottom = 60, 150, 20, 40
    plot_w = width - left - right
    plot_h = height - top - bottom
    ts = [rec.t for rec in records]
    t_min, t_max = min(ts), max(ts)
    t_span = (t_max - t_min) or 1.0

    def sx(t: float) -> float:
        return left + (t - t_min) / t_span * plot_w

    def sy(v: float) -> float:
        return top + (1.0 - v) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#999"/>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = sy(frac)
        parts.append(
            f'<line x1="{left}" y1="{y:.2f}" x2="{left + plot_w}" y2="{y:.2f}" stroke="#eee"/>'
        )
        parts.append(
            f'<text x="{left - 8}" y="{y + 4:.2f}" font-size="12" text-anchor="end">{frac:g}</text>'
        )
    for t in ts:
        parts.append(
            f'<text x="{sx(t):.2f}" y="{height - bottom + 16}" font-size="12" text-anchor="middle">{t:g}</text>'
        )
    parts.append(
        f'<text x="{left + plot_w / 2:.2f}" y="{height - 6}" font-size="13" text-anchor="middle">'
        "retained top percentage</text>"
    )
    for i, (name, color) in enumerate(_SVG_SERIES):
        points = [
            f"{sx(rec.t):.2f},{sy(value):.2f}"
            for rec in records
            if (value := getattr(rec.metrics, name)) is not None
        ]
        if points:
            parts.append(
                f'<polyline points="{" ".join(points)}" fill="none" stroke="{color}" stroke-width="2"/>'
            )
        ly = top + 16 + 18 * i
        parts.append(
            f'<line x1="{width - right + 10}" y1="{ly}" x2="{width - right + 34}" y2="{ly}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        parts.append(f'<text x="{width - right + 40}" y="{ly + 4}" font-size="12">{name}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def run_experiment(
    seed: int,
    params: FaceParams = DEFAULT_FACE_PARAMS,
    counts: SplitCounts = SplitCounts(),
    top_percent: float = 29.0,
    final_epochs: int = 30,
    use_mask: bool = True,
    variant: str = "tiny",
    tcfg: TrainConfig | None = None,
    out_dir: str | Path | None = None,
) -> dict:
    """Full pipeline run returning (and optionally writing) the report.

    With use_mask=False the mask stage is skipped entirely, giving the
    original-images baseline for comparison. When out_dir is set, the
    report, checkpoint, training log and (if masked) the mask PNG and its
    sidecar JSON are written there.
    """
    train_data, val_data, test_data = gen_dataset(seed, counts, params)
    mcfg = ModelConfig.for_variant(variant, train_data.dims)
    tcfg = replace(tcfg or TrainConfig(epochs=final_epochs), epochs=final_epochs)

    mask: BinaryMask | None = None
    mask_report: MaskBuildReport | None = None
    if use_mask:
        mask, mask_report = build_mask(
            train_data, MaskSpec(top_percent=top_percent, dims=train_data.dims)
        )
        train_data = mask_dataset(train_data, mask)
        val_data = mask_dataset(val_data, mask)
        test_data = mask_dataset(test_data, mask)

    model = train(train_data, val_data, mcfg, tcfg)
    test_pred = predict(model, test_data)
    cm = confusion(test_pred, test_data.labels)
    metrics = compute_metrics(cm)

    report: dict = {
        "format_version": 1,
        "seed": seed,
        "use_mask": use_mask,
        "top_percent": top_percent if use_mask else None,
        "counts": counts.to_dict(),
        "face_params": params.to_dict(),
        "model_config": mcfg.to_dict(),
        "train_config": tcfg.to_dict(),
        "mask": None,
        "privacy_audit": None,
        "test_confusion": cm.to_dict(),
        "test_metrics": metrics.to_dict(),
        "training_log": model.log,
    }
    if mask is not None and mask_report is not None:
        report["mask"] = {"report": mask_report.to_dict(), "sha256": mask.sha256()}
        report["privacy_audit"] = privacy_audit(mask, params.landmark_boxes()).to_dict()

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / REPORT_NAME).write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n"
        )
        save_checkpoint(model, out_dir / CHECKPOINT_NAME)
        save_training_log(model, out_dir / TRAINING_LOG_NAME)
        if mask is not None and mask_report is not None:
            save_mask(mask, out_dir / MASK_PNG_NAME)
            save_mask_report(mask_report, out_dir / MASK_REPORT_NAME)
    return report


def _format_metric(value: float | None) -> str:
    return "undef" if value is None else f"{value:.4f}"


def comparison_table(unmasked_report: dict, masked_report: dict) -> str:
    """Two-row masked-versus-original comparison over the four metrics."""
    header = f"{'Images Used':<18}{'Accuracy':>10}{'Recall':>10}{'Precision':>11}{'F1':>10}"
    rows = [header, "-" * len(header)]
    for label, report in (("Original Images", unmasked_report), ("Masked Images", masked_report)):
        m = report["test_metrics"]
        rows.append(
            f"{label:<18}"
            f"{_format_metric(m['accuracy']):>10}"
            f"{_format_metric(m['recall']):>10}"
            f"{_format_metric(m['precision']):>11}"
            f"{_format_metric(m['f1']):>10}"
        )
    return "\n".join(rows)
