"""Matching predictions to ground truth and the IOU / confidence / confusion report."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .boxes import BoundingBox, iou
from .categories import CATEGORY_NAMES, NUM_CLASSES

FORMAT_VERSION = 1

__all__ = [
    "EvaluationReport",
    "MatchResult",
    "build_report",
    "evaluate_predictions",
    "export_plots",
    "iou",
    "match_detections",
]


@dataclass(frozen=True)
class MatchResult:
    """Outcome for one ground-truth object.

    ``pred_label``/``true_label`` are set only when ``matched``;
    ``gt_label`` always records the object's category. For unmatched objects
    ``iou`` is the best overlap with any prediction left unmatched (0 if none).
    """

    image_id: str
    matched: bool
    iou: float
    pred_label: Optional[int]
    true_label: Optional[int]
    pred_confidence: float
    gt_label: int = -1
    pred_index: Optional[int] = None
    gt_index: Optional[int] = None


def match_detections(
    preds: Sequence,
    gts: Sequence[tuple[BoundingBox, int]],
    iou_threshold: float = 0.5,
    image_id: str = "",
) -> list[MatchResult]:
    """Greedy one-to-one matching, one result per ground-truth object.

    Predictions are visited by descending confidence (stable on ties); each
    takes the still-unmatched ground truth with the highest IOU and counts as
    a match when that IOU reaches ``iou_threshold``. Predictions that find no
    free ground truth are duplicates and are dropped. Predictions need
    ``box``, ``label`` and ``confidence`` attributes.
    """
    order = sorted(range(len(preds)), key=lambda i: -preds[i].confidence)
    free = list(range(len(gts)))
    matched: dict[int, MatchResult] = {}
    for pi in order:
        if not free:
            break
        p = preds[pi]
        overlaps = [iou(p.box, gts[g][0]) for g in free]
        best = int(np.argmax(overlaps))
        if overlaps[best] >= iou_threshold:
            g = free.pop(best)
            matched[g] = MatchResult(
                image_id, True, overlaps[best], int(p.label), int(gts[g][1]), float(p.confidence),
                int(gts[g][1]), pi, g,
            )
    used = {m.pred_index for m in matched.values()}
    leftover = [pi for pi in order if pi not in used]
    out = []
    for g, (box, label) in enumerate(gts):
        if g in matched:
            out.append(matched[g])
            continue
        best_iou, best_conf = 0.0, 0.0
        for pi in leftover:
            v = iou(preds[pi].box, box)
            if v > best_iou:
                best_iou, best_conf = v, float(preds[pi].confidence)
        out.append(MatchResult(image_id, False, best_iou, None, None, best_conf, int(label), None, g))
    return out


@dataclass
class EvaluationReport:
    iou_edges: list[float]
    iou_histogram: list[int]
    confidence_edges: list[float]
    confidence_histogram: list[int]
    confusion: list[list[int]]
    accuracy: Optional[float]
    accuracy_with_misdetections: Optional[float]
    per_class_precision: list[float]
    per_class_recall: list[float]
    per_class_f1: list[float]
    macro_f1: float
    micro_f1: Optional[float]
    matched: int
    misdetections: int
    misdetected_images: int
    total_images: int
    total_objects: int
    per_class_misdetections: list[int]
    accuracy_defined: bool = True
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "extra"}
        d = {"format_version": FORMAT_VERSION, "categories": list(CATEGORY_NAMES[: len(self.confusion)]), **d}
        d.update(self.extra)
        return d


def _histogram(values, bins: int) -> tuple[list[float], list[int]]:
    v = np.clip(np.asarray(list(values), dtype=np.float64), 0.0, 1.0)
    counts, edges = np.histogram(v, bins=bins, range=(0.0, 1.0))
    return [float(e) for e in edges], [int(c) for c in counts]


def build_report(
    matches: Sequence[MatchResult],
    bins: int = 20,
    num_classes: int = NUM_CLASSES,
    confidences: Optional[Sequence[float]] = None,
) -> EvaluationReport:
    """Aggregate match results into histograms, confusion matrix and scores.

    Classification metrics use matched objects only; unmatched objects are
    counted as mis-detections. ``accuracy_with_misdetections`` treats them as
    errors instead. ``confidences`` overrides the matched-prediction
    confidences used for the confidence histogram.
    """
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    hit = [m for m in matches if m.matched]
    for m in hit:
        confusion[m.true_label, m.pred_label] += 1
    total = int(confusion.sum())
    tp = np.diag(confusion)
    pred_tot = confusion.sum(axis=0)
    true_tot = confusion.sum(axis=1)
    precision, recall, f1 = [], [], []
    for k in range(num_classes):
        p = int(tp[k]) / int(pred_tot[k]) if pred_tot[k] else 0.0
        r = int(tp[k]) / int(true_tot[k]) if true_tot[k] else 0.0
        precision.append(p)
        recall.append(r)
        f1.append(2 * p * r / (p + r) if p + r > 0 else 0.0)
    trace = int(tp.sum())
    misses = [m for m in matches if not m.matched]
    images = {m.image_id for m in matches}
    hit_images = {m.image_id for m in hit}
    per_class_miss = [0] * num_classes
    for m in misses:
        if 0 <= m.gt_label < num_classes:
            per_class_miss[m.gt_label] += 1
    iou_edges, iou_hist = _histogram((m.iou for m in hit), bins)
    conf_values = confidences if confidences is not None else [m.pred_confidence for m in hit]
    conf_edges, conf_hist = _histogram(conf_values, bins)
    accuracy = trace / total if total else None
    return EvaluationReport(
        iou_edges=iou_edges,
        iou_histogram=iou_hist,
        confidence_edges=conf_edges,
        confidence_histogram=conf_hist,
        confusion=confusion.tolist(),
        accuracy=accuracy,
        accuracy_with_misdetections=trace / (total + len(misses)) if total + len(misses) else None,
        per_class_precision=precision,
        per_class_recall=recall,
        per_class_f1=f1,
        macro_f1=math.fsum(f1) / num_classes,
        micro_f1=accuracy,
        matched=total,
        misdetections=len(misses),
        misdetected_images=len(images - hit_images),
        total_images=len(images),
        total_objects=len(matches),
        per_class_misdetections=per_class_miss,
        accuracy_defined=total > 0,
    )


def evaluate_predictions(
    predictions: Mapping[str, Sequence],
    ground_truth: Mapping[str, Sequence[tuple[BoundingBox, int]]],
    iou_threshold: float = 0.5,
    bins: int = 20,
    histogram_source: str = "matched",
    label_views: Optional[Mapping[str, Callable]] = None,
) -> dict[str, EvaluationReport]:
    """Match every image and build one report per label view.

    ``label_views`` maps a view name to a function giving the predicted
    label of a prediction (e.g. detector-only or SVM-only argmax). Matching
    is done once, on the fused predictions, so all views share it.
    """
    views = {"fused": None, **(label_views or {})}
    all_matches = []
    for image_id in sorted(ground_truth):
        preds = list(predictions.get(image_id, ()))
        for m in match_detections(preds, ground_truth[image_id], iou_threshold, image_id):
            all_matches.append((m, preds))
    confidences = None
    if histogram_source == "all":
        confidences = [p.confidence for i in sorted(ground_truth) for p in predictions.get(i, ())]
    reports = {}
    for name, fn in views.items():
        ms = [
            m if fn is None or not m.matched else replace(m, pred_label=int(fn(preds[m.pred_index])))
            for m, preds in all_matches
        ]
        reports[name] = build_report(ms, bins=bins, confidences=confidences)
    return reports


def write_report_json(report: EvaluationReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_json(), indent=1, sort_keys=True) + "\n")


def write_confusion_csv(report: EvaluationReport, path: str | Path) -> None:
    names = CATEGORY_NAMES[: len(report.confusion)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true \\ predicted", *names])
        for name, row in zip(names, report.confusion):
            w.writerow([name, *row])


def export_plots(report: EvaluationReport, out_dir: str | Path) -> dict[str, Path]:
    """Write iou_hist.png, confidence_hist.png, confusion_matrix.png, report.json, confusion.csv."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "iou_hist": out / "iou_hist.png",
        "confidence_hist": out / "confidence_hist.png",
        "confusion_matrix": out / "confusion_matrix.png",
        "report": out / "report.json",
        "confusion_csv": out / "confusion.csv",
    }
    for key, edges, counts, xlabel in (
        ("iou_hist", report.iou_edges, report.iou_histogram, "IOU (predicted vs. ground-truth box)"),
        ("confidence_hist", report.confidence_edges, report.confidence_histogram, "confidence"),
    ):
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.bar(edges[:-1], counts, width=np.diff(edges), align="edge", edgecolor="black")
        ax.set_xlim(0, 1)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("count")
        if sum(counts) == 0:
            ax.text(0.5, 0.5, "no data", ha="center", va="center", transform=ax.transAxes)
        fig.tight_layout()
        fig.savefig(paths[key], metadata={"Software": None})
        plt.close(fig)

    cm = np.asarray(report.confusion)
    fig, ax = plt.subplots(figsize=(8, 7))
    ax.imshow(cm, cmap="Blues")
    names = CATEGORY_NAMES[: len(cm)]
    ax.set_xticks(range(len(cm)), names, rotation=60, ha="right", fontsize=7)
    ax.set_yticks(range(len(cm)), names, fontsize=7)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    for i in range(len(cm)):
        for j in range(len(cm)):
            if cm[i, j]:
                ax.text(j, i, int(cm[i, j]), ha="center", va="center", fontsize=7,
                        color="white" if cm[i, j] > cm.max() / 2 else "black")
    if cm.sum() == 0:
        ax.text(0.5, 0.5, "no data", ha="center", va="center", transform=ax.transAxes)
    fig.tight_layout()
    fig.savefig(paths["confusion_matrix"], metadata={"Software": None})
    plt.close(fig)

    write_report_json(report, paths["report"])
    write_confusion_csv(report, paths["confusion_csv"])
    return paths
