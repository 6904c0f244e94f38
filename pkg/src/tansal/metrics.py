"""Evaluation metrics for saliency: NSS, KLD, CC, SIM, plus batch reports.

Metrics accept raw non-negative maps and normalize internally (z-score for
NSS, sum-normalization for KLD and SIM), so they are invariant to positive
rescaling of the prediction. CC and KLD reuse the loss implementations so the
two can never drift apart.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .losses import EPS, cc_loss, kld_loss

METRIC_NAMES = ("nss", "kld", "cc", "sim")


def _select(arr: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if mask is None:
        return arr
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != arr.shape:
        raise ValueError("mask shape does not match map shape")
    return arr[mask]


def _sum_normalize(arr: np.ndarray) -> np.ndarray:
    total = arr.sum()
    if total <= 0:
        raise ValueError("cannot normalize a map with non-positive mass")
    return arr / total


def nss(p, q_f, mask=None) -> float:
    """Mean z-scored prediction value at fixation pixels (population std)."""
    p = _select(p, mask)
    fix = _select(q_f, mask) > 0
    if not fix.any():
        raise ValueError("fixation map has no fixations")
    std = p.std()
    if std == 0.0:
        warnings.warn("zero-variance map in NSS; returning 0", RuntimeWarning)
        return 0.0
    z = (p - p.mean()) / std
    return float(z[fix].mean())


def kld_metric(p, q_s, mask=None, eps: float = EPS) -> float:
    """KL divergence after sum-normalizing both maps (lower is better)."""
    p = _sum_normalize(_select(p, mask))
    q = _sum_normalize(_select(q_s, mask))
    return float(kld_loss(p, q, eps=eps))


def cc_metric(p, q_s, mask=None) -> float:
    """Pearson correlation (higher is better); exactly 1 - cc_loss."""
    return float(1.0 - cc_loss(_select(p, mask), _select(q_s, mask)))


def sim(p, q_s, mask=None) -> float:
    """Histogram intersection of the sum-normalized maps, in [0, 1]."""
    p = _sum_normalize(_select(p, mask))
    q = _sum_normalize(_select(q_s, mask))
    return float(np.minimum(p, q).sum())


@dataclass
class MetricReport:
    """Per-frame metric values plus their arithmetic means."""

    frame_ids: list = field(default_factory=list)
    nss: list = field(default_factory=list)
    kld: list = field(default_factory=list)
    cc: list = field(default_factory=list)
    sim: list = field(default_factory=list)
    coverage_fraction: float = 1.0

    @property
    def n_frames(self) -> int:
        return len(self.frame_ids)

    def means(self) -> dict:
        return {
            name: float(np.mean(getattr(self, name))) if self.n_frames else float("nan")
            for name in METRIC_NAMES
        }

    def row(self, i: int) -> dict:
        return {name: getattr(self, name)[i] for name in METRIC_NAMES}


def evaluate_batch(predictions, ground_truths, fixations, frame_ids=None,
                   mask=None) -> MetricReport:
    """Score aligned prediction/ground-truth/fixation sequences frame by frame."""
    n = len(predictions)
    if len(ground_truths) != n or len(fixations) != n:
        raise ValueError("prediction, ground-truth and fixation counts differ")
    if frame_ids is None:
        frame_ids = [f"{i:06d}" for i in range(n)]
    elif len(frame_ids) != n:
        raise ValueError("frame id count differs from frame count")

    report = MetricReport(
        coverage_fraction=1.0 if mask is None else float(np.asarray(mask, dtype=bool).mean())
    )
    for fid, p, q_s, q_f in zip(frame_ids, predictions, ground_truths, fixations):
        report.frame_ids.append(str(fid))
        report.nss.append(nss(p, q_f, mask=mask))
        report.kld.append(kld_metric(p, q_s, mask=mask))
        report.cc.append(cc_metric(p, q_s, mask=mask))
        report.sim.append(sim(p, q_s, mask=mask))
    return report


def write_report_csv(report: MetricReport, path: str):
    """One row per frame plus a final mean row; floats written via repr."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_id", *METRIC_NAMES])
        for i, fid in enumerate(report.frame_ids):
            row = report.row(i)
            writer.writerow([fid, *(repr(row[name]) for name in METRIC_NAMES)])
        means = report.means()
        writer.writerow(["mean", *(repr(means[name]) for name in METRIC_NAMES)])


def read_report_csv(path: str) -> MetricReport:
    """Parse a report written by write_report_csv; the mean row is recomputed."""
    report = MetricReport()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["frame_id", *METRIC_NAMES]:
            raise ValueError(f"unexpected report header: {header}")
        for row in reader:
            if row[0] == "mean":
                continue
            report.frame_ids.append(row[0])
            for name, value in zip(METRIC_NAMES, row[1:]):
                getattr(report, name).append(float(value))
    return report
