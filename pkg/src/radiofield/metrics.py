"""Evaluation metrics: grouped median RMSE, SNR, and windowed SSIM.

Conventions, since every published variant differs somewhere:

* median_rmse groups observations (per gateway when tags provide one, else
  per record), takes each group's RMSE, then the median across groups.
* snr_db treats the residual as noise: 10*log10(mean|truth|^2 /
  mean|pred - truth|^2).  An exact match has no noise power and is reported
  as +inf rather than some large number.
* ssim follows the standard two-factor form with c1 = (k1*L)^2 and
  c2 = (k2*L)^2, uniform (box) windows by default, population statistics
  per window, and the mean over all fully contained window positions.
  Gaussian window weighting is available but off by default.

All functions are pure.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataIoError, DomainError

SSIM_K1 = 0.01
SSIM_K2 = 0.03
DEFAULT_SSIM_WINDOW = 7


@dataclass
class MetricReport:
    """One metric over a record set, with the per-group/record breakdown."""

    name: str
    value: float
    per_record: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self) -> None:
        self.per_record = np.asarray(self.per_record, dtype=np.float64)
        if self.name not in ("median_rmse_db", "snr_db", "ssim"):
            raise DomainError(f"unknown metric name {self.name!r}")
        if self.name == "median_rmse_db" and self.value < 0:
            raise DomainError("median RMSE cannot be negative")
        if self.name == "ssim" and not -1.0 <= self.value <= 1.0:
            raise DomainError(f"ssim must lie in [-1, 1], got {self.value}")


def median_rmse(
    pred: np.ndarray, truth: np.ndarray, groups: Sequence | None = None
) -> float:
    """Median over groups of the per-group RMSE, in dB.

    groups assigns each observation to a group (e.g. its gateway); None
    puts every observation in its own group, making the per-group RMSE the
    absolute error.  A single group's median is its own RMSE.
    """
    return _median_rmse_report(pred, truth, groups)[0]


def _median_rmse_report(
    pred: np.ndarray, truth: np.ndarray, groups: Sequence | None
) -> tuple[float, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    t = np.asarray(truth, dtype=np.float64).reshape(-1)
    if p.size == 0:
        raise DomainError("median_rmse needs at least one observation")
    if p.shape != t.shape:
        raise DomainError(f"pred and truth lengths differ: {p.shape} vs {t.shape}")
    if groups is None:
        labels = list(range(p.size))
    else:
        labels = list(groups)
        if len(labels) != p.size:
            raise DomainError(f"got {len(labels)} group labels for {p.size} observations")
    sq = (p - t) ** 2
    order: list = []
    members: dict = {}
    for i, g in enumerate(labels):
        if g not in members:
            members[g] = []
            order.append(g)
        members[g].append(i)
    rmses = np.array([math.sqrt(np.mean(sq[members[g]])) for g in order])
    return float(np.median(rmses)), rmses


def snr_db(pred: np.ndarray, truth: np.ndarray) -> float:
    """Signal-to-residual power ratio in dB; +inf on an exact match."""
    p = np.asarray(pred)
    t = np.asarray(truth)
    if p.shape != t.shape:
        raise DomainError(f"pred and truth shapes differ: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise DomainError("snr_db needs at least one element")
    p_signal = float(np.mean(np.abs(t) ** 2))
    if p_signal == 0.0:
        raise DomainError("truth is all-zero; SNR undefined")
    p_noise = float(np.mean(np.abs(p - t) ** 2))
    if p_noise == 0.0:
        return math.inf
    return 10.0 * math.log10(p_signal / p_noise)


def _window_weights(window: int, gaussian: bool) -> np.ndarray:
    if not gaussian:
        w = np.ones((window, window))
    else:
        sigma = 1.5
        ax = np.arange(window, dtype=np.float64) - (window - 1) / 2.0
        g = np.exp(-(ax**2) / (2.0 * sigma**2))
        w = np.outer(g, g)
    return w / w.sum()


def ssim(
    x: np.ndarray,
    y: np.ndarray,
    window: int = DEFAULT_SSIM_WINDOW,
    dynamic_range: float = 1.0,
    gaussian: bool = False,
) -> float:
    """Mean structural similarity over sliding windows.

    x and y are real matrices with values in [0, dynamic_range]; window must
    be odd and fit inside both dimensions.  Statistics are population
    moments per window position; the two-factor form is

        (2 mx my + c1)(2 sxy + c2) / ((mx^2 + my^2 + c1)(sx^2 + sy^2 + c2))
    """
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DomainError("ssim expects 2-D real matrices")
    if a.shape != b.shape:
        raise DomainError(f"ssim shapes differ: {a.shape} vs {b.shape}")
    if window % 2 == 0 or window < 1:
        raise DomainError(f"window must be odd and positive, got {window}")
    if window > min(a.shape):
        raise DomainError(f"window {window} exceeds matrix dimensions {a.shape}")
    if dynamic_range <= 0:
        raise DomainError("dynamic_range must be positive")
    for name, m in (("x", a), ("y", b)):
        if not np.all(np.isfinite(m)):
            raise DomainError(f"{name} must be finite")
        if m.min() < 0.0 or m.max() > dynamic_range:
            raise DomainError(f"{name} values must lie in [0, {dynamic_range}]")

    c1 = (SSIM_K1 * dynamic_range) ** 2
    c2 = (SSIM_K2 * dynamic_range) ** 2
    w = _window_weights(window, gaussian)
    win_a = np.lib.stride_tricks.sliding_window_view(a, (window, window))
    win_b = np.lib.stride_tricks.sliding_window_view(b, (window, window))
    mu_a = np.tensordot(win_a, w, axes=([2, 3], [0, 1]))
    mu_b = np.tensordot(win_b, w, axes=([2, 3], [0, 1]))
    e_aa = np.tensordot(win_a * win_a, w, axes=([2, 3], [0, 1]))
    e_bb = np.tensordot(win_b * win_b, w, axes=([2, 3], [0, 1]))
    e_ab = np.tensordot(win_a * win_b, w, axes=([2, 3], [0, 1]))
    var_a = e_aa - mu_a**2
    var_b = e_bb - mu_b**2
    cov = e_ab - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def report_median_rmse(
    pred: np.ndarray, truth: np.ndarray, groups: Sequence | None = None
) -> MetricReport:
    value, rmses = _median_rmse_report(pred, truth, groups)
    return MetricReport("median_rmse_db", value, per_record=rmses)


def report_snr(preds: Sequence[np.ndarray], truths: Sequence[np.ndarray]) -> MetricReport:
    """Aggregate SNR over the pooled records, plus per-record values.

    The headline value pools power across records (one big residual ratio),
    which keeps a single perfectly matched record from dragging the mean to
    +inf.
    """
    if len(preds) != len(truths) or len(preds) == 0:
        raise DomainError("report_snr needs matching non-empty prediction/truth lists")
    per = np.array([snr_db(p, t) for p, t in zip(preds, truths)])
    pooled_pred = np.concatenate([np.asarray(p).reshape(-1) for p in preds])
    pooled_truth = np.concatenate([np.asarray(t).reshape(-1) for t in truths])
    return MetricReport("snr_db", snr_db(pooled_pred, pooled_truth), per_record=per)


def report_ssim(
    preds: Sequence[np.ndarray],
    truths: Sequence[np.ndarray],
    window: int = DEFAULT_SSIM_WINDOW,
) -> MetricReport:
    if len(preds) != len(truths) or len(preds) == 0:
        raise DomainError("report_ssim needs matching non-empty prediction/truth lists")
    per = np.array([ssim(p, t, window=window) for p, t in zip(preds, truths)])
    return MetricReport("ssim", float(np.mean(per)), per_record=per)


def reports_to_csv(reports: Sequence[MetricReport], path) -> None:
    """One row per metric: name, value (inf serialized as 'inf')."""
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["name", "value"])
            for r in reports:
                writer.writerow([r.name, repr(float(r.value))])
    except OSError as e:
        raise DataIoError(f"failed to write metric csv {path}: {e}") from e
