"""Segmentation and reconstruction metrics, plus the (P, L) grid search."""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass

import numpy as np

from .anomaly import InferenceConfig, detect
from .validation import check_same_shape

PSNR_CAP = 99.0

AGGREGATE_FIELDS = ["P", "L", "mean_dice", "std_dice", "mean_auprc", "mean_psnr",
                    "mean_mask_fraction", "mean_seconds"]
ROW_FIELDS = ["image_id", "group", "P", "L", "dice", "auprc", "psnr", "mask_fraction", "seconds"]


class UndefinedMetricError(ValueError):
    pass


@dataclass
class MetricsRow:
    image_id: str
    dice: float
    auprc: float
    psnr: float
    mask_fraction: float
    seconds: float = float("nan")
    group: str = "anomalous"
    P: float = float("nan")
    L: int = 0


def dice(pred, truth) -> float:
    """2|A & B| / (|A| + |B|); two empty masks score 1."""
    pred, truth = check_same_shape(np.asarray(pred, dtype=bool), np.asarray(truth, dtype=bool),
                                   ("pred", "truth"))
    total = int(pred.sum()) + int(truth.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(pred, truth).sum()) / total


def auprc(scores, truth) -> float:
    """Area under the precision-recall curve with step-wise interpolation.

    Tied scores form a single threshold.  Equivalent to average precision.
    """
    scores, truth = check_same_shape(np.asarray(scores, dtype=np.float64).ravel(),
                                     np.asarray(truth, dtype=bool).ravel(), ("scores", "truth"))
    n_pos = int(truth.sum())
    if n_pos == 0:
        raise UndefinedMetricError("AUPRC is undefined without positive pixels")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], truth[order]
    tp = np.cumsum(y)
    # last index of each run of equal scores
    ends = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = tp[ends]
    predicted = ends + 1
    precision = tp / predicted
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def psnr(x, x_hat, cap: float = PSNR_CAP) -> float:
    """Peak signal-to-noise ratio for data range 1, capped at ``cap`` dB."""
    x, x_hat = check_same_shape(np.asarray(x, dtype=np.float64),
                                np.asarray(x_hat, dtype=np.float64), ("x", "x_hat"))
    mse = float(np.mean((x - x_hat) ** 2))
    if mse < 1e-10:
        return cap
    return min(10.0 * math.log10(1.0 / mse), cap)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(round(float(v), 12))
    return str(v)


def rows_to_csv(rows, fields) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        d = r if isinstance(r, dict) else r.__dict__
        w.writerow([_fmt(d[f]) for f in fields])
    return buf.getvalue()


def evaluate(images, masks, codec, denoiser, schedule, cfg: InferenceConfig, group="anomalous",
             id_prefix=None, auprc_on_filtered=False, timing=False, masked=True):
    """Run inference on a set of images and score each one.

    ``masks`` may be ``None`` for healthy sets, in which case Dice compares
    against an empty mask and AUPRC is left undefined (NaN).
    """
    images = np.asarray(images)
    prefix = group if id_prefix is None else id_prefix
    start = time.perf_counter()
    results = detect(images, codec, denoiser, schedule, cfg, masked=masked)
    per_image = (time.perf_counter() - start) / len(images) if timing else float("nan")
    rows = []
    for i, (x, r) in enumerate(zip(images, results)):
        truth = np.zeros(r.segmentation.shape, dtype=bool) if masks is None else masks[i]
        if truth.any():
            score_map = r.anomaly_map
            if auprc_on_filtered:
                from scipy import ndimage
                score_map = ndimage.median_filter(score_map, size=cfg.median_kernel, mode="nearest")
            ap = auprc(score_map, truth)
        else:
            ap = float("nan")
        rows.append(MetricsRow(f"{prefix}-{i:04d}", dice(r.segmentation, truth), ap,
                               psnr(x, r.reconstruction), r.mask_fraction, per_image,
                               group, float(cfg.P), int(cfg.L)))
    return rows


def aggregate(rows, P, L) -> dict:
    """Per-cell means; Dice, AUPRC and PSNR over anomalous images only."""
    sick = [r for r in rows if r.group == "anomalous"]
    dices = np.array([r.dice for r in sick])
    aps = np.array([r.auprc for r in sick if not math.isnan(r.auprc)])
    return {
        "P": float(P), "L": int(L),
        "mean_dice": float(dices.mean()) if dices.size else float("nan"),
        "std_dice": float(dices.std()) if dices.size else float("nan"),
        "mean_auprc": float(aps.mean()) if aps.size else float("nan"),
        "mean_psnr": float(np.mean([r.psnr for r in sick])) if sick else float("nan"),
        "mean_mask_fraction": float(np.mean([r.mask_fraction for r in sick])) if sick else float("nan"),
        "mean_seconds": float(np.mean([r.seconds for r in rows])),
    }


def grid_search(dataset, codec, denoiser, schedule, P_list, L_list, seed, base_cfg=None,
                timing=False, auprc_on_filtered=False):
    """Evaluate every (P, L) cell.

    ``dataset`` is a dict with ``anomalous`` images and ``masks`` and optionally
    ``healthy`` images.  Every cell reuses the same per-image random streams,
    so a cell's numbers do not depend on which other cells are evaluated.
    Returns ``(cells, rows)``.
    """
    if not len(P_list) or not len(L_list):
        raise ValueError("P and L grids must be non-empty")
    base = InferenceConfig() if base_cfg is None else base_cfg
    cells, all_rows = [], []
    for L in L_list:
        for P in P_list:
            cfg = InferenceConfig(**{**base.__dict__, "P": float(P), "L": int(L), "seed": seed})
            rows = evaluate(dataset["anomalous"], dataset["masks"], codec, denoiser, schedule,
                            cfg, "anomalous", timing=timing, auprc_on_filtered=auprc_on_filtered)
            if dataset.get("healthy") is not None:
                rows += evaluate(dataset["healthy"], None, codec, denoiser, schedule, cfg,
                                 "healthy", timing=timing)
            cells.append(aggregate(rows, P, L))
            all_rows.extend(rows)
    return cells, all_rows


def best_cell(cells, metric="mean_dice"):
    return max(cells, key=lambda c: (c[metric], -c["P"], -c["L"]))
