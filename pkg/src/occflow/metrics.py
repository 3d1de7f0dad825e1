"""Evaluation metrics: EPE, F-measure, outlier rates, boundary AP, scene flow.

Boundary average precision uses tolerant greedy one-to-one matching within a
pixel radius (default 0.0075 * image diagonal) because thin boundary rasters
rarely align pixel-exact. The radius is reported with every result.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .fields import BoundaryMap, DisparityMap, FieldError, FlowField

__all__ = [
    "EvalReport",
    "epe",
    "f_measure",
    "outlier_rate",
    "endpoint_error_map",
    "boundary_map_ap",
    "default_match_radius",
    "sceneflow_outliers",
]


class MetricError(FieldError):
    """Raised for empty regions or mismatched metric inputs."""


def _region_mask(pred, gt, region):
    h, w = gt.height, gt.width
    if (pred.height, pred.width) != (h, w):
        raise MetricError("metric shape mismatch between pred and gt")
    mask = np.ones((h, w), dtype=bool)
    if region is not None:
        region = region.bool_mask() if hasattr(region, "bool_mask") else np.asarray(region, bool)
        if region.shape != (h, w):
            raise MetricError("region shape mismatch")
        mask &= region
    if hasattr(gt, "valid_mask"):
        mask &= gt.valid_mask()
    if hasattr(pred, "valid_mask"):
        mask &= pred.valid_mask()
    if not mask.any():
        raise MetricError("empty evaluation region")
    return mask


def endpoint_error_map(pred, gt) -> np.ndarray:
    """Per-pixel endpoint error: Euclidean for flow, absolute for disparity."""
    if isinstance(gt, FlowField):
        return np.linalg.norm(pred.data - gt.data, axis=-1)
    if isinstance(gt, DisparityMap):
        return np.abs(pred.data - gt.data)
    raise MetricError(f"unsupported field type {type(gt).__name__}")


def epe(pred, gt, region=None) -> float:
    """Mean endpoint error over the valid evaluation region."""
    mask = _region_mask(pred, gt, region)
    return float(endpoint_error_map(pred, gt)[mask].mean())


def f_measure(pred, gt):
    """(precision, recall, F) of the positive class of two binary masks.

    Precision (recall) is defined as 1 when there are no predicted (ground
    truth) positives; F is 1 when both masks are empty.
    """
    p = pred.bool_mask()
    g = gt.bool_mask()
    if p.shape != g.shape:
        raise MetricError("mask shape mismatch")
    tp = float(np.count_nonzero(p & g))
    np_pred = float(np.count_nonzero(p))
    np_gt = float(np.count_nonzero(g))
    precision = tp / np_pred if np_pred else 1.0
    recall = tp / np_gt if np_gt else 1.0
    if np_pred == 0 and np_gt == 0:
        return 1.0, 1.0, 1.0
    f = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f


def outlier_rate(pred, gt, region=None, threshold_px: float = 3.0,
                 kitti_joint: bool = False) -> float:
    """Percentage of region pixels whose endpoint error exceeds the threshold.

    With kitti_joint, a pixel is an outlier only if the error additionally
    exceeds 5% of the ground-truth magnitude (the official KITTI rule).
    """
    mask = _region_mask(pred, gt, region)
    err = endpoint_error_map(pred, gt)
    outliers = err > threshold_px
    if kitti_joint:
        if isinstance(gt, FlowField):
            mag = np.linalg.norm(gt.data, axis=-1)
        else:
            mag = np.abs(gt.data)
        outliers &= err > 0.05 * mag
    return float(100.0 * outliers[mask].mean())


def default_match_radius(width: int, height: int) -> float:
    return 0.0075 * float(np.hypot(width, height))


def boundary_map_ap(soft_pred, gt: BoundaryMap, match_radius_px=None) -> float:
    """Average precision of a soft boundary map against a binary one.

    Thresholds sweep the distinct soft values (prediction = soft > t), so the
    result is invariant to strictly monotone remapping of the soft values.
    At each threshold, predicted pixels are greedily matched one-to-one to
    ground-truth pixels within the match radius; AP integrates the precision
    envelope over recall.
    """
    soft = soft_pred.soft if hasattr(soft_pred, "soft") else np.asarray(soft_pred, float)
    if soft is None:
        soft = soft_pred.labels.astype(np.float64)
    g = gt.bool_mask()
    if soft.shape != g.shape:
        raise MetricError("boundary map shape mismatch")
    if match_radius_px is None:
        match_radius_px = default_match_radius(gt.width, gt.height)

    gt_pts = np.argwhere(g)
    n_gt = len(gt_pts)
    tree = cKDTree(gt_pts) if n_gt else None

    points = []  # (recall, precision)
    for t in np.unique(soft):
        p = soft > t
        n_pred = int(p.sum())
        if n_pred == 0:
            points.append((0.0, 1.0))
            continue
        if n_gt == 0:
            points.append((1.0, 0.0))
            continue
        tp = _greedy_match_count(np.argwhere(p), gt_pts, tree, match_radius_px)
        points.append((tp / n_gt, tp / n_pred))

    if not points:
        return 0.0
    points.sort()
    recalls = np.array([r for r, _ in points])
    precisions = np.array([p for _, p in points])
    # Precision envelope: best precision achievable at recall >= r.
    envelope = np.maximum.accumulate(precisions[::-1])[::-1]
    ap = 0.0
    prev_r = 0.0
    for r, p in zip(recalls, envelope):
        ap += (r - prev_r) * p
        prev_r = r
    return float(ap)


def _greedy_match_count(pred_pts, gt_pts, tree, radius) -> int:
    """One-to-one matching by increasing distance; deterministic tie order."""
    pairs = tree.query_ball_point(pred_pts, r=radius + 1e-12)
    cand = []
    for i, nbrs in enumerate(pairs):
        for j in nbrs:
            d = np.hypot(*(pred_pts[i] - gt_pts[j]))
            cand.append((d, i, j))
    cand.sort()
    used_pred = set()
    used_gt = set()
    matches = 0
    for _, i, j in cand:
        if i in used_pred or j in used_gt:
            continue
        used_pred.add(i)
        used_gt.add(j)
        matches += 1
    return matches


def sceneflow_outliers(d1_pred, d1_gt, d2_pred, d2_gt, fl_pred, fl_gt,
                       region=None, threshold_px: float = 3.0,
                       kitti_joint: bool = False):
    """KITTI-style scene flow rates (D1, D2, Fl, SF) in percent.

    D1/D2/Fl are per-channel outlier rates; SF counts pixels that are
    outliers in any of the three channels.
    """
    masks = []
    errs = []
    for pred, gt in ((d1_pred, d1_gt), (d2_pred, d2_gt), (fl_pred, fl_gt)):
        mask = _region_mask(pred, gt, region)
        err = endpoint_error_map(pred, gt)
        out = err > threshold_px
        if kitti_joint:
            mag = (np.linalg.norm(gt.data, axis=-1)
                   if isinstance(gt, FlowField) else np.abs(gt.data))
            out &= err > 0.05 * mag
        masks.append(mask)
        errs.append(out)
    joint = masks[0] & masks[1] & masks[2]
    if not joint.any():
        raise MetricError("empty joint evaluation region")
    rates = [float(100.0 * e[m].mean()) for e, m in zip(errs, masks)]
    union = (errs[0] | errs[1] | errs[2])[joint]
    return rates[0], rates[1], rates[2], float(100.0 * union.mean())


@dataclass
class EvalReport:
    """Named metric results with a per-sample breakdown."""

    name: str
    scalars: dict = field(default_factory=dict)
    per_sample: list = field(default_factory=list)  # list of dicts
    params: dict = field(default_factory=dict)

    def add_sample(self, sample_id, **metrics):
        row = {"sample": sample_id}
        row.update(metrics)
        self.per_sample.append(row)

    def summarize(self, keys=None):
        """Fill scalars with the mean of each per-sample metric."""
        if not self.per_sample:
            return self
        keys = keys or [k for k in self.per_sample[0] if k != "sample"]
        for k in keys:
            vals = [row[k] for row in self.per_sample if k in row]
            self.scalars[k] = float(np.mean(vals))
        return self

    def _columns(self):
        cols = ["sample"]
        for row in self.per_sample:
            for k in row:
                if k not in cols:
                    cols.append(k)
        for k in self.scalars:
            if k not in cols:
                cols.append(k)
        return cols

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = self._columns()
        writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        writer.writeheader()
        for row in self.per_sample:
            writer.writerow({k: _fmt(row.get(k, "")) for k in cols})
        summary = {"sample": "summary"}
        summary.update({k: _fmt(v) for k, v in self.scalars.items()})
        writer.writerow(summary)
        return buf.getvalue()

    def to_text(self) -> str:
        cols = self._columns()
        rows = [[str(c) for c in cols]]
        for row in self.per_sample:
            rows.append([_fmt(row.get(k, "")) for k in cols])
        summary = {"sample": "summary", **self.scalars}
        rows.append([_fmt(summary.get(k, "")) for k in cols])
        widths = [max(len(r[i]) for r in rows) for i in range(len(cols))]
        lines = [f"# {self.name}"]
        if self.params:
            lines.append("# " + "  ".join(f"{k}={_fmt(v)}" for k, v in self.params.items()))
        for i, r in enumerate(rows):
            lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
            if i == 0:
                lines.append("-" * (sum(widths) + 2 * (len(widths) - 1)))
        return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)
