"""Training losses: scaled EPE, weighted cross entropy, Gaussian weight maps
and coefficient balancing.

The EPE loss compares the raw network output f against gt / s, where s is
the prediction scale; the decoded prediction is y = s * f. The historic
scale is 20, the proposed alternative is 1.

The weight map upweights pixels whose neighborhood disagrees on the binary
label: w(x, y) is the Gaussian-weighted fraction of differing neighbors,
normalized over the in-frame neighborhood (center excluded), plus a floor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import FieldError

__all__ = [
    "ScalingScheme",
    "WeightMapParams",
    "LossBundle",
    "epe_loss",
    "weight_map",
    "weighted_cross_entropy",
    "balance_coefficients",
]


@dataclass(frozen=True)
class ScalingScheme:
    """Prediction scale: network output f encodes y = s * f."""

    s: float = 20.0

    def __post_init__(self):
        if self.s <= 0:
            raise FieldError("prediction scale must be > 0")


@dataclass(frozen=True)
class WeightMapParams:
    radius: int = 5
    sigma: float = 2.5
    floor: float = 0.5

    def __post_init__(self):
        if self.radius < 1:
            raise FieldError("weight map radius must be >= 1")
        if self.sigma <= 0:
            raise FieldError("weight map sigma must be > 0")
        if self.floor < 0:
            raise FieldError("weight map floor must be >= 0")


@dataclass
class LossBundle:
    """Named loss terms with coefficients and measured values."""

    entries: list = field(default_factory=list)  # (loss_id, coefficient, value)
    warnings: list = field(default_factory=list)

    def add(self, loss_id: str, coefficient: float, value: float):
        if coefficient <= 0:
            raise FieldError("loss coefficients must be > 0")
        self.entries.append((loss_id, float(coefficient), float(value)))
        return self


def _values(x):
    if isinstance(x, np.ndarray):
        return x.astype(np.float64, copy=False)
    return x.data if hasattr(x, "data") else np.asarray(x, dtype=np.float64)


def epe_loss(f, gt, scheme: ScalingScheme = ScalingScheme()):
    """Mean per-pixel Euclidean distance between f and gt / s.

    f, gt: (H, W, C) arrays (C = 2 for flow) or (H, W) scalar rasters.
    Returns (loss, gradient w.r.t. f).
    """
    f = np.asarray(f, dtype=np.float64)
    g = _values(gt)
    if f.shape != g.shape:
        raise FieldError(f"epe_loss shape mismatch {f.shape} vs {g.shape}")
    diff = f - g / scheme.s
    if diff.ndim == 2:
        diff = diff[..., None]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    n = dist.size
    loss = float(dist.mean())
    safe = np.maximum(dist, 1e-300)
    grad = diff / (safe[..., None] * n)
    grad[dist == 0] = 0.0
    return loss, grad.reshape(np.asarray(f).shape)


def weight_map(labels, params: WeightMapParams = WeightMapParams()) -> np.ndarray:
    """Gaussian-weighted neighborhood-disagreement ratio plus a floor.

    The neighborhood is the (2*radius+1)^2 window without its center,
    truncated at the frame border with renormalization.
    """
    lab = labels.labels if hasattr(labels, "labels") else np.asarray(labels)
    if not np.isin(lab, (0, 1)).all():
        raise FieldError("weight_map labels must be binary")
    lab = lab.astype(np.int8)
    h, w = lab.shape
    r = params.radius
    num = np.zeros((h, w))
    den = np.zeros((h, w))
    for dy in range(-r, r + 1):
        gy = np.exp(-(dy * dy) / (2 * params.sigma**2))
        ys_src = slice(max(dy, 0), h + min(dy, 0))
        ys_dst = slice(max(-dy, 0), h + min(-dy, 0))
        for dx in range(-r, r + 1):
            if dx == 0 and dy == 0:
                continue
            g = gy * np.exp(-(dx * dx) / (2 * params.sigma**2))
            xs_src = slice(max(dx, 0), w + min(dx, 0))
            xs_dst = slice(max(-dx, 0), w + min(-dx, 0))
            disagree = lab[ys_dst, xs_dst] != lab[ys_src, xs_src]
            num[ys_dst, xs_dst] += g * disagree
            den[ys_dst, xs_dst] += g
    return num / den + params.floor


def weighted_cross_entropy(soft_pred, labels, weights, eps: float = 1e-12):
    """Per-pixel binary cross entropy with per-pixel weights.

    loss = sum(w * (-y*log p - (1-y)*log(1-p))) / sum(w). Probabilities are
    clamped to [eps, 1-eps]; the gradient is exact w.r.t. the unclamped
    probabilities inside the open interval and zero where clamping binds.
    Returns (loss, gradient w.r.t. soft_pred).
    """
    p = np.asarray(soft_pred, dtype=np.float64)
    y = labels.labels if hasattr(labels, "labels") else np.asarray(labels)
    y = y.astype(np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if p.shape != y.shape or p.shape != w.shape:
        raise FieldError("weighted_cross_entropy shape mismatch")
    wsum = w.sum()
    if wsum <= 0:
        raise FieldError("weights sum to zero")
    clamped_lo = p < eps
    clamped_hi = p > 1 - eps
    pc = np.clip(p, eps, 1 - eps)
    loss = float(np.sum(w * (-(y * np.log(pc)) - (1 - y) * np.log1p(-pc))) / wsum)
    grad = w * (-(y / pc) + (1 - y) / (1 - pc)) / wsum
    grad[clamped_lo | clamped_hi] = 0.0
    return loss, grad


def balance_coefficients(bundle: LossBundle) -> LossBundle:
    """Rescale coefficients so every term equals the mean of the raw values.

    coefficient_i = mean(values) / value_i. A zero raw value keeps its
    coefficient at 1 and records a warning instead of dividing by zero.
    """
    values = [v for _, _, v in bundle.entries]
    if any(v < 0 for v in values):
        raise FieldError("loss values must be >= 0")
    positive = [v for v in values if v > 0]
    mean = float(np.mean(positive)) if positive else 1.0
    out = LossBundle()
    for loss_id, _, value in bundle.entries:
        if value == 0:
            out.add(loss_id, 1.0, value)
            out.warnings.append(f"{loss_id}: zero initial loss, coefficient fixed to 1")
        else:
            out.add(loss_id, mean / value, value)
    return out
