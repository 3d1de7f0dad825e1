"""Backward warping and forward/backward consistency occlusion checks.

All warps are backward: the output at pixel p is the bilinear sample of the
source at p + flow(p). Samples whose target leaves the frame rectangle
[0, W-1] x [0, H-1] are marked invalid rather than clamped, so border data
is never fabricated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import (
    DisparityMap,
    FieldError,
    FlowField,
    ImageRaster,
    OcclusionMask,
)

__all__ = [
    "ConsistencyParams",
    "warp_backward",
    "warp_backward_array",
    "warped_flipped_backward",
    "fb_consistency_magnitude",
    "occlusion_from_consistency",
]


@dataclass(frozen=True)
class ConsistencyParams:
    """Threshold m^2 > tau_abs + tau_rel * (|f|^2 + |b_w|^2) for occlusion."""

    tau_abs: float = 0.5
    tau_rel: float = 0.01

    def __post_init__(self):
        if self.tau_abs < 0 or self.tau_rel < 0:
            raise FieldError("consistency thresholds must be >= 0")


def _as_array(src):
    if isinstance(src, FlowField):
        return src.data
    if isinstance(src, DisparityMap):
        return src.data
    if isinstance(src, ImageRaster):
        return src.data
    return np.asarray(src, dtype=np.float64)


def warp_backward_array(src: np.ndarray, flow_data: np.ndarray):
    """Bilinear backward warp of an (H, W[, C]) array by an (H, W, 2) flow.

    Returns (warped, valid). valid is False wherever the sample point lies
    outside the frame rectangle; warped is 0 there.
    """
    h, w = flow_data.shape[:2]
    if src.shape[:2] != (h, w):
        raise FieldError(f"warp shape mismatch {src.shape[:2]} vs {(h, w)}")
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    tx = xs + flow_data[:, :, 0]
    ty = ys + flow_data[:, :, 1]
    valid = (tx >= 0) & (tx <= w - 1) & (ty >= 0) & (ty <= h - 1)
    txc = np.clip(tx, 0, w - 1)
    tyc = np.clip(ty, 0, h - 1)
    x0 = np.floor(txc).astype(int)
    y0 = np.floor(tyc).astype(int)
    # The far tap of an exactly-on-grid sample has zero weight, so clamping
    # its index fabricates nothing.
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = txc - x0
    fy = tyc - y0
    if src.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    out = (
        src[y0, x0] * (1 - fy) * (1 - fx)
        + src[y0, x1] * (1 - fy) * fx
        + src[y1, x0] * fy * (1 - fx)
        + src[y1, x1] * fy * fx
    )
    out[~valid] = 0.0
    return out, valid


def warp_backward(src, flow: FlowField):
    """Backward-warp a raster (image/flow/disparity/array) by a flow field.

    Returns (warped, valid) where warped has the same type as src.
    """
    arr = _as_array(src)
    out, valid = warp_backward_array(arr, flow.data)
    if isinstance(src, FlowField):
        return FlowField(out, valid), valid
    if isinstance(src, DisparityMap):
        return DisparityMap(out, valid), valid
    if isinstance(src, ImageRaster):
        return ImageRaster(np.clip(out, 0.0, 1.0)), valid
    return out, valid


def warped_flipped_backward(flow_fwd: FlowField, flow_bwd: FlowField) -> FlowField:
    """Warp the backward flow to the first frame and flip its sign, turning
    it into a forward flow wherever the correspondence is consistent."""
    if (flow_fwd.height, flow_fwd.width) != (flow_bwd.height, flow_bwd.width):
        raise FieldError("flow shape mismatch")
    warped, valid = warp_backward_array(flow_bwd.data, flow_fwd.data)
    return FlowField(-warped, valid)


def fb_consistency_magnitude(flow_fwd: FlowField, flow_bwd: FlowField) -> np.ndarray:
    """|forward + warped backward| per pixel; +inf where the target is out of frame."""
    if (flow_fwd.height, flow_fwd.width) != (flow_bwd.height, flow_bwd.width):
        raise FieldError("flow shape mismatch")
    warped, valid = warp_backward_array(flow_bwd.data, flow_fwd.data)
    m = np.linalg.norm(flow_fwd.data + warped, axis=-1)
    m[~valid] = np.inf
    return m


def occlusion_from_consistency(
    flow_fwd: FlowField,
    flow_bwd: FlowField,
    params: ConsistencyParams = ConsistencyParams(),
) -> OcclusionMask:
    """Classical post-hoc occlusion detection from forward/backward flows."""
    warped, valid = warp_backward_array(flow_bwd.data, flow_fwd.data)
    summed = flow_fwd.data + warped
    m2 = np.sum(summed * summed, axis=-1)
    bound = params.tau_abs + params.tau_rel * (
        np.sum(flow_fwd.data**2, axis=-1) + np.sum(warped**2, axis=-1)
    )
    occluded = (m2 > bound) | ~valid
    return OcclusionMask(occluded.astype(np.uint8))
