"""Ground-truth occlusion and boundary derivation from flow and object ids.

Occlusions: a pixel is occluded when its flow target leaves the frame or
the object id found at the target (nearest-neighbor lookup; ids are
categorical) differs from the source id.

Boundaries: a pixel is a boundary when any 4-neighbor carries a different
object id, or the flow (or disparity) difference to any 4-neighbor exceeds
a magnitude threshold of 0.75 px by default. The two cues are OR-combined
and boundaries are marked on both sides of a discontinuity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import (
    BoundaryMap,
    DisparityMap,
    FieldError,
    FlowField,
    ObjectIdMap,
    OcclusionMask,
)

__all__ = [
    "BoundaryRule",
    "occlusion_from_flow_ids",
    "boundaries_from_flow_ids",
    "depth_boundaries_from_disparity_ids",
]


@dataclass(frozen=True)
class BoundaryRule:
    """Discontinuity rule: flow/disparity threshold plus optional id cue."""

    flow_threshold: float = 0.75
    use_object_ids: bool = True

    def __post_init__(self):
        if self.flow_threshold <= 0:
            raise FieldError("flow_threshold must be > 0")


def _check_same_shape(a, b, what: str):
    if (a.height, a.width) != (b.height, b.width):
        raise FieldError(
            f"{what}: shape mismatch {a.width}x{a.height} vs {b.width}x{b.height}"
        )


def occlusion_from_flow_ids(
    flow_fwd: FlowField, objid0: ObjectIdMap, objid1: ObjectIdMap
) -> OcclusionMask:
    """Occlusion mask from forward flow and the object-id maps of both frames.

    Sub-pixel targets are resolved by rounding to the nearest pixel; a target
    is out of frame when its rounded coordinate leaves the id raster.
    """
    _check_same_shape(flow_fwd, objid0, "occlusion_from_flow_ids")
    _check_same_shape(flow_fwd, objid1, "occlusion_from_flow_ids")
    h, w = flow_fwd.height, flow_fwd.width
    ys, xs = np.mgrid[0:h, 0:w]
    qx = np.rint(xs + flow_fwd.u).astype(np.int64)
    qy = np.rint(ys + flow_fwd.v).astype(np.int64)
    out_of_frame = (qx < 0) | (qx > w - 1) | (qy < 0) | (qy > h - 1)
    qx_c = np.clip(qx, 0, w - 1)
    qy_c = np.clip(qy, 0, h - 1)
    id_change = objid1.ids[qy_c, qx_c] != objid0.ids
    return OcclusionMask((out_of_frame | id_change).astype(np.uint8))


def _mark_both_sides(h, w, diff_h, diff_v):
    out = np.zeros((h, w), dtype=bool)
    out[:, 1:] |= diff_h
    out[:, :-1] |= diff_h
    out[1:, :] |= diff_v
    out[:-1, :] |= diff_v
    return out


def boundaries_from_flow_ids(
    flow: FlowField, objid: ObjectIdMap | None, rule: BoundaryRule = BoundaryRule()
) -> BoundaryMap:
    """Motion boundaries from flow discontinuities and object-id changes."""
    if objid is not None:
        _check_same_shape(flow, objid, "boundaries_from_flow_ids")
    d = flow.data
    diff_h = np.linalg.norm(d[:, 1:] - d[:, :-1], axis=-1) > rule.flow_threshold
    diff_v = np.linalg.norm(d[1:, :] - d[:-1, :], axis=-1) > rule.flow_threshold
    if rule.use_object_ids and objid is not None:
        diff_h |= objid.ids[:, 1:] != objid.ids[:, :-1]
        diff_v |= objid.ids[1:, :] != objid.ids[:-1, :]
    out = _mark_both_sides(flow.height, flow.width, diff_h, diff_v)
    return BoundaryMap(out.astype(np.uint8))


def depth_boundaries_from_disparity_ids(
    disp: DisparityMap, objid: ObjectIdMap | None, rule: BoundaryRule = BoundaryRule()
) -> BoundaryMap:
    """Depth boundaries from disparity steps and object-id changes."""
    if objid is not None:
        _check_same_shape(disp, objid, "depth_boundaries_from_disparity_ids")
    d = disp.data
    diff_h = np.abs(d[:, 1:] - d[:, :-1]) > rule.flow_threshold
    diff_v = np.abs(d[1:, :] - d[:-1, :]) > rule.flow_threshold
    if rule.use_object_ids and objid is not None:
        diff_h |= objid.ids[:, 1:] != objid.ids[:, :-1]
        diff_v |= objid.ids[1:, :] != objid.ids[:-1, :]
    out = _mark_both_sides(disp.height, disp.width, diff_h, diff_v)
    return BoundaryMap(out.astype(np.uint8))
