"""Core raster value types (flow, disparity, masks, images) and resampling.

Conventions: row-major storage, origin at the top-left corner, x grows
rightward, y grows downward. A flow vector (u, v) is the displacement
(dx, dy) in pixels, matching the .flo and KITTI conventions.

All field objects are immutable after construction (their arrays are
frozen), so they can be shared freely between workers.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "FieldError",
    "FlowField",
    "DisparityMap",
    "OcclusionMask",
    "BoundaryMap",
    "ObjectIdMap",
    "ImageRaster",
    "downsample",
    "upsample_bilinear",
    "invert_flow_sign",
]


class FieldError(ValueError):
    """Raised when raster data violates a field invariant."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    if out is arr:
        out = arr.copy()
    out.flags.writeable = False
    return out


def _check_hw(data: np.ndarray, width: int, height: int, name: str) -> None:
    if data.shape[0] != height or data.shape[1] != width:
        raise FieldError(
            f"{name}: data shape {data.shape} does not match "
            f"height={height}, width={width}"
        )


class FlowField:
    """Dense per-pixel (u, v) displacement raster with an optional validity mask."""

    def __init__(self, data, valid=None):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 3 or data.shape[2] != 2:
            raise FieldError(f"flow data must have shape (H, W, 2), got {data.shape}")
        self.height, self.width = data.shape[:2]
        if valid is not None:
            valid = np.asarray(valid, dtype=bool)
            _check_hw(valid, self.width, self.height, "flow valid mask")
            if not np.all(np.isfinite(data[valid])):
                raise FieldError("flow contains non-finite values on valid pixels")
            valid = _freeze(valid)
        else:
            if not np.all(np.isfinite(data)):
                raise FieldError("flow contains non-finite values")
        self.data = _freeze(data)
        self.valid = valid

    @property
    def u(self) -> np.ndarray:
        return self.data[:, :, 0]

    @property
    def v(self) -> np.ndarray:
        return self.data[:, :, 1]

    def valid_mask(self) -> np.ndarray:
        if self.valid is None:
            return np.ones((self.height, self.width), dtype=bool)
        return self.valid

    def __eq__(self, other):
        return (
            isinstance(other, FlowField)
            and np.array_equal(self.data, other.data)
            and np.array_equal(self.valid_mask(), other.valid_mask())
        )

    def __repr__(self):
        return f"FlowField({self.width}x{self.height})"


class DisparityMap:
    """Per-pixel horizontal disparity in pixels, non-negative where valid."""

    def __init__(self, data, valid=None):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2:
            raise FieldError(f"disparity data must have shape (H, W), got {data.shape}")
        self.height, self.width = data.shape
        if valid is None:
            valid = np.ones_like(data, dtype=bool)
        else:
            valid = np.asarray(valid, dtype=bool)
            _check_hw(valid, self.width, self.height, "disparity valid mask")
        vals = data[valid]
        if not np.all(np.isfinite(vals)):
            raise FieldError("disparity contains non-finite values on valid pixels")
        if vals.size and vals.min() < 0:
            raise FieldError("disparity contains negative values on valid pixels")
        self.data = _freeze(data)
        self.valid = _freeze(valid)

    def valid_mask(self) -> np.ndarray:
        return self.valid

    def __eq__(self, other):
        return (
            isinstance(other, DisparityMap)
            and np.array_equal(self.data, other.data)
            and np.array_equal(self.valid, other.valid)
        )

    def __repr__(self):
        return f"DisparityMap({self.width}x{self.height})"


class _BinaryLabelMap:
    """Binary per-pixel label raster with an optional soft probability map."""

    _positive_name = "positive"

    def __init__(self, labels, soft=None):
        labels = np.asarray(labels)
        if labels.ndim != 2:
            raise FieldError(f"labels must have shape (H, W), got {labels.shape}")
        if not np.isin(labels, (0, 1)).all():
            raise FieldError("labels must be binary (0/1)")
        self.height, self.width = labels.shape
        self.labels = _freeze(labels.astype(np.uint8))
        if soft is not None:
            soft = np.asarray(soft, dtype=np.float64)
            _check_hw(soft, self.width, self.height, "soft map")
            if soft.min() < 0.0 or soft.max() > 1.0:
                raise FieldError("soft map values must lie in [0, 1]")
            if not np.array_equal((soft >= 0.5).astype(np.uint8), self.labels):
                raise FieldError("soft map does not binarize to labels at 0.5")
            soft = _freeze(soft)
        self.soft = soft

    @classmethod
    def from_soft(cls, soft):
        soft = np.asarray(soft, dtype=np.float64)
        return cls((soft >= 0.5).astype(np.uint8), soft)

    def bool_mask(self) -> np.ndarray:
        return self.labels.astype(bool)

    def __eq__(self, other):
        return type(self) is type(other) and np.array_equal(self.labels, other.labels)

    def __repr__(self):
        return f"{type(self).__name__}({self.width}x{self.height})"


class OcclusionMask(_BinaryLabelMap):
    """1 marks a pixel of the source image that is occluded in the target image."""

    _positive_name = "occluded"


class BoundaryMap(_BinaryLabelMap):
    """1 marks a motion or depth boundary pixel."""

    _positive_name = "boundary"


class ObjectIdMap:
    """Per-pixel integer id of the visible scene layer."""

    def __init__(self, ids):
        ids = np.asarray(ids)
        if ids.ndim != 2:
            raise FieldError(f"object ids must have shape (H, W), got {ids.shape}")
        self.height, self.width = ids.shape
        self.ids = _freeze(ids.astype(np.int32))

    def __eq__(self, other):
        return isinstance(other, ObjectIdMap) and np.array_equal(self.ids, other.ids)

    def __repr__(self):
        return f"ObjectIdMap({self.width}x{self.height})"


class ImageRaster:
    """1- or 3-channel image with values in [0, 1]."""

    def __init__(self, data):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise FieldError(f"image must have 1 or 3 channels, got shape {data.shape}")
        if data.min() < 0.0 or data.max() > 1.0:
            raise FieldError("image values must lie in [0, 1]")
        self.height, self.width = data.shape[:2]
        self.channels = data.shape[2]
        self.data = _freeze(data)

    def __eq__(self, other):
        return isinstance(other, ImageRaster) and np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"ImageRaster({self.width}x{self.height}x{self.channels})"


def _block_view(arr: np.ndarray, factor: int) -> np.ndarray:
    h, w = arr.shape[:2]
    rest = arr.shape[2:]
    return arr.reshape(h // factor, factor, w // factor, factor, *rest)


def _check_factor(width: int, height: int, factor: int) -> None:
    if factor < 1 or (factor & (factor - 1)) != 0:
        raise FieldError(f"factor must be a positive power of two, got {factor}")
    if width % factor or height % factor:
        raise FieldError(
            f"dimensions {width}x{height} not divisible by factor {factor}"
        )


def downsample(field, factor: int):
    """Reduce resolution by an integer power-of-two factor.

    Flow and disparity values are block-averaged and divided by the factor
    (displacements are measured in coarse-grid pixels). Binary masks are
    majority-pooled with ties resolved to 1.
    """
    if factor == 1:
        return field
    if isinstance(field, FlowField):
        _check_factor(field.width, field.height, factor)
        data = _block_view(field.data, factor).mean(axis=(1, 3)) / factor
        valid = None
        if field.valid is not None:
            valid = _block_view(field.valid, factor).all(axis=(1, 3))
        return FlowField(data, valid)
    if isinstance(field, DisparityMap):
        _check_factor(field.width, field.height, factor)
        data = _block_view(field.data, factor).mean(axis=(1, 3)) / factor
        valid = _block_view(field.valid, factor).all(axis=(1, 3))
        return DisparityMap(np.where(valid, data, 0.0), valid)
    if isinstance(field, _BinaryLabelMap):
        _check_factor(field.width, field.height, factor)
        counts = _block_view(field.labels.astype(np.int32), factor).sum(axis=(1, 3))
        labels = (2 * counts >= factor * factor).astype(np.uint8)
        return type(field)(labels)
    if isinstance(field, ImageRaster):
        _check_factor(field.width, field.height, factor)
        return ImageRaster(_block_view(field.data, factor).mean(axis=(1, 3)))
    raise TypeError(f"cannot downsample {type(field).__name__}")


def _bilinear_grid(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of an (H, W[, C]) array using the half-pixel-center mapping."""
    h, w = src.shape[:2]
    sy = out_h / h
    sx = out_w / w
    ys = np.clip((np.arange(out_h) + 0.5) / sy - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) / sx - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    if src.ndim == 3:
        fy = fy[:, :, None]
        fx = fx[:, :, None]
    a = src[np.ix_(y0, x0)]
    b = src[np.ix_(y0, x1)]
    c = src[np.ix_(y1, x0)]
    d = src[np.ix_(y1, x1)]
    return (
        a * (1 - fy) * (1 - fx)
        + b * (1 - fy) * fx
        + c * fy * (1 - fx)
        + d * fy * fx
    )


def upsample_bilinear(field, factor: int):
    """Increase resolution by an integer factor with bilinear interpolation.

    Flow and disparity values are multiplied by the factor so displacements
    stay consistent with the finer pixel grid.
    """
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise FieldError(f"factor must be an integer >= 1, got {factor}")
    if factor == 1:
        return field
    if isinstance(field, FlowField):
        data = _bilinear_grid(field.data, field.height * factor, field.width * factor)
        return FlowField(data * factor)
    if isinstance(field, DisparityMap):
        data = _bilinear_grid(field.data, field.height * factor, field.width * factor)
        return DisparityMap(data * factor)
    if isinstance(field, ImageRaster):
        data = _bilinear_grid(field.data, field.height * factor, field.width * factor)
        return ImageRaster(np.clip(data, 0.0, 1.0))
    if isinstance(field, _BinaryLabelMap):
        soft = field.soft
        if soft is None:
            soft = field.labels.astype(np.float64)
        data = _bilinear_grid(soft, field.height * factor, field.width * factor)
        return type(field).from_soft(np.clip(data, 0.0, 1.0))
    raise TypeError(f"cannot upsample {type(field).__name__}")


def invert_flow_sign(flow: FlowField) -> FlowField:
    """Per-pixel (u, v) -> (-u, -v); the validity mask is preserved."""
    return FlowField(-flow.data, flow.valid)
