"""Bit-exact readers/writers for flow and disparity interchange formats.

Formats:
  .flo      -- little-endian float32 magic 202021.25 ("PIEH"), int32 width,
               int32 height, interleaved float32 (u, v) pairs, row-major.
  .pfm      -- "Pf" grayscale header, "<width> <height>" line, scale line
               whose sign encodes endianness (negative = little-endian),
               float32 rows stored bottom-to-top.
  KITTI PNG -- 16-bit PNG. Flow: channels (u*64 + 2^15, v*64 + 2^15, valid).
               Disparity: d*256 with 0 meaning invalid.
  mask PNG  -- 8-bit {0, 255} for hard labels, 16-bit value*65535 for soft maps.

KITTI invalid pixels decode to valid=False with value 0 (never NaN), so
downstream kernels always see finite data.
"""

from __future__ import annotations

import struct
from pathlib import Path

import cv2
import numpy as np

from .fields import BoundaryMap, DisparityMap, FlowField, OcclusionMask

__all__ = [
    "CodecError",
    "FLO_MAGIC",
    "flo_write",
    "flo_read",
    "pfm_write",
    "pfm_read",
    "kitti_png_flow_write",
    "kitti_png_flow_read",
    "kitti_png_disp_write",
    "kitti_png_disp_read",
    "mask_png_write",
    "mask_png_read",
    "image_png_write",
    "image_png_read",
]

FLO_MAGIC = 202021.25


class CodecError(Exception):
    """Decode/encode failure with a machine-readable kind.

    kind is one of: bad-magic, truncated, out-of-range, io.
    """

    def __init__(self, kind: str, detail: str):
        super().__init__(f"{kind}: {detail}")
        self.kind = kind
        self.detail = detail


def _read_exact(stream, n: int, what: str) -> bytes:
    buf = stream.read(n)
    if len(buf) != n:
        raise CodecError("truncated", f"short read while decoding {what}")
    return buf


def flo_write(flow: FlowField, stream) -> None:
    if not np.all(np.isfinite(flow.data)):
        raise CodecError("out-of-range", "flow contains non-finite values")
    stream.write(struct.pack("<fii", FLO_MAGIC, flow.width, flow.height))
    stream.write(flow.data.astype("<f4").tobytes())


def flo_read(stream) -> FlowField:
    header = _read_exact(stream, 12, ".flo header")
    magic, width, height = struct.unpack("<fii", header)
    if magic != FLO_MAGIC:
        raise CodecError("bad-magic", f"expected .flo magic {FLO_MAGIC}, got {magic}")
    if width <= 0 or height <= 0:
        raise CodecError("out-of-range", f"bad dimensions {width}x{height}")
    payload = _read_exact(stream, width * height * 8, ".flo payload")
    data = np.frombuffer(payload, dtype="<f4").reshape(height, width, 2)
    return FlowField(data.astype(np.float64))


def pfm_write(disp: DisparityMap, stream) -> None:
    data = disp.data.astype("<f4")
    stream.write(b"Pf\n")
    stream.write(f"{disp.width} {disp.height}\n".encode("ascii"))
    stream.write(b"-1.0\n")
    # PFM stores rows bottom-to-top.
    stream.write(np.ascontiguousarray(data[::-1]).tobytes())


def _pfm_token(stream) -> bytes:
    tok = b""
    while True:
        ch = stream.read(1)
        if not ch:
            if tok:
                return tok
            raise CodecError("truncated", "unexpected end of PFM header")
        if ch in b" \t\r\n":
            if tok:
                return tok
            continue
        tok += ch


def pfm_read(stream) -> DisparityMap:
    magic = _pfm_token(stream)
    if magic == b"PF":
        raise CodecError("bad-magic", "color PFM where grayscale expected")
    if magic != b"Pf":
        raise CodecError("bad-magic", f"expected 'Pf' header, got {magic!r}")
    try:
        width = int(_pfm_token(stream))
        height = int(_pfm_token(stream))
        scale = float(_pfm_token(stream))
    except ValueError as exc:
        raise CodecError("bad-magic", f"malformed PFM header: {exc}") from exc
    if width <= 0 or height <= 0:
        raise CodecError("out-of-range", f"bad dimensions {width}x{height}")
    endian = "<" if scale < 0 else ">"
    payload = _read_exact(stream, width * height * 4, "PFM payload")
    rows = np.frombuffer(payload, dtype=endian + "f4").reshape(height, width)
    return DisparityMap(rows[::-1].astype(np.float64))


def kitti_png_flow_write(flow: FlowField, path) -> None:
    u, v = flow.u, flow.v
    if np.abs(u).max(initial=0.0) >= 512 or np.abs(v).max(initial=0.0) >= 512:
        raise CodecError("out-of-range", "|u|, |v| must be < 512 px for KITTI PNG")
    enc_u = np.round(u * 64.0 + 2**15)
    enc_v = np.round(v * 64.0 + 2**15)
    if enc_u.min() < 0 or enc_u.max() > 65535 or enc_v.min() < 0 or enc_v.max() > 65535:
        raise CodecError("out-of-range", "flow overflows the 16-bit KITTI encoding")
    valid = flow.valid_mask()
    img = np.zeros((flow.height, flow.width, 3), dtype=np.uint16)
    img[:, :, 0] = np.where(valid, enc_u, 0).astype(np.uint16)
    img[:, :, 1] = np.where(valid, enc_v, 0).astype(np.uint16)
    img[:, :, 2] = valid.astype(np.uint16)
    # cv2 writes BGR, KITTI expects (u, v, valid) as RGB.
    if not cv2.imwrite(str(path), img[:, :, ::-1]):
        raise CodecError("io", f"failed to write {path}")


def _png_read(path, what: str) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise CodecError("io", f"failed to read {what} from {path}")
    return img


def kitti_png_flow_read(path) -> FlowField:
    img = _png_read(path, "KITTI flow PNG")
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint16:
        raise CodecError("bad-magic", "KITTI flow PNG must be 16-bit, 3 channels")
    img = img[:, :, ::-1]
    valid = img[:, :, 2] > 0
    u = (img[:, :, 0].astype(np.float64) - 2**15) / 64.0
    v = (img[:, :, 1].astype(np.float64) - 2**15) / 64.0
    data = np.zeros((*valid.shape, 2))
    data[:, :, 0] = np.where(valid, u, 0.0)
    data[:, :, 1] = np.where(valid, v, 0.0)
    return FlowField(data, valid)


def kitti_png_disp_write(disp: DisparityMap, path) -> None:
    vals = disp.data[disp.valid]
    if vals.size and (vals.min() < 0 or vals.max() >= 256):
        raise CodecError("out-of-range", "disparity must satisfy 0 <= d < 256")
    enc = np.round(disp.data * 256.0)
    img = np.where(disp.valid, enc, 0).astype(np.uint16)
    if not cv2.imwrite(str(path), img):
        raise CodecError("io", f"failed to write {path}")


def kitti_png_disp_read(path) -> DisparityMap:
    img = _png_read(path, "KITTI disparity PNG")
    if img.ndim != 2 or img.dtype != np.uint16:
        raise CodecError("bad-magic", "KITTI disparity PNG must be 16-bit, 1 channel")
    valid = img > 0
    data = np.where(valid, img.astype(np.float64) / 256.0, 0.0)
    return DisparityMap(data, valid)


def mask_png_write(mask, path) -> None:
    if mask.soft is not None:
        img = np.round(mask.soft * 65535.0).astype(np.uint16)
    else:
        img = (mask.labels * 255).astype(np.uint8)
    if not cv2.imwrite(str(path), img):
        raise CodecError("io", f"failed to write {path}")


def mask_png_read(path, kind=OcclusionMask):
    img = _png_read(path, "mask PNG")
    if img.ndim != 2:
        raise CodecError("bad-magic", "mask PNG must be single channel")
    if img.dtype == np.uint16:
        return kind.from_soft(img.astype(np.float64) / 65535.0)
    if img.dtype == np.uint8:
        return kind((img >= 128).astype(np.uint8))
    raise CodecError("bad-magic", f"unsupported mask PNG dtype {img.dtype}")


def image_png_write(image, path) -> None:
    """8-bit PNG export of an ImageRaster (round(value*255))."""
    img = np.round(image.data * 255.0).astype(np.uint8)
    if img.shape[2] == 3:
        img = img[:, :, ::-1]
    else:
        img = img[:, :, 0]
    if not cv2.imwrite(str(path), img):
        raise CodecError("io", f"failed to write {path}")


def image_png_read(path):
    from .fields import ImageRaster

    img = _png_read(path, "image PNG")
    if img.dtype != np.uint8:
        raise CodecError("bad-magic", f"unsupported image PNG dtype {img.dtype}")
    if img.ndim == 3:
        img = img[:, :, ::-1]
    return ImageRaster(img.astype(np.float64) / 255.0)


def write_file(writer, obj, path) -> None:
    """Apply a stream-based writer to a filesystem path."""
    path = Path(path)
    with path.open("wb") as fh:
        writer(obj, fh)


def read_file(reader, path):
    path = Path(path)
    with path.open("rb") as fh:
        return reader(fh)
