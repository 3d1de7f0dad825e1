"""Differentiable dense kernels: convolution, up-convolution, leaky rectifier,
concatenation, correlation (cost volume), bilinear warping and upsampling,
plus the scalar loss heads used for training.

All feature tensors are (channels, height, width). Convolution weights are
(out_channels, in_channels, kh, kw); up-convolution weights are
(in_channels, out_channels, kh, kw). Out-of-frame correlation taps and warp
samples contribute zero (no edge clamping).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .tape import DiffError, Tape, TensorNode

__all__ = [
    "CorrelationSpec",
    "conv2d",
    "upconv2d",
    "leaky_relu",
    "concat",
    "add",
    "scale",
    "sigmoid",
    "correlation",
    "correlation_bi",
    "warp_diff",
    "upsample2x",
    "sum_all",
    "epe_loss_op",
    "bce_logits_op",
    "weighted_sum",
]


@dataclass(frozen=True)
class CorrelationSpec:
    """Cost-volume geometry: offsets with |o|_inf <= max_displacement on the
    stride grid; responses divided by normalize_by (feature length when None)."""

    max_displacement: int = 4
    stride: int = 1
    normalize_by: int | None = None

    def __post_init__(self):
        if self.max_displacement < 1:
            raise DiffError("max_displacement must be >= 1")
        if self.stride < 1:
            raise DiffError("stride must be >= 1")

    def offsets(self):
        d = self.max_displacement // self.stride
        rng = range(-d, d + 1)
        return [(dy * self.stride, dx * self.stride) for dy in rng for dx in rng]

    def output_channels(self) -> int:
        d = self.max_displacement // self.stride
        return (2 * d + 1) ** 2


def _same_tape(*nodes) -> Tape:
    tape = nodes[0].tape
    for n in nodes[1:]:
        if n.tape is not tape:
            raise DiffError("ops cannot mix nodes from different tapes")
    return tape


def conv2d(x: TensorNode, w: TensorNode, b: TensorNode, stride: int = 1,
           pad: int = 1) -> TensorNode:
    tape = _same_tape(x, w, b)
    xv, wv, bv = x.value, w.value, b.value
    cout, cin, kh, kw = wv.shape
    if xv.ndim != 3 or xv.shape[0] != cin:
        raise DiffError(f"conv2d: input shape {xv.shape} incompatible with weight {wv.shape}")
    xp = np.pad(xv, ((0, 0), (pad, pad), (pad, pad))) if pad else xv
    hp, wp = xp.shape[1:]
    hout = (hp - kh) // stride + 1
    wout = (wp - kw) // stride + 1
    if hout < 1 or wout < 1:
        raise DiffError("conv2d: kernel larger than padded input")
    out = np.broadcast_to(bv[:, None, None], (cout, hout, wout)).copy()
    for ky in range(kh):
        for kx in range(kw):
            patch = xp[:, ky:ky + stride * hout:stride, kx:kx + stride * wout:stride]
            out += np.tensordot(wv[:, :, ky, kx], patch, axes=(1, 0))
    node = tape.output(out)

    def backward(g):
        if w.requires_grad:
            dw = np.zeros_like(wv)
        if x.requires_grad:
            dxp = np.zeros_like(xp)
        for ky in range(kh):
            for kx in range(kw):
                sl = (slice(None), slice(ky, ky + stride * hout, stride),
                      slice(kx, kx + stride * wout, stride))
                if w.requires_grad:
                    dw[:, :, ky, kx] = np.tensordot(g, xp[sl], axes=((1, 2), (1, 2)))
                if x.requires_grad:
                    dxp[sl] += np.tensordot(wv[:, :, ky, kx], g, axes=(0, 0))
        if w.requires_grad:
            w.accumulate(dw)
        if b.requires_grad:
            b.accumulate(g.sum(axis=(1, 2)))
        if x.requires_grad:
            h0, w0 = xv.shape[1:]
            x.accumulate(dxp[:, pad:pad + h0, pad:pad + w0] if pad else dxp)

    tape.record(node, (x, w, b), backward)
    return node


def upconv2d(x: TensorNode, w: TensorNode, b: TensorNode, stride: int = 2,
             pad: int = 1) -> TensorNode:
    """Transposed convolution; output size (H-1)*stride - 2*pad + kh."""
    tape = _same_tape(x, w, b)
    xv, wv, bv = x.value, w.value, b.value
    cin, cout, kh, kw = wv.shape
    if xv.ndim != 3 or xv.shape[0] != cin:
        raise DiffError(f"upconv2d: input shape {xv.shape} incompatible with weight {wv.shape}")
    h, w0 = xv.shape[1:]
    hfull = (h - 1) * stride + kh
    wfull = (w0 - 1) * stride + kw
    hout = hfull - 2 * pad
    wout = wfull - 2 * pad
    if hout < 1 or wout < 1:
        raise DiffError("upconv2d: padding removes the whole output")
    full = np.zeros((cout, hfull, wfull), dtype=xv.dtype)
    for ky in range(kh):
        for kx in range(kw):
            full[:, ky:ky + stride * h:stride, kx:kx + stride * w0:stride] += \
                np.tensordot(wv[:, :, ky, kx], xv, axes=(0, 0))
    out = full[:, pad:pad + hout, pad:pad + wout] + bv[:, None, None]
    node = tape.output(out)

    def backward(g):
        gfull = np.zeros((cout, hfull, wfull), dtype=g.dtype)
        gfull[:, pad:pad + hout, pad:pad + wout] = g
        if x.requires_grad:
            dx = np.zeros_like(xv)
        if w.requires_grad:
            dw = np.zeros_like(wv)
        for ky in range(kh):
            for kx in range(kw):
                gs = gfull[:, ky:ky + stride * h:stride, kx:kx + stride * w0:stride]
                if x.requires_grad:
                    dx += np.tensordot(wv[:, :, ky, kx], gs, axes=(1, 0))
                if w.requires_grad:
                    dw[:, :, ky, kx] = np.tensordot(xv, gs, axes=((1, 2), (1, 2)))
        if x.requires_grad:
            x.accumulate(dx)
        if w.requires_grad:
            w.accumulate(dw)
        if b.requires_grad:
            b.accumulate(g.sum(axis=(1, 2)))

    tape.record(node, (x, w, b), backward)
    return node


def leaky_relu(x: TensorNode, slope: float = 0.1) -> TensorNode:
    tape = x.tape
    pos = x.value > 0
    node = tape.output(np.where(pos, x.value, slope * x.value))

    def backward(g):
        if x.requires_grad:
            x.accumulate(np.where(pos, g, slope * g))

    tape.record(node, (x,), backward)
    return node


def sigmoid(x: TensorNode) -> TensorNode:
    tape = x.tape
    v = x.value
    out = np.empty_like(v)
    nonneg = v >= 0
    out[nonneg] = 1.0 / (1.0 + np.exp(-v[nonneg]))
    ev = np.exp(v[~nonneg])
    out[~nonneg] = ev / (1.0 + ev)
    node = tape.output(out)

    def backward(g):
        if x.requires_grad:
            x.accumulate(g * out * (1.0 - out))

    tape.record(node, (x,), backward)
    return node


def concat(nodes, axis: int = 0) -> TensorNode:
    tape = _same_tape(*nodes)
    out = np.concatenate([n.value for n in nodes], axis=axis)
    node = tape.output(out)
    sizes = [n.value.shape[axis] for n in nodes]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for n, piece in zip(nodes, np.split(g, splits, axis=axis)):
            if n.requires_grad:
                n.accumulate(piece)

    tape.record(node, tuple(nodes), backward)
    return node


def add(a: TensorNode, b: TensorNode) -> TensorNode:
    tape = _same_tape(a, b)
    if a.value.shape != b.value.shape:
        raise DiffError(f"add: shape mismatch {a.value.shape} vs {b.value.shape}")
    node = tape.output(a.value + b.value)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(g)

    tape.record(node, (a, b), backward)
    return node


def scale(x: TensorNode, c: float) -> TensorNode:
    tape = x.tape
    node = tape.output(x.value * c)

    def backward(g):
        if x.requires_grad:
            x.accumulate(g * c)

    tape.record(node, (x,), backward)
    return node


def correlation(f1: TensorNode, f2: TensorNode, spec: CorrelationSpec) -> TensorNode:
    """Cost volume: out(x, y, o) = <f1(x, y), f2((x, y) + o)> / normalize_by.

    Out-of-frame taps contribute zero; output channel k follows the row-major
    order of spec.offsets().
    """
    tape = _same_tape(f1, f2)
    v1, v2 = f1.value, f2.value
    if v1.shape != v2.shape:
        raise DiffError(f"correlation: shape mismatch {v1.shape} vs {v2.shape}")
    c, h, w = v1.shape
    norm = spec.normalize_by if spec.normalize_by is not None else c
    offsets = spec.offsets()
    out = np.zeros((len(offsets), h, w), dtype=v1.dtype)
    regions = []
    for k, (dy, dx) in enumerate(offsets):
        y0, y1 = max(0, -dy), min(h, h - dy)
        x0, x1 = max(0, -dx), min(w, w - dx)
        regions.append((y0, y1, x0, x1, dy, dx))
        if y0 >= y1 or x0 >= x1:
            continue
        a = v1[:, y0:y1, x0:x1]
        b = v2[:, y0 + dy:y1 + dy, x0 + dx:x1 + dx]
        out[k, y0:y1, x0:x1] = np.einsum("cij,cij->ij", a, b) / norm
    node = tape.output(out)

    def backward(g):
        d1 = np.zeros_like(v1) if f1.requires_grad else None
        d2 = np.zeros_like(v2) if f2.requires_grad else None
        for k, (y0, y1, x0, x1, dy, dx) in enumerate(regions):
            if y0 >= y1 or x0 >= x1:
                continue
            gk = g[k, y0:y1, x0:x1] / norm
            if d1 is not None:
                d1[:, y0:y1, x0:x1] += gk * v2[:, y0 + dy:y1 + dy, x0 + dx:x1 + dx]
            if d2 is not None:
                d2[:, y0 + dy:y1 + dy, x0 + dx:x1 + dx] += gk * v1[:, y0:y1, x0:x1]
        if d1 is not None:
            f1.accumulate(d1)
        if d2 is not None:
            f2.accumulate(d2)

    tape.record(node, (f1, f2), backward)
    return node


def correlation_bi(f1: TensorNode, f2: TensorNode, spec: CorrelationSpec) -> TensorNode:
    """Both correlation directions concatenated: (f1 vs f2, then f2 vs f1)."""
    return concat([correlation(f1, f2, spec), correlation(f2, f1, spec)], axis=0)


def warp_diff(src: TensorNode, flow: TensorNode) -> TensorNode:
    """Differentiable bilinear backward warp.

    flow is (2, H, W) with channels (u, v). Out-of-frame samples produce 0
    with zero gradient; gradients flow to both src and flow.
    """
    tape = _same_tape(src, flow)
    sv, fv = src.value, flow.value
    if fv.ndim != 3 or fv.shape[0] != 2 or sv.shape[1:] != fv.shape[1:]:
        raise DiffError(f"warp_diff: src {sv.shape} vs flow {fv.shape}")
    c, h, w = sv.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(sv.dtype)
    tx = xs + fv[0]
    ty = ys + fv[1]
    valid = (tx >= 0) & (tx <= w - 1) & (ty >= 0) & (ty <= h - 1)
    txc = np.clip(tx, 0, w - 1)
    tyc = np.clip(ty, 0, h - 1)
    x0 = np.floor(txc).astype(np.intp)
    y0 = np.floor(tyc).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = txc - x0
    fy = tyc - y0
    w00 = (1 - fy) * (1 - fx)
    w01 = (1 - fy) * fx
    w10 = fy * (1 - fx)
    w11 = fy * fx
    s00 = sv[:, y0, x0]
    s01 = sv[:, y0, x1]
    s10 = sv[:, y1, x0]
    s11 = sv[:, y1, x1]
    out = (s00 * w00 + s01 * w01 + s10 * w10 + s11 * w11) * valid
    node = tape.output(np.ascontiguousarray(out))

    def backward(g):
        gm = g * valid
        if src.requires_grad:
            ds = np.zeros_like(sv)
            flat = ds.reshape(c, -1)
            for idx, wgt in (((y0, x0), w00), ((y0, x1), w01),
                             ((y1, x0), w10), ((y1, x1), w11)):
                lin = (idx[0] * w + idx[1]).ravel()
                np.add.at(flat.T, lin, (gm * wgt).reshape(c, -1).T)
            src.accumulate(ds)
        if flow.requires_grad:
            dx_val = (1 - fy) * (s01 - s00) + fy * (s11 - s10)
            dy_val = (1 - fx) * (s10 - s00) + fx * (s11 - s01)
            du = np.sum(gm * dx_val, axis=0)
            dv = np.sum(gm * dy_val, axis=0)
            flow.accumulate(np.stack([du, dv]))

    tape.record(node, (src, flow), backward)
    return node


@lru_cache(maxsize=64)
def _up2_matrix(n: int, dtype_str: str) -> np.ndarray:
    """Dense (2n, n) bilinear interpolation matrix, half-pixel centers."""
    src = np.clip((np.arange(2 * n) + 0.5) / 2.0 - 0.5, 0, n - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n - 1)
    f = src - i0
    m = np.zeros((2 * n, n), dtype=np.dtype(dtype_str))
    m[np.arange(2 * n), i0] += 1 - f
    m[np.arange(2 * n), i1] += f
    return m


def upsample2x(x: TensorNode, value_scale: float = 1.0) -> TensorNode:
    """Fixed bilinear 2x spatial upsampling; values optionally scaled
    (flow displacements double when moving to the finer grid)."""
    tape = x.tape
    v = x.value
    c, h, w = v.shape
    uy = _up2_matrix(h, v.dtype.str)
    ux = _up2_matrix(w, v.dtype.str)
    out = np.einsum("ij,cjk,lk->cil", uy, v, ux, optimize=True) * value_scale
    node = tape.output(out)

    def backward(g):
        if x.requires_grad:
            x.accumulate(np.einsum("ji,cjk,kl->cil", uy, g, ux, optimize=True) * value_scale)

    tape.record(node, (x,), backward)
    return node


def sum_all(x: TensorNode) -> TensorNode:
    tape = x.tape
    node = tape.output(np.array(x.value.sum()))

    def backward(g):
        if x.requires_grad:
            x.accumulate(np.full_like(x.value, float(g)))

    tape.record(node, (x,), backward)
    return node


def epe_loss_op(pred: TensorNode, target: np.ndarray) -> TensorNode:
    """Mean Euclidean distance over pixels between a (C, H, W) prediction and
    a constant target of the same shape."""
    tape = pred.tape
    pv = pred.value
    if pv.shape != target.shape:
        raise DiffError(f"epe_loss: shape mismatch {pv.shape} vs {target.shape}")
    diff = pv - target
    dist = np.sqrt(np.sum(diff * diff, axis=0))
    n = dist.size
    node = tape.output(np.array(dist.mean()))

    def backward(g):
        if pred.requires_grad:
            safe = np.maximum(dist, 1e-30)
            pred.accumulate(float(g) * diff / (safe[None] * n))

    tape.record(node, (pred,), backward)
    return node


def bce_logits_op(logit: TensorNode, labels: np.ndarray,
                  weights: np.ndarray | None = None) -> TensorNode:
    """Numerically stable weighted binary cross entropy on logits.

    labels/weights are (H, W) constants; logit is (1, H, W).
    """
    tape = logit.tape
    z = logit.value[0]
    y = labels.astype(z.dtype)
    if weights is None:
        weights = np.ones_like(z)
    wsum = weights.sum()
    if wsum <= 0:
        raise DiffError("bce weights sum to zero")
    # max(z,0) - z*y + log(1 + exp(-|z|))
    per = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    node = tape.output(np.array(np.sum(weights * per) / wsum))
    p = np.empty_like(z)
    nonneg = z >= 0
    p[nonneg] = 1.0 / (1.0 + np.exp(-z[nonneg]))
    ez = np.exp(z[~nonneg])
    p[~nonneg] = ez / (1.0 + ez)

    def backward(g):
        if logit.requires_grad:
            logit.accumulate((float(g) * weights * (p - y) / wsum)[None])

    tape.record(node, (logit,), backward)
    return node


def weighted_sum(nodes, coeffs) -> TensorNode:
    """Scalar combination sum_i coeffs[i] * nodes[i] (all scalars)."""
    tape = _same_tape(*nodes)
    total = sum(float(c) * float(n.value) for n, c in zip(nodes, coeffs))
    node = tape.output(np.array(total))
    coeffs = [float(c) for c in coeffs]

    def backward(g):
        for n, c in zip(nodes, coeffs):
            if n.requires_grad:
                n.accumulate(np.array(float(g) * c))

    tape.record(node, tuple(nodes), backward)
    return node
