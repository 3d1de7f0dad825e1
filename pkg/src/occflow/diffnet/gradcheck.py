"""Central finite-difference verification of every differentiable kernel.

The reported error for one input tensor is
    max|g_analytic - g_numeric| / (max(|g_analytic|_inf, |g_numeric|_inf) + 1e-12),
i.e. relative to the largest gradient magnitude, which keeps near-zero
entries from dominating. Checks run in double precision.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .. import losses
from . import ops
from .tape import Tape

__all__ = ["GradCheckResult", "finite_difference", "check_op", "run_standard_suite"]

DEFAULT_TOL = 1e-5


@dataclass
class GradCheckResult:
    kernel: str
    max_rel_error: float
    tolerance: float
    cases: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{self.kernel:<24} {status}  max_rel_err={self.max_rel_error:.3e}  "
                f"tol={self.tolerance:.0e}  cases={self.cases}")


def finite_difference(fn, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function w.r.t. every element."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn()
        flat[i] = orig - h
        fm = fn()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def _rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    return float(np.abs(analytic - numeric).max(initial=0.0) / (scale + 1e-12))


def check_op(build, inputs, h: float = 1e-6) -> float:
    """Max relative FD error over all inputs of a tape-op graph.

    build(nodes) must produce a scalar output node on the nodes' tape.
    """
    tape = Tape()
    nodes = [tape.leaf(v, requires_grad=True) for v in inputs]
    root = build(nodes)
    tape.backward(root)
    analytic = [n.grad.copy() for n in nodes]

    def value():
        t2 = Tape()
        ns = [t2.leaf(v) for v in inputs]
        return float(build(ns).value)

    worst = 0.0
    for v, g in zip(inputs, analytic):
        numeric = finite_difference(value, v, h)
        worst = max(worst, _rel_error(g, numeric))
    return worst


def _rand(rng, *shape):
    return rng.standard_normal(shape)


def _interior_flow(rng, h, w, margin=1.5):
    """Flow whose warp targets stay interior and off integer grid lines."""
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    tx = np.floor(rng.uniform(margin, w - 1 - margin, size=(h, w)))
    ty = np.floor(rng.uniform(margin, h - 1 - margin, size=(h, w)))
    tx += rng.uniform(0.2, 0.8, (h, w))
    ty += rng.uniform(0.2, 0.8, (h, w))
    return np.stack([tx - xs, ty - ys])


def _loss_of(out_node):
    return ops.sum_all(out_node) if out_node.value.ndim else out_node


def _case_conv(rng, spatial):
    h, w = spatial
    x = _rand(rng, 3, h, w)
    wt = _rand(rng, 4, 3, 3, 3) * 0.5
    b = _rand(rng, 4) * 0.1
    return [x, wt, b], lambda ns: _loss_of(ops.conv2d(ns[0], ns[1], ns[2], stride=1, pad=1))


def _case_conv_stride(rng, spatial):
    h, w = spatial
    x = _rand(rng, 2, h, w)
    wt = _rand(rng, 3, 2, 3, 3) * 0.5
    b = _rand(rng, 3) * 0.1
    return [x, wt, b], lambda ns: _loss_of(ops.conv2d(ns[0], ns[1], ns[2], stride=2, pad=1))


def _case_upconv(rng, spatial):
    h, w = spatial
    x = _rand(rng, 3, h, w)
    wt = _rand(rng, 3, 2, 4, 4) * 0.5
    b = _rand(rng, 2) * 0.1
    return [x, wt, b], lambda ns: _loss_of(ops.upconv2d(ns[0], ns[1], ns[2], stride=2, pad=1))


def _case_leaky(rng, spatial):
    h, w = spatial
    x = _rand(rng, 3, h, w)
    x[np.abs(x) < 1e-3] = 0.1  # keep away from the kink
    return [x], lambda ns: _loss_of(ops.leaky_relu(ns[0], slope=0.1))


def _case_concat(rng, spatial):
    h, w = spatial
    a = _rand(rng, 2, h, w)
    b = _rand(rng, 3, h, w)

    def build(ns):
        cat = ops.concat([ns[0], ns[1]], axis=0)
        return _loss_of(ops.leaky_relu(cat))

    return [a, b], build


def _case_correlation(rng, spatial):
    h, w = spatial
    f1 = _rand(rng, 3, h, w)
    f2 = _rand(rng, 3, h, w)
    spec = ops.CorrelationSpec(max_displacement=2, stride=1)
    return [f1, f2], lambda ns: _loss_of(ops.correlation(ns[0], ns[1], spec))


def _case_correlation_strided(rng, spatial):
    h, w = spatial
    f1 = _rand(rng, 3, h, w)
    f2 = _rand(rng, 3, h, w)
    spec = ops.CorrelationSpec(max_displacement=2, stride=2)
    return [f1, f2], lambda ns: _loss_of(ops.correlation(ns[0], ns[1], spec))


def _case_correlation_bi(rng, spatial):
    h, w = spatial
    f1 = _rand(rng, 3, h, w)
    f2 = _rand(rng, 3, h, w)
    spec = ops.CorrelationSpec(max_displacement=1, stride=1)
    return [f1, f2], lambda ns: _loss_of(ops.correlation_bi(ns[0], ns[1], spec))


def _case_warp(rng, spatial):
    h, w = spatial
    src = _rand(rng, 2, h, w)
    flow = _interior_flow(rng, h, w)
    return [src, flow], lambda ns: _loss_of(ops.warp_diff(ns[0], ns[1]))


def _case_upsample(rng, spatial):
    h, w = spatial
    x = _rand(rng, 2, h, w)
    return [x], lambda ns: _loss_of(ops.upsample2x(ns[0], value_scale=2.0))


def _case_sigmoid(rng, spatial):
    h, w = spatial
    x = _rand(rng, 1, h, w)
    return [x], lambda ns: _loss_of(ops.sigmoid(ns[0]))


def _case_epe_op(rng, spatial):
    h, w = spatial
    pred = _rand(rng, 2, h, w)
    target = _rand(rng, 2, h, w)
    return [pred], lambda ns: ops.epe_loss_op(ns[0], target)


def _case_bce_op(rng, spatial):
    h, w = spatial
    logit = _rand(rng, 1, h, w)
    labels = (rng.random((h, w)) > 0.5).astype(np.float64)
    weights = rng.uniform(0.5, 2.0, (h, w))
    return [logit], lambda ns: ops.bce_logits_op(ns[0], labels, weights)


_TAPE_CASES = {
    "conv2d": _case_conv,
    "conv2d_stride2": _case_conv_stride,
    "upconv2d": _case_upconv,
    "leaky_relu": _case_leaky,
    "concat": _case_concat,
    "correlation": _case_correlation,
    "correlation_stride2": _case_correlation_strided,
    "correlation_bi": _case_correlation_bi,
    "warp_diff": _case_warp,
    "upsample2x": _case_upsample,
    "sigmoid": _case_sigmoid,
    "epe_loss_op": _case_epe_op,
    "bce_logits_op": _case_bce_op,
}


def _check_epe_loss(rng, spatial, h=1e-6) -> float:
    hh, ww = spatial
    f = rng.standard_normal((hh, ww, 2))
    gt = rng.standard_normal((hh, ww, 2)) * 5
    scheme = losses.ScalingScheme(s=20.0)
    _, grad = losses.epe_loss(f, gt, scheme)
    numeric = finite_difference(lambda: losses.epe_loss(f, gt, scheme)[0], f, h)
    return _rel_error(grad, numeric)


def _check_weighted_ce(rng, spatial, h=1e-7) -> float:
    hh, ww = spatial
    p = rng.uniform(0.05, 0.95, (hh, ww))
    y = (rng.random((hh, ww)) > 0.5).astype(np.float64)
    w = rng.uniform(0.5, 2.0, (hh, ww))
    _, grad = losses.weighted_cross_entropy(p, y, w)
    numeric = finite_difference(lambda: losses.weighted_cross_entropy(p, y, w)[0], p, h)
    return _rel_error(grad, numeric)


_LOSS_CASES = {
    "losses.epe_loss": _check_epe_loss,
    "losses.weighted_cross_entropy": _check_weighted_ce,
}

_DEFAULT_SHAPES = ((4, 5), (5, 4), (6, 6), (7, 5), (8, 8))


def run_standard_suite(seeds=(0, 1, 2), shapes=_DEFAULT_SHAPES,
                       tolerance: float = DEFAULT_TOL) -> list:
    """FD-check every kernel and loss over the seed/shape grid."""
    results = []
    for name, case in _TAPE_CASES.items():
        worst = 0.0
        n = 0
        for seed in seeds:
            for spatial in shapes:
                rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
                inputs, build = case(rng, spatial)
                worst = max(worst, check_op(build, inputs))
                n += 1
        results.append(GradCheckResult(name, worst, tolerance, n))
    for name, case in _LOSS_CASES.items():
        worst = 0.0
        n = 0
        for seed in seeds:
            for spatial in shapes:
                rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
                worst = max(worst, case(rng, spatial))
                n += 1
        results.append(GradCheckResult(name, worst, tolerance, n))
    return results
