"""Procedural layered-scene generator with analytically exact ground truth.

Scenes are stacks of textured axis-aligned rectangles translating over a
moving background. Because every layer is a rectangle with a constant
motion and disparity, visibility, occlusion and boundary ground truth can
be derived in closed form from the layer geometry instead of by sampling,
which makes the renders usable as oracles for the sampled derivation path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import codecs
from .fields import (
    BoundaryMap,
    DisparityMap,
    FieldError,
    FlowField,
    ImageRaster,
    ObjectIdMap,
    OcclusionMask,
)

__all__ = [
    "Layer",
    "LayeredScene",
    "SceneRender",
    "render",
    "sample_dataset",
    "export_dataset",
    "id_discontinuities",
]


@dataclass(frozen=True)
class Layer:
    """Axis-aligned rectangle with constant motion and disparity.

    The rectangle covers pixel centers with x0 <= x < x1, y0 <= y < y1.
    depth_rank 0 is nearest to the camera.
    """

    x0: float
    y0: float
    x1: float
    y1: float
    depth_rank: int
    motion: tuple  # (u, v) pixels per frame
    disparity: float
    texture_seed: int = 0

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise FieldError(f"degenerate layer rectangle {(self.x0, self.y0, self.x1, self.y1)}")
        if self.disparity < 0:
            raise FieldError("layer disparity must be non-negative")

    def rect_at(self, t: float) -> tuple:
        u, v = self.motion
        return (self.x0 + t * u, self.y0 + t * v, self.x1 + t * u, self.y1 + t * v)


@dataclass(frozen=True)
class LayeredScene:
    """Background plus depth-ordered foreground layers covering the frame."""

    width: int
    height: int
    background: Layer
    layers: tuple = ()
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        ranks = [l.depth_rank for l in self.layers] + [self.background.depth_rank]
        if len(set(ranks)) != len(ranks):
            raise FieldError("depth ranks must be unique within a scene")
        if self.background.depth_rank != max(ranks):
            raise FieldError("background must have the maximum depth rank")
        for t in (0.0, 1.0):
            bx0, by0, bx1, by1 = self.background.rect_at(t)
            if bx0 > 0 or by0 > 0 or bx1 < self.width or by1 < self.height:
                raise FieldError(f"background does not cover the frame at t={t}")

    def by_depth(self) -> list:
        """All layers, nearest first; the background comes last."""
        return sorted((*self.layers, self.background), key=lambda l: l.depth_rank)


@dataclass
class SceneRender:
    """Complete ground-truth tuple for one scene."""

    image0: ImageRaster
    image1: ImageRaster
    flow_fwd: FlowField
    flow_bwd: FlowField
    objid0: ObjectIdMap
    objid1: ObjectIdMap
    disp0: DisparityMap
    disp1: DisparityMap
    occ_fwd: OcclusionMask
    occ_bwd: OcclusionMask
    mbnd: BoundaryMap
    dbnd: BoundaryMap
    scene: LayeredScene = field(repr=False, default=None)


def _pixel_grid(width: int, height: int):
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    return xs, ys


def _coverage(layer: Layer, xs, ys, t: float):
    x0, y0, x1, y1 = layer.rect_at(t)
    return (xs >= x0) & (xs < x1) & (ys >= y0) & (ys < y1)


def _visible_index(scene: LayeredScene, xs, ys, t: float) -> np.ndarray:
    """Index (into scene.by_depth()) of the visible layer at each query point.

    Points may be fractional and outside the frame; -1 where no layer covers
    the point.
    """
    ordered = scene.by_depth()
    out = np.full(xs.shape, -1, dtype=np.int32)
    undecided = np.ones(xs.shape, dtype=bool)
    for idx, layer in enumerate(ordered):
        hit = undecided & _coverage(layer, xs, ys, t)
        out[hit] = idx
        undecided &= ~hit
        if not undecided.any():
            break
    return out


def _layer_texture(layer: Layer, scene_seed: int, index: int):
    """Deterministic texel grid in layer-local coordinates, 1-texel margin."""
    tw = int(np.ceil(layer.x1 - layer.x0)) + 2
    th = int(np.ceil(layer.y1 - layer.y0)) + 2
    rng = np.random.default_rng([scene_seed, layer.texture_seed, index])
    base = rng.uniform(0.2, 0.8, size=3)
    detail = rng.uniform(-1.0, 1.0, size=(th, tw, 3))
    return np.clip(base[None, None, :] + 0.35 * detail, 0.0, 1.0)


def _sample_texture(tex, lx, ly):
    """Bilinear texture lookup at layer-local coordinates (arrays)."""
    h, w = tex.shape[:2]
    lx = np.clip(lx, 0.0, w - 1.001)
    ly = np.clip(ly, 0.0, h - 1.001)
    x0 = np.floor(lx).astype(int)
    y0 = np.floor(ly).astype(int)
    fx = (lx - x0)[..., None]
    fy = (ly - y0)[..., None]
    return (
        tex[y0, x0] * (1 - fy) * (1 - fx)
        + tex[y0, x0 + 1] * (1 - fy) * fx
        + tex[y0 + 1, x0] * fy * (1 - fx)
        + tex[y0 + 1, x0 + 1] * fy * fx
    )


def id_discontinuities(ids: np.ndarray) -> np.ndarray:
    """Pixels with any 4-neighbor carrying a different id (both sides marked)."""
    out = np.zeros(ids.shape, dtype=bool)
    diff_h = ids[:, 1:] != ids[:, :-1]
    out[:, 1:] |= diff_h
    out[:, :-1] |= diff_h
    diff_v = ids[1:, :] != ids[:-1, :]
    out[1:, :] |= diff_v
    out[:-1, :] |= diff_v
    return out


def _occlusion(scene: LayeredScene, vis_src, motions, xs, ys, t_src: float, t_dst: float):
    """Closed-form occlusion: the source pixel's layer is no longer the
    visible layer at its target position, or the target leaves the frame."""
    u = motions[vis_src, 0]
    v = motions[vis_src, 1]
    sign = 1.0 if t_dst > t_src else -1.0
    qx = xs + sign * u
    qy = ys + sign * v
    out_of_frame = (qx < 0) | (qx > scene.width - 1) | (qy < 0) | (qy > scene.height - 1)
    vis_dst = _visible_index(scene, qx, qy, t_dst)
    occluded = out_of_frame | (vis_dst != vis_src)
    return OcclusionMask(occluded.astype(np.uint8))


def render(scene: LayeredScene) -> SceneRender:
    """Rasterize a scene at t=0 and t=1 with exact ground truth.

    Flow of a pixel is the motion of its visible layer. A pixel is occluded
    iff its layer is not the visible one at the flow target, or the target
    is out of frame. Boundaries are visible-layer-id discontinuities over
    the 4-neighborhood.
    """
    xs, ys = _pixel_grid(scene.width, scene.height)
    ordered = scene.by_depth()
    motions = np.array([l.motion for l in ordered], dtype=np.float64)
    disparities = np.array([l.disparity for l in ordered], dtype=np.float64)
    textures = [_layer_texture(l, scene.seed, i) for i, l in enumerate(ordered)]

    vis0 = _visible_index(scene, xs, ys, 0.0)
    vis1 = _visible_index(scene, xs, ys, 1.0)
    if (vis0 < 0).any() or (vis1 < 0).any():
        raise FieldError("scene does not cover the frame")

    images = []
    for t, vis in ((0.0, vis0), (1.0, vis1)):
        img = np.zeros((scene.height, scene.width, 3))
        for idx, layer in enumerate(ordered):
            sel = vis == idx
            if not sel.any():
                continue
            x0, y0, _, _ = layer.rect_at(t)
            img[sel] = _sample_texture(textures[idx], xs[sel] - x0, ys[sel] - y0)
        images.append(ImageRaster(img))

    flow_fwd = FlowField(motions[vis0])
    flow_bwd = FlowField(-motions[vis1])
    disp0 = DisparityMap(disparities[vis0])
    disp1 = DisparityMap(disparities[vis1])
    occ_fwd = _occlusion(scene, vis0, motions, xs, ys, 0.0, 1.0)
    occ_bwd = _occlusion(scene, vis1, motions, xs, ys, 1.0, 0.0)
    boundary = id_discontinuities(vis0).astype(np.uint8)

    return SceneRender(
        image0=images[0],
        image1=images[1],
        flow_fwd=flow_fwd,
        flow_bwd=flow_bwd,
        objid0=ObjectIdMap(vis0),
        objid1=ObjectIdMap(vis1),
        disp0=disp0,
        disp1=disp1,
        occ_fwd=occ_fwd,
        occ_bwd=occ_bwd,
        mbnd=BoundaryMap(boundary),
        dbnd=BoundaryMap(boundary.copy()),
        scene=scene,
    )


# Per-difficulty limits: (max displacement, min layers, max layers).
_DIFFICULTY = {
    0: (2, 1, 2),
    1: (4, 2, 3),
    2: (8, 3, 5),
}


def sample_scene(width, height, difficulty, seed, integer_motions=True) -> LayeredScene:
    """Draw one random scene; deterministic under seed."""
    if difficulty not in _DIFFICULTY:
        raise FieldError(f"difficulty must be one of {sorted(_DIFFICULTY)}")
    max_disp, lo, hi = _DIFFICULTY[difficulty]
    rng = np.random.default_rng([seed, difficulty, width, height])

    def draw_motion():
        if integer_motions:
            return tuple(int(m) for m in rng.integers(-max_disp, max_disp + 1, size=2))
        return tuple(rng.uniform(-max_disp, max_disp, size=2))

    n_layers = int(rng.integers(lo, hi + 1))
    bg_motion = draw_motion()
    margin = max_disp + 1
    # Disparity strictly decreases with depth rank (gap >= 1 px) so depth
    # boundaries coincide with object boundaries.
    gaps = rng.uniform(1.0, 3.0, size=n_layers)
    base = rng.uniform(0.5, 3.0)
    disparities = (base + np.concatenate([[0.0], np.cumsum(gaps)]))[::-1]

    background = Layer(
        -margin, -margin, width + margin, height + margin,
        depth_rank=n_layers,
        motion=bg_motion,
        disparity=float(disparities[-1]),
        texture_seed=int(rng.integers(1 << 30)),
    )
    layers = []
    for rank in range(n_layers):
        w = int(rng.integers(max(4, width // 6), max(6, width // 2)))
        h = int(rng.integers(max(4, height // 6), max(6, height // 2)))
        x0 = int(rng.integers(-w // 2, width - w // 2))
        y0 = int(rng.integers(-h // 2, height - h // 2))
        layers.append(
            Layer(
                x0, y0, x0 + w, y0 + h,
                depth_rank=rank,
                motion=draw_motion(),
                disparity=float(disparities[rank]),
                texture_seed=int(rng.integers(1 << 30)),
            )
        )
    return LayeredScene(width, height, background, tuple(layers), seed=seed)


def sample_dataset(count, size, difficulty, seed, integer_motions=True) -> list:
    """Render `count` random scenes; bytes are identical for identical seeds."""
    if count < 1:
        raise FieldError("count must be >= 1")
    if isinstance(size, (int, np.integer)):
        width = height = int(size)
    else:
        width, height = size
    renders = []
    for k in range(count):
        scene = sample_scene(width, height, difficulty, seed * 1_000_003 + k,
                             integer_motions=integer_motions)
        renders.append(render(scene))
    return renders


_EXPORT_ROLES = (
    ("image0", "image0.png"),
    ("image1", "image1.png"),
    ("flow_fwd", "flow_fwd.flo"),
    ("flow_bwd", "flow_bwd.flo"),
    ("objid0", "objid0.png"),
    ("objid1", "objid1.png"),
    ("disp0", "disp0.pfm"),
    ("disp1", "disp1.pfm"),
    ("occ_fwd", "occ_fwd.png"),
    ("occ_bwd", "occ_bwd.png"),
    ("mbnd", "mbnd.png"),
    ("dbnd", "dbnd.png"),
)


def export_dataset(renders, outdir) -> Path:
    """Write renders as codec files plus a manifest of file roles per sample."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, r in enumerate(renders):
        sample = f"sample_{i:04d}"
        sdir = outdir / sample
        sdir.mkdir(exist_ok=True)
        codecs.image_png_write(r.image0, sdir / "image0.png")
        codecs.image_png_write(r.image1, sdir / "image1.png")
        codecs.write_file(codecs.flo_write, r.flow_fwd, sdir / "flow_fwd.flo")
        codecs.write_file(codecs.flo_write, r.flow_bwd, sdir / "flow_bwd.flo")
        _objid_write(r.objid0, sdir / "objid0.png")
        _objid_write(r.objid1, sdir / "objid1.png")
        codecs.write_file(codecs.pfm_write, r.disp0, sdir / "disp0.pfm")
        codecs.write_file(codecs.pfm_write, r.disp1, sdir / "disp1.pfm")
        codecs.mask_png_write(r.occ_fwd, sdir / "occ_fwd.png")
        codecs.mask_png_write(r.occ_bwd, sdir / "occ_bwd.png")
        codecs.mask_png_write(r.mbnd, sdir / "mbnd.png")
        codecs.mask_png_write(r.dbnd, sdir / "dbnd.png")
        for role, fname in _EXPORT_ROLES:
            lines.append(f"{sample} {role} {sample}/{fname}")
    manifest = outdir / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def _objid_write(objid: ObjectIdMap, path):
    import cv2

    ids = objid.ids
    if ids.min() < 0 or ids.max() > 65535:
        raise FieldError("object ids must fit 16-bit PNG for export")
    cv2.imwrite(str(path), ids.astype(np.uint16))


def objid_read(path) -> ObjectIdMap:
    import cv2

    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise codecs.CodecError("io", f"failed to read object ids from {path}")
    return ObjectIdMap(img.astype(np.int32))
