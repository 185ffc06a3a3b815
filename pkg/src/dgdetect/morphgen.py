"""Synthetic doppelgänger images by landmark warping and alpha blending.

The morph keeps the target's outer face region: the warped and blended
result is pasted back over the target only inside the convex hull of the
interpolated landmarks.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, Delaunay, QhullError

from .dataio import ImageBuffer, LandmarkSet
from .errors import DataFormatError, GeometryError

log = logging.getLogger(__name__)

N_ANCHORS = 8
_AREA_EPS = 1e-9
_INSIDE_EPS = 1e-9


@dataclass(frozen=True)
class MorphParams:
    warp_weight: float = 0.5
    blend_alpha: float = 0.5
    feather_radius: int | None = None  # None: 11 px per 512 px of image width

    def __post_init__(self):
        for name in ("warp_weight", "blend_alpha"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.feather_radius is not None and self.feather_radius < 0:
            raise ValueError("feather_radius must be non-negative")

    def feather_for(self, width: int) -> int:
        if self.feather_radius is not None:
            return self.feather_radius
        return int(round(11 * width / 512))


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray   # (N, 2)
    triangles: np.ndarray  # (M, 3) vertex indices


@dataclass(frozen=True, eq=False)
class MorphResult:
    image: ImageBuffer
    landmarks: LandmarkSet
    provenance: dict = field(default_factory=dict)


def _points(x) -> np.ndarray:
    return np.asarray(getattr(x, "points", x), dtype=np.float64).reshape(-1, 2)


def frame_anchors(width: int, height: int) -> np.ndarray:
    """Four corners and four edge midpoints at pixel-centre coordinates."""
    w, h = width - 1.0, height - 1.0
    return np.array([[0, 0], [w, 0], [w, h], [0, h],
                     [w / 2, 0], [w, h / 2], [w / 2, h], [0, h / 2]], dtype=np.float64)


def interpolate_landmarks(target, source, w: float) -> LandmarkSet:
    t, s = _points(target), _points(source)
    if t.shape != s.shape:
        raise DataFormatError(f"landmark count mismatch: {len(t)} vs {len(s)}")
    # coincident points stay bit-identical; otherwise (1-w)t + ws
    p = np.where(t == s, t, (1.0 - w) * t + w * s)
    return LandmarkSet(getattr(target, "image_id", ""), p)


def triangulate(points, anchors: np.ndarray | None = None) -> TriangleMesh:
    p = _points(points)
    if anchors is not None:
        p = np.vstack([p, anchors])
    if len(p) < 3:
        raise GeometryError("triangulation needs at least 3 points")
    try:
        tri = Delaunay(p)
    except QhullError as exc:
        reason = exc.args[0].splitlines()[0]
        raise GeometryError(f"points are degenerate (collinear?): {reason}") from None
    simplices = tri.simplices
    a, b, c = p[simplices[:, 0]], p[simplices[:, 1]], p[simplices[:, 2]]
    area = 0.5 * np.abs((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                        - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))
    simplices = simplices[area > _AREA_EPS]
    if len(simplices) == 0:
        raise GeometryError("all triangles are degenerate")
    return TriangleMesh(p, np.ascontiguousarray(simplices, dtype=np.intp))


def _full_vertices(points, mesh: TriangleMesh, width: int, height: int) -> np.ndarray:
    p = _points(points)
    n = len(mesh.vertices)
    if len(p) == n:
        return p
    if len(p) + N_ANCHORS == n:
        return np.vstack([p, frame_anchors(width, height)])
    raise DataFormatError(f"{len(p)} points do not fit a mesh of {n} vertices")


def _bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    src = img.astype(np.float64)
    top = src[y0, x0] * (1 - fx) + src[y0, x1] * fx
    bot = src[y1, x0] * (1 - fx) + src[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def warp_image(img: ImageBuffer, src_points, dst_points, mesh: TriangleMesh) -> ImageBuffer:
    """Piecewise-affine inverse warp moving ``src_points`` onto ``dst_points``.

    Each output pixel inside a destination triangle samples the input at the
    affinely corresponding position in the source triangle. Pixels covered
    by no triangle keep their input value.
    """
    h, w = img.height, img.width
    src = _full_vertices(src_points, mesh, w, h)
    dst = _full_vertices(dst_points, mesh, w, h)
    if mesh.triangles.size and mesh.triangles.max() >= len(src):
        raise DataFormatError("mesh indices exceed the landmark count")
    pix = img.pixels
    out = pix.copy()
    for tri in mesh.triangles:
        d, s = dst[tri], src[tri]
        M = np.column_stack([d, np.ones(3)])  # rows: (x, y, 1)
        area2 = np.linalg.det(M)
        if abs(area2) <= 2 * _AREA_EPS:
            log.warning("skipping degenerate destination triangle %s", tri.tolist())
            continue
        x_lo = max(int(math.floor(d[:, 0].min())), 0)
        x_hi = min(int(math.ceil(d[:, 0].max())), w - 1)
        y_lo = max(int(math.floor(d[:, 1].min())), 0)
        y_hi = min(int(math.ceil(d[:, 1].max())), h - 1)
        if x_lo > x_hi or y_lo > y_hi:
            continue
        yy, xx = np.mgrid[y_lo:y_hi + 1, x_lo:x_hi + 1]
        xs = xx.ravel().astype(np.float64)
        ys = yy.ravel().astype(np.float64)
        # barycentric weights solve M^T lam = (x, y, 1)
        lam = np.linalg.solve(M.T, np.vstack([xs, ys, np.ones_like(xs)]))
        inside = np.all(lam >= -_INSIDE_EPS, axis=0)
        if not inside.any():
            continue
        xi, yi = xx.ravel()[inside], yy.ravel()[inside]
        if np.array_equal(d, s):
            out[yi, xi] = pix[yi, xi]
            continue
        sx = lam[:, inside].T @ s[:, 0]
        sy = lam[:, inside].T @ s[:, 1]
        out[yi, xi] = np.clip(np.rint(_bilinear(pix, sx, sy)), 0, 255).astype(np.uint8)
    return ImageBuffer(out)


def blend(a: ImageBuffer, b: ImageBuffer, alpha: float) -> ImageBuffer:
    if not a.same_size(b):
        raise DataFormatError(f"image size mismatch: {a.pixels.shape} vs {b.pixels.shape}")
    mix = (1.0 - alpha) * a.pixels.astype(np.float64) + alpha * b.pixels.astype(np.float64)
    return ImageBuffer(np.clip(np.rint(mix), 0, 255).astype(np.uint8))


def hull_mask(landmarks, width: int, height: int, feather: float) -> np.ndarray:
    """Per-pixel weight of the inner region: 1 deep inside the landmark hull,
    0 outside, ramping linearly over ``feather`` pixels inside the boundary."""
    p = _points(landmarks)
    if len(p) < 3:
        return np.zeros((height, width))
    try:
        hull = ConvexHull(p)
    except QhullError:
        return np.zeros((height, width))
    yy, xx = np.mgrid[0:height, 0:width]
    xy = np.column_stack([xx.ravel(), yy.ravel()]).astype(np.float64)
    eq = hull.equations  # n.x + c <= 0 inside, n unit length
    depth = -(xy @ eq[:, :2].T + eq[:, 2]).max(axis=1)
    if feather <= 0:
        wgt = (depth >= 0).astype(np.float64)
    else:
        wgt = np.clip(depth / feather, 0.0, 1.0)
    return wgt.reshape(height, width)


def composite_inner_region(morph: ImageBuffer, target: ImageBuffer, landmarks,
                           feather: float) -> ImageBuffer:
    if not morph.same_size(target):
        raise DataFormatError(f"image size mismatch: {morph.pixels.shape} vs {target.pixels.shape}")
    wgt = hull_mask(landmarks, target.width, target.height, feather)[:, :, None]
    if not wgt.any():
        return target
    mix = wgt * morph.pixels.astype(np.float64) + (1.0 - wgt) * target.pixels.astype(np.float64)
    return ImageBuffer(np.clip(np.rint(mix), 0, 255).astype(np.uint8))


def generate_doppelganger_pair(target: ImageBuffer, target_lmk: LandmarkSet,
                               source: ImageBuffer, source_lmk: LandmarkSet,
                               params: MorphParams = MorphParams(),
                               target_id: str = "", source_id: str = "") -> MorphResult:
    """Morph ``source`` into ``target``; the result pairs with the target image."""
    if not target.same_size(source):
        raise DataFormatError("target and source images must have equal dimensions")
    t, s = _points(target_lmk), _points(source_lmk)
    if t.shape != s.shape:
        raise DataFormatError(f"landmark count mismatch: {len(t)} vs {len(s)}")
    w, h = target.width, target.height
    for lmk in (target_lmk, source_lmk):
        LandmarkSet(getattr(lmk, "image_id", ""), _points(lmk)).check_bounds(w, h)

    inter = interpolate_landmarks(t, s, params.warp_weight).points
    anchors = frame_anchors(w, h)
    mesh = triangulate((t + s) / 2.0, anchors)
    warped_t = warp_image(target, t, inter, mesh)
    warped_s = warp_image(source, s, inter, mesh)
    mixed = blend(warped_t, warped_s, params.blend_alpha)
    feather = params.feather_for(w)
    out = composite_inner_region(mixed, target, inter, feather)
    target_id = target_id or getattr(target_lmk, "image_id", "")
    source_id = source_id or getattr(source_lmk, "image_id", "")
    return MorphResult(out, LandmarkSet(f"{target_id}+{source_id}", inter), {
        "target_id": target_id, "source_id": source_id,
        "warp_weight": params.warp_weight, "blend_alpha": params.blend_alpha,
        "feather_radius": feather,
    })


@dataclass(frozen=True)
class MorphJob:
    target: ImageBuffer
    target_lmk: LandmarkSet
    source: ImageBuffer
    source_lmk: LandmarkSet
    target_id: str = ""
    source_id: str = ""


def generate_batch(jobs, params: MorphParams = MorphParams(), max_workers: int = 1):
    """Run jobs in parallel; results (or the raised exception) follow job order."""

    def run(job: MorphJob):
        try:
            return generate_doppelganger_pair(job.target, job.target_lmk, job.source,
                                              job.source_lmk, params, job.target_id,
                                              job.source_id)
        except Exception as exc:  # reported per row by the caller
            return exc

    jobs = list(jobs)
    if max_workers <= 1:
        return [run(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(run, jobs))
