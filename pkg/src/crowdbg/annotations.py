"""Point annotations, head-size estimation, masks, and ground-truth density.

Crowd datasets annotate each person with a single head point, so the
foreground/background boundary has to be constructed. Each point gets an
estimated head diameter d (from matched detections when available, floored
at 15 px, the common head-size estimate for tiny heads), and the foreground
mask is the union of disks of diameter d * alpha around the points.

Ground-truth density maps place one unit of mass per person: an isotropic
Gaussian centered at the head point, truncated at radius 4*sigma and
renormalized so the in-image truncated sum is exactly 1. This keeps the
count identity sum(density) == number of points, including at borders.

Coordinate convention: pixel (row j, col k) has its center at continuous
coordinates (x=k, y=j). Point coordinates may be sub-pixel.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import AnnotationParseError, GridShapeError, ParameterError
from .grids import BinaryMask, DensityMap
from .validation import check_positive

# Diameter floor, in pixels, applied to every estimated head size.
SIZE_FLOOR = 15.0

# Default Gaussian kernel width for ground-truth density maps, in pixels.
DEFAULT_SIGMA = 15.0

# Gaussian kernels are cut off at this many sigmas from the center.
KERNEL_TRUNCATE = 4.0


@dataclass(frozen=True)
class HeadPoint:
    """A single annotated head: sub-pixel position plus optional size hint."""

    x: float
    y: float
    size_hint: Optional[float] = None


@dataclass(frozen=True)
class Detection:
    """A head detector box (x, y is the top-left corner)."""

    x: float
    y: float
    w: float
    h: float
    score: float = 1.0

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ParameterError(f"detection box must have w > 0 and h > 0, got {self.w}x{self.h}")

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.w, self.h)


@dataclass(frozen=True)
class AnnotatedImage:
    """Image identity, dimensions, and its head points.

    All points must lie inside the image (0 <= x < width, 0 <= y < height).
    """

    image_id: str
    width: int
    height: int
    points: tuple[HeadPoint, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        if self.width < 0 or self.height < 0:
            raise ParameterError(f"{self.image_id}: negative image dimensions")
        for p in self.points:
            if not (0 <= p.x < self.width and 0 <= p.y < self.height):
                raise ParameterError(
                    f"{self.image_id}: point ({p.x}, {p.y}) outside {self.width}x{self.height}"
                )

    @property
    def n_points(self) -> int:
        return len(self.points)


def estimate_head_sizes(img: AnnotatedImage, dets: Sequence[Detection] = ()) -> list[float]:
    """Per-point head diameters from detector boxes: d = max(s, 15).

    Detections are matched to points greedily in increasing center-distance
    order (ties broken by point index, then detection index); a match is
    accepted only if the center distance is at most the box diagonal, and
    each side participates in at most one match. Matched points take
    s = max(w, h) of their box; unmatched points take s = 15.
    """
    sizes = [SIZE_FLOOR] * img.n_points
    if not dets or img.n_points == 0:
        return sizes

    candidates = []
    for pi, p in enumerate(img.points):
        for di, det in enumerate(dets):
            cx, cy = det.center
            dist = math.hypot(p.x - cx, p.y - cy)
            if dist <= det.diagonal:
                candidates.append((dist, pi, di))
    candidates.sort()

    point_used = [False] * img.n_points
    det_used = [False] * len(dets)
    for _, pi, di in candidates:
        if point_used[pi] or det_used[di]:
            continue
        point_used[pi] = True
        det_used[di] = True
        sizes[pi] = max(max(dets[di].w, dets[di].h), SIZE_FLOOR)
    return sizes


def head_sizes_from_hints(img: AnnotatedImage) -> list[float]:
    """Per-point diameters from annotation size hints, floored at 15 px."""
    return [max(p.size_hint, SIZE_FLOOR) if p.size_hint is not None else SIZE_FLOOR
            for p in img.points]


def build_foreground_mask(
    img: AnnotatedImage,
    sizes: Sequence[float],
    alpha: float,
    roi: Optional[BinaryMask] = None,
) -> BinaryMask:
    """Union of head disks: pixel centers within d_i * alpha / 2 of a point.

    Disks are clipped at image borders. With a region-of-interest mask the
    result is intersected with it.
    """
    check_positive(alpha, "alpha")
    if len(sizes) != img.n_points:
        raise GridShapeError(
            f"{img.image_id}: {len(sizes)} sizes for {img.n_points} points"
        )
    bits = np.zeros((img.height, img.width), dtype=np.uint8)
    for p, size in zip(img.points, sizes):
        radius = float(size) * float(alpha) / 2.0
        r0 = max(0, math.ceil(p.y - radius))
        r1 = min(img.height - 1, math.floor(p.y + radius))
        c0 = max(0, math.ceil(p.x - radius))
        c1 = min(img.width - 1, math.floor(p.x + radius))
        if r1 < r0 or c1 < c0:
            continue
        dy = np.arange(r0, r1 + 1, dtype=np.float64) - p.y
        dx = np.arange(c0, c1 + 1, dtype=np.float64) - p.x
        inside = dy[:, None] ** 2 + dx[None, :] ** 2 <= radius * radius
        bits[r0:r1 + 1, c0:c1 + 1] |= inside.astype(np.uint8)
    mask = BinaryMask(bits)
    if roi is not None:
        mask = mask.intersect(roi)
    return mask


def gaussian_density_map(img: AnnotatedImage, sigma: float = DEFAULT_SIGMA) -> DensityMap:
    """Ground-truth density: one renormalized truncated Gaussian per point.

    Each kernel is evaluated at pixel centers within Euclidean distance
    4*sigma of the point, clipped to the image, and scaled so its surviving
    mass is exactly 1. The map therefore sums to the point count regardless
    of border or corner placement.
    """
    check_positive(sigma, "sigma")
    values = np.zeros((img.height, img.width), dtype=np.float64)
    cutoff = KERNEL_TRUNCATE * sigma
    inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma)
    for p in img.points:
        r0 = max(0, math.ceil(p.y - cutoff))
        r1 = min(img.height - 1, math.floor(p.y + cutoff))
        c0 = max(0, math.ceil(p.x - cutoff))
        c1 = min(img.width - 1, math.floor(p.x + cutoff))
        dy = np.arange(r0, r1 + 1, dtype=np.float64) - p.y
        dx = np.arange(c0, c1 + 1, dtype=np.float64) - p.x
        r_sq = dy[:, None] ** 2 + dx[None, :] ** 2
        kernel = np.where(r_sq <= cutoff * cutoff, np.exp(-r_sq * inv_two_sigma_sq), 0.0)
        kernel /= kernel.sum()
        values[r0:r1 + 1, c0:c1 + 1] += kernel
    return DensityMap(values)


@dataclass
class LoadReport:
    """Summary of a loader run: counts plus human-readable warnings."""

    n_records: int = 0
    n_points: int = 0
    n_clamped: int = 0
    messages: list[str] = field(default_factory=list)


def _parse_number(obj, key, ctx):
    value = obj.get(key)
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise AnnotationParseError(f"{ctx}: field {key!r} must be a number, got {value!r}")
    return float(value)


def load_annotations(path) -> tuple[list[AnnotatedImage], LoadReport]:
    """Parse a JSON-lines annotation file.

    One object per line: {"image_id": str, "width": int, "height": int,
    "points": [{"x": num, "y": num, "size": num|null}, ...]}. Out-of-bounds
    points are clamped into the image and counted in the report.
    """
    images: list[AnnotatedImage] = []
    report = LoadReport()
    seen_ids: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            ctx = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise AnnotationParseError(f"{ctx}: invalid JSON ({exc})") from exc
            if not isinstance(obj, dict):
                raise AnnotationParseError(f"{ctx}: record must be a JSON object")
            image_id = obj.get("image_id")
            if not isinstance(image_id, str) or not image_id:
                raise AnnotationParseError(f"{ctx}: missing or empty image_id")
            if image_id in seen_ids:
                raise AnnotationParseError(f"{ctx}: duplicate image_id {image_id!r}")
            seen_ids.add(image_id)
            width = obj.get("width")
            height = obj.get("height")
            if not isinstance(width, int) or not isinstance(height, int) \
                    or isinstance(width, bool) or isinstance(height, bool) \
                    or width < 0 or height < 0:
                raise AnnotationParseError(f"{ctx}: width/height must be non-negative integers")
            raw_points = obj.get("points", [])
            if not isinstance(raw_points, list):
                raise AnnotationParseError(f"{ctx}: points must be a list")
            points = []
            for idx, rp in enumerate(raw_points):
                if not isinstance(rp, dict):
                    raise AnnotationParseError(f"{ctx}: point {idx} must be an object")
                x = _parse_number(rp, "x", f"{ctx} point {idx}")
                y = _parse_number(rp, "y", f"{ctx} point {idx}")
                size = rp.get("size")
                if size is not None:
                    if not isinstance(size, (int, float)) or isinstance(size, bool) or size <= 0:
                        raise AnnotationParseError(
                            f"{ctx} point {idx}: size must be a positive number or null"
                        )
                    size = float(size)
                if width == 0 or height == 0:
                    raise AnnotationParseError(
                        f"{ctx}: point {idx} on a zero-sized image cannot be placed"
                    )
                cx = min(max(x, 0.0), width - 1.0)
                cy = min(max(y, 0.0), height - 1.0)
                if cx != x or cy != y:
                    report.n_clamped += 1
                    report.messages.append(
                        f"{image_id}: point {idx} ({x:g}, {y:g}) clamped to ({cx:g}, {cy:g})"
                    )
                points.append(HeadPoint(cx, cy, size))
            images.append(AnnotatedImage(image_id, width, height, tuple(points)))
            report.n_records += 1
            report.n_points += len(points)
    return images, report


def load_detections(path) -> dict[str, list[Detection]]:
    """Parse a JSON-lines detection file into per-image box lists.

    One object per line: {"image_id": str, "boxes": [{"x","y","w","h","score"}, ...]}.
    """
    result: dict[str, list[Detection]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            ctx = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise AnnotationParseError(f"{ctx}: invalid JSON ({exc})") from exc
            if not isinstance(obj, dict):
                raise AnnotationParseError(f"{ctx}: record must be a JSON object")
            image_id = obj.get("image_id")
            if not isinstance(image_id, str) or not image_id:
                raise AnnotationParseError(f"{ctx}: missing or empty image_id")
            if image_id in result:
                raise AnnotationParseError(f"{ctx}: duplicate image_id {image_id!r}")
            raw_boxes = obj.get("boxes", [])
            if not isinstance(raw_boxes, list):
                raise AnnotationParseError(f"{ctx}: boxes must be a list")
            boxes = []
            for idx, rb in enumerate(raw_boxes):
                if not isinstance(rb, dict):
                    raise AnnotationParseError(f"{ctx}: box {idx} must be an object")
                bctx = f"{ctx} box {idx}"
                x = _parse_number(rb, "x", bctx)
                y = _parse_number(rb, "y", bctx)
                w = _parse_number(rb, "w", bctx)
                h = _parse_number(rb, "h", bctx)
                score = _parse_number(rb, "score", bctx) if "score" in rb else 1.0
                if w <= 0 or h <= 0:
                    raise AnnotationParseError(f"{bctx}: w and h must be positive")
                if not (0.0 <= score <= 1.0):
                    raise AnnotationParseError(f"{bctx}: score must lie in [0, 1]")
                boxes.append(Detection(x, y, w, h, score))
            result[image_id] = boxes
    return result
