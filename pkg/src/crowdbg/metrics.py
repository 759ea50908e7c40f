"""Region-split counting metrics, grid-partition error, and sweeps.

Counting error is reported per region: full image, foreground (union of
dilated head disks), and background (everything else, within the ROI when
one is given). Ground-truth counts come from the Gaussian density map
restricted by the same mask, so foreground + background == full holds
exactly up to summation order.

MAE is the mean absolute per-image count error; MSE is the root of the
mean squared error. Aggregation always runs in ascending image_id order
with plain sequential accumulation, so results are identical regardless of
worker count and match a brute-force loop oracle bit-for-bit.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .annotations import AnnotatedImage, build_foreground_mask, gaussian_density_map
from .annotations import DEFAULT_SIGMA
from .errors import GridShapeError, ParameterError
from .grids import BinaryMask, DensityMap, masked_count, sequential_sum

DEFAULT_EVAL_ALPHA = 2.0
DEFAULT_SWEEP_ALPHAS = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0)


class Region(enum.Enum):
    BACKGROUND = "background"
    FOREGROUND = "foreground"
    FULL_IMAGE = "full_image"


@dataclass(frozen=True)
class RegionMetrics:
    region: Region
    mae: float
    mse: float
    surface_fraction: float
    n_images: int


@dataclass(frozen=True)
class EvalPair:
    """One image to evaluate: prediction plus its ground-truth annotation."""

    image_id: str
    predicted: DensityMap
    gt_points: AnnotatedImage
    sizes: Sequence[float]
    roi: Optional[BinaryMask] = None

    def __post_init__(self):
        ann = self.gt_points
        if (self.predicted.height, self.predicted.width) != (ann.height, ann.width):
            raise GridShapeError(
                f"{self.image_id}: prediction {self.predicted.height}x{self.predicted.width} "
                f"vs annotation {ann.height}x{ann.width}"
            )
        if len(self.sizes) != ann.n_points:
            raise GridShapeError(
                f"{self.image_id}: {len(self.sizes)} sizes for {ann.n_points} points"
            )
        if self.roi is not None and (self.roi.height, self.roi.width) != (ann.height, ann.width):
            raise GridShapeError(f"{self.image_id}: ROI shape mismatch")


@dataclass(frozen=True)
class ImageSpec:
    """Ground truth for one image, without a prediction attached yet."""

    gt_points: AnnotatedImage
    sizes: Sequence[float]
    roi: Optional[BinaryMask] = None

    def __post_init__(self):
        if len(self.sizes) != self.gt_points.n_points:
            raise GridShapeError(
                f"{self.image_id}: {len(self.sizes)} sizes for {self.gt_points.n_points} points"
            )
        ann = self.gt_points
        if self.roi is not None and (self.roi.height, self.roi.width) != (ann.height, ann.width):
            raise GridShapeError(f"{self.image_id}: ROI shape mismatch")

    @property
    def image_id(self) -> str:
        return self.gt_points.image_id

    def with_prediction(self, predicted: DensityMap) -> EvalPair:
        return EvalPair(self.image_id, predicted, self.gt_points, self.sizes, self.roi)


@dataclass(frozen=True)
class ImageRegionCounts:
    """Per-image masked counts, one (predicted, ground-truth) pair per region."""

    image_id: str
    counts: dict  # Region -> (float, float)
    surfaces: dict  # Region -> float


def _image_counts(pair: EvalPair, alpha: float, sigma: float) -> ImageRegionCounts:
    base = pair.roi if pair.roi is not None else BinaryMask.all_ones(
        pair.predicted.height, pair.predicted.width
    )
    fg = build_foreground_mask(pair.gt_points, pair.sizes, alpha, roi=base)
    bg = fg.complement().intersect(base)
    gt_density = gaussian_density_map(pair.gt_points, sigma)
    masks = {Region.BACKGROUND: bg, Region.FOREGROUND: fg, Region.FULL_IMAGE: base}
    valid = base.count_ones()
    counts = {}
    surfaces = {}
    for region, mask in masks.items():
        counts[region] = (masked_count(pair.predicted, mask), masked_count(gt_density, mask))
        surfaces[region] = mask.count_ones() / valid if valid else 0.0
    return ImageRegionCounts(pair.image_id, counts, surfaces)


def _all_image_counts(pairs, alpha, sigma, jobs):
    """Compute per-image counts (possibly in parallel), sorted by image_id."""
    if not pairs:
        raise ParameterError("no evaluation pairs given")
    ordered = sorted(pairs, key=lambda p: p.image_id)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(lambda p: _image_counts(p, alpha, sigma), ordered))
    return [_image_counts(p, alpha, sigma) for p in ordered]


def _aggregate(per_image: list[ImageRegionCounts], region: Region) -> RegionMetrics:
    # Plain sequential accumulation in image_id order: bit-stable and
    # reproducible against a loop oracle.
    abs_acc = 0.0
    sq_acc = 0.0
    surf_acc = 0.0
    for item in per_image:
        cp, cg = item.counts[region]
        err = cp - cg
        abs_acc += abs(err)
        sq_acc += err * err
        surf_acc += item.surfaces[region]
    n = len(per_image)
    return RegionMetrics(
        region=region,
        mae=abs_acc / n,
        mse=math.sqrt(sq_acc / n),
        surface_fraction=surf_acc / n,
        n_images=n,
    )


def region_metrics(
    pairs: Sequence[EvalPair],
    alpha: float = DEFAULT_EVAL_ALPHA,
    sigma: float = DEFAULT_SIGMA,
    jobs: int = 1,
) -> dict[Region, RegionMetrics]:
    """MAE/MSE/surface per region over a dataset of (prediction, gt) pairs."""
    per_image = _all_image_counts(pairs, alpha, sigma, jobs)
    return {region: _aggregate(per_image, region) for region in Region}


@dataclass(frozen=True)
class DecompositionReport:
    """Full-image MAE against the sum of its region parts.

    slack == mae_bg + mae_fg - mae_full is nonnegative; a large value means
    background over-counts are cancelling foreground under-counts inside
    the full-image metric.
    """

    mae_full: float
    mae_bg: float
    mae_fg: float
    slack: float
    flagged: bool
    n_images: int


def decomposition_report(
    pairs: Sequence[EvalPair],
    alpha: float = DEFAULT_EVAL_ALPHA,
    sigma: float = DEFAULT_SIGMA,
    jobs: int = 1,
    flag_threshold: float = 0.25,
) -> DecompositionReport:
    """Expose hidden error compensation between foreground and background.

    Flags the dataset when slack exceeds flag_threshold * mae_full.
    """
    per_image = _all_image_counts(pairs, alpha, sigma, jobs)
    mae_full = _aggregate(per_image, Region.FULL_IMAGE).mae
    mae_bg = _aggregate(per_image, Region.BACKGROUND).mae
    mae_fg = _aggregate(per_image, Region.FOREGROUND).mae
    slack = mae_bg + mae_fg - mae_full
    return DecompositionReport(
        mae_full=mae_full,
        mae_bg=mae_bg,
        mae_fg=mae_fg,
        slack=slack,
        flagged=slack > flag_threshold * mae_full,
        n_images=len(per_image),
    )


def _spans(n: int, parts: int) -> list[tuple[int, int]]:
    """Split [0, n) into `parts` contiguous spans, remainder to the trailing ones."""
    q, r = divmod(n, parts)
    sizes = [q] * (parts - r) + [q + 1] * r
    spans = []
    start = 0
    for s in sizes:
        spans.append((start, start + s))
        start += s
    return spans


def game(pred: DensityMap, gt: DensityMap, level: int) -> float:
    """Grid-partition absolute count error.

    The image is split into 4^level cells (2^level near-equal spans per
    side, remainder pixels assigned to the trailing spans); the result is
    the sum over cells of |predicted cell count - ground-truth cell count|.
    Level 0 is the plain absolute count difference.
    """
    if level < 0 or int(level) != level:
        raise ParameterError(f"level must be a non-negative integer, got {level}")
    if (pred.height, pred.width) != (gt.height, gt.width):
        raise GridShapeError(
            f"game: prediction {pred.height}x{pred.width} vs gt {gt.height}x{gt.width}"
        )
    parts = 2 ** int(level)
    if parts > min(pred.height, pred.width):
        raise ParameterError(
            f"level {level} needs {parts} spans per side, grid is {pred.height}x{pred.width}"
        )
    acc = 0.0
    for r0, r1 in _spans(pred.height, parts):
        for c0, c1 in _spans(pred.width, parts):
            cell_p = sequential_sum(pred.values[r0:r1, c0:c1])
            cell_g = sequential_sum(gt.values[r0:r1, c0:c1])
            acc += abs(cell_p - cell_g)
    return acc


@dataclass(frozen=True)
class SweepCurve:
    """Background/foreground error as the head-dilation factor grows."""

    alphas: tuple[float, ...]
    bg_mae: tuple[float, ...]
    fg_mae: tuple[float, ...]
    bg_pred_count_mean: tuple[float, ...]

    def __post_init__(self):
        n = len(self.alphas)
        if not (len(self.bg_mae) == len(self.fg_mae) == len(self.bg_pred_count_mean) == n):
            raise ParameterError("sweep curve lists must share one length")
        if any(b <= a for a, b in zip(self.alphas, self.alphas[1:])):
            raise ParameterError("alphas must be strictly increasing")


def alpha_sweep(
    pairs: Sequence[EvalPair],
    alphas: Sequence[float] = DEFAULT_SWEEP_ALPHAS,
    sigma: float = DEFAULT_SIGMA,
    jobs: int = 1,
) -> SweepCurve:
    """Evaluate bg/fg MAE at each dilation factor.

    Masks are nested in alpha, so the mean predicted background count is
    nonincreasing along the curve.
    """
    alphas = tuple(float(a) for a in alphas)
    if not alphas:
        raise ParameterError("alphas must be nonempty")
    if any(a <= 0 for a in alphas):
        raise ParameterError("alphas must be > 0")
    if any(b <= a for a, b in zip(alphas, alphas[1:])):
        raise ParameterError("alphas must be strictly increasing")
    bg_mae = []
    fg_mae = []
    bg_count_mean = []
    for alpha in alphas:
        per_image = _all_image_counts(pairs, alpha, sigma, jobs)
        bg_mae.append(_aggregate(per_image, Region.BACKGROUND).mae)
        fg_mae.append(_aggregate(per_image, Region.FOREGROUND).mae)
        acc = 0.0
        for item in per_image:
            acc += item.counts[Region.BACKGROUND][0]
        bg_count_mean.append(acc / len(per_image))
    return SweepCurve(alphas, tuple(bg_mae), tuple(fg_mae), tuple(bg_count_mean))


@dataclass(frozen=True)
class CrossEvalCell:
    train_id: str
    test_id: str
    bg_mae: float  # NaN when no images could be evaluated
    n_images_used: int
    n_omitted: int
    omitted_ids: tuple[str, ...]


@dataclass(frozen=True)
class CrossEvalResult:
    """Train x test matrix of background MAE with per-cell coverage."""

    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    cells: tuple[CrossEvalCell, ...]

    def cell(self, train_id: str, test_id: str) -> CrossEvalCell:
        for c in self.cells:
            if c.train_id == train_id and c.test_id == test_id:
                return c
        raise KeyError((train_id, test_id))

    def to_csv_rows(self) -> list[list[str]]:
        rows = [["train_id", "test_id", "bg_mae", "n_images_used", "n_omitted"]]
        for c in self.cells:
            rows.append([
                c.train_id, c.test_id,
                "" if math.isnan(c.bg_mae) else str(c.bg_mae),
                str(c.n_images_used), str(c.n_omitted),
            ])
        return rows

    def to_text(self) -> str:
        """Aligned table; the positional diagonal is marked with '*'.

        Prediction sources are conventionally ordered to match the
        dataset list, so position i,i is the in-domain cell even when
        the two axes use different naming schemes.
        """
        headers = ["train\\test"] + list(self.test_ids)
        table = [headers]
        for i, train_id in enumerate(self.train_ids):
            row = [train_id]
            for j, test_id in enumerate(self.test_ids):
                c = self.cell(train_id, test_id)
                text = "n/a" if math.isnan(c.bg_mae) else f"{c.bg_mae:.4f}"
                if i == j:
                    text = "*" + text
                row.append(text)
            table.append(row)
        widths = [max(len(r[i]) for r in table) for i in range(len(headers))]
        lines = ["  ".join(cell.rjust(w) for cell, w in zip(row, widths)) for row in table]
        return "\n".join(lines)


def cross_eval(
    prediction_sets: Sequence[tuple[str, dict[str, DensityMap]]],
    datasets: Sequence[tuple[str, Sequence[ImageSpec]]],
    alpha: float = DEFAULT_EVAL_ALPHA,
    sigma: float = DEFAULT_SIGMA,
    jobs: int = 1,
) -> CrossEvalResult:
    """Background MAE for every (prediction set, dataset) combination.

    `prediction_sets` maps a training-source id to predictions keyed by
    image_id; `datasets` supplies the ground truth per dataset. Images
    missing from a prediction set are listed as omissions and the cell is
    computed over the covered intersection.
    """
    cells = []
    for train_id, preds in prediction_sets:
        for test_id, specs in datasets:
            usable = []
            omitted = []
            for spec in sorted(specs, key=lambda s: s.image_id):
                pred = preds.get(spec.image_id)
                if pred is None:
                    omitted.append(spec.image_id)
                    continue
                usable.append(spec.with_prediction(pred))
            if usable:
                bg = region_metrics(usable, alpha=alpha, sigma=sigma, jobs=jobs)
                bg_mae = bg[Region.BACKGROUND].mae
            else:
                bg_mae = float("nan")
            cells.append(CrossEvalCell(
                train_id=train_id,
                test_id=test_id,
                bg_mae=bg_mae,
                n_images_used=len(usable),
                n_omitted=len(omitted),
                omitted_ids=tuple(omitted),
            ))
    return CrossEvalResult(
        train_ids=tuple(t for t, _ in prediction_sets),
        test_ids=tuple(t for t, _ in datasets),
        cells=tuple(cells),
    )
