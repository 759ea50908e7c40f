"""Dataset manifests: one JSON file tying annotations to prediction grids.

A manifest looks like:

    {
      "dataset_id": "scene-a",
      "annotations_path": "annotations.jsonl",
      "detections_path": "detections.jsonl",
      "predictions_dir": "pred",
      "roi_dir": "roi"
    }

detections_path and roi_dir are optional. Relative paths are resolved
against the directory containing the manifest file. Head sizes come from
the detections when present (matched to annotated points), otherwise from
per-point size hints, with the usual lower bound applied either way.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .annotations import (
    AnnotatedImage,
    estimate_head_sizes,
    head_sizes_from_hints,
    load_annotations,
    load_detections,
)
from .errors import ManifestError
from .gridio import read_density, read_mask
from .metrics import EvalPair, ImageSpec

MASK_SUFFIX = ".mask"
DENSITY_SUFFIX = ".dmap"


@dataclass(frozen=True)
class Manifest:
    dataset_id: str
    annotations_path: Path
    predictions_dir: Path
    detections_path: Optional[Path] = None
    roi_dir: Optional[Path] = None


def load_manifest(path) -> Manifest:
    """Parse and validate a manifest file; all referenced paths must exist."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ManifestError(f"{path}: cannot read manifest: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ManifestError(f"{path}: manifest must be a JSON object")

    def required(key):
        value = data.get(key)
        if not isinstance(value, str) or not value:
            raise ManifestError(f"{path}: missing or non-string field {key!r}")
        return value

    def optional(key):
        value = data.get(key)
        if value is None:
            return None
        if not isinstance(value, str) or not value:
            raise ManifestError(f"{path}: field {key!r} must be a non-empty string")
        return value

    known = {"dataset_id", "annotations_path", "detections_path", "predictions_dir", "roi_dir"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ManifestError(f"{path}: unknown manifest fields {unknown}")

    base = path.parent

    def resolve(rel):
        p = Path(rel)
        return p if p.is_absolute() else base / p

    manifest = Manifest(
        dataset_id=required("dataset_id"),
        annotations_path=resolve(required("annotations_path")),
        predictions_dir=resolve(required("predictions_dir")),
        detections_path=(lambda v: resolve(v) if v else None)(optional("detections_path")),
        roi_dir=(lambda v: resolve(v) if v else None)(optional("roi_dir")),
    )
    if not manifest.annotations_path.is_file():
        raise ManifestError(f"{path}: annotations_path does not exist: {manifest.annotations_path}")
    if not manifest.predictions_dir.is_dir():
        raise ManifestError(f"{path}: predictions_dir does not exist: {manifest.predictions_dir}")
    if manifest.detections_path is not None and not manifest.detections_path.is_file():
        raise ManifestError(f"{path}: detections_path does not exist: {manifest.detections_path}")
    if manifest.roi_dir is not None and not manifest.roi_dir.is_dir():
        raise ManifestError(f"{path}: roi_dir does not exist: {manifest.roi_dir}")
    return manifest


def _sizes_for(img: AnnotatedImage, detections) -> list[float]:
    if detections is not None:
        return estimate_head_sizes(img, detections.get(img.image_id, []))
    return head_sizes_from_hints(img)


def load_image_specs(manifest: Manifest) -> list[ImageSpec]:
    """Annotations plus head sizes plus optional ROI masks, no predictions."""
    images, _ = load_annotations(manifest.annotations_path)
    detections = None
    if manifest.detections_path is not None:
        detections = load_detections(manifest.detections_path)
    specs = []
    for img in sorted(images, key=lambda im: im.image_id):
        roi = None
        if manifest.roi_dir is not None:
            roi_path = manifest.roi_dir / (img.image_id + MASK_SUFFIX)
            if roi_path.is_file():
                roi = read_mask(roi_path)
        specs.append(ImageSpec(gt_points=img, sizes=_sizes_for(img, detections), roi=roi))
    return specs


def load_predictions(pred_dir, image_ids) -> tuple[dict, list[str]]:
    """Read <image_id>.dmap grids; ids without a file are returned as omissions."""
    pred_dir = Path(pred_dir)
    preds = {}
    omitted = []
    for image_id in sorted(image_ids):
        path = pred_dir / (image_id + DENSITY_SUFFIX)
        if path.is_file():
            preds[image_id] = read_density(path)
        else:
            omitted.append(image_id)
    return preds, omitted


def load_eval_pairs(manifest: Manifest, pred_dir=None) -> tuple[list[EvalPair], list[str]]:
    """Pairs ready for evaluation, plus image ids lacking a prediction grid.

    pred_dir overrides the manifest's predictions_dir (used when scoring one
    model's outputs against another manifest's ground truth).
    """
    specs = load_image_specs(manifest)
    preds, omitted = load_predictions(
        pred_dir if pred_dir is not None else manifest.predictions_dir,
        [s.image_id for s in specs],
    )
    pairs = [s.with_prediction(preds[s.image_id]) for s in specs if s.image_id in preds]
    return pairs, omitted
