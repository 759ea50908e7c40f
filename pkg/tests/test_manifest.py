"""Manifest parsing, path resolution, and prediction loading."""

import json

import numpy as np
import pytest

from crowdbg.errors import ManifestError
from crowdbg.gridio import write_density, write_mask
from crowdbg.grids import BinaryMask, DensityMap
from crowdbg.manifest import (
    load_eval_pairs,
    load_image_specs,
    load_manifest,
    load_predictions,
)


def build_dataset(tmp_path, n_images=3, with_roi=False):
    ann = tmp_path / "annotations.jsonl"
    records = []
    for i in range(n_images):
        records.append({
            "image_id": f"im-{i}",
            "width": 8,
            "height": 8,
            "points": [{"x": 3.0, "y": 3.0, "size": 4.0}],
        })
    ann.write_text("\n".join(json.dumps(r) for r in records) + "\n")
    pred = tmp_path / "pred"
    pred.mkdir()
    rng = np.random.default_rng(0)
    for i in range(n_images):
        write_density(pred / f"im-{i}.dmap", DensityMap(rng.uniform(0, 1, size=(8, 8))))
    manifest = {
        "dataset_id": "tiny",
        "annotations_path": "annotations.jsonl",
        "predictions_dir": "pred",
    }
    if with_roi:
        roi = tmp_path / "roi"
        roi.mkdir()
        write_mask(roi / "im-0.mask", BinaryMask.all_ones(8, 8))
        manifest["roi_dir"] = "roi"
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(manifest))
    return path


def test_relative_paths_resolve_against_the_manifest_directory(tmp_path):
    path = build_dataset(tmp_path)
    m = load_manifest(path)
    assert m.dataset_id == "tiny"
    assert m.annotations_path == tmp_path / "annotations.jsonl"
    assert m.predictions_dir == tmp_path / "pred"
    assert m.detections_path is None


def test_missing_referenced_paths_are_rejected(tmp_path):
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({
        "dataset_id": "x",
        "annotations_path": "nope.jsonl",
        "predictions_dir": "pred",
    }))
    with pytest.raises(ManifestError):
        load_manifest(path)


def test_unknown_fields_are_rejected(tmp_path):
    path = build_dataset(tmp_path)
    data = json.loads(path.read_text())
    data["surprise"] = 1
    path.write_text(json.dumps(data))
    with pytest.raises(ManifestError) as exc:
        load_manifest(path)
    assert "surprise" in str(exc.value)


def test_non_object_manifest_is_rejected(tmp_path):
    path = tmp_path / "manifest.json"
    path.write_text("[1, 2]")
    with pytest.raises(ManifestError):
        load_manifest(path)


def test_image_specs_sorted_with_sizes_and_roi(tmp_path):
    path = build_dataset(tmp_path, with_roi=True)
    specs = load_image_specs(load_manifest(path))
    assert [s.image_id for s in specs] == ["im-0", "im-1", "im-2"]
    assert specs[0].sizes == [15.0]  # hint 4.0 floored
    assert specs[0].roi is not None
    assert specs[1].roi is None


def test_eval_pairs_report_missing_predictions(tmp_path):
    path = build_dataset(tmp_path)
    (tmp_path / "pred" / "im-1.dmap").unlink()
    pairs, omitted = load_eval_pairs(load_manifest(path))
    assert [p.image_id for p in pairs] == ["im-0", "im-2"]
    assert omitted == ["im-1"]


def test_load_predictions_is_keyed_by_image_id(tmp_path):
    path = build_dataset(tmp_path)
    preds, omitted = load_predictions(tmp_path / "pred", ["im-0", "im-9"])
    assert list(preds) == ["im-0"]
    assert omitted == ["im-9"]


def test_pred_dir_override_supports_cross_scoring(tmp_path):
    path = build_dataset(tmp_path)
    other = tmp_path / "other"
    other.mkdir()
    write_density(other / "im-0.dmap", DensityMap.zeros(8, 8))
    pairs, omitted = load_eval_pairs(load_manifest(path), pred_dir=other)
    assert [p.image_id for p in pairs] == ["im-0"]
    assert omitted == ["im-1", "im-2"]
    assert pairs[0].predicted.total() == 0.0
