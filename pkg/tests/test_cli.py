"""End-to-end CLI behavior: files written, exit codes, determinism."""

import csv
import json

import numpy as np
import pytest
from click.testing import CliRunner

from crowdbg.annotations import build_foreground_mask, load_annotations
from crowdbg.cli import main
from crowdbg.gridio import read_density, read_mask, write_density
from crowdbg.grids import DensityMap
from crowdbg.toymodel.model import load_params


@pytest.fixture()
def runner():
    return CliRunner()


def run_ok(runner, args):
    result = runner.invoke(main, args, catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


def make_synth(runner, out_dir, n=6, seed=3, **extra):
    args = ["synth", "--out-dir", str(out_dir), "--n", str(n), "--seed", str(seed)]
    for key, value in extra.items():
        args += [f"--{key.replace('_', '-')}", str(value)]
    run_ok(runner, args)
    return out_dir / "manifest.json"


def read_report(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestSynthAndEval:
    def test_eval_on_own_ground_truth_is_zero_up_to_storage(self, runner, tmp_path):
        manifest = make_synth(runner, tmp_path / "ds")
        out = tmp_path / "report.csv"
        run_ok(runner, ["eval", "--manifest", str(manifest), "--sigma", "2.5",
                        "--out", str(out)])
        rows = read_report(out)
        assert rows[0] == ["region", "mae", "mse", "surface_fraction", "n_images", "alpha"]
        by_region = {r[0]: r for r in rows[1:]}
        for region in ("background", "foreground", "full_image"):
            assert float(by_region[region][1]) < 1e-6  # smoke invariant
        assert "decomposition_slack" in by_region

    def test_game_levels_add_rows(self, runner, tmp_path):
        manifest = make_synth(runner, tmp_path / "ds")
        out = tmp_path / "report.csv"
        run_ok(runner, ["eval", "--manifest", str(manifest), "--sigma", "2.5",
                        "--game-levels", "0,2", "--out", str(out)])
        names = [r[0] for r in read_report(out)]
        assert "game_0" in names and "game_2" in names

    def test_eval_is_jobs_independent(self, runner, tmp_path):
        manifest = make_synth(runner, tmp_path / "ds")
        out1 = tmp_path / "r1.csv"
        out8 = tmp_path / "r8.csv"
        run_ok(runner, ["eval", "--manifest", str(manifest), "--sigma", "2.5",
                        "--jobs", "1", "--out", str(out1)])
        run_ok(runner, ["eval", "--manifest", str(manifest), "--sigma", "2.5",
                        "--jobs", "8", "--out", str(out8)])
        assert out1.read_bytes() == out8.read_bytes()

    def test_missing_manifest_exits_two(self, runner, tmp_path):
        result = runner.invoke(main, ["eval", "--manifest", str(tmp_path / "nope.json"),
                                      "--out", str(tmp_path / "r.csv")])
        assert result.exit_code == 2

    def test_no_evaluable_images_exits_one(self, runner, tmp_path):
        manifest = make_synth(runner, tmp_path / "ds")
        for f in (tmp_path / "ds" / "gt_density").iterdir():
            f.unlink()
        result = runner.invoke(main, ["eval", "--manifest", str(manifest),
                                      "--out", str(tmp_path / "r.csv")])
        assert result.exit_code == 1

    def test_synth_is_deterministic(self, runner, tmp_path):
        make_synth(runner, tmp_path / "a", seed=9)
        make_synth(runner, tmp_path / "b", seed=9)
        for name in ("annotations.jsonl",):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        for f in sorted((tmp_path / "a" / "inputs").iterdir()):
            twin = tmp_path / "b" / "inputs" / f.name
            assert f.read_bytes() == twin.read_bytes()


class TestMaskAndDensity:
    def test_masks_match_the_library_builder(self, runner, tmp_path):
        manifest = make_synth(runner, tmp_path / "ds", n=3)
        ann_path = tmp_path / "ds" / "annotations.jsonl"
        out_dir = tmp_path / "masks"
        run_ok(runner, ["mask", "--annotations", str(ann_path), "--alpha", "1.5",
                        "--out-dir", str(out_dir)])
        images, _ = load_annotations(ann_path)
        for img in images:
            got = read_mask(out_dir / f"{img.image_id}.mask")
            sizes = [max(p.size_hint, 15.0) for p in img.points]
            want = build_foreground_mask(img, sizes, 1.5)
            assert np.array_equal(got.bits, want.bits)

    def test_density_normalization_is_reported(self, runner, tmp_path):
        manifest = make_synth(runner, tmp_path / "ds", n=3)
        ann_path = tmp_path / "ds" / "annotations.jsonl"
        out_dir = tmp_path / "dmaps"
        result = run_ok(runner, ["density", "--annotations", str(ann_path),
                                 "--sigma", "2.5", "--out-dir", str(out_dir)])
        assert "sum_discrepancy=" in result.output
        d = read_density(out_dir / "scene-0000.dmap")
        assert d.values.shape == (64, 64)

    def test_density_mass_loss_exits_one(self, runner, tmp_path):
        # A kernel narrower than the pixel grid around a fractional point
        # covers no pixel center, so its mass is dropped and flagged.
        ann = tmp_path / "ann.jsonl"
        ann.write_text(json.dumps({
            "image_id": "x", "width": 8, "height": 8,
            "points": [{"x": 3.5, "y": 3.5}],
        }) + "\n")
        result = runner.invoke(main, ["density", "--annotations", str(ann),
                                      "--sigma", "1e-6", "--out-dir",
                                      str(tmp_path / "out")])
        assert result.exit_code == 1
        assert "VIOLATION" in result.output


class TestSweep:
    def test_writes_curve_and_checks_monotonicity(self, runner, tmp_path):
        manifest = make_synth(runner, tmp_path / "ds")
        out = tmp_path / "sweep.csv"
        run_ok(runner, ["sweep", "--manifest", str(manifest), "--sigma", "2.5",
                        "--out", str(out)])
        rows = read_report(out)
        assert rows[0] == ["alpha", "bg_mae", "fg_mae", "bg_pred_count_mean"]
        counts = [float(r[3]) for r in rows[1:]]
        assert all(b <= a + 1e-12 for a, b in zip(counts, counts[1:]))

    @pytest.mark.filterwarnings("ignore::crowdbg.errors.NegativeDensityWarning")
    def test_negative_predictions_can_violate_monotonicity(self, runner, tmp_path):
        # A uniformly negative prediction gains background "count" as the
        # masks dilate, so the nonincreasing assertion trips: exit 1.
        manifest = make_synth(runner, tmp_path / "ds", n=2,
                              pure_background_every=0)
        pred_dir = tmp_path / "ds" / "gt_density"
        for f in pred_dir.iterdir():
            d = read_density(f)
            write_density(f, DensityMap(np.full_like(d.values, -1.0)))
        result = runner.invoke(main, ["sweep", "--manifest", str(manifest),
                                      "--sigma", "2.5",
                                      "--out", str(tmp_path / "s.csv")])
        assert result.exit_code == 1

    def test_unsorted_alphas_exit_two(self, runner, tmp_path):
        manifest = make_synth(runner, tmp_path / "ds", n=2)
        result = runner.invoke(main, ["sweep", "--manifest", str(manifest),
                                      "--alphas", "3,1",
                                      "--out", str(tmp_path / "s.csv")])
        assert result.exit_code == 2


class TestCrossEval:
    def test_matrix_with_positional_diagonal(self, runner, tmp_path):
        m1 = make_synth(runner, tmp_path / "ds1", n=3, seed=1)
        m2 = make_synth(runner, tmp_path / "ds2", n=3, seed=2)
        out = tmp_path / "cross.csv"
        result = run_ok(runner, [
            "crosseval",
            "--manifests", f"{m1},{m2}",
            "--pred-dirs", f"{tmp_path / 'ds1' / 'gt_density'},{tmp_path / 'ds2' / 'gt_density'}",
            "--sigma", "2.5", "--out", str(out),
        ])
        rows = read_report(out)
        assert rows[0] == ["train_id", "test_id", "bg_mae", "n_images_used", "n_omitted"]
        assert len(rows) == 5
        diag = [r for r in rows[1:] if r[0].startswith("gt_density") and r[1] == "ds1"]
        assert float(diag[0][2]) < 1e-6
        assert "*" in result.output


class TestTrainToy:
    def test_model_and_predictions_are_written_deterministically(self, runner, tmp_path):
        make_synth(runner, tmp_path / "ds", n=3, seed=4)
        model_a = tmp_path / "a.tfcn"
        model_b = tmp_path / "b.tfcn"
        preds = tmp_path / "preds"
        for model in (model_a, model_b):
            run_ok(runner, ["train-toy", "--dataset", str(tmp_path / "ds"),
                            "--out", str(model), "--pred-out-dir", str(preds),
                            "--epochs", "2", "--seed", "5"])
        assert model_a.read_bytes() == model_b.read_bytes()
        params = load_params(model_a)
        assert params.trunk_w.shape == (8, 1, 3, 3)
        assert (preds / "scene-0000.dmap").is_file()

    def test_missing_dataset_exits_two(self, runner, tmp_path):
        result = runner.invoke(main, ["train-toy", "--dataset", str(tmp_path / "no"),
                                      "--out", str(tmp_path / "m.tfcn")])
        assert result.exit_code == 2


class TestBsExperiment:
    def test_report_is_byte_identical_across_reruns(self, runner, tmp_path):
        args = ["bs-experiment", "--seed", "7", "--n-seeds", "3", "--epochs", "1",
                "--n-train", "2", "--n-eval", "2", "--pure-background-every", "2",
                "--learning-rate", "1e-5"]
        out_a = tmp_path / "a.csv"
        out_b = tmp_path / "b.csv"
        run_ok(runner, args + ["--out", str(out_a)])
        run_ok(runner, args + ["--out", str(out_b)])
        assert out_a.read_bytes() == out_b.read_bytes()
        rows = read_report(out_a)
        assert rows[0] == ["seed", "variant", "bg_mae", "fg_mae", "full_mae",
                           "purebg_pred_count"]
        assert [r[0] for r in rows[1:7]] == ["7", "7", "8", "8", "9", "9"]
        assert rows[-1][0] == "median"
