"""Batch command line front end.

Subcommands cover the full pipeline: mask/density generation from
annotation files, region-split evaluation of prediction directories,
dilation sweeps, cross-dataset matrices, synthetic dataset generation,
toy-model training, and the paired suppression experiment.

Conventions shared by every subcommand:
  * exit 0 on success, 1 when a computed property or assertion fails,
    2 on usage, path, or file-format problems;
  * all randomness flows from an explicit --seed flag;
  * outputs are ordered by image_id, so --jobs never changes bytes;
  * each run prints its resolved configuration for replay.
"""

from __future__ import annotations

import csv
import functools
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from .annotations import (
    build_foreground_mask,
    estimate_head_sizes,
    gaussian_density_map,
    head_sizes_from_hints,
    load_annotations,
    load_detections,
)
from .errors import (
    AnnotationParseError,
    FileFormatError,
    ManifestError,
    NumericError,
    ParameterError,
)
from .gridio import read_mask, write_density, write_mask
from .grids import DensityMap
from .losses import DensityLossKind
from .manifest import (
    DENSITY_SUFFIX,
    MASK_SUFFIX,
    load_eval_pairs,
    load_image_specs,
    load_manifest,
    load_predictions,
)
from .metrics import (
    Region,
    alpha_sweep,
    cross_eval,
    decomposition_report,
    game,
    region_metrics,
)
from .toymodel.experiment import ExperimentConfig, bs_experiment, experiment_csv_rows
from .toymodel.model import TrainConfig, init_params, load_params, predict_density, save_params
from .toymodel.model import train as train_model
from .toymodel.scenes import SceneProfile, generate_scenes, write_scene_dataset

EXIT_PROPERTY_FAILURE = 1
EXIT_USAGE = 2


def _handle_errors(fn):
    """Map library exceptions onto the stable exit-code contract."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ManifestError, AnnotationParseError, FileFormatError,
                ParameterError, OSError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_USAGE)
        except NumericError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_PROPERTY_FAILURE)

    return wrapper


def _write_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def _map_ordered(fn, items, jobs):
    """Apply fn to items, possibly in parallel, preserving order."""
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _load_sized_annotations(annotations, detections):
    """Images sorted by id, each with its head-size list."""
    images, report = load_annotations(annotations)
    for message in report.messages:
        click.echo(f"note: {message}", err=True)
    dets = load_detections(detections) if detections else None
    images = sorted(images, key=lambda im: im.image_id)
    sized = []
    for img in images:
        if dets is not None:
            sizes = estimate_head_sizes(img, dets.get(img.image_id, []))
        else:
            sizes = head_sizes_from_hints(img)
        sized.append((img, sizes))
    return sized


@click.group()
@click.version_option(package_name="crowdbg")
def main():
    """Background-aware evaluation and suppression for crowd counting."""


@main.command()
@click.option("--annotations", required=True, type=click.Path(), help="Annotation JSONL file.")
@click.option("--detections", type=click.Path(), default=None,
              help="Optional detection JSONL used to estimate head sizes.")
@click.option("--alpha", type=float, default=2.0, show_default=True,
              help="Head-diameter dilation factor.")
@click.option("--out-dir", required=True, type=click.Path(), help="Directory for .mask files.")
@click.option("--roi-dir", type=click.Path(), default=None,
              help="Optional directory of <image_id>.mask ROI files to intersect.")
@click.option("--jobs", type=int, default=1, show_default=True)
@_handle_errors
def mask(annotations, detections, alpha, out_dir, roi_dir, jobs):
    """Write a foreground mask per annotated image."""
    click.echo(f"# config: alpha={alpha} annotations={annotations} detections={detections}")
    sized = _load_sized_annotations(annotations, detections)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def build(item):
        img, sizes = item
        roi = None
        if roi_dir:
            roi_path = Path(roi_dir) / (img.image_id + MASK_SUFFIX)
            if roi_path.is_file():
                roi = read_mask(roi_path)
        return build_foreground_mask(img, sizes, alpha, roi=roi)

    masks = _map_ordered(build, sized, jobs)
    fractions = []
    for (img, _), m in zip(sized, masks):
        write_mask(out / (img.image_id + MASK_SUFFIX), m)
        frac = m.fraction()
        fractions.append(frac)
        click.echo(f"{img.image_id} foreground_fraction={frac}")
    if fractions:
        click.echo(f"mean_foreground_fraction={sum(fractions) / len(fractions)}")
    click.echo(f"wrote {len(masks)} masks to {out}")


@main.command()
@click.option("--annotations", required=True, type=click.Path(), help="Annotation JSONL file.")
@click.option("--sigma", type=float, default=15.0, show_default=True,
              help="Gaussian kernel bandwidth in pixels.")
@click.option("--out-dir", required=True, type=click.Path(), help="Directory for .dmap files.")
@click.option("--jobs", type=int, default=1, show_default=True)
@_handle_errors
def density(annotations, sigma, out_dir, jobs):
    """Write a ground-truth density map per annotated image.

    Prints the per-image |sum - N| discrepancy and exits 1 if any image
    misses the 1e-6*N normalization bound.
    """
    click.echo(f"# config: sigma={sigma} annotations={annotations}")
    sized = _load_sized_annotations(annotations, None)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grids = _map_ordered(lambda item: gaussian_density_map(item[0], sigma=sigma), sized, jobs)
    violations = 0
    for (img, _), d in zip(sized, grids):
        write_density(out / (img.image_id + DENSITY_SUFFIX), d)
        n = img.n_points
        disc = abs(d.total() - n)
        ok = disc <= 1e-6 * n if n else disc == 0.0
        if not ok:
            violations += 1
        click.echo(f"{img.image_id} n={n} sum_discrepancy={disc}{'' if ok else ' VIOLATION'}")
    click.echo(f"wrote {len(grids)} density maps to {out}")
    if violations:
        click.echo(f"error: {violations} image(s) violate the normalization bound", err=True)
        sys.exit(EXIT_PROPERTY_FAILURE)


@main.command("eval")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--alpha", type=float, default=2.0, show_default=True)
@click.option("--sigma", type=float, default=15.0, show_default=True,
              help="Bandwidth for the ground-truth density used in counts.")
@click.option("--game-levels", default=None,
              help="Comma-separated GAME levels to append, e.g. 0,1,2.")
@click.option("--out", "out_path", required=True, type=click.Path(), help="Report CSV path.")
@click.option("--jobs", type=int, default=1, show_default=True)
@_handle_errors
def eval_cmd(manifest_path, alpha, sigma, game_levels, out_path, jobs):
    """Region-split MAE/MSE report for one manifest.

    The report has one row per region plus a decomposition_slack row;
    requested GAME levels add one game_<L> row each (mean over images).
    """
    click.echo(f"# config: manifest={manifest_path} alpha={alpha} sigma={sigma} jobs={jobs}")
    manifest = load_manifest(manifest_path)
    pairs, omitted = load_eval_pairs(manifest)
    for image_id in omitted:
        click.echo(f"note: no prediction for {image_id}; skipped", err=True)
    if not pairs:
        click.echo("error: no evaluable images (all predictions missing)", err=True)
        sys.exit(EXIT_PROPERTY_FAILURE)

    by_region = region_metrics(pairs, alpha=alpha, sigma=sigma, jobs=jobs)
    decomp = decomposition_report(pairs, alpha=alpha, sigma=sigma, jobs=jobs)

    header = ["region", "mae", "mse", "surface_fraction", "n_images", "alpha"]
    rows = [header]
    for region in (Region.BACKGROUND, Region.FOREGROUND, Region.FULL_IMAGE):
        m = by_region[region]
        rows.append([region.value, str(m.mae), str(m.mse), str(m.surface_fraction),
                     str(m.n_images), str(alpha)])
    rows.append(["decomposition_slack", str(decomp.slack), "", "", str(decomp.n_images),
                 str(alpha)])

    if game_levels:
        levels = [int(part) for part in game_levels.split(",") if part.strip() != ""]
        gt_maps = {p.image_id: gaussian_density_map(p.gt_points, sigma=sigma) for p in pairs}
        for level in levels:
            acc = 0.0
            for p in sorted(pairs, key=lambda q: q.image_id):
                acc += game(p.predicted, gt_maps[p.image_id], level)
            rows.append([f"game_{level}", str(acc / len(pairs)), "", "", str(len(pairs)),
                         str(alpha)])

    _write_csv(out_path, rows)
    for row in rows[1:]:
        click.echo(f"{row[0]}: mae={row[1]}")
    if decomp.flagged:
        click.echo("note: large decomposition slack; background and foreground errors "
                   "cancel inside the full-image MAE", err=True)
    click.echo(f"wrote {out_path}")


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--alphas", default="1,2,3,4,5,6", show_default=True,
              help="Comma-separated, strictly increasing dilation factors.")
@click.option("--sigma", type=float, default=15.0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--jobs", type=int, default=1, show_default=True)
@_handle_errors
def sweep(manifest_path, alphas, sigma, out_path, jobs):
    """Background/foreground MAE as the dilation factor grows.

    Asserts that the mean predicted background count never increases
    along the sweep (masks are nested); exits 1 otherwise.
    """
    click.echo(f"# config: manifest={manifest_path} alphas={alphas} sigma={sigma} jobs={jobs}")
    alpha_list = [float(part) for part in alphas.split(",") if part.strip() != ""]
    manifest = load_manifest(manifest_path)
    pairs, omitted = load_eval_pairs(manifest)
    for image_id in omitted:
        click.echo(f"note: no prediction for {image_id}; skipped", err=True)
    if not pairs:
        click.echo("error: no evaluable images (all predictions missing)", err=True)
        sys.exit(EXIT_PROPERTY_FAILURE)

    curve = alpha_sweep(pairs, alphas=alpha_list, sigma=sigma, jobs=jobs)
    rows = [["alpha", "bg_mae", "fg_mae", "bg_pred_count_mean"]]
    for i, a in enumerate(curve.alphas):
        rows.append([str(a), str(curve.bg_mae[i]), str(curve.fg_mae[i]),
                     str(curve.bg_pred_count_mean[i])])
    _write_csv(out_path, rows)
    click.echo(f"wrote {out_path}")

    counts = curve.bg_pred_count_mean
    if any(b > a for a, b in zip(counts, counts[1:])):
        click.echo("error: mean predicted background count increased along the sweep",
                   err=True)
        sys.exit(EXIT_PROPERTY_FAILURE)
    click.echo("background count nonincreasing across alphas: ok")


@main.command()
@click.option("--manifests", required=True,
              help="Comma-separated manifest paths (the test datasets).")
@click.option("--pred-dirs", required=True,
              help="Comma-separated prediction directories (the trained sources), "
                   "positionally matched to --manifests for the diagonal.")
@click.option("--alpha", type=float, default=2.0, show_default=True)
@click.option("--sigma", type=float, default=15.0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--jobs", type=int, default=1, show_default=True)
@_handle_errors
def crosseval(manifests, pred_dirs, alpha, sigma, out_path, jobs):
    """Background MAE matrix: every prediction source on every dataset."""
    click.echo(f"# config: manifests={manifests} pred_dirs={pred_dirs} alpha={alpha} "
               f"sigma={sigma} jobs={jobs}")
    manifest_paths = [p for p in manifests.split(",") if p.strip() != ""]
    dir_paths = [p for p in pred_dirs.split(",") if p.strip() != ""]

    def unique(label, taken):
        # Axis labels key matrix cells, so repeats get a position suffix.
        out = label
        k = 2
        while out in taken:
            out = f"{label}#{k}"
            k += 1
        taken.add(out)
        return out

    datasets = []
    test_labels: set[str] = set()
    for path in manifest_paths:
        m = load_manifest(path)
        datasets.append((unique(m.dataset_id, test_labels), load_image_specs(m)))
    all_ids = sorted({spec.image_id for _, specs in datasets for spec in specs})
    prediction_sets = []
    train_labels: set[str] = set()
    for path in dir_paths:
        d = Path(path)
        if not d.is_dir():
            raise ManifestError(f"prediction directory does not exist: {d}")
        preds, _ = load_predictions(d, all_ids)
        prediction_sets.append((unique(d.name, train_labels), preds))

    result = cross_eval(prediction_sets, datasets, alpha=alpha, sigma=sigma, jobs=jobs)
    for cell in result.cells:
        if cell.n_omitted:
            click.echo(f"note: {cell.train_id} on {cell.test_id}: {cell.n_omitted} image(s) "
                       f"without predictions", err=True)
    _write_csv(out_path, result.to_csv_rows())
    click.echo(result.to_text())
    click.echo(f"wrote {out_path}")


@main.command()
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--n", "n_scenes", type=int, default=24, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--height", type=int, default=64, show_default=True)
@click.option("--width", type=int, default=64, show_default=True)
@click.option("--density-sigma", type=float, default=2.5, show_default=True)
@click.option("--pure-background-every", type=int, default=4, show_default=True,
              help="Force every k-th scene to zero persons (0 disables).")
@click.option("--dataset-id", default=None,
              help="Manifest dataset id [default: the output directory name].")
@click.option("--jobs", type=int, default=1, show_default=True)
@_handle_errors
def synth(out_dir, n_scenes, seed, height, width, density_sigma, pure_background_every,
          dataset_id, jobs):
    """Generate a synthetic dataset with a ready-to-eval manifest.

    The manifest points predictions_dir at the written ground-truth
    density maps, so `eval --sigma <density-sigma>` on it reports zero
    error up to 32-bit storage rounding.
    """
    click.echo(f"# config: seed={seed} n={n_scenes} size={height}x{width} "
               f"density_sigma={density_sigma} pure_background_every={pure_background_every}")
    profile = SceneProfile(height=height, width=width, density_sigma=density_sigma)
    scenes = generate_scenes(profile, n_scenes, seed=seed,
                             pure_background_every=pure_background_every, jobs=jobs)
    manifest_path = write_scene_dataset(
        scenes, out_dir, dataset_id=dataset_id or Path(out_dir).name)
    click.echo(f"wrote {len(scenes)} scenes; manifest at {manifest_path}")


def _loss_kind_option(value: str) -> DensityLossKind:
    try:
        return DensityLossKind(value)
    except ValueError:
        raise ParameterError(f"unknown density loss kind: {value!r}")


class _FileScene:
    """Scene rebuilt from a synth dataset directory (duck-typed for train)."""

    def __init__(self, annotation, sizes, image, gt_density):
        self.annotation = annotation
        self.sizes = sizes
        self.image = image
        self.gt_density = gt_density
        self.image_id = annotation.image_id

    def gt_mask(self, alpha):
        return build_foreground_mask(self.annotation, self.sizes, alpha)


def _load_file_scenes(dataset_dir) -> list[_FileScene]:
    from .gridio import read_density

    root = Path(dataset_dir)
    annotations_path = root / "annotations.jsonl"
    if not annotations_path.is_file():
        raise ManifestError(f"{root}: not a synth dataset (missing annotations.jsonl)")
    images, _ = load_annotations(annotations_path)
    scenes = []
    for img in sorted(images, key=lambda im: im.image_id):
        input_path = root / "inputs" / (img.image_id + DENSITY_SUFFIX)
        gt_path = root / "gt_density" / (img.image_id + DENSITY_SUFFIX)
        if not input_path.is_file() or not gt_path.is_file():
            raise ManifestError(f"{root}: missing grids for {img.image_id}")
        scenes.append(_FileScene(
            annotation=img,
            sizes=head_sizes_from_hints(img),
            image=read_density(input_path).values,
            gt_density=read_density(gt_path),
        ))
    return scenes


@main.command("train-toy")
@click.option("--dataset", required=True, type=click.Path(),
              help="Dataset directory produced by `synth`.")
@click.option("--out", "model_path", required=True, type=click.Path(),
              help="Output model parameter file.")
@click.option("--pred-out-dir", type=click.Path(), default=None,
              help="Also write per-image predictions (.dmap) for evaluation.")
@click.option("--with-bs/--no-bs", "with_bs", default=True, show_default=True)
@click.option("--lambda", "lambda_", type=float, default=1e-4, show_default=True,
              help="Mask-loss weight.")
@click.option("--learning-rate", type=float, default=1e-4, show_default=True)
@click.option("--epochs", type=int, default=30, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--alpha-train", type=float, default=1.0, show_default=True)
@click.option("--loss", "loss_kind", default="absolute", show_default=True,
              type=click.Choice(["absolute", "squared"]))
@_handle_errors
def train_toy(dataset, model_path, pred_out_dir, with_bs, lambda_, learning_rate, epochs,
              seed, alpha_train, loss_kind):
    """Train the toy counter on a synth dataset and save its parameters."""
    click.echo(f"# config: dataset={dataset} with_bs={with_bs} lambda={lambda_} "
               f"learning_rate={learning_rate} epochs={epochs} seed={seed} "
               f"alpha_train={alpha_train} loss={loss_kind}")
    scenes = _load_file_scenes(dataset)
    cfg = TrainConfig(
        with_bs=with_bs,
        lambda_=lambda_,
        learning_rate=learning_rate,
        epochs=epochs,
        seed=seed,
        alpha_train=alpha_train,
        density_loss_kind=_loss_kind_option(loss_kind),
    )
    params, trace = train_model(init_params(seed), scenes, cfg)
    save_params(params, model_path)
    first, last = trace[0], trace[-1]
    click.echo(f"loss: epoch 0 mean_total={first.mean_total} -> "
               f"epoch {last.epoch} mean_total={last.mean_total}")
    click.echo(f"wrote {model_path}")

    if pred_out_dir:
        out = Path(pred_out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for sc in scenes:
            pred = predict_density(params, sc.image, with_bs=with_bs)
            write_density(out / (sc.image_id + DENSITY_SUFFIX), pred)
        click.echo(f"wrote {len(scenes)} predictions to {out}")


@main.command("bs-experiment")
@click.option("--seed", type=int, default=0, show_default=True,
              help="Base seed; runs use seed, seed+1, ...")
@click.option("--n-seeds", type=int, default=5, show_default=True)
@click.option("--epochs", type=int, default=ExperimentConfig.epochs, show_default=True)
@click.option("--learning-rate", type=float, default=ExperimentConfig.learning_rate,
              show_default=True)
@click.option("--lambda", "lambda_", type=float, default=ExperimentConfig.lambda_,
              show_default=True,
              help="Mask-loss weight (tuned for plain SGD at this scale).")
@click.option("--n-train", type=int, default=ExperimentConfig.n_train, show_default=True)
@click.option("--n-eval", type=int, default=ExperimentConfig.n_eval, show_default=True)
@click.option("--pure-background-every", type=int,
              default=ExperimentConfig.pure_background_every, show_default=True,
              help="Force every k-th scene to zero persons.")
@click.option("--loss", "loss_kind", default=ExperimentConfig.density_loss_kind.value,
              show_default=True, type=click.Choice(["absolute", "squared"]))
@click.option("--out", "out_path", required=True, type=click.Path(), help="Report CSV path.")
@_handle_errors
def bs_experiment_cmd(seed, n_seeds, epochs, learning_rate, lambda_, n_train, n_eval,
                      pure_background_every, loss_kind, out_path):
    """Paired with/without-suppression runs; per-seed rows plus medians."""
    click.echo(f"# config: seed={seed} n_seeds={n_seeds} epochs={epochs} "
               f"learning_rate={learning_rate} lambda={lambda_} n_train={n_train} "
               f"n_eval={n_eval} pure_background_every={pure_background_every} "
               f"loss={loss_kind}")
    setup = ExperimentConfig(
        n_train=n_train,
        n_eval=n_eval,
        pure_background_every=pure_background_every,
        epochs=epochs,
        learning_rate=learning_rate,
        lambda_=lambda_,
        density_loss_kind=_loss_kind_option(loss_kind),
    )
    result = bs_experiment(list(range(seed, seed + n_seeds)), setup=setup)
    rows = experiment_csv_rows(result)
    _write_csv(out_path, rows)
    for seed_, variant, epoch in result.excluded:
        click.echo(f"note: seed {seed_} ({variant}) diverged at epoch {epoch}; excluded",
                   err=True)
    for variant, med in result.medians.items():
        click.echo(f"median {variant}: bg_mae={med['bg_mae']} fg_mae={med['fg_mae']} "
                   f"full_mae={med['full_mae']} purebg_pred_count={med['purebg_pred_count']}")
    click.echo(f"wrote {out_path}")


if __name__ == "__main__":
    main()
