"""Synthetic crowd scenes for desk-scale experiments.

A scene is a single-channel grid containing narrow "person" bumps at the
annotated head points and wider "clutter" bumps placed away from every
person. The two bump widths give a purely local cue that a small conv net
can use to tell people from background structure; clutter is the planted
failure mode that an unsuppressed counter happily integrates over.

Scene generation is deterministic: every scene derives its own RNG seed
from the master seed through a splitmix64 step, so scene i is identical
no matter how many scenes are requested around it.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..annotations import AnnotatedImage, HeadPoint, build_foreground_mask, gaussian_density_map
from ..errors import ParameterError
from ..grids import BinaryMask, DensityMap
from ..gridio import write_density, write_mask

TRAIN_ALPHA = 1.0

_MASK64 = (1 << 64) - 1


def _splitmix64(state: int) -> int:
    z = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def scene_seed(master_seed: int, index: int) -> int:
    """Per-scene seed: one splitmix64 step over (master, index)."""
    return _splitmix64((_splitmix64(master_seed & _MASK64) + index) & _MASK64)


@dataclass(frozen=True)
class SceneProfile:
    """Knobs for the synthetic scene family."""

    height: int = 64
    width: int = 64
    person_count_range: tuple[int, int] = (1, 4)  # inclusive bounds
    clutter_count_range: tuple[int, int] = (2, 5)
    person_sigma: float = 1.8
    clutter_sigma: float = 3.6
    person_amplitude: float = 1.0
    clutter_amplitude: float = 0.9
    noise_std: float = 0.01
    head_size: float = 15.0
    density_sigma: float = 2.5
    margin: int = 8

    def __post_init__(self):
        if self.height < 2 * self.margin + 4 or self.width < 2 * self.margin + 4:
            raise ParameterError(
                f"scene {self.height}x{self.width} too small for margin {self.margin}"
            )
        lo, hi = self.person_count_range
        clo, chi = self.clutter_count_range
        if not (0 <= lo <= hi) or not (0 <= clo <= chi):
            raise ParameterError("count ranges must satisfy 0 <= lo <= hi")
        for name in ("person_sigma", "clutter_sigma", "density_sigma", "head_size"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be > 0")


@dataclass(frozen=True)
class SyntheticScene:
    image_id: str
    image: np.ndarray  # (H, W) float64 input grid
    annotation: AnnotatedImage
    sizes: tuple[float, ...]
    gt_density: DensityMap
    clutter: tuple[tuple[float, float], ...] = ()  # (x, y) bump centers

    @property
    def n_persons(self) -> int:
        return self.annotation.n_points

    def gt_mask(self, alpha: float = TRAIN_ALPHA) -> BinaryMask:
        """Head disks dilated by alpha (training target uses alpha = 1)."""
        return build_foreground_mask(self.annotation, self.sizes, alpha)


def _add_bump(canvas: np.ndarray, x: float, y: float, sigma: float, amplitude: float) -> None:
    h, w = canvas.shape
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    canvas += amplitude * np.exp(-((rows - y) ** 2 + (cols - x) ** 2) / (2.0 * sigma * sigma))


def _make_scene(profile: SceneProfile, image_id: str, seed: int, n_persons: int) -> SyntheticScene:
    rng = np.random.default_rng(seed)
    h, w = profile.height, profile.width
    m = profile.margin

    persons = [
        HeadPoint(x=float(rng.uniform(m, w - 1 - m)), y=float(rng.uniform(m, h - 1 - m)),
                  size_hint=profile.head_size)
        for _ in range(n_persons)
    ]
    annotation = AnnotatedImage(image_id=image_id, width=w, height=h, points=tuple(persons))
    sizes = tuple(max(p.size_hint, 15.0) for p in persons)

    # Clutter must stay clear of every person's training-dilation disk so
    # suppression has an unambiguous target; rejection sampling with a cap.
    clearance = profile.clutter_sigma
    clo, chi = profile.clutter_count_range
    n_clutter = int(rng.integers(clo, chi + 1))
    clutter = []
    for _ in range(n_clutter):
        for _attempt in range(200):
            cx = float(rng.uniform(m, w - 1 - m))
            cy = float(rng.uniform(m, h - 1 - m))
            ok = all(
                np.hypot(cx - p.x, cy - p.y) > s * TRAIN_ALPHA / 2.0 + clearance
                for p, s in zip(persons, sizes)
            )
            if ok:
                clutter.append((cx, cy))
                break
        else:
            raise ParameterError(
                f"{image_id}: could not place clutter clear of {n_persons} persons "
                f"in a {h}x{w} scene"
            )

    image = np.zeros((h, w))
    for p in persons:
        _add_bump(image, p.x, p.y, profile.person_sigma, profile.person_amplitude)
    for cx, cy in clutter:
        _add_bump(image, cx, cy, profile.clutter_sigma, profile.clutter_amplitude)
    if profile.noise_std > 0:
        image += profile.noise_std * rng.standard_normal((h, w))
        # Inputs stay nonnegative, like the images they stand in for.
        np.maximum(image, 0.0, out=image)

    return SyntheticScene(
        image_id=image_id,
        image=image,
        annotation=annotation,
        sizes=sizes,
        gt_density=gaussian_density_map(annotation, sigma=profile.density_sigma),
        clutter=tuple(clutter),
    )


def generate_scenes(
    profile: SceneProfile,
    n_scenes: int,
    seed: int,
    pure_background_every: int = 0,
    jobs: int = 1,
) -> list[SyntheticScene]:
    """Deterministically generate n_scenes scenes.

    With pure_background_every = k > 0, every k-th scene (indices 0, k,
    2k, ...) is forced to contain zero persons, guaranteeing person-free
    scenes for background-count measurements. Each scene depends only on
    (seed, index), so generation parallelizes without changing output.
    """
    if n_scenes < 0:
        raise ParameterError(f"n_scenes must be >= 0, got {n_scenes}")
    if pure_background_every < 0:
        raise ParameterError("pure_background_every must be >= 0")
    lo, hi = profile.person_count_range

    def build(i: int) -> SyntheticScene:
        s = scene_seed(seed, i)
        if pure_background_every and i % pure_background_every == 0:
            n_persons = 0
        else:
            n_persons = int(np.random.default_rng(s ^ 0xA5A5).integers(lo, hi + 1))
        return _make_scene(profile, f"scene-{i:04d}", s, n_persons)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(build, range(n_scenes)))
    return [build(i) for i in range(n_scenes)]


def write_scene_dataset(scenes, out_dir, dataset_id: str = "synthetic") -> Path:
    """Write a manifest-shaped dataset; returns the manifest path.

    Layout: annotations.jsonl, inputs/<id>.dmap (the input grids),
    gt_density/<id>.dmap, masks/<id>.mask (training-dilation head disks),
    manifest.json. The manifest points predictions_dir at gt_density, so
    evaluating the dataset against itself reports zero error up to the
    32-bit rounding the grid files introduce.
    """
    out_dir = Path(out_dir)
    (out_dir / "inputs").mkdir(parents=True, exist_ok=True)
    (out_dir / "gt_density").mkdir(exist_ok=True)
    (out_dir / "masks").mkdir(exist_ok=True)

    lines = []
    for scene in sorted(scenes, key=lambda s: s.image_id):
        ann = scene.annotation
        record = {
            "image_id": ann.image_id,
            "width": ann.width,
            "height": ann.height,
            "points": [{"x": p.x, "y": p.y, "size": p.size_hint} for p in ann.points],
        }
        lines.append(json.dumps(record, sort_keys=True))
        write_density(out_dir / "inputs" / f"{ann.image_id}.dmap", DensityMap(scene.image))
        write_density(out_dir / "gt_density" / f"{ann.image_id}.dmap", scene.gt_density)
        write_mask(out_dir / "masks" / f"{ann.image_id}.mask", scene.gt_mask(TRAIN_ALPHA))
    (out_dir / "annotations.jsonl").write_text("\n".join(lines) + "\n")

    manifest = {
        "dataset_id": dataset_id,
        "annotations_path": "annotations.jsonl",
        "predictions_dir": "gt_density",
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path
