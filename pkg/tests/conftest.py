"""Shared builders for the test suite."""

from __future__ import annotations

import numpy as np

from crowdbg.annotations import AnnotatedImage, HeadPoint


def make_image(image_id="img-0", width=32, height=32, xy=(), size_hints=None):
    """AnnotatedImage from (x, y) pairs, with optional per-point size hints."""
    points = []
    for i, (x, y) in enumerate(xy):
        hint = None if size_hints is None else size_hints[i]
        points.append(HeadPoint(float(x), float(y), hint))
    return AnnotatedImage(image_id, width, height, tuple(points))


def random_points(rng: np.random.Generator, width: int, height: int, n: int):
    """n points strictly inside a width x height image."""
    xs = rng.uniform(0.0, width - 1e-6, size=n)
    ys = rng.uniform(0.0, height - 1e-6, size=n)
    return list(zip(xs.tolist(), ys.tolist()))
