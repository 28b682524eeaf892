"""Global histogram equalisation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imageio import GrayImage


@dataclass(frozen=True, eq=False)
class Histogram:
    counts: np.ndarray  # occurrences per gray level, length N
    cdf: np.ndarray  # running sum of counts
    cdf_min: int  # smallest non-zero cdf value

    @property
    def total(self) -> int:
        return int(self.cdf[-1])


def histogram(img: GrayImage) -> Histogram:
    counts = np.bincount(img.pixels.ravel(), minlength=img.levels).astype(np.int64)
    cdf = np.cumsum(counts)
    cdf_min = int(cdf[np.flatnonzero(counts)[0]])
    return Histogram(counts, cdf, cdf_min)


def equalization_map(hist: Histogram, levels: int) -> np.ndarray | None:
    """Lookup table ``h(v)`` for every gray level, or None for a constant image.

    ``h(v) = round((cdf(v) - cdf_min) / (W*H - cdf_min) * (N - 1))`` with
    round-half-up, evaluated in exact integer arithmetic.
    """
    denom = hist.total - hist.cdf_min
    if denom == 0:
        return None
    num = np.maximum(hist.cdf - hist.cdf_min, 0) * (levels - 1)
    return (2 * num + denom) // (2 * denom)


def equalize(img: GrayImage) -> GrayImage:
    """Histogram-equalise ``img``; a constant image is returned unchanged."""
    lut = equalization_map(histogram(img), img.levels)
    if lut is None:
        return img
    return GrayImage(lut[img.pixels], levels=img.levels)
