"""Heatmap colorization, nearest-anchor color clustering, and the red ratio.

A heatmap value is rendered blue (cold) through green to red (hot); every
pixel is then assigned to the nearest of three anchor colors and the red
share of the image becomes the reliability score.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .netpbm import write_ppm

RED, GREEN, BLUE = 0, 1, 2
LABEL_NAMES = ("red", "green", "blue")


class HeatmapAnalysisError(Exception):
    pass


@dataclass(frozen=True)
class RgbHeatmap:
    """[H,W,3] pixels with channels in [0,1]."""

    pixels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pixels", np.asarray(self.pixels, dtype=np.float64))
        p = self.pixels
        if p.ndim != 3 or p.shape[2] != 3:
            raise HeatmapAnalysisError(f"expected [H,W,3] pixels, got {p.shape}")
        if p.min() < 0 or p.max() > 1:
            raise HeatmapAnalysisError("channel values outside [0,1]")


@dataclass(frozen=True)
class ColorAnchorSet:
    """The cluster centers; defaults are the three RGB primaries.

    Ordering is the tie-break: a pixel equidistant from several anchors
    takes the earliest one.
    """

    anchors: tuple = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))

    def __post_init__(self):
        if len(self.anchors) != 3:
            raise HeatmapAnalysisError("exactly three anchor colors are required")
        arr = np.asarray(self.anchors, dtype=np.float64)
        for i in range(3):
            for j in range(i + 1, 3):
                if np.array_equal(arr[i], arr[j]):
                    raise HeatmapAnalysisError("anchor colors must be pairwise distinct")

    def matrix(self):
        return np.asarray(self.anchors, dtype=np.float64)


@dataclass(frozen=True)
class HeatmapStats:
    red_count: int
    total_count: int
    rcr: float  # percentage of pixels in the red cluster, exact

    def __post_init__(self):
        if not (0.0 <= self.rcr <= 100.0):
            raise HeatmapAnalysisError(f"red ratio {self.rcr} outside [0,100]")
        if self.total_count > 0 and self.rcr != 100.0 * self.red_count / self.total_count:
            raise HeatmapAnalysisError("rcr must equal 100 * red / total exactly")


def colorize(heatmap):
    """Piecewise-linear blue -> green -> red rendering of a [0,1] field.

    0 maps to pure blue, 0.5 to pure green, 1 to pure red; the red channel
    is monotone in the heat value.
    """
    v = heatmap.grid if hasattr(heatmap, "grid") else np.asarray(heatmap, dtype=np.float64)
    lower = v <= 0.5
    r = np.where(lower, 0.0, 2.0 * v - 1.0)
    g = np.where(lower, 2.0 * v, 2.0 - 2.0 * v)
    b = np.where(lower, 1.0 - 2.0 * v, 0.0)
    return RgbHeatmap(np.stack([r, g, b], axis=-1))


def cluster_colors(img, anchors=ColorAnchorSet()):
    """Label every pixel with its Euclidean-nearest anchor (0=red, 1=green,
    2=blue by default ordering; ties take the earliest anchor)."""
    pix = img.pixels if isinstance(img, RgbHeatmap) else np.asarray(img, dtype=np.float64)
    diff = pix[..., None, :] - anchors.matrix()[None, None, :, :]
    dist2 = (diff * diff).sum(axis=-1)
    return dist2.argmin(axis=-1)


def red_color_ratio(labels):
    """Percentage of pixels in the red cluster; exact, no rounding."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise HeatmapAnalysisError("empty label grid")
    red = int((labels == RED).sum())
    total = int(labels.size)
    return HeatmapStats(red_count=red, total_count=total, rcr=100.0 * red / total)


def rcr_of_heatmap(heatmap, anchors=ColorAnchorSet()):
    """Convenience composition: colorize, cluster, ratio."""
    return red_color_ratio(cluster_colors(colorize(heatmap), anchors))


def rgb_to_ppm(img, path):
    write_ppm(path, img.pixels)


def overlay(img, base_pixels, alpha=0.5):
    """Blend the colorized map onto the source image for human review."""
    base = np.asarray(base_pixels, dtype=np.float64)
    if base.shape != img.pixels.shape:
        raise HeatmapAnalysisError(
            f"overlay base shape {base.shape} != heatmap shape {img.pixels.shape}")
    return RgbHeatmap(alpha * img.pixels + (1.0 - alpha) * base)
