"""Gradient-weighted class activation maps for the extractor graphs.

The map for class c is ReLU(sum_k alpha_k * A_k), where A_k are the
designated final-conv activations and alpha_k is the spatial mean of the
class logit's gradient with respect to A_k. The map is then bilinearly
resampled to image resolution and min-max normalized to [0, 1].
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .models import _as_batch
from .netpbm import write_pgm


class GradCamError(Exception):
    pass


class UnsupportedModelError(GradCamError):
    """The model does not expose a retained final-conv activation."""


@dataclass(frozen=True)
class ClassActivationMap:
    """Importance grid at final-conv resolution (non-negative)."""

    grid: np.ndarray
    target_class: int
    source_layer: str

    def __post_init__(self):
        object.__setattr__(self, "grid", np.asarray(self.grid, dtype=np.float64))
        if self.grid.ndim != 2:
            raise GradCamError(f"activation map must be 2-D, got shape {self.grid.shape}")
        if (self.grid < 0).any():
            raise GradCamError("activation map has negative entries")


@dataclass(frozen=True)
class Heatmap:
    """Normalized importance grid at image resolution, values in [0, 1]."""

    grid: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "grid", np.asarray(self.grid, dtype=np.float64))
        g = self.grid
        if g.ndim != 2:
            raise GradCamError(f"heatmap must be 2-D, got shape {g.shape}")
        if g.min() < 0 or g.max() > 1:
            raise GradCamError(f"heatmap values outside [0,1]: [{g.min()}, {g.max()}]")


def compute_cam(extractor, image, target_class=None):
    """Activation map of `target_class` (default: the argmax class).

    Gradients are taken on the class logit, so a class whose head weights
    are all zero yields an identically zero map.
    """
    node = getattr(extractor, "last_conv", None)
    if node is None or not extractor.graph._node(node).retain:
        raise UnsupportedModelError("model lacks a retained final-conv activation")
    batch = _as_batch(extractor, image)
    if batch.shape[0] != 1:
        raise GradCamError("activation maps are computed per image")
    (logits,) = extractor.graph.forward({"image": batch}, targets=[extractor.logits])
    if target_class is None:
        target_class = int(np.argmax(logits[0]))
    if not (0 <= target_class < logits.shape[1]):
        raise GradCamError(f"target class {target_class} out of range")
    seed = np.zeros_like(logits)
    seed[0, target_class] = 1.0
    extractor.graph.backward(extractor.logits, seed=seed)
    acts = extractor.graph.value(node)[0]           # (h, w, c)
    grads = extractor.graph.gradient(node)[0]
    alpha = grads.mean(axis=(0, 1))                 # spatial mean per channel
    grid = np.maximum((acts * alpha).sum(axis=-1), 0.0)
    return ClassActivationMap(grid=grid, target_class=target_class,
                              source_layer="last_conv")


def _axis_positions(n_in, n_out):
    # endpoint-aligned sampling: first/last outputs hit first/last inputs
    if n_out == 1 or n_in == 1:
        return np.zeros(n_out)
    return np.arange(n_out) * (n_in - 1) / (n_out - 1)


def normalize_upsample(cam, out_h, out_w):
    """Bilinearly resample a map to (out_h, out_w) and min-max normalize.

    A constant positive map becomes all ones; an identically zero map
    stays zero. Output dimensions must not shrink the map.
    """
    grid = cam.grid if isinstance(cam, ClassActivationMap) else np.asarray(cam, dtype=np.float64)
    h, w = grid.shape
    if out_h < 1 or out_w < 1:
        raise GradCamError(f"target size {out_h}x{out_w} is empty")
    if out_h < h or out_w < w:
        raise GradCamError(f"target {out_h}x{out_w} smaller than map {h}x{w}")
    if grid.max() == grid.min():
        # constant maps bypass interpolation so the all-ones/all-zeros
        # outcome is exact rather than at the mercy of weight round-off
        value = 0.0 if grid.max() == 0.0 else 1.0
        return Heatmap(np.full((out_h, out_w), value))
    ys = _axis_positions(h, out_h)
    xs = _axis_positions(w, out_w)
    y0 = np.minimum(ys.astype(int), h - 1)
    x0 = np.minimum(xs.astype(int), w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    up = (grid[np.ix_(y0, x0)] * (1 - fy) * (1 - fx)
          + grid[np.ix_(y0, x1)] * (1 - fy) * fx
          + grid[np.ix_(y1, x0)] * fy * (1 - fx)
          + grid[np.ix_(y1, x1)] * fy * fx)
    lo, hi = up.min(), up.max()
    if hi == 0.0:
        return Heatmap(np.zeros_like(up))
    if hi == lo:
        return Heatmap(np.ones_like(up))
    return Heatmap((up - lo) / (hi - lo))


def heatmap_to_csv(heatmap, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in heatmap.grid:
            writer.writerow([repr(float(v)) for v in row])


def heatmap_from_csv(path):
    with open(path, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    return Heatmap(np.array(rows))


def heatmap_to_pgm(heatmap, path):
    write_pgm(path, heatmap.grid)
