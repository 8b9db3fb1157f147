"""Synthetic weld-seam images: generation, augmentation, splits.

Each image shows a bright sinusoidal seam band over a textured background.
Defective images perturb the seam inside a small region whose bounding
area is recorded as the defect mask; the mask always covers between 1%
and 15% of the image, so defects stay local by construction. A separate
bright corner blob is available as a deliberate background confounder.
"""

from __future__ import annotations

import csv
import hashlib
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .netpbm import read_pgm, read_ppm, write_pgm, write_ppm

OK = "OK"
NOK = "NOK"

DEFECT_KINDS = ("none", "porosity", "undercut", "crack", "missing_segment", "spatter")


class DatasetError(Exception):
    pass


@dataclass(frozen=True)
class SeamGeometry:
    amplitude: float = 10.0
    frequency: float = 1.5
    thickness: float = 14.0
    brightness: float = 0.85
    background: float = 0.28


@dataclass(frozen=True)
class CornerBias:
    """Bright blob pinned to one image corner; a label-correlated shortcut
    when injected asymmetrically across classes."""

    intensity: float = 0.97
    radius: float = 12.0
    margin: int = 14


@dataclass(frozen=True)
class DatasetConfig:
    total: int = 200
    nok_fraction: float = 0.1
    kind_mix: tuple = ("porosity", "undercut", "crack", "missing_segment", "spatter")
    augmentation_multiplier: int = 4
    split_ratio: float = 0.8
    master_seed: int = 0
    size: tuple = (128, 128)
    geometry: SeamGeometry = field(default_factory=SeamGeometry)
    defect_contrast: float = 1.0

    def __post_init__(self):
        if self.total < 1:
            raise DatasetError(f"total must be >= 1, got {self.total}")
        if not (0.0 <= self.nok_fraction <= 1.0):
            raise DatasetError(f"nok fraction {self.nok_fraction} outside [0,1]")
        if not (0.0 < self.split_ratio < 1.0):
            raise DatasetError(f"split ratio {self.split_ratio} outside (0,1)")
        if self.augmentation_multiplier < 1:
            raise DatasetError("augmentation multiplier must be >= 1")
        if min(self.size) < 64:
            raise DatasetError("defect geometry assumes images of at least 64x64")
        bad = [k for k in self.kind_mix if k not in DEFECT_KINDS or k == "none"]
        if bad:
            raise DatasetError(f"unknown defect kinds {bad}")


@dataclass
class WeldImage:
    pixels: np.ndarray          # (H, W, 3) in [0, 1]
    label: str                  # OK or NOK
    kind: str                   # one of DEFECT_KINDS
    mask: np.ndarray            # (H, W) bool, empty for OK images
    seed: int

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        has_defect = self.kind != "none"
        if (self.label == NOK) != has_defect or has_defect != bool(self.mask.any()):
            raise DatasetError(
                f"inconsistent image: label={self.label}, kind={self.kind}, "
                f"mask_area={int(self.mask.sum())}"
            )


# ----------------------------------------------------------------------
# rendering

def _render_seam(h, w, geom, rng):
    phase = rng.uniform(0, 2 * np.pi)
    bead_phase = rng.uniform(0, 2 * np.pi)
    xs = np.arange(w)
    center = h / 2.0 + geom.amplitude * np.sin(2 * np.pi * geom.frequency * xs / w + phase)
    ys = np.arange(h)[:, None]
    dist = np.abs(ys - center[None, :])
    sigma = geom.thickness / 2.355  # gaussian FWHM equals the band thickness
    profile = np.exp(-0.5 * (dist / sigma) ** 2)
    bead = 0.02 * np.sin(2 * np.pi * xs / 9.0 + bead_phase)[None, :]
    gray = geom.background + rng.uniform(-0.03, 0.03, size=(h, w))
    gray += 0.02 * np.sin(2 * np.pi * ys / 37.0)
    gray += (geom.brightness - geom.background + bead) * profile
    return np.clip(gray, 0.0, 1.0), center


def _bounded_region(rng, w, x_half_range):
    half = rng.integers(x_half_range[0], x_half_range[1] + 1)
    cx = rng.integers(half + 2, w - half - 2)
    return int(cx), int(half)


def _apply_porosity(gray, mask, center, rng, contrast):
    h, w = gray.shape
    cx, half = _bounded_region(rng, w, (9, 14))
    cy = int(round(center[cx]))
    ys, xs = np.ogrid[:h, :w]
    region = (xs - cx) ** 2 + (ys - cy) ** 2 <= half ** 2
    for _ in range(rng.integers(4, 9)):
        px = cx + rng.integers(-half + 2, half - 1)
        py = cy + rng.integers(-half // 2, half // 2 + 1)
        r = rng.integers(1, 4)
        hole = (xs - px) ** 2 + (ys - py) ** 2 <= r ** 2
        gray[hole] -= contrast * rng.uniform(0.35, 0.55)
    mask |= region


def _apply_undercut(gray, mask, center, rng, contrast):
    h, w = gray.shape
    cx, half = _bounded_region(rng, w, (13, 25))
    side = 1 if rng.random() < 0.5 else -1
    depth = rng.integers(5, 8)
    x0, x1 = cx - half, cx + half
    for x in range(x0, x1):
        edge = int(round(center[x] + side * depth))
        y0, y1 = max(edge - 3, 0), min(edge + 3, h)
        gray[y0:y1, x] -= contrast * rng.uniform(0.3, 0.45)
    ys = np.arange(h)[:, None]
    band = np.zeros_like(mask)
    band[:, x0:x1] = np.abs(ys - center[None, x0:x1]) <= depth + 4
    mask |= band


def _apply_crack(gray, mask, center, rng, contrast):
    h, w = gray.shape
    cx, _ = _bounded_region(rng, w, (10, 12))
    length = int(rng.integers(24, 38))
    cy = int(round(center[cx]))
    y0 = max(2, cy - length // 2)
    x = cx
    xs_track = []
    for y in range(y0, min(y0 + length, h - 2)):
        x += int(rng.integers(-1, 2))
        x = min(max(x, 2), w - 3)
        gray[y, x - 1:x + 1] -= contrast * rng.uniform(0.35, 0.5)
        xs_track.append(x)
    xs_track = np.array(xs_track)
    x_lo, x_hi = xs_track.min() - 4, xs_track.max() + 4
    mask[y0:y0 + len(xs_track), max(x_lo, 0):min(x_hi, w)] = True


def _apply_missing_segment(gray, mask, center, rng, contrast, geom):
    h, w = gray.shape
    cx, half = _bounded_region(rng, w, (9, 19))
    x0, x1 = cx - half, cx + half
    ys = np.arange(h)[:, None]
    reach = geom.thickness / 2.0 + 3
    band = np.zeros_like(mask)
    band[:, x0:x1] = np.abs(ys - center[None, x0:x1]) <= reach
    gray[band] = geom.background + (gray[band] - geom.background) * (1.0 - contrast) \
        + contrast * rng.uniform(-0.02, 0.02, size=int(band.sum()))
    mask |= band


def _apply_spatter(gray, mask, center, rng, contrast):
    h, w = gray.shape
    cx, half = _bounded_region(rng, w, (10, 16))
    side = 1 if rng.random() < 0.5 else -1
    cy = int(round(center[cx])) + side * int(rng.integers(10, 16))
    cy = min(max(cy, half + 1), h - half - 2)
    ys, xs = np.ogrid[:h, :w]
    region = (xs - cx) ** 2 + (ys - cy) ** 2 <= half ** 2
    for _ in range(rng.integers(6, 13)):
        px = cx + rng.integers(-half + 1, half)
        py = cy + rng.integers(-half + 1, half)
        r = rng.integers(1, 3)
        dot = (xs - px) ** 2 + (ys - py) ** 2 <= r ** 2
        gray[dot] += contrast * rng.uniform(0.35, 0.5)
    mask |= region


def _gray_to_rgb(gray):
    # near-grayscale render with a faint warm tint
    return np.clip(np.stack([gray, gray * 0.985, gray * 0.97], axis=-1), 0.0, 1.0)


def render_weld(seed, kind, config):
    """Render one image deterministically from its seed."""
    h, w = config.size
    rng = np.random.default_rng(seed)
    gray, center = _render_seam(h, w, config.geometry, rng)
    mask = np.zeros((h, w), dtype=bool)
    contrast = config.defect_contrast
    if kind == "porosity":
        _apply_porosity(gray, mask, center, rng, contrast)
    elif kind == "undercut":
        _apply_undercut(gray, mask, center, rng, contrast)
    elif kind == "crack":
        _apply_crack(gray, mask, center, rng, contrast)
    elif kind == "missing_segment":
        _apply_missing_segment(gray, mask, center, rng, contrast, config.geometry)
    elif kind == "spatter":
        _apply_spatter(gray, mask, center, rng, contrast)
    elif kind != "none":
        raise DatasetError(f"unknown defect kind {kind!r}")
    gray = np.clip(gray, 0.0, 1.0)
    label = OK if kind == "none" else NOK
    return WeldImage(pixels=_gray_to_rgb(gray), label=label, kind=kind,
                     mask=mask, seed=int(seed))


def generate(config):
    """Generate the configured dataset; a pure function of the config.

    Every image derives its own generator from (master_seed, index), so
    generation could proceed image-parallel without changing the output.
    """
    n_nok = int(round(config.total * config.nok_fraction))
    order_rng = np.random.default_rng((config.master_seed, 0xD5))
    labels = np.array([NOK] * n_nok + [OK] * (config.total - n_nok))
    order_rng.shuffle(labels)
    kinds = []
    k = 0
    for lab in labels:
        if lab == NOK:
            kinds.append(config.kind_mix[k % len(config.kind_mix)])
            k += 1
        else:
            kinds.append("none")
    images = []
    for i, kind in enumerate(kinds):
        seed = int(np.random.default_rng((config.master_seed, i)).integers(2 ** 62))
        images.append(render_weld(seed, kind, config))
    return images


def add_corner_artifact(img, bias=CornerBias()):
    """Return a copy of the image with the bright corner blob stamped in.

    The blob is background content: label, kind and defect mask are
    untouched.
    """
    h, w, _ = img.pixels.shape
    ys, xs = np.ogrid[:h, :w]
    d2 = (xs - bias.margin) ** 2 + (ys - bias.margin) ** 2
    glow = np.exp(-0.5 * d2 / (bias.radius / 1.7) ** 2)
    pixels = img.pixels + (bias.intensity - img.pixels) * glow[..., None]
    return WeldImage(pixels=np.clip(pixels, 0.0, 1.0), label=img.label,
                     kind=img.kind, mask=img.mask.copy(), seed=img.seed)


# ----------------------------------------------------------------------
# augmentation

def augment(img, ops, rng=None):
    """Apply an ordered op list; geometric ops move pixels and mask in
    lockstep, photometric ops leave the mask alone. Label and kind are
    preserved. Ops: "hflip", "vflip", "rotate90", ("brightness", delta),
    ("noise", sigma)."""
    pixels = img.pixels.copy()
    mask = img.mask.copy()
    for op in ops:
        name, arg = (op, None) if isinstance(op, str) else (op[0], op[1])
        if name == "hflip":
            pixels = pixels[:, ::-1].copy()
            mask = mask[:, ::-1].copy()
        elif name == "vflip":
            pixels = pixels[::-1].copy()
            mask = mask[::-1].copy()
        elif name == "rotate90":
            pixels = np.rot90(pixels, axes=(0, 1)).copy()
            mask = np.rot90(mask, axes=(0, 1)).copy()
        elif name == "brightness":
            pixels = np.clip(pixels + float(arg), 0.0, 1.0)
        elif name == "noise":
            if rng is None:
                rng = np.random.default_rng(img.seed)
            pixels = np.clip(pixels + rng.normal(0.0, float(arg), size=pixels.shape), 0.0, 1.0)
        else:
            raise DatasetError(f"unknown augmentation op {op!r}")
    return WeldImage(pixels=pixels, label=img.label, kind=img.kind, mask=mask, seed=img.seed)


def random_ops(rng, brightness=0.05, sigma=0.02):
    """A small random augmentation recipe (geometry plus photometry)."""
    ops = []
    if rng.random() < 0.5:
        ops.append("hflip")
    if rng.random() < 0.5:
        ops.append("vflip")
    if rng.random() < 0.25:
        ops.append("rotate90")
    ops.append(("brightness", float(rng.uniform(-brightness, brightness))))
    ops.append(("noise", sigma))
    return ops


def oversample_nok(images, multiplier, seed):
    """Append `multiplier - 1` augmented copies of every defective image;
    the usual counterweight to class imbalance during extractor training."""
    rng = np.random.default_rng((seed, 0xA6))
    out = list(images)
    for img in images:
        if img.label != NOK:
            continue
        for _ in range(multiplier - 1):
            out.append(augment(img, random_ops(rng), rng=rng))
    return out


# ----------------------------------------------------------------------
# splitting

def split(images, config):
    """Stratified, seed-deterministic train/test partition."""
    if not images:
        raise DatasetError("cannot split an empty dataset")
    rng = np.random.default_rng((config.master_seed, 0x5B))
    by_label = {}
    for i, img in enumerate(images):
        by_label.setdefault(img.label, []).append(i)
    train_idx, test_idx = [], []
    for label in sorted(by_label):
        idx = np.array(by_label[label])
        if len(idx) < 2:
            raise DatasetError(f"label {label} has {len(idx)} sample(s); cannot stratify")
        rng.shuffle(idx)
        cut = int(round(config.split_ratio * len(idx)))
        cut = min(max(cut, 1), len(idx) - 1)
        train_idx.extend(idx[:cut].tolist())
        test_idx.extend(idx[cut:].tolist())
    return [images[i] for i in sorted(train_idx)], [images[i] for i in sorted(test_idx)]


# ----------------------------------------------------------------------
# export / import

def dataset_digest(images):
    """Stable content digest used to stamp frozen models."""
    h = hashlib.sha256()
    for img in images:
        h.update(str(img.seed).encode())
        h.update(img.label.encode())
        h.update(img.kind.encode())
    return h.hexdigest()[:16]


def export_dataset(images, out_dir, splits=None):
    """Write PPM images, PGM masks, and a manifest CSV.

    `splits` optionally maps image index -> split name, adding a split
    column to the manifest.
    """
    img_dir = os.path.join(out_dir, "images")
    mask_dir = os.path.join(out_dir, "masks")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(mask_dir, exist_ok=True)
    header = ["filename", "mask", "label", "kind", "seed"]
    if splits is not None:
        header.append("split")
    rows = []
    for i, img in enumerate(images):
        name = f"img_{i:05d}.ppm"
        mask_name = f"img_{i:05d}_mask.pgm"
        write_ppm(os.path.join(img_dir, name), img.pixels)
        write_pgm(os.path.join(mask_dir, mask_name), img.mask.astype(np.float64))
        row = [name, mask_name, img.label, img.kind, str(img.seed)]
        if splits is not None:
            row.append(splits.get(i, ""))
        rows.append(row)
    with open(os.path.join(out_dir, "manifest.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def import_dataset(in_dir, split_filter=None):
    """Read a dataset directory back (pixels are 8-bit quantized)."""
    manifest = os.path.join(in_dir, "manifest.csv")
    if not os.path.exists(manifest):
        raise DatasetError(f"no manifest.csv under {in_dir}")
    images = []
    with open(manifest, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            if split_filter and rec.get("split", "") != split_filter:
                continue
            pixels = read_ppm(os.path.join(in_dir, "images", rec["filename"]))
            mask = read_pgm(os.path.join(in_dir, "masks", rec["mask"])) > 0.5
            images.append(WeldImage(pixels=pixels, label=rec["label"], kind=rec["kind"],
                                    mask=mask, seed=int(rec["seed"])))
    return images
