"""Flat `key = value` config files for the benchmark harness."""

from __future__ import annotations

from dataclasses import dataclass, field, fields


class ConfigError(Exception):
    pass


def parse_kv(path):
    """Parse `key = value` lines; '#' starts a comment, blanks ignored."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _csv_list(value):
    return tuple(v.strip() for v in value.split(",") if v.strip())


@dataclass(frozen=True)
class ExperimentConfig:
    welds: tuple = ("hard",)
    extractors: tuple = ("mini_resnet",)
    extractor_channels: tuple = (8, 16, 16)
    classifiers: tuple = ("gbt", "tree", "svm_linear", "svm_poly5")
    images: int = 600
    nok_fraction: float = 0.1
    split_ratio: float = 0.8
    augmentation_multiplier: int = 4
    n_seeds: int = 5
    base_seed: int = 1000
    epochs: int = 10
    batch_size: int = 16
    optimizer: str = "adam"
    learning_rate: float = 0.001
    decay_start: float = 0.0
    decay_end: float = 0.0
    gbt_rounds: int = 30
    gbt_depth: int = 3
    svm_c: float = 1.0
    svm_gamma: float = 0.0   # 0 means 1/n_features

    _PARSERS = None  # set after class definition

    def __post_init__(self):
        if self.n_seeds < 1:
            raise ConfigError("n_seeds must be >= 1")
        if self.images < 10:
            raise ConfigError("images must be >= 10")
        known = {"gbt", "tree", "svm_linear", "svm_poly5"}
        if not set(self.classifiers) <= known:
            raise ConfigError(f"unknown classifiers {set(self.classifiers) - known}")

    @classmethod
    def from_file(cls, path):
        raw = parse_kv(path)
        parsers = {
            "welds": _csv_list, "extractors": _csv_list, "classifiers": _csv_list,
            "images": int, "nok_fraction": float, "split_ratio": float,
            "extractor_channels": lambda v: tuple(int(x) for x in v.split(",")),
            "augmentation_multiplier": int, "n_seeds": int, "base_seed": int,
            "epochs": int, "batch_size": int, "optimizer": str,
            "learning_rate": float, "decay_start": float, "decay_end": float,
            "gbt_rounds": int, "gbt_depth": int, "svm_c": float, "svm_gamma": float,
        }
        kwargs = {}
        for key, value in raw.items():
            if key not in parsers:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                kwargs[key] = parsers[key](value)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {value!r} ({exc})") from exc
        return cls(**kwargs)

    def seeds(self):
        return [self.base_seed + i for i in range(self.n_seeds)]
