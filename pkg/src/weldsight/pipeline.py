"""End-to-end decision paths and the benchmark harness.

The plain path takes the extractor's argmax. The hybrid path runs the
extractor, reads its activation map for the predicted class, reduces it to
the red-ratio reliability score, and hands (score_1, score_2, rcr) to a
trained decision-stage classifier. The harness trains and evaluates both
paths over synthetic weld variants and reports accuracies side by side.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import dataset as ds
from .classifiers import (BoostConfig, ClassifierError, FeatureVector, KernelSpec,
                          Standardizer, classify, train_gbt, train_svm, train_tree,
                          write_feature_csv)
from .config import ExperimentConfig
from .dataset import NOK, OK, CornerBias, DatasetConfig, SeamGeometry
from .gradcam import compute_cam, normalize_upsample
from .heatmap_analysis import cluster_colors, colorize, red_color_ratio
from .models import (CLASS_NOK, CLASS_OK, ModelSpec, ScorePair, TrainConfig,
                     build_model, predict_batch, train)
from .optim import ExponentialDecay, OptimizerConfig


class PipelineError(Exception):
    def __init__(self, stage, message):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


@dataclass(frozen=True)
class DecisionRecord:
    image_id: str
    true_label: str
    scores: ScorePair
    rcr: float
    decided: str
    path: str               # "old" or "new"
    classifier: str = ""

    def __post_init__(self):
        if self.decided not in (OK, NOK):
            raise PipelineError("decision", f"bad label {self.decided!r}")


@dataclass
class FeatureTable:
    ids: list
    x: np.ndarray           # (n, 3): score_1, score_2, rcr
    y: np.ndarray           # (n,) 0/1 true labels
    split: str = ""

    def to_csv(self, path):
        write_feature_csv(path, self.x, self.y)


def decide_old(scores):
    """Argmax decision; an exact tie flags the defect (false alarms are
    cheaper than missed defects)."""
    if not (np.isfinite(scores.score_ok) and np.isfinite(scores.score_nok)):
        raise PipelineError("decide_old", f"non-finite scores {scores}")
    return OK if scores.argmax() == CLASS_OK else NOK


def image_features(extractor, image):
    """(ScorePair, rcr, heatmap) for one image: score it, map the argmax
    class's activations to input resolution, and take the red share."""
    pixels = image.pixels if isinstance(image, ds.WeldImage) else np.asarray(image)
    row = predict_batch(extractor, pixels)[0]
    scores = ScorePair(float(row[CLASS_OK]), float(row[CLASS_NOK]),
                       kind=extractor.spec.score_kind)
    cam = compute_cam(extractor, pixels)
    h, w = extractor.spec.input_shape[:2]
    heat = normalize_upsample(cam, h, w)
    stats = red_color_ratio(cluster_colors(colorize(heat)))
    return scores, stats.rcr, heat


def decide_new(extractor, hybrid, image, image_id=""):
    """Hybrid decision; returns the label with a full per-image record."""
    try:
        scores, rcr, _ = image_features(extractor, image)
    except Exception as exc:
        raise PipelineError("features", str(exc)) from exc
    try:
        label01, _ = hybrid.classify_row(
            np.array([scores.score_ok, scores.score_nok, rcr]))
    except Exception as exc:
        raise PipelineError("classify", str(exc)) from exc
    decided = NOK if label01 == 1 else OK
    true = image.label if isinstance(image, ds.WeldImage) else ""
    record = DecisionRecord(image_id=image_id, true_label=true, scores=scores,
                            rcr=rcr, decided=decided, path="new",
                            classifier=hybrid.name)
    return decided, record


def extract_features(extractor, images, ids=None, split=""):
    """One (score_1, score_2, rcr) row plus the true label per image."""
    ids = ids if ids is not None else [str(img.seed) for img in images]
    rows, labels = [], []
    for img in images:
        scores, rcr, _ = image_features(extractor, img)
        rows.append([scores.score_ok, scores.score_nok, rcr])
        labels.append(1 if img.label == NOK else 0)
    return FeatureTable(ids=list(ids), x=np.array(rows), y=np.array(labels, dtype=np.int64),
                        split=split)


# ----------------------------------------------------------------------
# hybrid classifier zoo

@dataclass
class TrainedHybrid:
    name: str
    model: object
    scaler: Standardizer | None = None

    def classify_row(self, row):
        if self.scaler is not None:
            row = self.scaler.transform(row[None])[0]
        return classify(self.model, row)


def fit_hybrid(name, table, config=ExperimentConfig(), train_ids=None):
    """Fit one decision-stage classifier on train-split features.

    When `train_ids` is given, every row in the table must belong to it;
    this is the guard that keeps held-out features out of classifier
    training.
    """
    if train_ids is not None:
        leaked = [i for i in table.ids if i not in train_ids]
        if leaked:
            raise PipelineError("fit", f"features from outside the train split: {leaked[:3]}")
    if name == "tree":
        return TrainedHybrid(name, train_tree(table.x, table.y))
    if name == "gbt":
        cfg = BoostConfig(rounds=config.gbt_rounds, shrinkage=0.5,
                          max_depth=config.gbt_depth, row_sampling=1.0, seed=0)
        return TrainedHybrid(name, train_gbt(table.x, table.y, cfg))
    if name in ("svm_linear", "svm_poly5"):
        if name == "svm_linear":
            spec = KernelSpec(kind="linear")
        else:
            gamma = config.svm_gamma or 1.0 / table.x.shape[1]
            spec = KernelSpec(kind="polynomial", degree=5, gamma=gamma)
        scaler = Standardizer.fit(table.x)
        model = train_svm(scaler.transform(table.x), table.y, spec, C=config.svm_c,
                          max_updates=400_000)
        return TrainedHybrid(name, model, scaler=scaler)
    raise PipelineError("fit", f"unknown classifier {name!r}")


# ----------------------------------------------------------------------
# weld variants

@dataclass(frozen=True)
class BiasPlan:
    """How often the corner confounder appears, per split and class."""

    train_ok: float = 0.6
    train_nok: float = 0.1
    test: float = 0.5
    bias: CornerBias = field(default_factory=CornerBias)


@dataclass(frozen=True)
class WeldVariant:
    name: str
    geometry: SeamGeometry
    kind_mix: tuple
    defect_contrast: float = 1.0
    bias_plan: BiasPlan | None = None


VARIANTS = {
    "weld1": WeldVariant("weld1", SeamGeometry(amplitude=8.0, frequency=1.0, thickness=15.0),
                         ("porosity", "undercut", "crack", "missing_segment", "spatter")),
    "weld2": WeldVariant("weld2", SeamGeometry(amplitude=14.0, frequency=2.0, thickness=12.0),
                         ("crack", "missing_segment", "porosity")),
    "weld3": WeldVariant("weld3", SeamGeometry(amplitude=10.0, frequency=1.5, thickness=16.0),
                         ("undercut", "spatter", "porosity")),
    "weld4": WeldVariant("weld4", SeamGeometry(amplitude=6.0, frequency=2.5, thickness=13.0),
                         ("missing_segment", "crack", "undercut", "spatter")),
    # the stress case: subtle defects plus a corner blob that co-occurs with
    # OK labels during training but is label-independent at test time
    "hard": WeldVariant("hard", SeamGeometry(amplitude=12.0, frequency=2.0, thickness=13.0),
                        ("porosity", "undercut", "crack", "missing_segment", "spatter"),
                        defect_contrast=0.75, bias_plan=BiasPlan()),
    # an easy calibration target: blatant defects, balanced classes
    "easy": WeldVariant("easy", SeamGeometry(amplitude=8.0, frequency=1.2, thickness=15.0),
                        ("missing_segment",), defect_contrast=1.0),
}


def variant_dataset_config(variant, exp, seed):
    return DatasetConfig(total=exp.images, nok_fraction=exp.nok_fraction,
                         kind_mix=variant.kind_mix,
                         augmentation_multiplier=exp.augmentation_multiplier,
                         split_ratio=exp.split_ratio, master_seed=seed,
                         geometry=variant.geometry,
                         defect_contrast=variant.defect_contrast)


def apply_bias_plan(train_set, test_set, plan, seed):
    """Stamp the corner blob with train-side label correlation and
    label-independent test-side occurrence."""
    rng = np.random.default_rng((seed, 0xB1A5))
    out_train = []
    for img in train_set:
        p = plan.train_ok if img.label == OK else plan.train_nok
        out_train.append(ds.add_corner_artifact(img, plan.bias) if rng.random() < p else img)
    out_test = [ds.add_corner_artifact(img, plan.bias) if rng.random() < plan.test else img
                for img in test_set]
    return out_train, out_test


def _optimizer_config(exp):
    decay = None
    if exp.decay_start > 0 and exp.decay_end > 0:
        steps = max(1, exp.epochs * max(1, exp.images * 4 // (5 * exp.batch_size)))
        decay = ExponentialDecay(start=exp.decay_start, end=exp.decay_end, steps=steps)
    return OptimizerConfig(kind=exp.optimizer, learning_rate=exp.learning_rate, decay=decay)


# ----------------------------------------------------------------------
# experiment harness

@dataclass(frozen=True)
class CellResult:
    weld: str
    extractor: str
    seed: int
    path: str               # "old" or a classifier name
    accuracy: float
    tp: int
    tn: int
    fp: int
    fn: int
    delta_vs_old: float


@dataclass(frozen=True)
class SeedSummary:
    weld: str
    extractor: str
    seed: int
    old_accuracy: float
    best_new_accuracy: float
    best_classifier: str
    rcr_mean_ok: float
    rcr_mean_nok: float
    biased: bool


@dataclass
class AccuracyReport:
    cells: list = field(default_factory=list)
    summaries: list = field(default_factory=list)
    scatter: FeatureTable | None = None
    config: ExperimentConfig | None = None


def _confusion(true01, pred01):
    true01 = np.asarray(true01)
    pred01 = np.asarray(pred01)
    tp = int(((true01 == 1) & (pred01 == 1)).sum())
    tn = int(((true01 == 0) & (pred01 == 0)).sum())
    fp = int(((true01 == 0) & (pred01 == 1)).sum())
    fn = int(((true01 == 1) & (pred01 == 0)).sum())
    return tp, tn, fp, fn


def run_cell(variant, family, exp, seed):
    """One (weld, extractor, seed) experiment; returns its result rows."""
    stage = "generate"
    try:
        cfg = variant_dataset_config(variant, exp, seed)
        images = ds.generate(cfg)
        stage = "split"
        train_set, test_set = ds.split(images, cfg)
        if variant.bias_plan is not None:
            train_set, test_set = apply_bias_plan(train_set, test_set, variant.bias_plan, seed)
        stage = "train_extractor"
        extractor = build_model(ModelSpec(family=family, channels=exp.extractor_channels),
                                seed=seed)
        extractor.dataset_digest = ds.dataset_digest(images)
        balanced = ds.oversample_nok(train_set, cfg.augmentation_multiplier, seed)
        x = np.stack([img.pixels for img in balanced])
        y = np.array([1 if img.label == NOK else 0 for img in balanced], dtype=np.int64)
        train(extractor, x, y, TrainConfig(optimizer=_optimizer_config(exp),
                                           batch_size=exp.batch_size,
                                           epochs=exp.epochs, seed=seed))
        stage = "extract_features"
        train_ids = [f"train/{img.seed}" for img in train_set]
        test_ids = [f"test/{img.seed}" for img in test_set]
        feats_train = extract_features(extractor, train_set, ids=train_ids, split="train")
        feats_test = extract_features(extractor, test_set, ids=test_ids, split="test")
        stage = "fit_classifiers"
        hybrids = [fit_hybrid(name, feats_train, exp, train_ids=set(train_ids))
                   for name in exp.classifiers]
        stage = "evaluate"
        true01 = feats_test.y
        old_pred = (feats_test.x[:, 0] <= feats_test.x[:, 1]).astype(int)  # tie flags NOK
        cells = []
        tp, tn, fp, fn = _confusion(true01, old_pred)
        old_acc = (tp + tn) / len(true01)
        cells.append(CellResult(variant.name, family, seed, "old", old_acc,
                                tp, tn, fp, fn, 0.0))
        best_acc, best_name = -1.0, ""
        for hybrid in hybrids:
            pred = np.array([hybrid.classify_row(row)[0] for row in feats_test.x])
            tp, tn, fp, fn = _confusion(true01, pred)
            acc = (tp + tn) / len(true01)
            cells.append(CellResult(variant.name, family, seed, hybrid.name, acc,
                                    tp, tn, fp, fn, acc - old_acc))
            if acc > best_acc:
                best_acc, best_name = acc, hybrid.name
        ok_rows = feats_test.x[true01 == 0]
        nok_rows = feats_test.x[true01 == 1]
        summary = SeedSummary(variant.name, family, seed, old_acc, best_acc, best_name,
                              float(ok_rows[:, 2].mean()) if len(ok_rows) else float("nan"),
                              float(nok_rows[:, 2].mean()) if len(nok_rows) else float("nan"),
                              biased=variant.bias_plan is not None)
        return cells, summary, feats_test
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(
            f"{stage} (weld={variant.name}, extractor={family}, seed={seed})", str(exc)
        ) from exc


def run_experiment(exp):
    """Full grid: welds x extractors x seeds, both decision paths."""
    report = AccuracyReport(config=exp)
    for weld in exp.welds:
        if weld not in VARIANTS:
            raise PipelineError("config", f"unknown weld variant {weld!r}")
        for family in exp.extractors:
            for seed in exp.seeds():
                cells, summary, feats = run_cell(VARIANTS[weld], family, exp, seed)
                report.cells.extend(cells)
                report.summaries.append(summary)
                if report.scatter is None:
                    report.scatter = feats
    return report


def check_report(report):
    """Benchmark gate: on every confounded variant the best hybrid must
    match or beat the argmax path per seed and win on average."""
    failures = []
    for s in report.summaries:
        if s.best_new_accuracy < s.old_accuracy:
            failures.append(
                f"{s.weld}/{s.extractor}/seed={s.seed}: best hybrid "
                f"{s.best_new_accuracy:.4f} < old {s.old_accuracy:.4f}")
    biased = [s for s in report.summaries if s.biased]
    by_cell = {}
    for s in biased:
        by_cell.setdefault((s.weld, s.extractor), []).append(
            s.best_new_accuracy - s.old_accuracy)
    for (weld, family), deltas in by_cell.items():
        if not np.mean(deltas) > 0:
            failures.append(
                f"{weld}/{family}: mean improvement {np.mean(deltas):.4f} is not positive")
    return failures
