"""Small CNN feature extractors producing (OK, NOK) scores per image.

Two families are supported: a depthwise-separable stack (mini_mobilenet)
and a residual stack (mini_resnet). Both end in global average pooling and
a two-unit head, and both designate their final convolution node so the
activation-map machinery never has to guess which layer to read.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import ComputationGraph, ShapeError
from .frozen import MODEL_MAGIC, read_container, write_container
from .optim import OptimizerConfig, OptimizerState, optimizer_step

CLASS_OK = 0
CLASS_NOK = 1

FAMILIES = ("mini_mobilenet", "mini_resnet")
SCORE_KINDS = ("probability", "raw_score")


class ModelSpecError(Exception):
    pass


class TrainingError(Exception):
    pass


class TrainingDivergedError(TrainingError):
    def __init__(self, batch_index, message=None):
        self.batch_index = batch_index
        super().__init__(message or f"non-finite loss at batch {batch_index}")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description: `channels[0]` is the stem width, each
    following entry is one block's output width."""

    family: str = "mini_mobilenet"
    input_shape: tuple = (128, 128, 3)
    channels: tuple = (8, 16, 32)
    class_count: int = 2
    score_kind: str = "probability"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ModelSpecError(f"unknown family {self.family!r}")
        if self.score_kind not in SCORE_KINDS:
            raise ModelSpecError(f"unknown score kind {self.score_kind!r}")
        if len(self.input_shape) != 3 or any(s < 1 for s in self.input_shape):
            raise ModelSpecError(f"bad input shape {self.input_shape}")
        if len(self.channels) < 2 or any(c < 1 for c in self.channels):
            raise ModelSpecError(f"inconsistent channel widths {self.channels}")
        if self.class_count != 2:
            raise ModelSpecError("extractors are binary: class_count must be 2")

    @property
    def block_count(self):
        return len(self.channels) - 1


@dataclass(frozen=True)
class TrainConfig:
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    batch_size: int = 32
    epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise TrainingError(f"batch size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise TrainingError(f"epoch budget must be >= 1, got {self.epochs}")


@dataclass(frozen=True)
class ScorePair:
    """The two class outputs of an extractor for one image."""

    score_ok: float
    score_nok: float
    kind: str = "probability"

    def __post_init__(self):
        if self.kind == "probability":
            s = self.score_ok + self.score_nok
            if not (0.0 <= self.score_ok <= 1.0 and 0.0 <= self.score_nok <= 1.0):
                raise ValueError(f"probabilities out of range: {self}")
            if abs(s - 1.0) > 1e-9:
                raise ValueError(f"probabilities sum to {s}, expected 1")

    def argmax(self):
        """Index of the larger score; an exact tie resolves to NOK."""
        return CLASS_OK if self.score_ok > self.score_nok else CLASS_NOK


@dataclass
class FeatureExtractor:
    """A built graph plus the node handles the pipeline needs."""

    spec: ModelSpec
    graph: ComputationGraph
    image: object
    logits: object
    probs: object
    loss: object
    last_conv: object
    seed: int
    dataset_digest: str = ""


def _he_uniform(rng, shape, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def _stem_plan(spec):
    # large inputs take a 5x5/stride-4 stem to keep desk-scale compute flat
    if min(spec.input_shape[0], spec.input_shape[1]) >= 64:
        return 5, 4
    return 3, 2


def _block_strides(spec):
    # blocks halve the extent while it stays >= 16
    extent = min(spec.input_shape[0], spec.input_shape[1])
    extent = -(-extent // _stem_plan(spec)[1])
    strides = []
    for _ in range(spec.block_count):
        s = 2 if extent >= 16 else 1
        strides.append(s)
        extent = -(-extent // s)
    return strides


def build_model(spec, seed):
    """Construct an initialized extractor graph for `spec`.

    Weight init is fan-in-scaled uniform from a generator seeded with
    `seed`, so identical (spec, seed) pairs build bit-identical models.
    The final convolution node retains its gradient for activation maps.
    """
    rng = np.random.default_rng(seed)
    g = ComputationGraph()
    x = g.input("image", spec.input_shape)
    labels = g.input("labels", (spec.class_count,))
    centered = g.add_scalar(x, -0.5)  # pixels arrive in [0,1]

    def conv_block(h, name, kh, kw, cin, cout, stride, groups=1, padding="same"):
        kcin = 1 if groups > 1 else cin
        w = g.parameter(f"{name}/w", _he_uniform(rng, (kh, kw, kcin, cout), kh * kw * kcin))
        b = g.parameter(f"{name}/b", np.zeros(cout))
        conv = g.conv2d(h, w, stride=stride, padding=padding, groups=groups)
        return conv, g.bias_add(conv, b)

    strides = _block_strides(spec)
    stem_k, stem_s = _stem_plan(spec)
    last_conv = None
    if spec.family == "mini_mobilenet":
        conv, h = conv_block(centered, "stem", stem_k, stem_k, spec.input_shape[2],
                             spec.channels[0], stem_s)
        h = g.relu(h)
        cin = spec.channels[0]
        for i, cout in enumerate(spec.channels[1:], start=1):
            conv, h = conv_block(h, f"block{i}/dw", 3, 3, cin, cin, strides[i - 1], groups=cin)
            h = g.relu(h)
            conv, h = conv_block(h, f"block{i}/pw", 1, 1, cin, cout, 1, padding="valid")
            last_conv = conv
            h = g.relu(h)
            cin = cout
    else:  # mini_resnet
        conv, h = conv_block(centered, "stem", stem_k, stem_k, spec.input_shape[2],
                             spec.channels[0], stem_s)
        h = g.relu(h)
        cin = spec.channels[0]
        for i, cout in enumerate(spec.channels[1:], start=1):
            conv, h = conv_block(h, f"block{i}/down", 3, 3, cin, cout, strides[i - 1])
            skip = g.relu(h)
            conv, h = conv_block(skip, f"block{i}/conv1", 3, 3, cout, cout, 1)
            h = g.relu(h)
            conv, h = conv_block(h, f"block{i}/conv2", 3, 3, cout, cout, 1)
            last_conv = conv
            h = g.relu(g.add(h, skip))
            cin = cout
    g.retain_grad(last_conv)

    pooled = g.global_avg_pool(h)
    head_w = g.parameter("head/w", _he_uniform(rng, (cin, spec.class_count), cin))
    head_b = g.parameter("head/b", np.zeros(spec.class_count))
    logits = g.dense(pooled, head_w, head_b)
    probs = g.softmax(logits)
    loss = g.softmax_cross_entropy(logits, labels)
    g.meta.update(image=x, labels=labels, logits=logits, probs=probs,
                  loss=loss, last_conv=last_conv)
    return FeatureExtractor(spec=spec, graph=g, image=x, logits=logits, probs=probs,
                            loss=loss, last_conv=last_conv, seed=seed)


# ----------------------------------------------------------------------
# inference

def _as_batch(extractor, image):
    arr = np.asarray(image, dtype=np.float64)
    if arr.shape == extractor.spec.input_shape:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[1:] != extractor.spec.input_shape:
        raise ShapeError(
            f"image shape {np.asarray(image).shape} does not match model input "
            f"{extractor.spec.input_shape}"
        )
    return arr


def predict_batch(extractor, images):
    """Raw [N,2] score matrix (probabilities or logits per the spec)."""
    target = extractor.probs if extractor.spec.score_kind == "probability" else extractor.logits
    (out,) = extractor.graph.forward({"image": _as_batch(extractor, images)}, targets=[target])
    return out


def predict_scores(extractor, image):
    """Score a single image, returning both class outputs."""
    row = predict_batch(extractor, image)[0]
    return ScorePair(float(row[CLASS_OK]), float(row[CLASS_NOK]), kind=extractor.spec.score_kind)


# ----------------------------------------------------------------------
# training

@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss: float
    accuracy: float


def _one_hot(y, k):
    out = np.zeros((len(y), k))
    out[np.arange(len(y)), y] = 1.0
    return out


def _accuracy(extractor, x, y, batch_size=64):
    hits = 0
    for i in range(0, len(x), batch_size):
        (logits,) = extractor.graph.forward(
            {"image": x[i:i + batch_size]}, targets=[extractor.logits])
        hits += int((logits.argmax(axis=1) == y[i:i + batch_size]).sum())
    return hits / len(x)


def train(extractor, x, y, config):
    """Minibatch-train the extractor in place; returns per-epoch history.

    `x` is [n, H, W, C], `y` holds integer class labels. Shuffling, init
    and the optimizer are all driven by seeds, so identical inputs produce
    identical histories. A non-finite loss aborts with the batch index.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(x) == 0:
        raise TrainingError("empty training set")
    if len(set(y.tolist())) < 2:
        raise TrainingError("training set must contain both classes")
    onehot = _one_hot(y, extractor.spec.class_count)
    rng = np.random.default_rng(config.seed)
    state = OptimizerState()
    params = {name: t.values for name, t in extractor.graph.parameters().items()}
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(x))
        total, seen = 0.0, 0
        for bi, start in enumerate(range(0, len(x), config.batch_size)):
            idx = order[start:start + config.batch_size]
            feed = {"image": x[idx], "labels": onehot[idx]}
            (loss,) = extractor.graph.forward(feed, targets=[extractor.loss])
            loss = float(loss)
            if not np.isfinite(loss):
                raise TrainingDivergedError(bi)
            extractor.graph.backward(extractor.loss)
            grads = {name: t.grad for name, t in extractor.graph.parameters().items()}
            optimizer_step(params, grads, config.optimizer, state)
            total += loss * len(idx)
            seen += len(idx)
        history.append(EpochStats(epoch, total / seen, _accuracy(extractor, x, y)))
    return history


def history_to_csv(history, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "accuracy"])
        for row in history:
            writer.writerow([row.epoch, repr(float(row.loss)), repr(float(row.accuracy))])


# ----------------------------------------------------------------------
# freeze / load

def freeze(extractor, path):
    """Write an inference-only snapshot (weights + architecture, no
    optimizer state) that loads back bit-exactly."""
    meta = {
        "payload": "feature_extractor",
        "family": extractor.spec.family,
        "input_shape": list(extractor.spec.input_shape),
        "channels": list(extractor.spec.channels),
        "class_count": extractor.spec.class_count,
        "score_kind": extractor.spec.score_kind,
        "training_seed": extractor.seed,
        "dataset_digest": extractor.dataset_digest,
    }
    weights = {name: t.values for name, t in extractor.graph.parameters().items()}
    write_container(path, MODEL_MAGIC, meta, weights)


def load_frozen(path):
    """Rebuild a frozen extractor; scores and activation maps reproduce the
    saved model exactly, including the designated final-conv hook."""
    meta, weights = read_container(path, MODEL_MAGIC)
    spec = ModelSpec(
        family=meta["family"],
        input_shape=tuple(meta["input_shape"]),
        channels=tuple(meta["channels"]),
        class_count=meta["class_count"],
        score_kind=meta["score_kind"],
    )
    extractor = build_model(spec, seed=meta["training_seed"])
    extractor.dataset_digest = meta.get("dataset_digest", "")
    for name in extractor.graph.parameters():
        extractor.graph.set_parameter(name, weights[name])
    return extractor


def with_score_kind(extractor, kind):
    """Same weights, different reporting convention for the two outputs."""
    ex = FeatureExtractor(spec=replace(extractor.spec, score_kind=kind),
                          graph=extractor.graph, image=extractor.image,
                          logits=extractor.logits, probs=extractor.probs,
                          loss=extractor.loss, last_conv=extractor.last_conv,
                          seed=extractor.seed, dataset_digest=extractor.dataset_digest)
    return ex
