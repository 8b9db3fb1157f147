"""Decision-stage classifiers over (score_1, score_2, red-ratio) features.

Four models: a Gini decision tree grown to purity, gradient-boosted trees
with log loss and shrinkage, and soft-margin SVMs (linear and degree-5
polynomial kernels) trained with pairwise dual updates. Class 1 is the
defect class; every tie breaks toward flagging a defect.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .frozen import CLASSIFIER_MAGIC, read_container, write_container


class ClassifierError(Exception):
    pass


class SvmConvergenceError(ClassifierError):
    def __init__(self, residual, updates):
        self.residual = residual
        self.updates = updates
        super().__init__(
            f"dual optimization hit the update cap ({updates}) with KKT residual {residual:.3g}"
        )


@dataclass(frozen=True)
class FeatureVector:
    """(score_1, score_2, rcr) triple; rcr is a percentage."""

    score_1: float
    score_2: float
    rcr: float

    def __post_init__(self):
        vals = (self.score_1, self.score_2, self.rcr)
        if not all(np.isfinite(v) for v in vals):
            raise ClassifierError(f"non-finite feature values {vals}")
        if not (0.0 <= self.rcr <= 100.0):
            raise ClassifierError(f"rcr {self.rcr} outside [0,100]")

    def as_array(self):
        return np.array([self.score_1, self.score_2, self.rcr])


def as_matrix(features):
    """Stack FeatureVectors (or rows) into an [n, d] float matrix."""
    if isinstance(features, np.ndarray):
        return np.asarray(features, dtype=np.float64)
    return np.array([f.as_array() if isinstance(f, FeatureVector) else f for f in features],
                    dtype=np.float64)


def _as_row(x):
    return x.as_array() if isinstance(x, FeatureVector) else np.asarray(x, dtype=np.float64)


# ----------------------------------------------------------------------
# decision tree (Gini)

@dataclass
class TreeNode:
    """Either an internal split (feature, threshold, children) or a leaf
    (label plus per-class sample counts)."""

    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    label: int | None = None
    counts: tuple = (0, 0)

    @property
    def is_leaf(self):
        return self.feature is None


def _gini(counts):
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return 1.0 - float((p * p).sum())


def _candidate_thresholds(values):
    distinct = np.unique(values)
    return (distinct[:-1] + distinct[1:]) / 2.0


def _best_split(x, y):
    """Exhaustive Gini search over midpoint thresholds.

    Returns (impurity, feature, threshold) or None. Ties keep the lowest
    feature index, then the lowest threshold; both fall out of scan order.
    """
    n = len(y)
    best = None
    for fi in range(x.shape[1]):
        col = x[:, fi]
        order = np.argsort(col, kind="stable")
        sy = y[order]
        sx = col[order]
        ones = np.cumsum(sy)
        for thr in _candidate_thresholds(col):
            nl = int(np.searchsorted(sx, thr, side="right"))
            left_ones = int(ones[nl - 1])
            left = np.array([nl - left_ones, left_ones])
            right = np.array([(n - nl) - (int(ones[-1]) - left_ones),
                              int(ones[-1]) - left_ones])
            score = (nl * _gini(left) + (n - nl) * _gini(right)) / n
            if best is None or score < best[0]:
                best = (score, fi, float(thr))
    return best


def _leaf(y):
    counts = (int((y == 0).sum()), int((y == 1).sum()))
    label = 1 if counts[1] >= counts[0] else 0  # tie flags the defect class
    return TreeNode(label=label, counts=counts)


def _grow_tree(x, y, depth, max_depth):
    if len(y) < 2 or len(np.unique(y)) == 1:
        return _leaf(y)
    if max_depth is not None and depth >= max_depth:
        return _leaf(y)
    best = _best_split(x, y)
    if best is None:  # every feature constant
        return _leaf(y)
    _, fi, thr = best
    mask = x[:, fi] <= thr
    node = TreeNode(feature=fi, threshold=thr, counts=(int((y == 0).sum()), int((y == 1).sum())))
    node.left = _grow_tree(x[mask], y[mask], depth + 1, max_depth)
    node.right = _grow_tree(x[~mask], y[~mask], depth + 1, max_depth)
    return node


def train_tree(features, labels, max_depth=None):
    """Greedy Gini tree; nodes expand until pure or holding fewer than
    two samples (optionally depth-capped)."""
    x = as_matrix(features)
    y = np.asarray(labels, dtype=np.int64)
    if len(x) == 0:
        raise ClassifierError("cannot fit a tree on an empty dataset")
    if not set(y.tolist()) <= {0, 1}:
        raise ClassifierError("labels must be binary (0/1)")
    return _grow_tree(x, y, 0, max_depth)


def _tree_walk(node, row):
    while not node.is_leaf:
        node = node.left if row[node.feature] <= node.threshold else node.right
    return node


# ----------------------------------------------------------------------
# gradient-boosted trees (log loss)

@dataclass(frozen=True)
class BoostConfig:
    rounds: int = 30
    shrinkage: float = 0.5
    max_depth: int = 3
    row_sampling: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 0:
            raise ClassifierError(f"rounds must be >= 0, got {self.rounds}")
        if not (0.0 < self.shrinkage <= 1.0):
            raise ClassifierError(f"shrinkage must be in (0,1], got {self.shrinkage}")
        if not (0.0 < self.row_sampling <= 1.0):
            raise ClassifierError(f"row sampling fraction must be in (0,1], got {self.row_sampling}")
        if self.max_depth < 1:
            raise ClassifierError(f"max depth must be >= 1, got {self.max_depth}")


@dataclass
class RegressionNode:
    feature: int | None = None
    threshold: float | None = None
    left: "RegressionNode | None" = None
    right: "RegressionNode | None" = None
    value: float = 0.0

    @property
    def is_leaf(self):
        return self.feature is None


def _best_sse_split(x, r):
    n = len(r)
    best = None
    for fi in range(x.shape[1]):
        col = x[:, fi]
        order = np.argsort(col, kind="stable")
        sr = r[order]
        sx = col[order]
        csum = np.cumsum(sr)
        csq = np.cumsum(sr * sr)
        for thr in _candidate_thresholds(col):
            nl = int(np.searchsorted(sx, thr, side="right"))
            sl, sql = csum[nl - 1], csq[nl - 1]
            sr_, sqr = csum[-1] - sl, csq[-1] - sql
            sse = (sql - sl * sl / nl) + (sqr - sr_ * sr_ / (n - nl))
            if best is None or sse < best[0]:
                best = (sse, fi, float(thr))
    return best


def _grow_regression(x, r, depth, max_depth):
    if len(r) < 2 or depth >= max_depth:
        return RegressionNode(value=float(r.mean()))
    parent_sse = float(((r - r.mean()) ** 2).sum())
    best = _best_sse_split(x, r)
    if best is None or best[0] >= parent_sse:
        return RegressionNode(value=float(r.mean()))
    _, fi, thr = best
    mask = x[:, fi] <= thr
    node = RegressionNode(feature=fi, threshold=thr)
    node.left = _grow_regression(x[mask], r[mask], depth + 1, max_depth)
    node.right = _grow_regression(x[~mask], r[~mask], depth + 1, max_depth)
    return node


def _regression_predict(node, x):
    out = np.empty(len(x))
    for i, row in enumerate(x):
        n = node
        while not n.is_leaf:
            n = n.left if row[n.feature] <= n.threshold else n.right
        out[i] = n.value
    return out


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _log_loss(y, p):
    p = np.clip(p, 1e-12, 1 - 1e-12)
    return float(-(y * np.log(p) + (1 - y) * np.log(1 - p)).mean())


@dataclass
class GbtModel:
    """Additive model F = f0 + shrinkage * sum of regression trees fit to
    the negative log-loss gradients (label minus probability)."""

    f0: float
    trees: list
    config: BoostConfig
    train_losses: list = field(default_factory=list)

    def decision_values(self, x):
        x = as_matrix(x)
        f = np.full(len(x), self.f0)
        for tree in self.trees:
            f += self.config.shrinkage * _regression_predict(tree, x)
        return f


def train_gbt(features, labels, config=BoostConfig()):
    x = as_matrix(features)
    y = np.asarray(labels, dtype=np.float64)
    if len(np.unique(y)) < 2:
        raise ClassifierError("boosting needs both classes present")
    prior = float(np.clip(y.mean(), 1e-12, 1 - 1e-12))
    f0 = float(np.log(prior / (1 - prior)))
    f = np.full(len(y), f0)
    rng = np.random.default_rng(config.seed)
    model = GbtModel(f0=f0, trees=[], config=config)
    model.train_losses.append(_log_loss(y, _sigmoid(f)))
    for _ in range(config.rounds):
        residual = y - _sigmoid(f)
        if config.row_sampling < 1.0:
            k = max(1, int(config.row_sampling * len(y)))
            idx = rng.choice(len(y), size=k, replace=False)
        else:
            idx = np.arange(len(y))
        tree = _grow_regression(x[idx], residual[idx], 0, config.max_depth)
        model.trees.append(tree)
        f += config.shrinkage * _regression_predict(tree, x)
        model.train_losses.append(_log_loss(y, _sigmoid(f)))
    return model


# ----------------------------------------------------------------------
# kernels and SVM

@dataclass(frozen=True)
class KernelSpec:
    kind: str = "linear"
    degree: int = 5
    gamma: float = 1.0
    coef0: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "polynomial"):
            raise ClassifierError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "polynomial" and self.degree < 2:
            raise ClassifierError(f"polynomial kernel needs degree >= 2, got {self.degree}")


def kernel_eval(spec, x, y):
    """K(x, y); linear is the dot product, polynomial is
    (gamma * <x,y> + coef0) ** degree."""
    dot = float(np.dot(_as_row(x), _as_row(y)))
    if spec.kind == "linear":
        return dot
    return (spec.gamma * dot + spec.coef0) ** spec.degree


def kernel_matrix(spec, a, b):
    dots = as_matrix(a) @ as_matrix(b).T
    if spec.kind == "linear":
        return dots
    return (spec.gamma * dots + spec.coef0) ** spec.degree


@dataclass
class SvmModel:
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i for the support vectors
    bias: float
    kernel: KernelSpec
    C: float
    kkt_residual: float = 0.0
    updates: int = 0

    def decision_values(self, x):
        k = kernel_matrix(self.kernel, as_matrix(x), self.support_vectors)
        return k @ self.dual_coef + self.bias


def _kkt_residual(alpha, y, f, C, tol_zero=1e-9):
    """Largest violation of the margin conditions over the training set."""
    margins = y * f
    res = 0.0
    for a, m in zip(alpha, margins):
        if a <= tol_zero:
            res = max(res, 1.0 - m)        # should satisfy y*f >= 1
        elif a >= C - tol_zero:
            res = max(res, m - 1.0)        # should satisfy y*f <= 1
        else:
            res = max(res, abs(m - 1.0))   # free vector sits on the margin
    return float(max(res, 0.0))


def train_svm(features, labels, spec=KernelSpec(), C=1.0, tolerance=1e-3,
              max_updates=100_000):
    """Soft-margin dual solver using pairwise coordinate updates.

    Each iteration picks the maximal-violating pair (the steepest feasible
    ascent/descent coordinates under the equality constraint) and solves
    that two-variable subproblem analytically; the pair gap doubling as
    the stopping criterion. Labels are 0/1 (1 = defect); callers are
    expected to standardize the features beforehand since the score and
    ratio columns live on very different scales. Raises
    SvmConvergenceError with the final residual if the update cap is
    exhausted before the KKT conditions hold.
    """
    x = as_matrix(features)
    y01 = np.asarray(labels, dtype=np.int64)
    if len(np.unique(y01)) < 2:
        raise ClassifierError("SVM training needs both classes present")
    y = np.where(y01 == 1, 1.0, -1.0)
    n = len(y)
    K = kernel_matrix(spec, x, x)
    diag = np.diag(K).copy()
    alpha = np.zeros(n)
    grad = -np.ones(n)          # d/dalpha of (alpha' Q alpha / 2 - sum alpha)
    eps = 1e-12
    updates = 0
    pos = y > 0
    while True:
        yg = -y * grad
        up = (pos & (alpha < C - eps)) | (~pos & (alpha > eps))
        down = (pos & (alpha > eps)) | (~pos & (alpha < C - eps))
        if not up.any() or not down.any():
            b = 0.0
            break
        i = int(np.flatnonzero(up)[np.argmax(yg[up])])
        m = yg[i]
        down_idx = np.flatnonzero(down)
        mm = yg[down_idx].min()
        if m - mm <= tolerance:
            b = (m + mm) / 2.0
            break
        if updates >= max_updates:
            b = (m + mm) / 2.0
            f = K @ (alpha * y) + b
            raise SvmConvergenceError(_kkt_residual(alpha, y, f, C), updates)
        # second choice maximizes the closed-form objective decrease
        gaps = m - yg[down_idx]
        quads = np.maximum(diag[i] + diag[down_idx] - 2.0 * K[i, down_idx], 1e-12)
        cand = gaps > 0
        scores = np.where(cand, -(gaps * gaps) / quads, np.inf)
        j = int(down_idx[np.argmin(scores)])
        quad = max(diag[i] + diag[j] - 2.0 * K[i, j], 1e-12)
        t = (m - yg[j]) / quad
        # box limits along the direction (alpha_i += y_i t, alpha_j -= y_j t)
        t = min(t, C - alpha[i] if y[i] > 0 else alpha[i])
        t = min(t, alpha[j] if y[j] > 0 else C - alpha[j])
        alpha[i] += y[i] * t
        alpha[j] -= y[j] * t
        grad += t * y * (K[i] - K[j])
        updates += 1

    f = K @ (alpha * y) + b
    residual = _kkt_residual(alpha, y, f, C)
    sv = alpha > 1e-12
    return SvmModel(support_vectors=x[sv].copy(), dual_coef=(alpha * y)[sv],
                    bias=b, kernel=spec, C=C, kkt_residual=residual, updates=updates)


# ----------------------------------------------------------------------
# unified prediction

def classify(model, x):
    """(label, decision_value) for one feature vector.

    Trees report the leaf's defect fraction, boosted models their additive
    log-odds, SVMs the kernel decision value; in every case a zero-margin
    tie flags the defect class.
    """
    row = _as_row(x)
    if isinstance(model, TreeNode):
        leaf = _tree_walk(model, row)
        total = leaf.counts[0] + leaf.counts[1]
        value = leaf.counts[1] / total if total else 0.5
        return leaf.label, value
    if isinstance(model, GbtModel):
        value = float(model.decision_values(row[None])[0])
        return (1 if value >= 0 else 0), value
    if isinstance(model, SvmModel):
        value = float(model.decision_values(row[None])[0])
        return (1 if value >= 0 else 0), value
    raise ClassifierError(f"not a trained classifier: {type(model).__name__}")


# ----------------------------------------------------------------------
# serialization

def _tree_arrays(root):
    # rows of (feature, threshold, left, right, label, count0, count1);
    # feature -1 marks a leaf
    rows = []

    def visit(node):
        idx = len(rows)
        if node.is_leaf:
            rows.append([-1, 0.0, -1, -1, node.label, node.counts[0], node.counts[1]])
        else:
            rows.append([node.feature, node.threshold, 0, 0, -1,
                         node.counts[0], node.counts[1]])
            rows[idx][2] = visit(node.left)
            rows[idx][3] = visit(node.right)
        return idx

    visit(root)
    return np.array(rows, dtype=np.float64)


def _tree_from_arrays(arr, regression=False):
    def build(idx):
        fi, thr, left, right, label, c0, c1 = arr[idx]
        if int(fi) < 0:
            if regression:
                return RegressionNode(value=float(thr))
            return TreeNode(label=int(label), counts=(int(c0), int(c1)))
        cls = RegressionNode if regression else TreeNode
        node = cls(feature=int(fi), threshold=float(thr))
        if not regression:
            node.counts = (int(c0), int(c1))
        node.left = build(int(left))
        node.right = build(int(right))
        return node

    return build(0)


def _regression_arrays(root):
    rows = []

    def visit(node):
        idx = len(rows)
        rows.append(None)
        if node.is_leaf:
            rows[idx] = [-1, node.value, -1, -1, -1, 0, 0]
        else:
            rows[idx] = [node.feature, node.threshold, 0, 0, -1, 0, 0]
            rows[idx][2] = visit(node.left)
            rows[idx][3] = visit(node.right)
        return idx

    visit(root)
    return np.array(rows, dtype=np.float64)


def save_classifier(model, path, extra_meta=None):
    """Persist any of the four classifier kinds in the shared container."""
    meta = dict(extra_meta or {})
    tensors = {}
    if isinstance(model, TreeNode):
        meta["kind"] = "tree"
        tensors["tree"] = _tree_arrays(model)
    elif isinstance(model, GbtModel):
        meta["kind"] = "gbt"
        meta["f0"] = model.f0
        meta["rounds"] = model.config.rounds
        meta["shrinkage"] = model.config.shrinkage
        meta["max_depth"] = model.config.max_depth
        meta["row_sampling"] = model.config.row_sampling
        meta["seed"] = model.config.seed
        meta["train_losses"] = model.train_losses
        for i, tree in enumerate(model.trees):
            tensors[f"tree{i}"] = _regression_arrays(tree)
    elif isinstance(model, SvmModel):
        meta["kind"] = "svm"
        meta["kernel"] = {"kind": model.kernel.kind, "degree": model.kernel.degree,
                          "gamma": model.kernel.gamma, "coef0": model.kernel.coef0}
        meta["C"] = model.C
        meta["bias"] = model.bias
        meta["kkt_residual"] = model.kkt_residual
        tensors["support_vectors"] = model.support_vectors
        tensors["dual_coef"] = model.dual_coef
    else:
        raise ClassifierError(f"cannot serialize {type(model).__name__}")
    write_container(path, CLASSIFIER_MAGIC, meta, tensors)


def load_classifier(path):
    meta, tensors = read_container(path, CLASSIFIER_MAGIC)
    kind = meta.get("kind")
    if kind == "tree":
        return _tree_from_arrays(tensors["tree"]), meta
    if kind == "gbt":
        config = BoostConfig(rounds=meta["rounds"], shrinkage=meta["shrinkage"],
                             max_depth=meta["max_depth"], row_sampling=meta["row_sampling"],
                             seed=meta["seed"])
        trees = [_tree_from_arrays(tensors[f"tree{i}"], regression=True)
                 for i in range(meta["rounds"]) if f"tree{i}" in tensors]
        model = GbtModel(f0=meta["f0"], trees=trees, config=config,
                         train_losses=list(meta.get("train_losses", [])))
        return model, meta
    if kind == "svm":
        k = meta["kernel"]
        spec = KernelSpec(kind=k["kind"], degree=k["degree"], gamma=k["gamma"], coef0=k["coef0"])
        model = SvmModel(support_vectors=tensors["support_vectors"],
                         dual_coef=tensors["dual_coef"], bias=meta["bias"],
                         kernel=spec, C=meta["C"], kkt_residual=meta["kkt_residual"])
        return model, meta
    raise ClassifierError(f"unknown classifier kind {kind!r}")


# ----------------------------------------------------------------------
# feature CSV interchange

def write_feature_csv(path, features, labels):
    """Columns: score_1, score_2, rcr, label (OK/NOK)."""
    x = as_matrix(features)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["score_1", "score_2", "rcr", "label"])
        for row, label in zip(x, labels):
            writer.writerow([repr(float(row[0])), repr(float(row[1])), repr(float(row[2])),
                             "NOK" if int(label) == 1 else "OK"])


def read_feature_csv(path):
    """Returns (features [n,3], labels [n] of 0/1)."""
    rows, labels = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip().lower() for h in header[:4]] != ["score_1", "score_2", "rcr", "label"]:
            raise ClassifierError(f"unexpected feature CSV header {header}")
        for rec in reader:
            if not rec:
                continue
            rows.append([float(rec[0]), float(rec[1]), float(rec[2])])
            tag = rec[3].strip().upper()
            if tag in ("NOK", "1"):
                labels.append(1)
            elif tag in ("OK", "0"):
                labels.append(0)
            else:
                raise ClassifierError(f"unrecognized label {rec[3]!r}")
    return np.array(rows), np.array(labels, dtype=np.int64)


@dataclass(frozen=True)
class Standardizer:
    """Per-column zero-mean/unit-variance transform (train statistics)."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x):
        x = as_matrix(x)
        std = x.std(axis=0)
        return cls(mean=x.mean(axis=0), std=np.where(std < 1e-12, 1.0, std))

    def transform(self, x):
        return (as_matrix(x) - self.mean) / self.std
