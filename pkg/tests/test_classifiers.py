"""Decision-stage classifiers: tree, boosted trees, kernels, SVM."""

import numpy as np
import pytest

from weldsight.classifiers import (BoostConfig, ClassifierError, FeatureVector,
                                   GbtModel, KernelSpec, Standardizer, TreeNode,
                                   classify, kernel_eval, kernel_matrix,
                                   load_classifier, read_feature_csv, save_classifier,
                                   train_gbt, train_svm, train_tree, write_feature_csv)


# ----------------------------------------------------------------------
# feature vectors

def test_feature_vector_validation():
    FeatureVector(0.6, 0.4, 12.5)
    with pytest.raises(ClassifierError):
        FeatureVector(0.6, 0.4, 101.0)
    with pytest.raises(ClassifierError):
        FeatureVector(float("nan"), 0.4, 10.0)


# ----------------------------------------------------------------------
# decision tree

def test_single_sample_is_leaf():
    tree = train_tree(np.array([[0.2, 0.8, 5.0]]), np.array([1]))
    assert tree.is_leaf and tree.label == 1


def test_hand_checked_root_split():
    # 1-D points 0,1 labeled A(0) and 2,3 labeled B(1): of the midpoints
    # 0.5/1.5/2.5 only 1.5 yields two pure children
    x = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0], [3.0, 0, 0]])
    y = np.array([0, 0, 1, 1])
    tree = train_tree(x, y)
    assert tree.feature == 0
    assert tree.threshold == pytest.approx(1.5)
    assert tree.left.is_leaf and tree.left.label == 0
    assert tree.right.is_leaf and tree.right.label == 1


def test_tree_reaches_purity_or_singleton():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, (40, 3))
    y = (x[:, 0] + 0.2 * rng.normal(size=40) > 0.5).astype(int)

    def check(node, xs, ys):
        if node.is_leaf:
            assert len(ys) < 2 or len(np.unique(ys)) == 1 or \
                all((xs == xs[0]).all(axis=0))
            return
        mask = xs[:, node.feature] <= node.threshold
        check(node.left, xs[mask], ys[mask])
        check(node.right, xs[~mask], ys[~mask])

    check(train_tree(x, y), x, y)


def test_tree_training_points_reach_their_labels():
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 1, (30, 3))
    y = rng.integers(0, 2, 30)
    tree = train_tree(x, y)
    pred = np.array([classify(tree, row)[0] for row in x])
    assert np.array_equal(pred, y)   # distinct features force pure leaves


def test_gini_of_children_never_exceeds_parent():
    def gini(ys):
        if len(ys) == 0:
            return 0.0
        p = np.bincount(ys, minlength=2) / len(ys)
        return 1.0 - (p * p).sum()

    rng = np.random.default_rng(7)
    for _ in range(20):
        n = int(rng.integers(4, 30))
        x = rng.integers(0, 4, (n, 3)).astype(float)
        y = rng.integers(0, 2, n)
        tree = train_tree(x, y)
        if tree.is_leaf:
            continue
        mask = x[:, tree.feature] <= tree.threshold
        weighted = (mask.sum() * gini(y[mask]) + (~mask).sum() * gini(y[~mask])) / n
        assert weighted <= gini(y) + 1e-12


def test_tree_rejects_empty_and_nonbinary():
    with pytest.raises(ClassifierError):
        train_tree(np.zeros((0, 3)), np.array([], dtype=int))
    with pytest.raises(ClassifierError):
        train_tree(np.zeros((2, 3)), np.array([0, 2]))


def test_tree_leaf_tie_flags_defect():
    x = np.array([[1.0, 0, 0], [1.0, 0, 0]])
    y = np.array([0, 1])   # identical features, conflicting labels
    tree = train_tree(x, y)
    assert tree.is_leaf and tree.label == 1


# ----------------------------------------------------------------------
# gradient boosting

def _four_points():
    x = np.array([[0.0, 0, 0], [0.1, 0, 0], [0.9, 0, 0], [1.0, 0, 0]])
    y = np.array([0, 0, 1, 1])
    return x, y


def test_gbt_zero_rounds_is_prior_log_odds():
    x, y = _four_points()
    model = train_gbt(x, y, BoostConfig(rounds=0))
    assert model.decision_values(x) == pytest.approx(np.log(0.5 / 0.5))
    y2 = np.array([0, 0, 0, 1])
    model2 = train_gbt(x, y2, BoostConfig(rounds=0))
    assert model2.f0 == pytest.approx(np.log(0.25 / 0.75))


def test_gbt_perfect_on_separable_points():
    x, y = _four_points()
    model = train_gbt(x, y, BoostConfig(rounds=10, shrinkage=0.5, row_sampling=1.0))
    pred = (model.decision_values(x) >= 0).astype(int)
    assert np.array_equal(pred, y)


def test_gbt_shrinkage_halves_first_round_contribution():
    x, y = _four_points()
    half = train_gbt(x, y, BoostConfig(rounds=1, shrinkage=0.5))
    full = train_gbt(x, y, BoostConfig(rounds=1, shrinkage=1.0))
    assert (half.decision_values(x) - half.f0) == pytest.approx(
        (full.decision_values(x) - full.f0) / 2.0)


def test_gbt_single_label_rejected():
    with pytest.raises(ClassifierError):
        train_gbt(np.zeros((3, 3)), np.array([1, 1, 1]), BoostConfig(rounds=2))


def test_gbt_train_loss_nonincreasing_without_subsampling():
    rng = np.random.default_rng(5)
    x = rng.uniform(0, 1, (60, 3))
    y = (x[:, 0] + x[:, 2] * 0.3 + rng.normal(0, 0.2, 60) > 0.6).astype(int)
    model = train_gbt(x, y, BoostConfig(rounds=25, shrinkage=0.5, row_sampling=1.0))
    losses = np.array(model.train_losses)
    assert (np.diff(losses) <= 1e-12).all()


def test_gbt_row_sampling_is_seeded():
    rng = np.random.default_rng(6)
    x = rng.uniform(0, 1, (50, 3))
    y = (x[:, 1] > 0.5).astype(int)
    cfg = BoostConfig(rounds=5, row_sampling=0.5, seed=3)
    a = train_gbt(x, y, cfg).decision_values(x)
    b = train_gbt(x, y, cfg).decision_values(x)
    assert np.array_equal(a, b)


# ----------------------------------------------------------------------
# kernels

def test_kernel_examples():
    lin = KernelSpec("linear")
    assert kernel_eval(lin, np.array([1.0, 0, 0]), np.array([1.0, 0, 0])) == 1.0
    p5 = KernelSpec("polynomial", degree=5)
    assert kernel_eval(p5, np.zeros(3), np.zeros(3)) == 1.0        # (0+1)^5
    a = np.array([1.0, 0, 0])
    assert kernel_eval(p5, a, a) == 32.0                           # (1+1)^5


def test_kernel_symmetry_and_gram_psd():
    rng = np.random.default_rng(11)
    x = rng.normal(0, 1, (10, 3))
    for spec in (KernelSpec("linear"), KernelSpec("polynomial", degree=5)):
        gram = kernel_matrix(spec, x, x)
        assert np.allclose(gram, gram.T)
        assert np.linalg.eigvalsh(gram).min() >= -1e-8
        i, j = 3, 7
        assert kernel_eval(spec, x[i], x[j]) == pytest.approx(gram[i, j])


def test_polynomial_degree_validation():
    with pytest.raises(ClassifierError):
        KernelSpec("polynomial", degree=1)
    with pytest.raises(ClassifierError):
        KernelSpec("rbf")


# ----------------------------------------------------------------------
# SVM

def test_svm_two_point_maximal_margin():
    m = train_svm(np.array([[-1.0], [1.0]]), np.array([0, 1]),
                  KernelSpec("linear"), C=100.0)
    assert m.decision_values(np.array([[0.0]]))[0] == pytest.approx(0.0, abs=1e-9)
    assert m.decision_values(np.array([[1.0]]))[0] == pytest.approx(1.0, abs=1e-6)
    assert m.decision_values(np.array([[-1.0]]))[0] == pytest.approx(-1.0, abs=1e-6)


def _xor():
    x = np.array([[-1.0, -1, 0], [1.0, 1, 0], [-1.0, 1, 0], [1.0, -1, 0]])
    y = np.array([1, 1, 0, 0])
    return x, y


def test_svm_xor_linear_fails_poly5_succeeds():
    x, y = _xor()
    lin = train_svm(x, y, KernelSpec("linear"), C=10.0)
    lin_acc = np.mean((lin.decision_values(x) >= 0).astype(int) == y)
    assert lin_acc < 1.0
    p5 = train_svm(x, y, KernelSpec("polynomial", degree=5), C=10.0)
    p5_acc = np.mean((p5.decision_values(x) >= 0).astype(int) == y)
    assert p5_acc == 1.0


def test_svm_duplicated_training_set_same_decision_function():
    rng = np.random.default_rng(1)
    a = rng.normal([-1.5, 0, 0], 0.3, (20, 3))
    b = rng.normal([1.5, 0, 0], 0.3, (20, 3))
    x = np.vstack([a, b])
    y = np.array([0] * 20 + [1] * 20)
    m1 = train_svm(x, y, KernelSpec("linear"), C=10.0, tolerance=1e-8)
    m2 = train_svm(np.vstack([x, x]), np.concatenate([y, y]),
                   KernelSpec("linear"), C=10.0, tolerance=1e-8)
    probe = rng.normal(0, 1.5, (40, 3))
    assert np.abs(m1.decision_values(probe) - m2.decision_values(probe)).max() < 1e-6


def test_svm_invariant_under_permutation():
    rng = np.random.default_rng(2)
    a = rng.normal([-1, -1, 0], 0.4, (25, 3))
    b = rng.normal([1, 1, 0], 0.4, (25, 3))
    x = np.vstack([a, b])
    y = np.array([0] * 25 + [1] * 25)
    perm = rng.permutation(len(y))
    m1 = train_svm(x, y, KernelSpec("polynomial", degree=5), C=1.0, tolerance=1e-8)
    m2 = train_svm(x[perm], y[perm], KernelSpec("polynomial", degree=5), C=1.0,
                   tolerance=1e-8)
    probe = rng.normal(0, 1.2, (50, 3))
    assert np.abs(m1.decision_values(probe) - m2.decision_values(probe)).max() < 1e-6


def test_svm_dual_coefficients_bounded_and_kkt_holds():
    rng = np.random.default_rng(4)
    x = np.vstack([rng.normal(-0.5, 1, (30, 3)), rng.normal(0.5, 1, (30, 3))])
    y = np.array([0] * 30 + [1] * 30)
    m = train_svm(x, y, KernelSpec("linear"), C=2.0)
    assert (np.abs(m.dual_coef) <= 2.0 + 1e-9).all()
    assert m.kkt_residual <= 1e-3 + 1e-9


def test_svm_margin_support_vector_error_within_tolerance():
    rng = np.random.default_rng(8)
    a = rng.normal([-2, 0, 0], 0.5, (15, 3))
    b = rng.normal([2, 0, 0], 0.5, (15, 3))
    x = np.vstack([a, b])
    y = np.array([0] * 15 + [1] * 15)
    tol = 1e-6
    m = train_svm(x, y, KernelSpec("linear"), C=5.0, tolerance=tol)
    alphas = np.abs(m.dual_coef)
    free = (alphas > 1e-9) & (alphas < 5.0 - 1e-9)
    assert free.any()
    f = m.decision_values(m.support_vectors[free])
    signs = np.sign(m.dual_coef[free])
    assert np.abs(f - signs).max() <= 10 * tol


def test_svm_single_label_rejected():
    with pytest.raises(ClassifierError):
        train_svm(np.zeros((3, 3)), np.array([1, 1, 1]))


# ----------------------------------------------------------------------
# unified classify

def test_classify_gbt_decision_matches_additive_form():
    x, y = _four_points()
    model = train_gbt(x, y, BoostConfig(rounds=4, shrinkage=0.5))
    from weldsight.classifiers import _regression_predict
    for row in x:
        expect = model.f0 + 0.5 * sum(_regression_predict(t, row[None])[0]
                                      for t in model.trees)
        assert classify(model, row)[1] == pytest.approx(expect)


def test_classify_tree_returns_leaf_fraction():
    x = np.array([[0.0, 0, 0], [0.0, 0, 0], [1.0, 0, 0]])
    y = np.array([1, 1, 0])
    tree = train_tree(x, y)
    label, value = classify(tree, np.array([0.0, 0, 0]))
    assert label == 1 and value == 1.0


def test_classify_rejects_untrained_objects():
    with pytest.raises(ClassifierError):
        classify(object(), np.zeros(3))


def test_all_four_reach_full_accuracy_on_separable_set():
    rng = np.random.default_rng(12)
    a = rng.normal([0.2, 0.8, 10.0], [0.05, 0.05, 2.0], (10, 3))
    b = rng.normal([0.8, 0.2, 40.0], [0.05, 0.05, 2.0], (10, 3))
    x = np.clip(np.vstack([a, b]), 0, 100)
    y = np.array([1] * 10 + [0] * 10)
    scaler = Standardizer.fit(x)
    models = [
        train_tree(x, y),
        train_gbt(x, y, BoostConfig(rounds=20, shrinkage=0.5)),
        train_svm(scaler.transform(x), y, KernelSpec("linear"), C=10.0),
        train_svm(scaler.transform(x), y, KernelSpec("polynomial", degree=5), C=10.0),
    ]
    for k, model in enumerate(models):
        rows = scaler.transform(x) if k >= 2 else x
        pred = np.array([classify(model, r)[0] for r in rows])
        assert np.array_equal(pred, y), f"model {k}"


# ----------------------------------------------------------------------
# serialization and CSV

def test_classifier_save_load_round_trips(tmp_path):
    rng = np.random.default_rng(13)
    x = rng.uniform(0, 1, (30, 3))
    y = (x[:, 0] > 0.5).astype(int)
    probe = rng.uniform(0, 1, (20, 3))

    tree = train_tree(x, y)
    save_classifier(tree, tmp_path / "t.wsc")
    tree2, meta = load_classifier(tmp_path / "t.wsc")
    assert meta["kind"] == "tree"
    for row in probe:
        assert classify(tree, row) == classify(tree2, row)

    gbt = train_gbt(x, y, BoostConfig(rounds=6, shrinkage=0.5))
    save_classifier(gbt, tmp_path / "g.wsc")
    gbt2, _ = load_classifier(tmp_path / "g.wsc")
    assert np.array_equal(gbt.decision_values(probe), gbt2.decision_values(probe))

    svm = train_svm(x, y, KernelSpec("polynomial", degree=5), C=1.0)
    save_classifier(svm, tmp_path / "s.wsc")
    svm2, _ = load_classifier(tmp_path / "s.wsc")
    assert np.array_equal(svm.decision_values(probe), svm2.decision_values(probe))


def test_feature_csv_round_trip(tmp_path):
    x = np.array([[0.9, 0.1, 3.25], [0.2, 0.8, 77.0]])
    y = np.array([0, 1])
    path = tmp_path / "f.csv"
    write_feature_csv(path, x, y)
    x2, y2 = read_feature_csv(path)
    assert np.array_equal(x, x2)
    assert np.array_equal(y, y2)
    header = path.read_text().splitlines()[0]
    assert header == "score_1,score_2,rcr,label"


def test_feature_csv_rejects_bad_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b,c,d\n1,2,3,OK\n")
    with pytest.raises(ClassifierError):
        read_feature_csv(p)
