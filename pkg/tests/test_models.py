"""Feature extractor construction, training, scoring, and freezing."""

import numpy as np
import pytest

from weldsight.autodiff import ShapeError
from weldsight.frozen import ChecksumError, TruncatedFileError, VersionMismatchError
from weldsight.gradcam import compute_cam
from weldsight.models import (ModelSpec, ModelSpecError, ScorePair, TrainConfig,
                              TrainingError, build_model, freeze, history_to_csv,
                              load_frozen, predict_batch, predict_scores, train,
                              with_score_kind)
from weldsight.optim import OptimizerConfig

TINY = ModelSpec(family="mini_mobilenet", input_shape=(16, 16, 3), channels=(4, 6))
TINY_RES = ModelSpec(family="mini_resnet", input_shape=(16, 16, 3), channels=(4, 6))


def _blob_dataset(n=20, size=16, seed=5):
    """Bright-top vs bright-bottom images; linearly separable by location."""
    rng = np.random.default_rng(seed)
    x = np.zeros((n, size, size, 3))
    y = np.zeros(n, dtype=int)
    for i in range(n):
        x[i] += rng.uniform(0.1, 0.2)
        if i % 2 == 0:
            x[i, :size // 2] += 0.6
        else:
            x[i, size // 2:] += 0.6
            y[i] = 1
        x[i] += rng.normal(0, 0.02, (size, size, 3))
    return np.clip(x, 0, 1), y


def test_spec_validation():
    with pytest.raises(ModelSpecError):
        ModelSpec(family="vgg")
    with pytest.raises(ModelSpecError):
        ModelSpec(channels=(8,))
    with pytest.raises(ModelSpecError):
        ModelSpec(channels=(8, 0))
    with pytest.raises(ModelSpecError):
        ModelSpec(class_count=3)
    with pytest.raises(ModelSpecError):
        ModelSpec(score_kind="prob")


@pytest.mark.parametrize("spec", [TINY, TINY_RES])
def test_forward_produces_finite_score_pair(spec):
    fx = build_model(spec, seed=1)
    img = np.random.default_rng(0).uniform(0, 1, spec.input_shape)
    scores = predict_scores(fx, img)
    assert np.isfinite(scores.score_ok) and np.isfinite(scores.score_nok)
    assert scores.kind == "probability"


def test_depthwise_block_parameter_count():
    spec = ModelSpec(family="mini_mobilenet", input_shape=(32, 32, 3), channels=(8, 16))
    fx = build_model(spec, seed=0)
    params = fx.graph.parameters()
    cin, cout, kh = 8, 16, 3
    dw = params["block1/dw/w"].values.size + params["block1/dw/b"].values.size
    pw = params["block1/pw/w"].values.size + params["block1/pw/b"].values.size
    assert dw == kh * kh * cin + cin
    assert pw == cin * cout + cout
    dense_equivalent = kh * kh * cin * cout + cout
    assert dw + pw < dense_equivalent


def test_same_seed_builds_identical_weights():
    a = build_model(TINY, seed=9)
    b = build_model(TINY, seed=9)
    for name, t in a.graph.parameters().items():
        assert np.array_equal(t.values, b.graph.parameters()[name].values)
    c = build_model(TINY, seed=10)
    assert any(not np.array_equal(t.values, c.graph.parameters()[name].values)
               for name, t in a.graph.parameters().items())


def test_score_pair_rules():
    sp = ScorePair(0.75, 0.25)
    assert sp.argmax() == 0
    assert ScorePair(0.25, 0.75).argmax() == 1
    assert ScorePair(0.5, 0.5).argmax() == 1       # tie flags the defect
    with pytest.raises(ValueError):
        ScorePair(0.9, 0.9, kind="probability")
    ScorePair(3.0, -1.0, kind="raw_score")         # raw scores are unbounded


def test_training_reaches_high_accuracy_on_separable_set():
    x, y = _blob_dataset()
    fx = build_model(TINY, seed=2)
    config = TrainConfig(optimizer=OptimizerConfig(kind="adam", learning_rate=0.01),
                         batch_size=8, epochs=30, seed=3)
    history = train(fx, x, y, config)
    assert len(history) == 30
    assert [h.epoch for h in history] == list(range(30))
    assert history[-1].accuracy >= 0.95


def test_zero_epoch_budget_rejected():
    with pytest.raises(TrainingError):
        TrainConfig(epochs=0)
    with pytest.raises(TrainingError):
        TrainConfig(batch_size=0)


def test_identical_seeds_identical_history():
    x, y = _blob_dataset(n=12)
    cfg = TrainConfig(optimizer=OptimizerConfig(kind="sgd", learning_rate=0.01),
                      batch_size=4, epochs=3, seed=7)
    h1 = train(build_model(TINY, seed=4), x, y, cfg)
    h2 = train(build_model(TINY, seed=4), x, y, cfg)
    assert [(a.loss, a.accuracy) for a in h1] == [(b.loss, b.accuracy) for b in h2]


def test_training_requires_both_labels():
    x, _ = _blob_dataset(n=6)
    with pytest.raises(TrainingError):
        train(build_model(TINY, seed=0), x, np.zeros(6, dtype=int), TrainConfig(epochs=1))


def test_full_batch_loss_nonincreasing_under_small_sgd_steps():
    x, y = _blob_dataset(n=8)
    fx = build_model(TINY, seed=6)
    cfg = TrainConfig(optimizer=OptimizerConfig(kind="sgd", learning_rate=1e-3),
                      batch_size=8, epochs=5, seed=0)
    history = train(fx, x, y, cfg)
    losses = [h.loss for h in history]
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_predict_scores_sum_to_one_and_pure():
    fx = build_model(TINY, seed=3)
    img = np.random.default_rng(1).uniform(0, 1, (16, 16, 3))
    s1 = predict_scores(fx, img)
    s2 = predict_scores(fx, img)
    assert s1 == s2
    assert s1.score_ok + s1.score_nok == pytest.approx(1.0, abs=1e-9)


def test_zeroed_head_gives_even_split():
    fx = build_model(TINY, seed=3)
    fx.graph.set_parameter("head/w", np.zeros_like(fx.graph.parameters()["head/w"].values))
    fx.graph.set_parameter("head/b", np.zeros_like(fx.graph.parameters()["head/b"].values))
    scores = predict_scores(fx, np.random.default_rng(2).uniform(0, 1, (16, 16, 3)))
    assert scores.score_ok == pytest.approx(0.5)
    assert scores.score_nok == pytest.approx(0.5)


def test_predict_rejects_wrong_shape():
    fx = build_model(TINY, seed=0)
    with pytest.raises(ShapeError):
        predict_scores(fx, np.zeros((8, 8, 3)))


def test_argmax_invariant_between_probability_and_raw_kinds():
    fx = build_model(TINY, seed=11)
    raw = with_score_kind(fx, "raw_score")
    rng = np.random.default_rng(5)
    for _ in range(10):
        img = rng.uniform(0, 1, (16, 16, 3))
        assert predict_scores(fx, img).argmax() == predict_scores(raw, img).argmax()


def test_history_csv_format(tmp_path):
    x, y = _blob_dataset(n=8)
    hist = train(build_model(TINY, seed=1), x, y, TrainConfig(epochs=2, batch_size=4))
    path = tmp_path / "hist.csv"
    history_to_csv(hist, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,loss,accuracy"
    assert len(lines) == 3


# ----------------------------------------------------------------------
# freeze / load

def test_freeze_round_trip_weights_scores_and_maps(tmp_path):
    x, y = _blob_dataset(n=8)
    fx = build_model(TINY, seed=8)
    train(fx, x, y, TrainConfig(epochs=2, batch_size=4,
                                optimizer=OptimizerConfig(kind="adam", learning_rate=1e-3)))
    fx.dataset_digest = "abc123"
    path = tmp_path / "m.wsf"
    freeze(fx, path)
    back = load_frozen(path)
    assert back.spec == fx.spec
    assert back.dataset_digest == "abc123"
    for name, t in fx.graph.parameters().items():
        assert np.array_equal(t.values, back.graph.parameters()[name].values)
    img = x[0]
    assert predict_scores(fx, img) == predict_scores(back, img)
    assert np.array_equal(predict_batch(fx, x), predict_batch(back, x))
    cam1 = compute_cam(fx, img)
    cam2 = compute_cam(back, img)
    assert np.array_equal(cam1.grid, cam2.grid)


def test_corrupted_length_field_is_truncation_error(tmp_path):
    fx = build_model(TINY, seed=1)
    path = tmp_path / "m.wsf"
    freeze(fx, path)
    raw = bytearray(path.read_bytes())
    raw[6:10] = (2 ** 31 - 1).to_bytes(4, "little")   # metadata length field
    path.write_bytes(bytes(raw))
    with pytest.raises(TruncatedFileError):
        load_frozen(path)


def test_truncated_file_detected(tmp_path):
    fx = build_model(TINY, seed=1)
    path = tmp_path / "m.wsf"
    freeze(fx, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:len(raw) // 2])
    with pytest.raises(TruncatedFileError):
        load_frozen(path)


def test_flipped_payload_byte_is_checksum_error(tmp_path):
    fx = build_model(TINY, seed=1)
    path = tmp_path / "m.wsf"
    freeze(fx, path)
    raw = bytearray(path.read_bytes())
    raw[-40] ^= 0xFF   # inside tensor data, leaves structure parseable
    path.write_bytes(bytes(raw))
    with pytest.raises(ChecksumError):
        load_frozen(path)


def test_version_bump_is_version_error(tmp_path):
    fx = build_model(TINY, seed=1)
    path = tmp_path / "m.wsf"
    freeze(fx, path)
    raw = bytearray(path.read_bytes())
    raw[4:6] = (99).to_bytes(2, "little")
    path.write_bytes(bytes(raw))
    with pytest.raises(VersionMismatchError):
        load_frozen(path)
