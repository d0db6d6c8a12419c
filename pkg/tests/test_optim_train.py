import numpy as np
import pytest

from pointfuse.nn.model import ModelConfig, predict_proba
from pointfuse.nn.optim import AdamState, adam_step, learning_rate
from pointfuse.nn.train import TrainConfig, TrainingDiverged, TrainingSample, train_toy
from pointfuse.sampling import PointSet


def test_learning_rate_staircase():
    assert learning_rate(0) == 1e-3
    assert learning_rate(1999) == 1e-3
    assert learning_rate(2000) == pytest.approx(0.0009, rel=1e-15)
    assert learning_rate(4000) == pytest.approx(0.00081, rel=1e-15)


def test_adam_zero_gradient_is_noop():
    p = {"w": np.array([1.0, -2.0, 3.0])}
    before = p["w"].copy()
    for _ in range(3):
        adam_step(p, {"w": np.zeros(3)}, AdamState(), 1e-3)
    np.testing.assert_array_equal(p["w"], before)


def test_adam_single_step_hand_oracle():
    g = np.array([0.5, -2.0, 1e-9, 0.0])
    p = {"w": np.ones(4)}
    st = AdamState()
    adam_step(p, {"w": g}, st, 0.01)
    # m_hat = g, v_hat = g^2 after bias correction, so the step is lr * g / (|g| + eps)
    expect = 1.0 - 0.01 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(p["w"], expect, rtol=0, atol=1e-15)
    assert st.t == 1
    # second step by hand
    g2 = np.array([1.0, 1.0, 1.0, 1.0])
    m = 0.9 * 0.1 * g + 0.1 * g2
    v = 0.999 * 0.001 * g * g + 0.001 * g2 * g2
    step = 0.01 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
    adam_step(p, {"w": g2}, st, 0.01)
    np.testing.assert_allclose(p["w"], expect - step, rtol=0, atol=1e-14)


def test_adam_errors():
    p = {"w": np.ones(2)}
    with pytest.raises(FloatingPointError):
        adam_step(p, {"w": np.array([np.nan, 0.0])}, AdamState(), 1e-3)
    with pytest.raises(FloatingPointError):
        adam_step(p, {"w": np.array([np.inf, 0.0])}, AdamState(), 1e-3)
    with pytest.raises(ValueError):
        adam_step(p, {"w": np.ones(3)}, AdamState(), 1e-3)
    np.testing.assert_array_equal(p["w"], 1.0)


def _sample(rng, n, labels, feature):
    pos = rng.uniform(0, 1.5, size=(n, 3))
    return PointSet(pos, feature(pos, labels), labels)


def separable(rng, n=300):
    pos = rng.uniform(0, 1.5, size=(n, 3))
    labels = np.where(pos[:, 0] < 0.75, 1, 2)
    feats = np.where(labels == 1, 1.0, -1.0)[:, None] * np.ones((1, 2))
    ps = PointSet(pos, feats, labels)
    return [TrainingSample(ps, ps)]


CFG = ModelConfig.toy(num_classes=4, input_feature_dim=2)


def test_one_class_loss_goes_to_zero():
    rng = np.random.default_rng(0)
    pos = rng.uniform(0, 1.5, size=(300, 3))
    ps = PointSet(pos, rng.normal(size=(300, 2)), np.ones(300, dtype=int))
    res = train_toy([TrainingSample(ps, ps)], CFG, 50, seed=1, train=TrainConfig(base_lr=1e-2))
    assert res.losses[0] > 1.0
    assert res.losses[-1] < 0.01


def test_separable_two_class_accuracy():
    rng = np.random.default_rng(1)
    data = separable(rng)
    res = train_toy(data, CFG, 500, seed=2)
    ps = data[0].subvolume
    correct = total = 0
    for k in range(5):
        idx = np.random.default_rng(k).permutation(len(ps))[:128]
        pred = predict_proba(ps.take(idx), ps.take(np.arange(256)), CFG, res.params).argmax(1) + 1
        correct += int((pred == ps.labels[idx]).sum())
        total += len(idx)
    assert correct / total >= 0.99
    first, last = np.mean(res.losses[:10]), np.mean(res.losses[-10:])
    assert last < first


def test_training_is_deterministic_and_logs():
    rng = np.random.default_rng(3)
    data = separable(rng)
    seen = []
    a = train_toy(data, CFG, 25, seed=5, callback=lambda s, v: seen.append(s))
    b = train_toy(data, CFG, 25, seed=5)
    assert a.losses == b.losses
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert [s for s, _ in a.logged] == [0, 10, 20] == seen
    c = train_toy(data, CFG, 25, seed=6)
    assert c.losses != a.losses


def test_training_errors():
    with pytest.raises(ValueError, match="empty"):
        train_toy([], CFG, 1)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_aborts_with_report():
    rng = np.random.default_rng(4)
    pos = rng.uniform(0, 1.5, size=(200, 3))
    ps = PointSet(pos, np.full((200, 2), 1.7e308), rng.integers(1, 3, size=200))
    with pytest.raises(TrainingDiverged, match="step 0"):
        train_toy([TrainingSample(ps, ps)], CFG, 5)
