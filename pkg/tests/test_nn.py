import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from svbench.nn import (
    Adam,
    ChecksumError,
    ModelSpec,
    Network,
    TrainConfig,
    VersionError,
    load_bundle,
    save_bundle,
    train,
)
from svbench.nn.layers import softmax, weighted_cross_entropy
from svbench.preprocess import WindowedDataset, fit_scaler

from oracles import gradient_check, max_relative_error, numeric_gradients, small_spec


@pytest.mark.parametrize("arch", ["mlp", "cnn1d"])
@pytest.mark.parametrize("seed", range(20))
def test_gradients_match_finite_differences(arch, seed):
    assert gradient_check(arch, seed) <= 1e-4


def test_three_parameter_net_gradient():
    # one input, no biases: W1 (1x1) and W2 (1x2)
    spec = ModelSpec.mlp(n_classes=2, window_length=1, n_channels=1, hidden=(1,), bias=False)
    net = Network.create(spec, seed=3, dtype=np.float64)
    assert net.n_params == 3
    net.params[0][...] = 0.7  # keep the ReLU active
    x = np.array([[[1.3]], [[0.4]]])
    y = np.array([0, 1])
    w = np.ones(2)
    _, grads = net.loss_and_gradients(x, y, w)
    assert max_relative_error(grads, numeric_gradients(net, x, y, w)) <= 1e-4


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31), arch=st.sampled_from(["mlp", "cnn1d"]))
def test_probability_rows_sum_to_one(seed, arch):
    r = np.random.default_rng(seed)
    spec = small_spec(arch, r)
    net = Network.create(spec, seed=seed)
    x = r.normal(0, 3, size=(5, spec.window_length, spec.n_channels))
    p = net.forward(x)
    assert np.all(np.abs(p.sum(axis=1) - 1) <= 1e-6) and np.all(p >= 0)


def test_zero_network_is_uniform():
    net = Network.create(ModelSpec.mlp())
    net.set_params([np.zeros_like(p) for p in net.params])
    p = net.forward(np.random.default_rng(0).normal(size=(3, 50, 14)))
    np.testing.assert_allclose(p, 1 / 18, atol=1e-7)


def test_golden_vectors():
    # recorded from the reference build; float32 arithmetic
    mlp = Network.create(ModelSpec.mlp(n_classes=3, window_length=4, n_channels=2, hidden=(5,)), seed=42)
    np.testing.assert_allclose(mlp.forward(np.linspace(-1, 1, 8).reshape(1, 4, 2))[0],
                               [0.3967828154563904, 0.2851758897304535, 0.3180413246154785], atol=1e-6)
    cnn = Network.create(ModelSpec.cnn1d(n_classes=3, window_length=6, n_channels=2, filters=(4,), kernel=3),
                         seed=42)
    np.testing.assert_allclose(cnn.forward(np.linspace(-1, 1, 12).reshape(1, 6, 2))[0],
                               [0.4357806146144867, 0.3989802896976471, 0.1652391105890274], atol=1e-6)


def test_default_parameter_counts():
    # 700*128+128 + 128*64+64 + 64*18+18
    assert Network.create(ModelSpec.mlp()).n_params == 99_154
    # 5*14*32+32 + 5*32*64+64 + 64*18+18
    assert Network.create(ModelSpec.cnn1d()).n_params == 13_746


def test_uniform_logits_loss_is_log_k():
    loss, _ = weighted_cross_entropy(np.zeros((4, 18)), np.array([0, 5, 9, 17]), np.ones(18))
    assert loss == pytest.approx(math.log(18)) and round(loss, 4) == 2.8904


def test_doubling_weights_doubles_loss_and_gradients():
    spec = ModelSpec.mlp(n_classes=4, window_length=3, n_channels=2, hidden=(6,))
    net = Network.create(spec, seed=1, dtype=np.float64)
    r = np.random.default_rng(1)
    x, y = r.normal(size=(7, 3, 2)), r.integers(0, 4, 7)
    w = r.uniform(0.2, 3, 4)
    l1, g1 = net.loss_and_gradients(x, y, w)
    l2, g2 = net.loss_and_gradients(x, y, 2 * w)
    assert l2 == pytest.approx(2 * l1, rel=1e-12)
    for a, b in zip(g1, g2):
        np.testing.assert_allclose(b, 2 * a, rtol=1e-12, atol=1e-15)


def test_loss_errors():
    net = Network.create(ModelSpec.mlp(n_classes=3, window_length=2, n_channels=1, hidden=(2,)))
    with pytest.raises(ValueError, match="labels"):
        net.loss_and_gradients(np.zeros((1, 2, 1)), np.array([3]))
    with pytest.raises(ValueError, match="non-finite"):
        net.forward(np.full((1, 2, 1), np.nan))
    with pytest.raises(ValueError, match="shape"):
        net.forward(np.zeros((1, 3, 1)))
    big = Network.create(ModelSpec.mlp(n_classes=3, window_length=2, n_channels=1, hidden=(2,)),
                         dtype=np.float64)
    big.set_params([np.full_like(p, 1e300) for p in big.params])
    with pytest.raises(FloatingPointError):
        with np.errstate(all="ignore"):
            big.loss_and_gradients(np.ones((1, 2, 1)), np.array([0]))


def test_softmax_is_shift_invariant():
    z = np.array([[1.0, 2.0, 3.0]])
    np.testing.assert_allclose(softmax(z), softmax(z + 1000.0))


def test_adam_first_step_is_lr_sign():
    p = np.array([0.5])
    Adam([p], lr=1e-3).step([p], [np.array([1.0])])
    assert p[0] - 0.5 == pytest.approx(-1e-3, rel=1e-6)


def test_adam_zero_gradient():
    p = np.array([1.0, -2.0])
    opt = Adam([p])
    opt.step([p], [np.array([3.0, 3.0])])
    m0, v0, snapshot = opt.m[0].copy(), opt.v[0].copy(), p.copy()
    opt.step([p], [np.zeros(2)])
    np.testing.assert_array_equal(opt.m[0], 0.9 * m0)
    np.testing.assert_array_equal(opt.v[0], 0.999 * v0)
    # m is still nonzero, so params keep moving, but a fresh zero-gradient optimizer stays put
    q = np.array([1.0, -2.0])
    Adam([q]).step([q], [np.zeros(2)])
    np.testing.assert_array_equal(q, [1.0, -2.0])
    assert not np.array_equal(p, snapshot)


def test_adam_two_steps_match_hand_recursion():
    a, x0, lr, b1, b2, eps = 3.0, 2.0, 0.1, 0.9, 0.999, 1e-8
    x, m, v = x0, 0.0, 0.0
    for t in (1, 2):
        g = a * x
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    p = np.array([x0])
    opt = Adam([p], lr=lr)
    for _ in range(2):
        opt.step([p], [a * p.copy()])
    assert abs(p[0] - x) <= 1e-9


def test_adam_shape_mismatch():
    p = np.zeros(3)
    with pytest.raises(ValueError):
        Adam([p]).step([p], [np.zeros(2)])


def toy_stream(seed, n_windows=300, length=4, channels=2):
    """Homogeneous non-overlapping windows; class 1 sits at +1.5 on channel 0."""
    r = np.random.default_rng(seed)
    cls = r.integers(0, 2, n_windows)
    frame_cls = np.repeat(cls, length)
    frames = r.normal(0, 0.3, (n_windows * length, channels))
    frames[:, 0] += np.where(frame_cls == 1, 1.5, -1.5)
    starts = np.arange(n_windows) * length
    return WindowedDataset(frames, frame_cls, starts, length, length)


def logistic_oracle_accuracy(data):
    x = data.windows.reshape(len(data), -1)
    x = np.column_stack([x, np.ones(len(x))])
    y = data.labels
    w = np.zeros(x.shape[1])
    for _ in range(2000):
        p = 1 / (1 + np.exp(-x @ w))
        w -= 0.5 * x.T @ (p - y) / len(y)
    return float(np.mean((x @ w > 0) == (y == 1)))


def test_toy_separable_training():
    tr, va = toy_stream(0), toy_stream(1, 100)
    assert logistic_oracle_accuracy(tr) == 1.0 and logistic_oracle_accuracy(va) == 1.0
    spec = ModelSpec.mlp(n_classes=2, window_length=4, n_channels=2, hidden=(8,))
    net, hist = train(spec, tr, va, TrainConfig(epochs=5, batch_size=16, learning_rate=1e-2))
    assert len(hist.val_accuracy) <= 5
    assert max(hist.val_accuracy) >= 0.99


def test_patience_zero_stops_one_epoch_after_best():
    tr = toy_stream(0)
    va = toy_stream(1, 100)
    va.frame_labels = 1 - va.frame_labels  # the better it fits train, the worse validation gets
    spec = ModelSpec.mlp(n_classes=2, window_length=4, n_channels=2, hidden=(8,))
    net, hist = train(spec, tr, va, TrainConfig(epochs=20, batch_size=16, learning_rate=1e-2, patience=0))
    assert hist.best_epoch == 0 and len(hist.val_loss) == 2 and hist.stopped_early
    assert hist.val_loss[1] > hist.val_loss[0]


def test_training_is_seeded():
    tr, va = toy_stream(0), toy_stream(1, 100)
    spec = ModelSpec.mlp(n_classes=2, window_length=4, n_channels=2, hidden=(8,))
    cfg = TrainConfig(epochs=3, batch_size=16)
    a, ha = train(spec, tr, va, cfg)
    b, hb = train(spec, tr, va, cfg)
    assert ha.val_loss == hb.val_loss
    assert all(np.array_equal(p, q) for p, q in zip(a.params, b.params))


def test_lr_reduced_on_plateau():
    tr = toy_stream(0)
    va = toy_stream(1, 100)
    va.frame_labels = 1 - va.frame_labels
    spec = ModelSpec.mlp(n_classes=2, window_length=4, n_channels=2, hidden=(8,))
    _, hist = train(spec, tr, va, TrainConfig(epochs=20, batch_size=16, patience=5, lr_patience=3))
    assert hist.learning_rate[:4] == [1e-3] * 4 and hist.learning_rate[4] == 5e-4


@pytest.mark.parametrize("arch", ["mlp", "cnn1d"])
def test_bundle_round_trip_is_bit_identical(tmp_path, arch):
    net = Network.create(ModelSpec(architecture=arch), seed=5)
    scaler = fit_scaler(np.random.default_rng(0).normal(size=(200, 14)))
    path = tmp_path / "m.svbm"
    save_bundle(path, net, scaler, {0: "Normal"}, {"seed": 5})
    b = load_bundle(path)
    x = np.random.default_rng(1).normal(size=(4, 50, 14)).astype(np.float32)
    assert np.array_equal(net.forward(x), b.network.forward(x))
    assert b.scaler == scaler and b.class_labels == {0: "Normal"} and b.metadata == {"seed": 5}
    assert b.spec == net.spec


def test_truncated_bundle(tmp_path):
    net = Network.create(ModelSpec.cnn1d())
    path = tmp_path / "m.svbm"
    save_bundle(path, net, fit_scaler(np.zeros((2, 14))))
    data = path.read_bytes()
    path.write_bytes(data[:-10])
    with pytest.raises(ChecksumError):
        load_bundle(path)
    path.write_bytes(data[:5])
    with pytest.raises(ChecksumError):
        load_bundle(path)


def test_bundle_version_mismatch(tmp_path):
    net = Network.create(ModelSpec.cnn1d())
    path = tmp_path / "m.svbm"
    save_bundle(path, net, fit_scaler(np.zeros((2, 14))))
    data = bytearray(path.read_bytes())
    data[8:10] = (2).to_bytes(2, "little")
    path.write_bytes(bytes(data))
    with pytest.raises(VersionError):
        load_bundle(path)
