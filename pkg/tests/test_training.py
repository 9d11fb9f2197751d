import numpy as np
import pytest

from cogram import net as netmod
from cogram.net import Gradients, random_network
from cogram.synthdata import Dataset
from cogram.training import (
    OptimizerConfig,
    accuracy,
    clip_gradients,
    init_optimizer_state,
    optimizer_step,
    train,
)


def _grads_like(net, value):
    return Gradients(
        weights=[np.full_like(l.weights, value) for l in net.layers],
        biases=[np.full_like(l.biases, value) for l in net.layers],
    )


def _random_grads(net, rng):
    return Gradients(
        weights=[rng.normal(size=l.weights.shape) for l in net.layers],
        biases=[rng.normal(size=l.biases.shape) for l in net.layers],
    )


def _params_flat(net):
    return np.concatenate([l.weights.ravel() for l in net.layers]
                          + [l.biases.ravel() for l in net.layers])


def _toy_separable(n=100, seed=0):
    rng = np.random.default_rng(seed)
    half = n // 2
    x0 = rng.normal([-2.0, 0.0], 0.3, size=(half, 2))
    x1 = rng.normal([2.0, 0.0], 0.3, size=(n - half, 2))
    return Dataset(np.vstack([x0, x1]),
                   np.array([0] * half + [1] * (n - half)), 2)


# --- clip_gradients -------------------------------------------------------------


def test_clip_noop_under_threshold():
    net = random_network([3, 2], seed=0)
    g = _grads_like(net, 0.05)  # norm ~ 0.16
    assert g.global_norm() < 1.0
    clipped = clip_gradients(g, 1.0)
    for a, b in zip(clipped.weights + clipped.biases, g.weights + g.biases):
        assert np.array_equal(a, b)


def test_clip_scales_homogeneously():
    net = random_network([4, 4], seed=1)
    g = _random_grads(net, np.random.default_rng(2))
    norm = g.global_norm()
    clipped = clip_gradients(g, norm / 10.0)
    assert abs(clipped.global_norm() - norm / 10.0) < 1e-12
    for a, b in zip(clipped.weights + clipped.biases, g.weights + g.biases):
        assert np.allclose(a * 10.0, b, rtol=1e-12)


def test_clip_zero_gradients_safe():
    net = random_network([3, 2], seed=0)
    g = _grads_like(net, 0.0)
    clipped = clip_gradients(g, 1.0)
    assert clipped.global_norm() == 0.0


def test_clip_preserves_direction():
    net = random_network([4, 3], seed=3)
    g = _random_grads(net, np.random.default_rng(4))
    clipped = clip_gradients(g, g.global_norm() / 7.0)
    a = np.concatenate([x.ravel() for x in g.weights + g.biases])
    b = np.concatenate([x.ravel() for x in clipped.weights + clipped.biases])
    cos = np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b))
    assert abs(cos - 1.0) < 1e-12


def test_clip_rejects_bad_norm():
    net = random_network([3, 2], seed=0)
    with pytest.raises(ValueError):
        clip_gradients(_grads_like(net, 1.0), 0.0)


# --- optimizer_step --------------------------------------------------------------


def test_sgd_without_momentum_is_vanilla():
    net = random_network([3, 2], seed=0)
    cfg = OptimizerConfig(kind="sgd_momentum", learning_rate=0.1, momentum=0.0)
    state = init_optimizer_state(cfg, net)
    stepped, _ = optimizer_step(state, net, _grads_like(net, 1.0))
    assert np.allclose(_params_flat(stepped), _params_flat(net) - 0.1, atol=1e-15)


def test_sgd_momentum_second_step_displacement():
    net = random_network([3, 2], seed=0)
    cfg = OptimizerConfig(kind="sgd_momentum", learning_rate=0.1, momentum=0.9)
    state = init_optimizer_state(cfg, net)
    g = _grads_like(net, 1.0)
    step1, state = optimizer_step(state, net, g)
    step2, state = optimizer_step(state, step1, g)
    d1 = _params_flat(step1) - _params_flat(net)
    d2 = _params_flat(step2) - _params_flat(step1)
    assert np.allclose(d2, 1.9 * d1, rtol=1e-12)


def test_adam_first_step_magnitude_is_lr():
    net = random_network([4, 3], seed=1)
    cfg = OptimizerConfig(kind="adam", learning_rate=1e-3)
    state = init_optimizer_state(cfg, net)
    stepped, _ = optimizer_step(state, net, _grads_like(net, 0.5))
    deltas = np.abs(_params_flat(stepped) - _params_flat(net))
    assert np.allclose(deltas, cfg.learning_rate, rtol=1e-6)


def test_optimizer_step_shape_mismatch():
    net = random_network([4, 3], seed=1)
    other = random_network([5, 3], seed=1)
    cfg = OptimizerConfig(kind="adam", learning_rate=1e-3)
    state = init_optimizer_state(cfg, net)
    with pytest.raises(netmod.ShapeError):
        optimizer_step(state, net, _grads_like(other, 1.0))


def test_optimizer_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(kind="adagrad")
    with pytest.raises(ValueError):
        OptimizerConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        OptimizerConfig(kind="sgd_momentum", momentum=1.0)
    with pytest.raises(ValueError):
        OptimizerConfig(clip_norm=-1.0)


# --- train -----------------------------------------------------------------------


def test_train_zero_epochs_is_identity():
    data = _toy_separable()
    net = random_network([2, 4, 2], seed=5)
    trained, report = train(net, data, OptimizerConfig(), epochs=0)
    assert netmod.parameters_equal(net, trained)
    assert report.epochs_run == 0 and report.epoch_losses == []


def test_train_learns_separable_toy_task():
    data = _toy_separable()
    net = random_network([2, 16, 2], seed=6)
    cfg = OptimizerConfig(kind="adam", learning_rate=1e-2)
    trained, report = train(net, data, cfg, epochs=50, batch_size=32, seed=7)
    assert report.final_train_accuracy >= 0.95
    assert report.epoch_losses[-1] < report.epoch_losses[0]


def test_train_determinism():
    data = _toy_separable(seed=1)
    cfg = OptimizerConfig(kind="sgd_momentum", learning_rate=5e-3)
    runs = []
    for _ in range(2):
        net = random_network([2, 8, 2], seed=9)
        runs.append(train(net, data, cfg, epochs=5, batch_size=16, seed=11))
    (net1, rep1), (net2, rep2) = runs
    assert netmod.parameters_equal(net1, net2)
    assert rep1 == rep2


def test_train_with_clipping_and_test_split():
    data = _toy_separable(seed=2)
    test = _toy_separable(seed=3)
    cfg = OptimizerConfig(kind="adam", learning_rate=1e-2, clip_norm=0.5)
    net = random_network([2, 8, 2], seed=10)
    _, report = train(net, data, cfg, epochs=20, batch_size=25, seed=12, test_data=test)
    assert report.final_test_accuracy is not None
    assert 0.0 <= report.final_test_accuracy <= 1.0


def test_train_rejects_empty_and_bad_labels():
    net = random_network([2, 2], seed=0)
    with pytest.raises(ValueError):
        train(net, Dataset(np.zeros((0, 2)), np.zeros(0, dtype=int), 2),
              OptimizerConfig(), epochs=1)
    bad = Dataset(np.zeros((3, 2)), np.array([0, 1, 5]), 2)
    with pytest.raises(ValueError):
        train(net, bad, OptimizerConfig(), epochs=1)


# --- accuracy ---------------------------------------------------------------------


def test_accuracy_constant_predictor():
    net = netmod.Network(
        [netmod.DenseLayer(np.zeros((3, 4)), np.array([5.0, 0.0, 0.0]), "identity")], 4, 3
    )
    data = Dataset(np.random.default_rng(0).normal(size=(10, 4)),
                   np.zeros(10, dtype=int), 3)
    assert accuracy(net, data) == 1.0


def test_accuracy_tie_break_goes_to_lowest_class():
    c, n_per = 20, 5
    net = netmod.Network(
        [netmod.DenseLayer(np.zeros((c, 8)), np.zeros(c), "identity")], 8, c
    )
    feats = np.random.default_rng(1).normal(size=(c * n_per, 8))
    labels = np.repeat(np.arange(c), n_per)
    assert accuracy(net, Dataset(feats, labels, c)) == 1.0 / c


def test_accuracy_bounds_random_nets():
    rng = np.random.default_rng(2)
    data = Dataset(rng.normal(size=(30, 6)), rng.integers(0, 4, size=30), 4)
    for seed in range(5):
        acc = accuracy(random_network([6, 5, 4], seed), data)
        assert 0.0 <= acc <= 1.0


def test_accuracy_rejects_empty():
    net = random_network([2, 2], seed=0)
    with pytest.raises(ValueError):
        accuracy(net, Dataset(np.zeros((0, 2)), np.zeros(0, dtype=int), 2))
