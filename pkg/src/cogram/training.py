"""Minibatch training for the dense networks: SGD with momentum and Adam.

Runs are deterministic: the seed drives init-free training (the caller
seeds the initial network separately) and the per-epoch shuffle, so the
same (net, data, config, seed) always produces bit-identical parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import net as netmod
from .net import Gradients, Network
from .synthdata import Dataset


@dataclass
class OptimizerConfig:
    kind: str = "adam"                    # "sgd_momentum" | "adam"
    learning_rate: float = 1e-3
    momentum: float = 0.9                 # sgd only
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    clip_norm: float | None = None        # global L2 ceiling, optional

    def __post_init__(self):
        if self.kind not in ("sgd_momentum", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be > 0")


@dataclass
class TrainReport:
    epoch_losses: list[float]
    final_train_accuracy: float
    final_test_accuracy: float | None
    epochs_run: int
    seed: int


@dataclass
class OptimizerState:
    config: OptimizerConfig
    step: int = 0
    velocity_w: list[np.ndarray] = field(default_factory=list)
    velocity_b: list[np.ndarray] = field(default_factory=list)
    second_w: list[np.ndarray] = field(default_factory=list)
    second_b: list[np.ndarray] = field(default_factory=list)


def init_optimizer_state(config: OptimizerConfig, net: Network) -> OptimizerState:
    zeros_w = [np.zeros_like(l.weights) for l in net.layers]
    zeros_b = [np.zeros_like(l.biases) for l in net.layers]
    state = OptimizerState(config=config, velocity_w=zeros_w, velocity_b=zeros_b)
    if config.kind == "adam":
        state.second_w = [np.zeros_like(l.weights) for l in net.layers]
        state.second_b = [np.zeros_like(l.biases) for l in net.layers]
    return state


def clip_gradients(g: Gradients, clip_norm: float) -> Gradients:
    """Scale the gradient down so its global L2 norm is at most clip_norm."""
    if clip_norm <= 0:
        raise ValueError("clip_norm must be > 0")
    norm = g.global_norm()
    if norm <= clip_norm:
        return g
    return g.scaled(clip_norm / norm)


def optimizer_step(
    state: OptimizerState, net: Network, g: Gradients
) -> tuple[Network, OptimizerState]:
    """One update. SGD: v <- mu*v - lr*g, theta <- theta + v. Adam: bias-corrected."""
    cfg = state.config
    for gw, gb, layer in zip(g.weights, g.biases, net.layers):
        if gw.shape != layer.weights.shape or gb.shape != layer.biases.shape:
            raise netmod.ShapeError("gradient shapes do not match the network")
    new_layers = []
    if cfg.kind == "sgd_momentum":
        for k, layer in enumerate(net.layers):
            state.velocity_w[k] = cfg.momentum * state.velocity_w[k] - cfg.learning_rate * g.weights[k]
            state.velocity_b[k] = cfg.momentum * state.velocity_b[k] - cfg.learning_rate * g.biases[k]
            new_layers.append(
                netmod.DenseLayer(
                    layer.weights + state.velocity_w[k],
                    layer.biases + state.velocity_b[k],
                    layer.activation,
                )
            )
    else:
        state.step += 1
        b1, b2 = cfg.betas
        corr1 = 1.0 - b1 ** state.step
        corr2 = 1.0 - b2 ** state.step
        for k, layer in enumerate(net.layers):
            state.velocity_w[k] = b1 * state.velocity_w[k] + (1 - b1) * g.weights[k]
            state.velocity_b[k] = b1 * state.velocity_b[k] + (1 - b1) * g.biases[k]
            state.second_w[k] = b2 * state.second_w[k] + (1 - b2) * g.weights[k] ** 2
            state.second_b[k] = b2 * state.second_b[k] + (1 - b2) * g.biases[k] ** 2
            step_w = cfg.learning_rate * (state.velocity_w[k] / corr1) / (
                np.sqrt(state.second_w[k] / corr2) + cfg.eps
            )
            step_b = cfg.learning_rate * (state.velocity_b[k] / corr1) / (
                np.sqrt(state.second_b[k] / corr2) + cfg.eps
            )
            new_layers.append(
                netmod.DenseLayer(
                    layer.weights - step_w, layer.biases - step_b, layer.activation
                )
            )
    return Network(new_layers, net.input_dim, net.num_classes), state


def accuracy(net: Network, dataset: Dataset) -> float:
    """Fraction of samples whose argmax logit hits the label; ties go to the
    lowest class index."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    logits = netmod.forward(net, dataset.features)
    return float(np.mean(np.argmax(logits, axis=1) == dataset.labels))


def train(
    net: Network,
    dataset: Dataset,
    optimizer_config: OptimizerConfig,
    epochs: int,
    batch_size: int = 64,
    seed: int = 0,
    test_data: Dataset | None = None,
) -> tuple[Network, TrainReport]:
    """Seeded minibatch training; per-epoch reshuffles come from the seed."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if np.any(dataset.labels < 0) or np.any(dataset.labels >= dataset.num_classes):
        raise ValueError("labels out of range for num_classes")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = np.random.default_rng(seed)
    targets = dataset.one_hot()
    n = len(dataset)
    state = init_optimizer_state(optimizer_config, net)
    epoch_losses: list[float] = []
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            loss, grads = netmod.backward_arrays(
                net, dataset.features[idx], targets[idx], loss="cross_entropy"
            )
            if optimizer_config.clip_norm is not None:
                grads = clip_gradients(grads, optimizer_config.clip_norm)
            net, state = optimizer_step(state, net, grads)
            total += loss * len(idx)
        epoch_losses.append(total / n)
    report = TrainReport(
        epoch_losses=epoch_losses,
        final_train_accuracy=accuracy(net, dataset),
        final_test_accuracy=accuracy(net, test_data) if test_data is not None else None,
        epochs_run=epochs,
        seed=int(seed),
    )
    return net, report
