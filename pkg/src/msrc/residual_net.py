"""Parallel residual groups over reconstruction-error vectors and the classifier head.

An error vector of width ``d`` is handled as a one-channel sequence of
length ``d``.  Inside a group the same vector is fed to ``n`` residual blocks
of depth 1..n; their outputs are concatenated and projected by a dense layer.
The head concatenates every scale's group output and emits a sigmoid score.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric_core import (
    SGD,
    Activation,
    BatchNorm,
    Conv1d,
    Dense,
    NonFiniteError,
    Sequential,
    ShapeError,
    bce_loss,
    iterate_minibatches,
)
from .sae import StackedAutoencoder, error_vectors


@dataclass
class ResidualConfig:
    n_blocks: int = 3
    channels: int = 8
    kernel_width: int = 3
    group_width: int = 32
    threshold: float = 0.5


@dataclass
class SupervisedConfig:
    epochs: int = 30
    lr: float = 0.05
    batch_size: int = 64
    momentum: float = 0.9
    seed: int = 0


class ResidualBlock:
    """``y = F(e) + e`` where ``F`` is ``depth`` x (conv -> BN -> ReLU) then a 1x1 conv back to one channel."""

    def __init__(self, depth: int, channels: int = 8, width: int = 3, rng=None):
        if depth < 1:
            raise ValueError(f"block depth must be >= 1, got {depth}")
        rng = rng if rng is not None else np.random.default_rng(0)
        layers = []
        for i in range(depth):
            layers += [Conv1d(1 if i == 0 else channels, channels, width, rng, bias=False),
                       BatchNorm(channels), Activation("relu")]
        layers.append(Conv1d(channels, 1, 1, rng))
        self.depth = depth
        self.body = Sequential(layers)

    def named_layers(self, prefix=""):
        yield from self.body.named_layers(prefix)

    def forward(self, e, train=True):
        e = np.asarray(e, dtype=float)
        if e.ndim != 2:
            raise ShapeError(f"residual block expects (batch, width) input, got shape {e.shape}")
        x = e[:, None, :]
        return (self.body.forward(x, train) + x)[:, 0, :]

    def backward(self, grad):
        g = grad[:, None, :]
        return (self.body.backward(g) + g)[:, 0, :]


class ResidualGroup:
    def __init__(self, width: int, n_blocks: int = 3, channels: int = 8, kernel_width: int = 3,
                 out_width: int = 32, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.width = width
        self.blocks = [ResidualBlock(i + 1, channels, kernel_width, rng) for i in range(n_blocks)]
        self.fc = Dense(n_blocks * width, out_width, "linear", rng)

    @property
    def out_width(self) -> int:
        return self.fc.n_out

    def named_layers(self, prefix=""):
        for i, block in enumerate(self.blocks):
            yield from block.named_layers(f"{prefix}block{i}.")
        yield f"{prefix}fc", self.fc

    def compose(self, e, train=True) -> np.ndarray:
        """Mirror ``e`` to every block and concatenate the block outputs."""
        e = np.asarray(e, dtype=float)
        if e.ndim != 2 or e.shape[1] != self.width:
            raise ShapeError(f"residual group input: got shape {e.shape}, expected (batch, {self.width})")
        return np.concatenate([b.forward(e, train) for b in self.blocks], axis=1)

    def forward(self, e, train=True):
        return self.fc.forward(self.compose(e, train), train)

    def backward(self, grad):
        gcat = self.fc.backward(grad)
        parts = np.split(gcat, len(self.blocks), axis=1)
        return sum(b.backward(g) for b, g in zip(self.blocks, parts))


class ClassifierHead:
    def __init__(self, n_in: int, threshold: float = 0.5, rng=None):
        self.fc = Dense(n_in, 1, "sigmoid", rng)
        self.threshold = threshold

    def named_layers(self, prefix=""):
        yield f"{prefix}fc", self.fc

    def forward(self, features, train=True) -> np.ndarray:
        return self.fc.forward(features, train)[:, 0]

    def backward(self, grad):
        return self.fc.backward(grad[:, None])


def block_forward(block: ResidualBlock, e, train: bool = False) -> np.ndarray:
    return block.forward(e, train)


def group_forward(group: ResidualGroup, e, train: bool = False) -> np.ndarray:
    return group.forward(e, train)


def classify(head: ClassifierHead, group_outputs, train: bool = False):
    """Score and label records from the per-scale group outputs ``E_1..E_m``.

    Label is 1 (anomaly) when the score is at least the head's threshold.
    """
    feats = np.concatenate([np.atleast_2d(np.asarray(E, dtype=float)) for E in group_outputs], axis=1)
    if feats.shape[1] != head.fc.n_in:
        raise ShapeError(f"classifier input width {feats.shape[1]} does not match head width {head.fc.n_in}")
    score = head.forward(feats, train)
    return score, (score >= head.threshold).astype(int)


class MSRC:
    """k frozen SAEs -> k residual groups -> concatenation -> sigmoid head."""

    def __init__(self, saes: list[StackedAutoencoder], width: int, cfg: ResidualConfig | None = None,
                 seed: int = 0):
        cfg = cfg or ResidualConfig()
        self.cfg, self.seed, self.width = cfg, seed, width
        self.saes = list(saes)
        rng = np.random.default_rng(seed)
        self.groups = [
            ResidualGroup(width, cfg.n_blocks, cfg.channels, cfg.kernel_width, cfg.group_width, rng)
            for _ in self.saes
        ]
        self.head = ClassifierHead(cfg.group_width * len(self.groups), cfg.threshold, rng)

    @property
    def k(self) -> int:
        return len(self.groups)

    def named_layers(self):
        """Trainable part only (groups and head); SAEs are frozen."""
        for j, group in enumerate(self.groups):
            yield from group.named_layers(f"group{j}.")
        yield from self.head.named_layers("head.")

    def error_features(self, levels) -> list[np.ndarray]:
        """Per-scale error vectors for inputs shaped ``(k, batch, d)``."""
        if len(levels) != self.k:
            raise ShapeError(f"expected {self.k} scales of input, got {len(levels)}")
        return [error_vectors(sae, x) for sae, x in zip(self.saes, levels)]

    def forward_errors(self, errors, train=True) -> np.ndarray:
        if len(errors) != self.k:
            raise ShapeError(f"expected {self.k} error blocks, got {len(errors)}")
        outs = [g.forward(e, train) for g, e in zip(self.groups, errors)]
        return self.head.forward(np.concatenate(outs, axis=1), train)

    def backward(self, grad_scores) -> list[np.ndarray]:
        gfeat = self.head.backward(grad_scores)
        parts = np.split(gfeat, self.k, axis=1)
        return [g.backward(p) for g, p in zip(self.groups, parts)]

    def score_errors(self, errors, batch_size: int = 4096) -> np.ndarray:
        n = errors[0].shape[0]
        return np.concatenate(
            [self.forward_errors([e[s : s + batch_size] for e in errors], train=False)
             for s in range(0, n, batch_size)]
        ) if n else np.zeros(0)

    def predict(self, levels):
        scores = self.score_errors(self.error_features(levels))
        return scores, (scores >= self.cfg.threshold).astype(int)


def _sae_snapshot(model: MSRC) -> list[np.ndarray]:
    return [p.copy() for sae in model.saes for p in sae.parameters()]


def train_supervised(model: MSRC, levels, labels, cfg: SupervisedConfig | None = None,
                     errors=None) -> list[float]:
    """Fit groups and head with binary cross-entropy on record labels.

    ``levels`` is ``(k, N, d)``; the frozen SAEs turn it into error vectors
    once, unless precomputed ``errors`` are passed.  Returns the mean loss of
    each epoch.
    """
    cfg = cfg or SupervisedConfig()
    if cfg.epochs < 0 or not cfg.lr > 0:
        raise ValueError(f"invalid supervised config: epochs={cfg.epochs}, lr={cfg.lr}")
    y = np.asarray(labels, dtype=float)
    before = _sae_snapshot(model)
    if errors is None:
        errors = model.error_features(levels)
    rng = np.random.default_rng(cfg.seed)
    opt = SGD(model, cfg.lr, cfg.momentum)
    history = []
    for epoch in range(cfg.epochs):
        total = 0.0
        for idx in iterate_minibatches(len(y), cfg.batch_size, rng):
            if len(idx) < 2:
                continue  # batch statistics need two samples
            scores = model.forward_errors([e[idx] for e in errors], train=True)
            loss, grad = bce_loss(scores, y[idx])
            if not np.isfinite(loss):
                raise NonFiniteError(f"supervised training: non-finite loss at epoch {epoch}")
            model.backward(grad)
            opt.step()
            total += loss * len(idx)
        history.append(total / max(len(y), 1))
    after = _sae_snapshot(model)
    assert all(np.array_equal(a, b) for a, b in zip(before, after)), "SAE parameters changed during supervised training"
    return history
