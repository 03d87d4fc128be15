"""Stacked autoencoder trained on normal traffic only.

The SAE defines the "normal" feature space: records it reconstructs badly get
large reconstruction-error vectors, and those vectors are what the residual
classifier consumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric_core import (
    SGD,
    Dense,
    NonFiniteError,
    ShapeError,
    bce_loss,
    iterate_minibatches,
    mse_loss,
)

REFERENCE_DIMS = (150, 110, 90, 64)


@dataclass
class TrainConfig:
    epochs: int = 50
    lr: float = 0.01
    batch_size: int = 64
    seed: int = 0
    momentum: float = 0.0
    loss: str = "mse"

    def validate(self) -> None:
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if not self.lr > 0:
            raise ValueError(f"learning rate must be > 0, got {self.lr}")
        if self.loss not in ("mse", "bce"):
            raise ValueError(f"loss must be 'mse' or 'bce', got {self.loss!r}")


def scaled_dims(d: int, base=REFERENCE_DIMS) -> list[int]:
    """Layer widths for input width ``d`` keeping the 150:110:90:64 ratios."""
    return [d] + [max(1, int(round(d * w / base[0]))) for w in base[1:]]


class Autoencoder:
    def __init__(self, n_in: int, n_hidden: int, output_activation: str, rng: np.random.Generator):
        self.encoder = Dense(n_in, n_hidden, "relu", rng)
        self.decoder = Dense(n_hidden, n_in, output_activation, rng)

    def named_layers(self, prefix=""):
        yield f"{prefix}encoder", self.encoder
        yield f"{prefix}decoder", self.decoder

    def forward(self, x):
        return self.decoder.forward(self.encoder.forward(x))

    def backward(self, grad):
        return self.encoder.backward(self.decoder.backward(grad))


class StackedAutoencoder:
    """Encoders applied front to back, decoders back to front.

    The outermost decoder (which reproduces the input record) uses a sigmoid
    since inputs live in [0, 1]; inner decoders reproduce unbounded ReLU codes
    and are linear, so no output unit can die.
    """

    def __init__(self, dims, seed: int = 0):
        dims = [int(v) for v in dims]
        if len(dims) < 2:
            raise ValueError(f"SAE needs at least an input and one hidden width, got {dims}")
        self.dims = dims
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.aes = [
            Autoencoder(dims[i], dims[i + 1], "sigmoid" if i == 0 else "linear", rng)
            for i in range(len(dims) - 1)
        ]

    def config(self) -> dict:
        return {"dims": self.dims, "seed": self.seed}

    def named_layers(self):
        for i, ae in enumerate(self.aes):
            yield from ae.named_layers(f"ae{i}.")

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[-1] != self.dims[0]:
            raise ShapeError(f"SAE input width {x.shape[-1]} does not match layer_dims[0]={self.dims[0]}")
        return x

    def encode(self, x) -> np.ndarray:
        h = self._check(x)
        for ae in self.aes:
            h = ae.encoder.forward(h)
        return h

    def decode(self, h) -> np.ndarray:
        for ae in reversed(self.aes):
            h = ae.decoder.forward(h)
        return h

    def reconstruct(self, x) -> np.ndarray:
        return self.decode(self.encode(x))

    # full-chain forward/backward used by fine-tuning and gradient checks
    def forward(self, x) -> np.ndarray:
        return self.reconstruct(x)

    def backward(self, grad) -> np.ndarray:
        for ae in self.aes:
            grad = ae.decoder.backward(grad)
        for ae in reversed(self.aes):
            grad = ae.encoder.backward(grad)
        return grad

    def parameters(self) -> list[np.ndarray]:
        return [layer.params[k] for _, layer in self.named_layers() for k in layer.params]


def reconstruction_error(x, x_rec) -> np.ndarray:
    """Elementwise ``|x - x_rec|``."""
    x, x_rec = np.asarray(x, dtype=float), np.asarray(x_rec, dtype=float)
    if x.shape != x_rec.shape:
        raise ShapeError(f"reconstruction_error: widths differ, {x.shape} vs {x_rec.shape}")
    return np.abs(x - x_rec)


def error_vectors(sae: StackedAutoencoder, x) -> np.ndarray:
    x = sae._check(x)
    return reconstruction_error(x, sae.reconstruct(x))


def _require_normal(rows, labels):
    rows = np.asarray(rows, dtype=float)
    if labels is not None and np.any(np.asarray(labels) != 0):
        raise ValueError("SAE training data must contain only normal records (found anomaly labels)")
    return rows


def _run_epochs(model, inputs, targets, cfg: TrainConfig, loss_fn, stage: str) -> list[float]:
    rng = np.random.default_rng(cfg.seed)
    opt = SGD(model, cfg.lr, cfg.momentum)
    history = []
    for epoch in range(cfg.epochs):
        total, count = 0.0, 0
        for idx in iterate_minibatches(len(inputs), cfg.batch_size, rng):
            out = model.forward(inputs[idx])
            loss, grad = loss_fn(out, targets[idx])
            if not np.isfinite(loss):
                raise NonFiniteError(f"{stage}: non-finite loss at epoch {epoch}")
            model.backward(grad)
            opt.step()
            total += loss * len(idx)
            count += len(idx)
        history.append(total / max(count, 1))
    return history


def pretrain_layerwise(sae: StackedAutoencoder, normal_rows, cfg: TrainConfig | None = None,
                       labels=None) -> list[list[float]]:
    """Greedy front-to-back training of each autoencoder on the previous codes.

    Returns one per-epoch MSE history per autoencoder.
    """
    cfg = cfg or TrainConfig()
    cfg.validate()
    x = sae._check(_require_normal(normal_rows, labels))
    histories = []
    for i, ae in enumerate(sae.aes):
        sub = TrainConfig(cfg.epochs, cfg.lr, cfg.batch_size, cfg.seed + i, cfg.momentum)
        histories.append(_run_epochs(ae, x, x, sub, mse_loss, f"pretrain AE {i}"))
        x = ae.encoder.forward(x)
    return histories


def fine_tune(sae: StackedAutoencoder, normal_rows, cfg: TrainConfig | None = None,
              labels=None) -> list[float]:
    """End-to-end reconstruction training through every layer.

    ``cfg.loss`` selects MSE (default) or per-dimension binary cross-entropy
    against targets clipped to [0, 1].
    """
    cfg = cfg or TrainConfig()
    cfg.validate()
    x = sae._check(_require_normal(normal_rows, labels))
    if cfg.loss == "bce":
        return _run_epochs(sae, x, np.clip(x, 0.0, 1.0), cfg, bce_loss, "fine-tune")
    return _run_epochs(sae, x, x, cfg, mse_loss, "fine-tune")


def train_sae(normal_rows, dims, pretrain: TrainConfig, finetune: TrainConfig, seed: int = 0,
              labels=None) -> tuple[StackedAutoencoder, dict]:
    sae = StackedAutoencoder(dims, seed=seed)
    history = {
        "pretrain": pretrain_layerwise(sae, normal_rows, pretrain, labels),
        "finetune": fine_tune(sae, normal_rows, finetune, labels),
    }
    return sae, history
