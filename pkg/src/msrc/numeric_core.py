"""Small neural-network kernels with hand-written reverse-mode gradients.

Every layer caches what it needs during ``forward`` and consumes it in
``backward``.  Parameter gradients land in ``layer.grads`` (overwritten on
each backward call); the input gradient is returned.  Arrays are float64.

Shapes:
    Dense       (batch, features)
    Conv1d      (batch, channels, length), same-length zero padding
    BatchNorm   (batch, channels) or (batch, channels, length)
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

ACTIVATIONS = ("linear", "relu", "sigmoid")
BCE_EPS = 1e-7


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    """Raised when a loss or gradient stops being finite; training must abort."""


def _check_shape(what: str, got: tuple, expected: tuple) -> None:
    if tuple(got) != tuple(expected):
        raise ShapeError(f"{what}: got shape {tuple(got)}, expected {tuple(expected)}")


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "linear":
        return z
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return expit(z)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def _activate_grad(z: np.ndarray, out: np.ndarray, kind: str, grad: np.ndarray) -> np.ndarray:
    if kind == "linear":
        return grad
    if kind == "relu":
        return grad * (z > 0)
    return grad * out * (1.0 - out)


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def config(self) -> dict:
        return {}

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def zero_grad(self) -> None:
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def named_layers(self, prefix: str = "") -> Iterator[tuple[str, "Layer"]]:
        yield prefix, self

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def __call__(self, x, train: bool = True):
        return self.forward(x, train)


class Activation(Layer):
    kind = "activation"

    def __init__(self, activation: str = "relu"):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")
        self.activation = activation

    def config(self):
        return {"activation": self.activation}

    def forward(self, x, train=True):
        self._z = np.asarray(x, dtype=float)
        self._out = _activate(self._z, self.activation)
        return self._out

    def backward(self, grad):
        return _activate_grad(self._z, self._out, self.activation, grad)


class Dense(Layer):
    """``activation(x @ W.T + b)`` with ``W`` of shape ``(n_out, n_in)``."""

    kind = "dense"

    def __init__(self, n_in: int, n_out: int, activation: str = "linear",
                 rng: np.random.Generator | None = None):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.n_out, self.activation = n_in, n_out, activation
        self.params["W"] = glorot_uniform(rng, (n_out, n_in), n_in, n_out)
        self.params["b"] = np.zeros(n_out)
        self.zero_grad()

    def config(self):
        return {"n_in": self.n_in, "n_out": self.n_out, "activation": self.activation}

    def forward(self, x, train=True):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"dense input: got shape {x.shape}, expected (batch, {self.n_in})")
        self._x = x
        self._z = x @ self.params["W"].T + self.params["b"]
        self._out = _activate(self._z, self.activation)
        return self._out

    def backward(self, grad):
        _check_shape("dense upstream gradient", grad.shape, self._out.shape)
        dz = _activate_grad(self._z, self._out, self.activation, grad)
        self.grads["W"] = dz.T @ self._x
        self.grads["b"] = dz.sum(axis=0)
        return dz @ self.params["W"]


class Conv1d(Layer):
    """Same-length 1-D cross-correlation: ``out[b,o,t] = sum_{c,w} K[o,c,w] x[b,c,t+w-p] + bias[o]``."""

    kind = "conv1d"

    def __init__(self, in_channels: int, out_channels: int, width: int = 3,
                 rng: np.random.Generator | None = None, bias: bool = True):
        super().__init__()
        if width % 2 != 1:
            raise ValueError(f"kernel width must be odd for same padding, got {width}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels, self.out_channels, self.width = in_channels, out_channels, width
        self.params["K"] = glorot_uniform(
            rng, (out_channels, in_channels, width), in_channels * width, out_channels * width
        )
        # a conv feeding batch norm gets no bias: BN cancels it, its gradient is identically 0
        self.bias = bias
        if bias:
            self.params["bias"] = np.zeros(out_channels)
        self.zero_grad()

    def config(self):
        return {"in_channels": self.in_channels, "out_channels": self.out_channels, "width": self.width,
                "bias": self.bias}

    def forward(self, x, train=True):
        x = np.asarray(x, dtype=float)
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise ShapeError(
                f"conv1d input: got shape {x.shape}, expected (batch, {self.in_channels}, length)"
            )
        B, C, T = x.shape
        p = (self.width - 1) // 2
        xp = np.pad(x, ((0, 0), (0, 0), (p, p)))
        # (B, C, T, W) -> (B*T, C*W)
        cols = sliding_window_view(xp, self.width, axis=2).transpose(0, 2, 1, 3).reshape(B * T, C * self.width)
        self._cols, self._shape = cols, x.shape
        out = cols @ self.params["K"].reshape(self.out_channels, -1).T
        out = out.reshape(B, T, self.out_channels).transpose(0, 2, 1)
        return out + self.params["bias"][None, :, None] if self.bias else out

    def backward(self, grad):
        B, C, T = self._shape
        _check_shape("conv1d upstream gradient", grad.shape, (B, self.out_channels, T))
        W = self.width
        p = (W - 1) // 2
        gmat = grad.transpose(0, 2, 1).reshape(B * T, self.out_channels)
        self.grads["K"] = (gmat.T @ self._cols).reshape(self.params["K"].shape)
        if self.bias:
            self.grads["bias"] = grad.sum(axis=(0, 2))
        dcols = (gmat @ self.params["K"].reshape(self.out_channels, -1)).reshape(B, T, C, W)
        dxp = np.zeros((B, C, T + 2 * p))
        for w in range(W):
            dxp[:, :, w : w + T] += dcols[:, :, :, w].transpose(0, 2, 1)
        return dxp[:, :, p : p + T]


class BatchNorm(Layer):
    kind = "batchnorm"

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        if eps <= 0:
            raise ValueError("batchnorm eps must be positive")
        self.channels, self.momentum, self.eps = channels, momentum, eps
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)
        self.zero_grad()

    def config(self):
        return {"channels": self.channels, "momentum": self.momentum, "eps": self.eps}

    def _axes(self, x):
        if x.ndim not in (2, 3) or x.shape[1] != self.channels:
            raise ShapeError(
                f"batchnorm input: got shape {x.shape}, expected (batch, {self.channels}[, length])"
            )
        return (0,) if x.ndim == 2 else (0, 2)

    def _bcast(self, v, ndim):
        return v[None, :] if ndim == 2 else v[None, :, None]

    def forward(self, x, train=True):
        x = np.asarray(x, dtype=float)
        axes = self._axes(x)
        self._train = train
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            count = x.size // self.channels
            m = self.momentum
            unbiased = var * count / (count - 1) if count > 1 else var
            self.buffers["running_mean"] = (1 - m) * self.buffers["running_mean"] + m * mean
            self.buffers["running_var"] = (1 - m) * self.buffers["running_var"] + m * unbiased
        else:
            mean, var = self.buffers["running_mean"], self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        self._xhat = (x - self._bcast(mean, x.ndim)) * self._bcast(inv_std, x.ndim)
        self._inv_std, self._axes_used = inv_std, axes
        return self._bcast(self.params["gamma"], x.ndim) * self._xhat + self._bcast(self.params["beta"], x.ndim)

    def backward(self, grad):
        _check_shape("batchnorm upstream gradient", grad.shape, self._xhat.shape)
        axes, nd = self._axes_used, grad.ndim
        xhat = self._xhat
        self.grads["gamma"] = (grad * xhat).sum(axis=axes)
        self.grads["beta"] = grad.sum(axis=axes)
        dxhat = grad * self._bcast(self.params["gamma"], nd)
        inv_std = self._bcast(self._inv_std, nd)
        if not self._train:
            return dxhat * inv_std
        n = grad.size // self.channels
        s1 = self._bcast(dxhat.sum(axis=axes), nd)
        s2 = self._bcast((dxhat * xhat).sum(axis=axes), nd)
        return inv_std * (dxhat - s1 / n - xhat * s2 / n)


class Sequential(Layer):
    kind = "sequential"

    def __init__(self, layers: Iterable[Layer]):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x, train=True):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def named_layers(self, prefix=""):
        for i, layer in enumerate(self.layers):
            sep = "" if not prefix or prefix.endswith(".") else "."
            yield from layer.named_layers(f"{prefix}{sep}{i}")

    @property
    def n_params(self):
        return sum(layer.n_params for layer in self.layers)


def trainable(model) -> list[tuple[str, Layer, str]]:
    """Flat ``(layer_path, layer, param_name)`` list for any object with ``named_layers``."""
    return [(path, layer, key) for path, layer in model.named_layers() for key in layer.params]


# -- losses -----------------------------------------------------------------

def mse_loss(pred, target) -> tuple[float, np.ndarray]:
    pred, target = np.asarray(pred, dtype=float), np.asarray(target, dtype=float)
    _check_shape("mse_loss prediction", pred.shape, target.shape)
    if pred.size == 0:
        return 0.0, np.zeros_like(pred)
    diff = pred - target
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


def bce_loss(pred, target, eps: float = BCE_EPS) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy with predictions clamped to ``[eps, 1 - eps]``."""
    pred, target = np.asarray(pred, dtype=float), np.asarray(target, dtype=float)
    _check_shape("bce_loss prediction", pred.shape, target.shape)
    if pred.size == 0:
        return 0.0, np.zeros_like(pred)
    p = np.clip(pred, eps, 1.0 - eps)
    loss = -np.mean(target * np.log(p) + (1.0 - target) * np.log(1.0 - p))
    grad = (p - target) / (p * (1.0 - p)) / p.size
    grad = np.where((pred < eps) | (pred > 1.0 - eps), 0.0, grad)
    return float(loss), grad


# -- optimisation -----------------------------------------------------------

def sgd_step(params, grads, lr: float):
    """In-place ``p -= lr * g`` for matching dicts (or sequences) of arrays."""
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if isinstance(params, dict):
        pairs = [(params[k], grads[k]) for k in params]
    else:
        pairs = list(zip(params, grads))
    for p, g in pairs:
        _check_shape("sgd gradient", np.shape(g), np.shape(p))
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient encountered; training aborted")
    for p, g in pairs:
        p -= lr * g
    return params


class SGD:
    """SGD over every parameter of ``model``; ``momentum=0`` is plain :func:`sgd_step`."""

    def __init__(self, model, lr: float, momentum: float = 0.0):
        if not lr > 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        if not 0 <= momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {momentum}")
        self.model, self.lr, self.momentum = model, lr, momentum
        self._velocity: dict[tuple[int, str], np.ndarray] = {}

    def step(self) -> None:
        entries = trainable(self.model)
        for _, layer, key in entries:
            if not np.all(np.isfinite(layer.grads[key])):
                raise NonFiniteError("non-finite gradient encountered; training aborted")
        for _, layer, key in entries:
            g = layer.grads[key]
            if self.momentum:
                v = self._velocity.get((id(layer), key))
                v = g.copy() if v is None else self.momentum * v + g
                self._velocity[(id(layer), key)] = v
                g = v
            layer.params[key] -= self.lr * g


def iterate_minibatches(n: int, batch_size: int, rng: np.random.Generator | None):
    """Index batches over ``range(n)``; shuffled when ``rng`` is given."""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    bs = n if batch_size <= 0 else batch_size
    for start in range(0, n, bs):
        yield order[start : start + bs]


# -- gradient checking --------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: str
    n_checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def grad_check(loss_and_grads: Callable[[], tuple[float, dict[str, np.ndarray]]],
               params: dict[str, np.ndarray], eps: float = 1e-5, tolerance: float = 1e-4,
               max_params: int = 10_000) -> GradCheckReport:
    """Compare backprop gradients against central finite differences.

    ``params`` maps names to the live arrays the model reads; they are
    perturbed in place and restored.  ``loss_and_grads()`` runs a full forward
    and backward pass and returns the loss plus a gradient for every name.
    """
    total = sum(p.size for p in params.values())
    if total > max_params:
        raise ValueError(f"grad_check limited to {max_params} parameters, model has {total}")
    if total == 0:
        return GradCheckReport(0.0, "", 0, tolerance)
    _, analytic = loss_and_grads()
    analytic = {k: np.array(analytic[k], dtype=float, copy=True) for k in params}
    worst, worst_name = 0.0, ""
    for name, p in params.items():
        numeric = np.zeros_like(p)
        flat, nflat = p.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up, _ = loss_and_grads()
            flat[i] = orig - eps
            down, _ = loss_and_grads()
            flat[i] = orig
            nflat[i] = (up - down) / (2 * eps)
        err = relative_error(analytic[name], numeric)
        if err.size and err.max() > worst:
            worst = float(err.max())
            worst_name = f"{name}[{np.unravel_index(err.argmax(), err.shape)}]"
    return GradCheckReport(worst, worst_name, total, tolerance)


# -- checkpoints --------------------------------------------------------------

CHECKPOINT_MAGIC = "MSRC-CHECKPOINT 1"
LAYER_TYPES = {cls.kind: cls for cls in (Dense, Conv1d, BatchNorm, Activation)}


def build_layer(kind: str, config: dict) -> Layer:
    try:
        cls = LAYER_TYPES[kind]
    except KeyError:
        raise ValueError(f"unknown layer kind {kind!r} in checkpoint") from None
    return cls(**config)


def _fmt(a: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in a.reshape(-1))


def save_checkpoint(path, sections: dict[str, object], meta: dict | None = None) -> Path:
    """Write ``sections`` (name -> object with ``named_layers``) to a text checkpoint.

    Layout: a magic line, one JSON manifest line (layer kinds, configs, array
    shapes plus ``meta``), then one ``array`` header and one line of
    ``repr``-formatted floats per parameter/buffer.
    """
    path = Path(path)
    manifest = {"meta": meta or {}, "sections": {}}
    arrays = []
    for sec, model in sections.items():
        layers = []
        for lpath, layer in model.named_layers():
            if not layer.params and not layer.buffers and layer.kind == "sequential":
                continue
            entry = {"path": lpath, "kind": layer.kind, "config": layer.config(), "arrays": {}}
            for group in (layer.params, layer.buffers):
                for key, arr in group.items():
                    name = f"{sec}/{lpath}/{key}"
                    entry["arrays"][key] = list(arr.shape)
                    arrays.append((name, arr))
            layers.append(entry)
        manifest["sections"][sec] = layers
    lines = [CHECKPOINT_MAGIC, json.dumps(manifest, sort_keys=True)]
    for name, arr in arrays:
        lines.append(f"array {name} {','.join(map(str, arr.shape))}")
        lines.append(_fmt(arr))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Return ``(manifest, arrays)`` where arrays are keyed ``section/layer_path/name``."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not an msrc checkpoint")
    manifest = json.loads(lines[1])
    arrays = {}
    for i in range(2, len(lines), 2):
        _, name, shape = lines[i].split(" ")
        dims = tuple(int(s) for s in shape.split(",")) if shape else ()
        values = np.array([float(v) for v in lines[i + 1].split()], dtype=float)
        arrays[name] = values.reshape(dims)
    return manifest, arrays


def assign_arrays(section: str, model, arrays: dict[str, np.ndarray]) -> None:
    """Copy loaded arrays into ``model`` (which must already have matching structure)."""
    for lpath, layer in model.named_layers():
        for group in (layer.params, layer.buffers):
            for key in group:
                name = f"{section}/{lpath}/{key}"
                if name not in arrays:
                    raise KeyError(f"checkpoint lacks array {name}")
                _check_shape(name, arrays[name].shape, group[key].shape)
                group[key] = arrays[name].copy()
