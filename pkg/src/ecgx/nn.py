"""Minimal differentiable building blocks for the 1-D CNN regressor.

Everything is plain numpy in double precision: convolution, ReLU, max
pooling, dense layers, masked MSE, adaptive-moment updates, plus a
finite-difference gradient checker. Double precision is deliberate; it
makes the gradient checks meaningful and is fast enough at desk scale.

Tensors follow a fixed (batch, channels, length) convention.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, EmptyBatch, ShapeError

CHECKPOINT_VERSION = "ecgx-checkpoint-v1"


@dataclass(frozen=True)
class ModelConfig:
    """Architecture description: conv blocks then one hidden dense layer.

    The realized layer sequence is
    [conv -> ReLU -> maxpool] per block -> flatten -> dense -> ReLU -> linear head.
    """

    conv_blocks: tuple[tuple[int, int, int], ...] = ((16, 7, 2), (32, 5, 2),
                                                     (64, 5, 2), (64, 3, 2))
    dense_hidden: int = 128
    n_outputs: int = 1

    def __post_init__(self):
        if len(self.conv_blocks) < 1:
            raise ConfigError("need at least one conv block")
        for ch, k, pool in self.conv_blocks:
            if k % 2 == 0 or k < 1:
                raise ConfigError(f"kernel sizes must be odd, got {k}")
            if ch < 1 or pool < 1:
                raise ConfigError(f"bad conv block ({ch}, {k}, {pool})")
        if self.dense_hidden < 1:
            raise ConfigError(f"dense_hidden must be >= 1, got {self.dense_hidden}")
        if self.n_outputs < 1:
            raise ConfigError(f"n_outputs must be >= 1, got {self.n_outputs}")

    def receptive_field(self) -> int:
        rf, stride = 1, 1
        for _, k, pool in self.conv_blocks:
            rf += (k - 1) * stride
            rf += (pool - 1) * stride
            stride *= pool
        return rf

    def to_dict(self) -> dict:
        return {"conv_blocks": [list(b) for b in self.conv_blocks],
                "dense_hidden": self.dense_hidden, "n_outputs": self.n_outputs}

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(tuple(tuple(b) for b in d["conv_blocks"]),
                           d["dense_hidden"], d["n_outputs"])


class Conv1d:
    """Same-padding cross-correlation, stride 1.

    Activations use a channels-last (batch, length, channels) layout
    internally. The im2col buffer is laid out as (tap, channel) per output
    position so building it copies contiguous channel runs, and both
    backward GEMMs reuse it without reshuffling. Weights are stored as
    (kernel, in_channels, out_channels) to match.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 name: str):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.k = kernel_size
        self.pad = kernel_size // 2
        self.name = name
        self.w = np.zeros((kernel_size, in_channels, out_channels))
        self.b = np.zeros(out_channels)
        self._xcol = None

    def params(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.w": self.w, f"{self.name}.b": self.b}

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 3 or x.shape[2] != self.in_channels:
            raise ShapeError(f"{self.name}: expected (batch, length, "
                             f"{self.in_channels}), got {x.shape}")
        batch, length, c = x.shape
        xp = np.pad(x, ((0, 0), (self.pad, self.pad), (0, 0)))
        sb, sl, sc = xp.strides
        win = np.lib.stride_tricks.as_strided(
            xp, shape=(batch, length, self.k, c), strides=(sb, sl, sl, sc))
        self._xcol = win.reshape(batch * length, self.k * c)
        y = self._xcol @ self.w.reshape(-1, self.out_channels)
        y += self.b
        return y.reshape(batch, length, self.out_channels)

    def backward(self, dy: np.ndarray, need_dx: bool = True):
        batch, length, _ = dy.shape
        dy2 = dy.reshape(batch * length, self.out_channels)
        grads = {
            f"{self.name}.w": (self._xcol.T @ dy2).reshape(self.w.shape),
            f"{self.name}.b": dy2.sum(axis=0),
        }
        dx = None
        if need_dx:
            dxcol = dy2 @ self.w.reshape(-1, self.out_channels).T
            dxcol = dxcol.reshape(batch, length, self.k, self.in_channels)
            dxp = np.zeros((batch, length + 2 * self.pad, self.in_channels))
            for k in range(self.k):  # col2im scatter-add, one shift per tap
                dxp[:, k:k + length, :] += dxcol[:, :, k, :]
            dx = dxp[:, self.pad:self.pad + length, :]
        self._xcol = None
        return dx, grads


class Relu:
    """Caches its output; the backward mask is just output > 0."""

    def __init__(self):
        self._y = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._y = np.maximum(x, 0.0)
        return self._y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        out = dy * (self._y > 0)
        self._y = None
        return out


class MaxPool1d:
    """Non-overlapping max pooling over the length axis of (batch, length,
    channels); a trailing remainder shorter than the window is dropped.
    Ties select the earliest sample. Window size 2 takes a branch-free
    fast path; other sizes go through argmax."""

    def __init__(self, pool: int):
        self.pool = pool
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        b, length, c = x.shape
        n_out = length // self.pool
        xv = np.ascontiguousarray(x[:, :n_out * self.pool, :]) \
            .reshape(b, n_out, self.pool, c)
        if self.pool == 2:
            first = xv[:, :, 0, :]
            second = xv[:, :, 1, :]
            take_first = first >= second
            self._cache = (take_first, x.shape)
            return np.where(take_first, first, second)
        idx = xv.argmax(axis=2)
        self._cache = (idx, x.shape)
        return np.take_along_axis(xv, idx[:, :, None, :], axis=2)[:, :, 0, :]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        cache, (b, length, c) = self._cache
        n_out = dy.shape[1]
        if self.pool == 2:
            take_first = cache
            pairs = np.empty((b, n_out, 2, c))
            np.multiply(dy, take_first, out=pairs[:, :, 0, :])
            np.subtract(dy, pairs[:, :, 0, :], out=pairs[:, :, 1, :])
            flat = pairs.reshape(b, n_out * 2, c)
            if n_out * 2 == length:
                self._cache = None
                return flat
            dx = np.zeros((b, length, c))
            dx[:, :n_out * 2, :] = flat
        else:
            idx = cache
            dxv = np.zeros((b, n_out, self.pool, c))
            np.put_along_axis(dxv, idx[:, :, None, :], dy[:, :, None, :], axis=2)
            dx = np.zeros((b, length, c))
            dx[:, :n_out * self.pool, :] = dxv.reshape(b, n_out * self.pool, c)
        self._cache = None
        return dx


class Flatten:
    def __init__(self):
        self._shape = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        out = dy.reshape(self._shape)
        self._shape = None
        return out


class Dense:
    def __init__(self, in_features: int, out_features: int, name: str):
        self.in_features = in_features
        self.out_features = out_features
        self.name = name
        self.w = np.zeros((in_features, out_features))
        self.b = np.zeros(out_features)
        self._x = None

    def params(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.w": self.w, f"{self.name}.b": self.b}

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"{self.name}: expected (batch, {self.in_features}), "
                             f"got {x.shape}")
        self._x = x
        return x @ self.w + self.b

    def backward(self, dy: np.ndarray, need_dx: bool = True):
        grads = {f"{self.name}.w": self._x.T @ dy, f"{self.name}.b": dy.sum(axis=0)}
        dx = dy @ self.w.T if need_dx else None
        self._x = None
        return dx, grads


@dataclass
class CnnModel:
    """Realized network: parameters plus the layer sequence they live in."""

    config: ModelConfig
    in_channels: int
    in_length: int
    seed: int
    convs: list = field(default_factory=list)       # [(Conv1d, Relu, MaxPool1d)]
    dense: Dense | None = None
    dense_act: Relu | None = None
    head: Dense | None = None
    flatten: Flatten = field(default_factory=Flatten)

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for conv, _, _ in self.convs:
            out.update(conv.params())
        out.update(self.dense.params())
        out.update(self.head.params())
        return out

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params().values())

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3:
            raise ShapeError(f"input: expected 3-D (batch, channels, length), "
                             f"got {x.shape}")
        if x.shape[1] != self.in_channels:
            raise ShapeError(f"input: expected {self.in_channels} channels, "
                             f"got {x.shape[1]}")
        if x.shape[2] != self.in_length:
            raise ShapeError(f"input: expected length {self.in_length}, "
                             f"got {x.shape[2]}")
        return x

    def _conv_stack(self, x: np.ndarray) -> np.ndarray:
        # internal channels-last layout: (batch, length, channels)
        h = np.ascontiguousarray(self._check_input(x).transpose(0, 2, 1))
        for conv, act, pool in self.convs:
            h = pool.forward(act.forward(conv.forward(h)))
        return h

    def forward_features(self, x: np.ndarray) -> np.ndarray:
        """Conv-stack output before flattening, as (batch, channels, length)."""
        return self._conv_stack(x).transpose(0, 2, 1)

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = self.flatten.forward(self._conv_stack(x))
        h = self.dense_act.forward(self.dense.forward(h))
        return self.head.forward(h)

    def backward_from(self, dout: np.ndarray) -> dict[str, np.ndarray]:
        """Backpropagate d(loss)/d(output); forward must have just run."""
        grads = {}
        dh, g = self.head.backward(dout)
        grads.update(g)
        dh = self.dense_act.backward(dh)
        dh, g = self.dense.backward(dh)
        grads.update(g)
        dh = self.flatten.backward(dh)
        for i, (conv, act, pool) in enumerate(reversed(self.convs)):
            dh = pool.backward(dh)
            dh = act.backward(dh)
            # grad wrt the network input is never consumed
            need_dx = i < len(self.convs) - 1
            dh, g = conv.backward(dh, need_dx=need_dx)
            grads.update(g)
        return grads


def init_model(config: ModelConfig, in_channels: int, in_length: int,
               seed: int) -> CnnModel:
    """He-uniform weights, zero biases, fully determined by the seed."""
    if in_length < config.receptive_field():
        raise ConfigError(f"input length {in_length} shorter than receptive "
                          f"field {config.receptive_field()}")
    rng = np.random.default_rng(seed)

    def he_uniform(shape: tuple[int, ...], fan_in: int) -> np.ndarray:
        limit = np.sqrt(6.0 / fan_in)
        return rng.uniform(-limit, limit, size=shape)

    model = CnnModel(config, in_channels, in_length, seed)
    channels, length = in_channels, in_length
    for i, (out_ch, k, pool) in enumerate(config.conv_blocks):
        conv = Conv1d(channels, out_ch, k, name=f"conv{i}")
        conv.w = he_uniform(conv.w.shape, channels * k)  # fan_in = C_in * kernel
        model.convs.append((conv, Relu(), MaxPool1d(pool)))
        channels, length = out_ch, length // pool
        if length < 1:
            raise ConfigError(f"block {i} pools the signal away "
                              f"(length 0 after pool {pool})")

    flat = channels * length
    model.dense = Dense(flat, config.dense_hidden, name="dense")
    model.dense.w = he_uniform(model.dense.w.shape, flat)
    model.dense_act = Relu()
    model.head = Dense(config.dense_hidden, config.n_outputs, name="head")
    model.head.w = he_uniform(model.head.w.shape, config.dense_hidden)
    return model


# --- loss ---------------------------------------------------------------------

def mse_loss(pred: np.ndarray, target: np.ndarray,
             mask: np.ndarray | None = None) -> float:
    """Mean squared error over mask-true cells; masked cells contribute zero."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"loss: pred {pred.shape} vs target {target.shape}")
    if mask is None:
        mask = np.ones(pred.shape, dtype=bool)
    if mask.shape != pred.shape:
        raise ShapeError(f"loss: mask {mask.shape} vs pred {pred.shape}")
    n = int(mask.sum())
    if n == 0:
        raise EmptyBatch("every cell in the batch is masked out")
    diff = np.where(mask, pred - target, 0.0)
    return float((diff * diff).sum() / n)


def mse_loss_grad(pred: np.ndarray, target: np.ndarray,
                  mask: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    if mask is None:
        mask = np.ones(pred.shape, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        raise EmptyBatch("every cell in the batch is masked out")
    diff = np.where(mask, pred - target, 0.0)
    loss = float((diff * diff).sum() / n)
    return loss, 2.0 * diff / n


def backward(model: CnnModel, x: np.ndarray, target: np.ndarray,
             mask: np.ndarray | None = None
             ) -> tuple[float, dict[str, np.ndarray]]:
    """Masked-MSE loss and gradients for every parameter tensor."""
    pred = model.forward(x)
    loss, dout = mse_loss_grad(pred, np.asarray(target, dtype=np.float64), mask)
    return loss, model.backward_from(dout)


# --- optimizer ------------------------------------------------------------------

class Adam:
    """Adaptive-moment estimation; updates parameter arrays in place."""

    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for key, p in self.params.items():
            g = grads[key]
            m = self.m[key]
            v = self.v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# --- checkpointing ----------------------------------------------------------------

def save_model(model: CnnModel, path: str | Path) -> None:
    """Self-describing checkpoint: config + little-endian float64 tensors."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "in_channels": model.in_channels,
        "in_length": model.in_length,
        "seed": model.seed,
    }
    arrays = {f"param:{k}": v.astype("<f8") for k, v in model.params().items()}
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
                 **arrays)


def load_model(path: str | Path) -> CnnModel:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {meta.get('version')!r}")
        model = init_model(ModelConfig.from_dict(meta["config"]),
                           meta["in_channels"], meta["in_length"], meta["seed"])
        params = model.params()
        for key in data.files:
            if key.startswith("param:"):
                name = key[len("param:"):]
                params[name][...] = data[key]
    return model


# --- verification -----------------------------------------------------------------

def gradient_check(model: CnnModel, x: np.ndarray, target: np.ndarray,
                   mask: np.ndarray | None = None, eps: float = 1e-5,
                   n_samples: int = 20, seed: int = 0) -> dict[str, float]:
    """Max relative error between analytic and central-difference gradients.

    For each parameter tensor, ``n_samples`` randomly chosen entries are
    perturbed by +/- eps; relative error uses |a - n| / max(1e-6, |a| + |n|)
    so that matching near-zero gradients compare as equal.
    """
    rng = np.random.default_rng(seed)
    _, analytic = backward(model, x, target, mask)
    params = model.params()
    worst: dict[str, float] = {}
    for name, tensor in params.items():
        flat = tensor.reshape(-1)
        count = min(n_samples, flat.size)
        picks = rng.choice(flat.size, size=count, replace=False)
        err = 0.0
        for idx in picks:
            original = flat[idx]
            flat[idx] = original + eps
            up = mse_loss(model.forward(x), target, mask)
            flat[idx] = original - eps
            down = mse_loss(model.forward(x), target, mask)
            flat[idx] = original
            numeric = (up - down) / (2.0 * eps)
            a = analytic[name].reshape(-1)[idx]
            err = max(err, abs(a - numeric) / max(1e-6, abs(a) + abs(numeric)))
        worst[name] = err
    return worst
