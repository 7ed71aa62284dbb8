"""Minimal 1D deep-learning engine: layers, losses, Adam, LR scheduling.

Everything runs on numpy. Training arithmetic is float32; layers accept a
dtype so a float64 replay of the same graph can back gradient verification.
Backward passes write (not accumulate) parameter gradients, so no zero-grad
step is needed between batches.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DataError, NumericalError, PipelineError

__all__ = [
    "Param",
    "Layer",
    "Conv1D",
    "Dense",
    "ReLU",
    "Sigmoid",
    "Softmax",
    "GlobalAvgPool",
    "ResidualBlock",
    "he_normal",
    "make_rng",
    "bce_loss",
    "cce_loss",
    "Adam",
    "PlateauScheduler",
    "PROB_EPS",
]

PROB_EPS = 1e-7  # probability clamp for the cross-entropy losses


def make_rng(seed: int) -> np.random.Generator:
    """The one RNG construction used for weights and shuffling: PCG64(seed)."""
    return np.random.Generator(np.random.PCG64(seed))


def he_normal(fan_in: int, shape, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """He-normal draw: N(0, 2/fan_in), i.i.d. per element."""
    if fan_in < 1:
        raise DataError(f"fan_in must be >= 1, got {fan_in}")
    std = math.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


class Param:
    """A trainable tensor and its gradient buffer."""

    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = np.zeros_like(value)


class Layer:
    def params(self) -> list[Param]:
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def spec(self) -> dict:
        raise NotImplementedError

    def _need_cache(self, cache):
        if cache is None:
            raise PipelineError(f"{type(self).__name__}.backward called before forward")
        return cache


class Conv1D(Layer):
    """Strided cross-correlation with 'same' zero padding.

    Input is (batch, channels, length); output length is ceil(length/stride),
    padded as evenly as possible with the extra zero on the right.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int = 1, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        if kernel_size % 2 == 0:
            raise DataError(f"kernel size must be odd, got {kernel_size}")
        if stride < 1:
            raise DataError(f"stride must be >= 1, got {stride}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        if rng is None:
            weights = np.zeros((out_channels, in_channels, kernel_size), dtype=dtype)
        else:
            weights = he_normal(in_channels * kernel_size,
                                (out_channels, in_channels, kernel_size), rng, dtype)
        self.w = Param(weights)
        self.b = Param(np.zeros(out_channels, dtype=dtype))
        self._cache = None

    def params(self):
        return [self.w, self.b]

    def spec(self):
        return {"kind": "conv1d", "in": self.in_channels, "out": self.out_channels,
                "kernel": self.kernel_size, "stride": self.stride}

    def _geometry(self, length: int):
        out_len = -(-length // self.stride)  # ceil
        pad_total = max((out_len - 1) * self.stride + self.kernel_size - length, 0)
        pad_left = pad_total // 2
        return out_len, pad_left, pad_total - pad_left

    def forward(self, x):
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise DataError(
                f"conv1d expected (batch, {self.in_channels}, length), got {x.shape}"
            )
        batch, _, length = x.shape
        out_len, pad_left, pad_right = self._geometry(length)
        if pad_left or pad_right:
            xp = np.zeros((batch, self.in_channels, length + pad_left + pad_right),
                          dtype=x.dtype)
            xp[:, :, pad_left : pad_left + length] = x
        else:
            xp = x
        # im2col: one contiguous (batch*out_len, in*k) buffer feeding one GEMM
        windows = np.lib.stride_tricks.sliding_window_view(xp, self.kernel_size, axis=2)
        windows = windows[:, :, :: self.stride, :][:, :, :out_len, :]
        cols = np.ascontiguousarray(windows.transpose(0, 2, 1, 3))
        cols = cols.reshape(batch * out_len, self.in_channels * self.kernel_size)
        w2 = self.w.value.reshape(self.out_channels, -1)
        out = cols @ w2.T
        self._cache = (cols, length, out_len, pad_left, xp.shape)
        out = out.reshape(batch, out_len, self.out_channels).transpose(0, 2, 1)
        return out + self.b.value[None, :, None]

    def backward(self, grad):
        cols, length, out_len, pad_left, xp_shape = self._need_cache(self._cache)
        batch = grad.shape[0]
        g2 = np.ascontiguousarray(grad.transpose(0, 2, 1))
        g2 = g2.reshape(batch * out_len, self.out_channels)
        self.w.grad = (g2.T @ cols).reshape(self.w.value.shape)
        self.b.grad = g2.sum(axis=0)
        dcols = (g2 @ self.w.value.reshape(self.out_channels, -1)).reshape(
            batch, out_len, self.in_channels, self.kernel_size
        )
        dxp = np.zeros(xp_shape, dtype=grad.dtype)
        for j in range(self.kernel_size):
            dxp[:, :, j : j + self.stride * out_len : self.stride] += (
                dcols[:, :, :, j].transpose(0, 2, 1)
            )
        return dxp[:, :, pad_left : pad_left + length]


class Dense(Layer):
    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        self.in_features = in_features
        self.out_features = out_features
        if rng is None:
            weights = np.zeros((in_features, out_features), dtype=dtype)
        else:
            weights = he_normal(in_features, (in_features, out_features), rng, dtype)
        self.w = Param(weights)
        self.b = Param(np.zeros(out_features, dtype=dtype))
        self._cache = None

    def params(self):
        return [self.w, self.b]

    def spec(self):
        return {"kind": "dense", "in": self.in_features, "out": self.out_features}

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise DataError(f"dense expected (batch, {self.in_features}), got {x.shape}")
        self._cache = x
        return x @ self.w.value + self.b.value

    def backward(self, grad):
        x = self._need_cache(self._cache)
        self.w.grad = x.T @ grad
        self.b.grad = grad.sum(axis=0)
        return grad @ self.w.value.T


class ReLU(Layer):
    def __init__(self):
        self._cache = None

    def spec(self):
        return {"kind": "relu"}

    def forward(self, x):
        out = np.maximum(x, x.dtype.type(0))
        self._cache = out > 0
        return out

    def backward(self, grad):
        mask = self._need_cache(self._cache)
        return grad * mask


class Sigmoid(Layer):
    def __init__(self):
        self._cache = None

    def spec(self):
        return {"kind": "sigmoid"}

    def forward(self, x):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        self._cache = out
        return out

    def backward(self, grad):
        out = self._need_cache(self._cache)
        return grad * out * (1.0 - out)


class Softmax(Layer):
    """Row softmax over the last axis."""

    def __init__(self):
        self._cache = None

    def spec(self):
        return {"kind": "softmax"}

    def forward(self, x):
        shifted = x - x.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=-1, keepdims=True)
        self._cache = out
        return out

    def backward(self, grad):
        out = self._need_cache(self._cache)
        inner = (grad * out).sum(axis=-1, keepdims=True)
        return out * (grad - inner)


class GlobalAvgPool(Layer):
    """(batch, channels, length) -> (batch, channels) mean over length."""

    def __init__(self):
        self._cache = None

    def spec(self):
        return {"kind": "global_avg_pool"}

    def forward(self, x):
        if x.ndim != 3:
            raise DataError(f"global_avg_pool expected 3-D input, got {x.shape}")
        self._cache = x.shape
        return x.mean(axis=2)

    def backward(self, grad):
        shape = self._need_cache(self._cache)
        scale = grad.dtype.type(1.0 / shape[2])
        return np.broadcast_to((grad * scale)[:, :, None], shape).copy()


class ResidualBlock(Layer):
    """conv(k3, stride) -> ReLU -> conv(k3) plus shortcut, then ReLU.

    The shortcut is the identity when shapes allow, otherwise a kernel-1
    projection convolution with the block's stride.
    """

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        self.conv1 = Conv1D(in_channels, out_channels, 3, stride, rng=rng, dtype=dtype)
        self.relu1 = ReLU()
        self.conv2 = Conv1D(out_channels, out_channels, 3, 1, rng=rng, dtype=dtype)
        if stride != 1 or in_channels != out_channels:
            self.projection = Conv1D(in_channels, out_channels, 1, stride, rng=rng, dtype=dtype)
        else:
            self.projection = None
        self.relu_out = ReLU()

    def params(self):
        out = self.conv1.params() + self.conv2.params()
        if self.projection is not None:
            out += self.projection.params()
        return out

    def spec(self):
        return {"kind": "residual_block", "in": self.in_channels, "out": self.out_channels,
                "stride": self.stride, "projection": self.projection is not None}

    def forward(self, x):
        shortcut = x if self.projection is None else self.projection.forward(x)
        h = self.conv2.forward(self.relu1.forward(self.conv1.forward(x)))
        return self.relu_out.forward(h + shortcut)

    def backward(self, grad):
        gs = self.relu_out.backward(grad)
        g_main = self.conv1.backward(self.relu1.backward(self.conv2.backward(gs)))
        g_short = gs if self.projection is None else self.projection.backward(gs)
        return g_main + g_short


# ---------------------------------------------------------------------------
# losses


def _check_binary_targets(targets):
    if not np.all((targets == 0) | (targets == 1)):
        raise DataError("binary targets must be 0 or 1")


def bce_loss(probs: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy and its gradient w.r.t. the probabilities.

    Probabilities are clamped to [PROB_EPS, 1 - PROB_EPS] before the logs;
    the gradient is zero where the clamp is active.
    """
    probs = np.asarray(probs)
    targets = np.asarray(targets, dtype=np.float64).reshape(probs.shape)
    _check_binary_targets(targets)
    n = probs.size
    p = np.clip(probs.astype(np.float64), PROB_EPS, 1.0 - PROB_EPS)
    loss = float(-(targets * np.log(p) + (1.0 - targets) * np.log1p(-p)).sum() / n)
    interior = (probs > PROB_EPS) & (probs < 1.0 - PROB_EPS)
    grad = np.where(interior, -(targets / p - (1.0 - targets) / (1.0 - p)) / n, 0.0)
    return loss, grad.astype(probs.dtype)


def cce_loss(probs: np.ndarray, one_hot: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean categorical cross-entropy and its gradient w.r.t. the probabilities."""
    probs = np.asarray(probs)
    one_hot = np.asarray(one_hot, dtype=np.float64)
    if probs.ndim != 2 or one_hot.shape != probs.shape:
        raise DataError("cce_loss expects matching (batch, classes) matrices")
    if not np.all((one_hot == 0) | (one_hot == 1)) or not np.all(one_hot.sum(axis=1) == 1):
        raise DataError("targets must be one-hot rows")
    n = probs.shape[0]
    p = np.clip(probs.astype(np.float64), PROB_EPS, 1.0 - PROB_EPS)
    loss = float(-(one_hot * np.log(p)).sum() / n)
    interior = (probs > PROB_EPS) & (probs < 1.0 - PROB_EPS)
    grad = np.where(interior, -(one_hot / p) / n, 0.0)
    return loss, grad.astype(probs.dtype)


# ---------------------------------------------------------------------------
# optimization


class Adam:
    """Standard bias-corrected Adam over a fixed parameter list."""

    def __init__(self, params: list[Param], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g.shape != p.value.shape:
                raise DataError("gradient shape does not match parameter")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / correction1
            v_hat = v / correction2
            p.value -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.value.dtype)


class PlateauScheduler:
    """Halve the learning rate after `patience` epochs without improvement.

    Improvement means the monitored loss dropped below the best seen by more
    than min_delta. The rate never falls below min_lr.
    """

    def __init__(self, lr: float = 1e-3, patience: int = 4, factor: float = 0.5,
                 min_lr: float = 1e-4, min_delta: float = 1e-8):
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.min_lr = min_lr
        self.min_delta = min_delta
        self.best = math.inf
        self.wait = 0

    def step(self, monitored_loss: float) -> float:
        if monitored_loss < self.best - self.min_delta:
            self.best = monitored_loss
            self.wait = 0
        else:
            self.wait += 1
            if self.wait > self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.wait = 0
        return self.lr


def check_finite(name: str, value: np.ndarray | float) -> None:
    """Divergence guard used by the training loop."""
    if not np.all(np.isfinite(value)):
        raise NumericalError(f"{name} diverged (NaN or inf encountered)")
