"""Layers with hand-written forward and backward passes.

Every layer works on float64 batches. Image tensors use the (N, H, W, C)
layout, sequences use (N, T, F). A layer caches what it needs during
``forward`` and consumes the cache in ``backward``; parameter gradients are
written into ``self.grads`` under the same keys as ``self.params``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._lstm_kernels import lstm_backward, lstm_forward


class ShapeError(ValueError):
    pass


def conv_output_extent(size: int, kernel: int, stride: int) -> int:
    """floor((size - kernel) / stride) + 1, the valid-mode output extent."""
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if kernel < 1 or kernel > size:
        raise ShapeError(f"kernel extent {kernel} does not fit input extent {size}")
    return (size - kernel) // stride + 1


# -- activations -------------------------------------------------------------

def _identity(z):
    return z


def _relu(z):
    return np.maximum(z, 0.0)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


ACTIVATIONS = {
    "identity": (_identity, lambda z, y: np.ones_like(z)),
    "relu": (_relu, lambda z, y: (z > 0).astype(z.dtype)),
    "tanh": (np.tanh, lambda z, y: 1.0 - y * y),
    "sigmoid": (_sigmoid, lambda z, y: y * (1.0 - y)),
}


def _activation(name: str):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}") from None


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def output_shape(self, input_shape: tuple) -> tuple:
        return input_shape

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def config(self) -> dict:
        return {"kind": self.kind}

    def init_params(self, rng: np.random.Generator) -> None:
        pass

    def zero_grads(self) -> None:
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}


class Activation(Layer):
    kind = "activation"

    def __init__(self, name: str = "relu"):
        super().__init__()
        self.name = name
        self._fn, self._deriv = _activation(name)

    def forward(self, x):
        self._z = x
        self._y = self._fn(x)
        return self._y

    def backward(self, dy):
        return dy * self._deriv(self._z, self._y)

    def config(self):
        return {"kind": self.kind, "name": self.name}


class Conv2D(Layer):
    """Valid-mode 2-D convolution (cross-correlation) with bias and activation.

    Kernels are stored as (kh, kw, in_channels, n_kernels).
    """

    kind = "conv"

    def __init__(self, in_channels: int, n_kernels: int, kernel=(5, 5), stride: int = 1,
                 activation: str = "relu"):
        super().__init__()
        if isinstance(kernel, int):
            kernel = (kernel, kernel)
        self.in_channels = int(in_channels)
        self.n_kernels = int(n_kernels)
        self.kernel = (int(kernel[0]), int(kernel[1]))
        self.stride = int(stride)
        if self.stride < 1:
            raise ShapeError("stride must be >= 1")
        self.activation = activation
        self._fn, self._deriv = _activation(activation)
        kh, kw = self.kernel
        self.params = {
            "W": np.zeros((kh, kw, self.in_channels, self.n_kernels)),
            "b": np.zeros(self.n_kernels),
        }
        self.zero_grads()

    def init_params(self, rng):
        kh, kw = self.kernel
        fan_in = kh * kw * self.in_channels
        self.params["W"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), self.params["W"].shape)
        self.params["b"] = np.zeros(self.n_kernels)

    def output_shape(self, input_shape):
        h, w, c = input_shape
        if c != self.in_channels:
            raise ShapeError(f"conv expects {self.in_channels} input channels, got {c}")
        return (conv_output_extent(h, self.kernel[0], self.stride),
                conv_output_extent(w, self.kernel[1], self.stride),
                self.n_kernels)

    def param_count(self):
        kh, kw = self.kernel
        return kh * kw * self.in_channels * self.n_kernels + self.n_kernels

    def forward(self, x):
        n, h, w, c = x.shape
        ho, wo, _ = self.output_shape((h, w, c))
        kh, kw = self.kernel
        s = self.stride
        patches = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::s, ::s]
        # (n, ho, wo, c, kh, kw) -> rows ordered (kh, kw, c) to match W
        cols = patches.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * c)
        z = cols @ self.params["W"].reshape(-1, self.n_kernels) + self.params["b"]
        y = self._fn(z)
        self._cache = (x.shape, cols, z, y)
        return y.reshape(n, ho, wo, self.n_kernels)

    def backward(self, dy):
        in_shape, cols, z, y = self._cache
        n, h, w, c = in_shape
        kh, kw = self.kernel
        s = self.stride
        ho, wo = dy.shape[1], dy.shape[2]
        dz = dy.reshape(-1, self.n_kernels) * self._deriv(z, y)
        self.grads["W"] = (cols.T @ dz).reshape(self.params["W"].shape)
        self.grads["b"] = dz.sum(axis=0)
        dcols = (dz @ self.params["W"].reshape(-1, self.n_kernels).T).reshape(n, ho, wo, kh, kw, c)
        dx = np.zeros(in_shape)
        for i in range(kh):
            for j in range(kw):
                dx[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :] += dcols[:, :, :, i, j, :]
        return dx

    def config(self):
        return {"kind": self.kind, "in_channels": self.in_channels, "n_kernels": self.n_kernels,
                "kernel": list(self.kernel), "stride": self.stride, "activation": self.activation}


class _Pool2D(Layer):
    def __init__(self, window=(2, 2), stride: int = 2):
        super().__init__()
        if isinstance(window, int):
            window = (window, window)
        self.window = (int(window[0]), int(window[1]))
        self.stride = int(stride)
        if self.stride < 1:
            raise ShapeError("stride must be >= 1")

    def output_shape(self, input_shape):
        h, w, c = input_shape
        return (conv_output_extent(h, self.window[0], self.stride),
                conv_output_extent(w, self.window[1], self.stride), c)

    def _windows(self, x):
        n, h, w, c = x.shape
        self.output_shape((h, w, c))
        wh, ww = self.window
        s = self.stride
        win = sliding_window_view(x, (wh, ww), axis=(1, 2))[:, ::s, ::s]
        return win.reshape(*win.shape[:4], wh * ww)

    def config(self):
        return {"kind": self.kind, "window": list(self.window), "stride": self.stride}


class MaxPool2D(_Pool2D):
    """Window maximum; the gradient goes to the first arg-max of each window."""

    kind = "maxpool"

    def forward(self, x):
        win = self._windows(x)
        arg = win.argmax(axis=-1)
        self._cache = (x.shape, arg)
        return np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        in_shape, arg = self._cache
        wh, ww = self.window
        s = self.stride
        ho, wo = dy.shape[1], dy.shape[2]
        dx = np.zeros(in_shape)
        for a in range(wh):
            for b in range(ww):
                routed = np.where(arg == a * ww + b, dy, 0.0)
                dx[:, a:a + s * (ho - 1) + 1:s, b:b + s * (wo - 1) + 1:s, :] += routed
        return dx


class AvgPool2D(_Pool2D):
    kind = "avgpool"

    def forward(self, x):
        self._in_shape = x.shape
        return self._windows(x).mean(axis=-1)

    def backward(self, dy):
        wh, ww = self.window
        s = self.stride
        ho, wo = dy.shape[1], dy.shape[2]
        dx = np.zeros(self._in_shape)
        share = dy / (wh * ww)
        for a in range(wh):
            for b in range(ww):
                dx[:, a:a + s * (ho - 1) + 1:s, b:b + s * (wo - 1) + 1:s, :] += share
        return dx


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x):
        self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._in_shape)


class Dense(Layer):
    """g(x W + b) with W stored as (in_features, out_features)."""

    kind = "dense"

    def __init__(self, in_features: int, out_features: int, activation: str = "identity"):
        super().__init__()
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        self.activation = activation
        self._fn, self._deriv = _activation(activation)
        self.params = {"W": np.zeros((self.in_features, self.out_features)),
                       "b": np.zeros(self.out_features)}
        self.zero_grads()

    def init_params(self, rng):
        if self.activation == "relu":
            scale = np.sqrt(2.0 / self.in_features)
        else:
            scale = np.sqrt(1.0 / self.in_features)
        self.params["W"] = rng.normal(0.0, scale, self.params["W"].shape)
        self.params["b"] = np.zeros(self.out_features)

    def output_shape(self, input_shape):
        if tuple(input_shape) != (self.in_features,):
            raise ShapeError(f"dense expects ({self.in_features},), got {tuple(input_shape)}")
        return (self.out_features,)

    def forward(self, x):
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"dense expects {self.in_features} features, got {x.shape[-1]}")
        self._x = x
        self._z = x @ self.params["W"] + self.params["b"]
        self._y = self._fn(self._z)
        return self._y

    def backward(self, dy):
        dz = dy * self._deriv(self._z, self._y)
        self.grads["W"] = self._x.T @ dz
        self.grads["b"] = dz.sum(axis=0)
        return dz @ self.params["W"].T

    def config(self):
        return {"kind": self.kind, "in_features": self.in_features,
                "out_features": self.out_features, "activation": self.activation}


class L2Normalize(Layer):
    kind = "l2norm"

    def forward(self, x):
        norm = np.linalg.norm(x, axis=1, keepdims=True)
        if np.any(norm == 0):
            raise ValueError("cannot L2-normalize a zero vector")
        self._norm = norm
        self._y = x / norm
        return self._y

    def backward(self, dy):
        y = self._y
        return (dy - y * np.sum(y * dy, axis=1, keepdims=True)) / self._norm


class LSTM(Layer):
    """Single LSTM layer over (N, T, F) input with zero initial state.

    Gate blocks are packed along the last axis in the order input, forget,
    candidate, output. With ``return_sequences`` the output is (N, T, H),
    otherwise the final hidden state (N, H).
    """

    kind = "lstm"

    def __init__(self, in_features: int, hidden: int, return_sequences: bool = False):
        super().__init__()
        self.in_features = int(in_features)
        self.hidden = int(hidden)
        self.return_sequences = bool(return_sequences)
        four = 4 * self.hidden
        self.params = {"Wx": np.zeros((self.in_features, four)),
                       "Wh": np.zeros((self.hidden, four)),
                       "b": np.zeros(four)}
        self.zero_grads()

    def init_params(self, rng):
        H = self.hidden
        limit = np.sqrt(6.0 / (self.in_features + 4 * H))
        self.params["Wx"] = rng.uniform(-limit, limit, (self.in_features, 4 * H))
        blocks = []
        for _ in range(4):
            q, r = np.linalg.qr(rng.normal(size=(H, H)))
            blocks.append(q * np.sign(np.diag(r)))
        self.params["Wh"] = np.concatenate(blocks, axis=1)
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0
        self.params["b"] = b

    def output_shape(self, input_shape):
        t, f = input_shape
        if f != self.in_features:
            raise ShapeError(f"lstm expects {self.in_features} features, got {f}")
        return (t, self.hidden) if self.return_sequences else (self.hidden,)

    def param_count(self):
        return 4 * self.hidden * (self.in_features + self.hidden + 1)

    def forward(self, x):
        n, T, f = x.shape
        if f != self.in_features:
            raise ShapeError(f"lstm expects {self.in_features} features, got {f}")
        if T < 1:
            raise ShapeError("empty sequence")
        H = self.hidden
        # time-major buffers keep every per-step slice contiguous
        xt = np.ascontiguousarray(x.transpose(1, 0, 2), dtype=np.float64)
        gates = (xt.reshape(T * n, f) @ self.params["Wx"]).reshape(T, n, 4 * H)
        gates += self.params["b"]
        hs = np.zeros((T + 1, n, H))
        cs = np.zeros((T + 1, n, H))
        tanh_c = np.empty((T, n, H))
        lstm_forward(gates, np.ascontiguousarray(self.params["Wh"]), hs, cs, tanh_c)
        self._cache = (xt, hs, cs, gates, tanh_c)
        if self.return_sequences:
            return hs[1:].transpose(1, 0, 2).copy()
        return hs[T].copy()

    def backward(self, dy):
        xt, hs, cs, gates, tanh_c = self._cache
        T, n, f = xt.shape
        H = self.hidden
        if self.return_sequences:
            dyt = np.ascontiguousarray(dy.transpose(1, 0, 2), dtype=np.float64)
        else:
            dyt = np.ascontiguousarray(dy, dtype=np.float64).reshape(1, n, H)
        dz_all = np.empty((T, n, 4 * H))
        lstm_backward(dyt, not self.return_sequences, gates, cs, tanh_c,
                      np.ascontiguousarray(self.params["Wh"].T), dz_all)
        flat_dz = dz_all.reshape(T * n, 4 * H)
        self.grads["Wx"] = xt.reshape(T * n, f).T @ flat_dz
        self.grads["Wh"] = hs[:-1].reshape(T * n, H).T @ flat_dz
        self.grads["b"] = flat_dz.sum(axis=0)
        return (flat_dz @ self.params["Wx"].T).reshape(T, n, f).transpose(1, 0, 2).copy()

    def config(self):
        return {"kind": self.kind, "in_features": self.in_features, "hidden": self.hidden,
                "return_sequences": self.return_sequences}


LAYER_KINDS = {cls.kind: cls for cls in
               (Activation, Conv2D, MaxPool2D, AvgPool2D, Flatten, Dense, L2Normalize, LSTM)}


def layer_from_config(cfg: dict) -> Layer:
    cfg = dict(cfg)
    kind = cfg.pop("kind")
    try:
        cls = LAYER_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown layer kind {kind!r}") from None
    if "kernel" in cfg:
        cfg["kernel"] = tuple(cfg["kernel"])
    if "window" in cfg:
        cfg["window"] = tuple(cfg["window"])
    return cls(**cfg)
