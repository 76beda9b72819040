from __future__ import annotations

import numpy as np

from .layers import (LSTM, Conv2D, Dense, Flatten, L2Normalize, Layer, MaxPool2D,
                     layer_from_config)


class Sequential:
    """A chain of layers with named parameters ``"<index>.<key>"``."""

    def __init__(self, layers: list[Layer], input_shape: tuple):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.shapes = [self.input_shape]
        for layer in self.layers:
            self.shapes.append(tuple(layer.output_shape(self.shapes[-1])))

    @property
    def output_shape(self) -> tuple:
        return self.shapes[-1]

    def init_params(self, rng: np.random.Generator) -> "Sequential":
        for layer in self.layers:
            layer.init_params(rng)
            layer.zero_grads()
        return self

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    __call__ = forward

    def backward(self, dy: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def named_params(self):
        for i, layer in enumerate(self.layers):
            for key in layer.params:
                yield f"{i}.{key}", layer.params[key]

    def params(self) -> dict[str, np.ndarray]:
        return dict(self.named_params())

    def grads(self) -> dict[str, np.ndarray]:
        return {f"{i}.{k}": g for i, layer in enumerate(self.layers) for k, g in layer.grads.items()}

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        for i, layer in enumerate(self.layers):
            for key in layer.params:
                value = np.asarray(params[f"{i}.{key}"], dtype=np.float64)
                if value.shape != layer.params[key].shape:
                    raise ValueError(f"shape mismatch for {i}.{key}: {value.shape}")
                layer.params[key] = value.copy()

    def param_count(self) -> int:
        return sum(layer.param_count() for layer in self.layers)

    def config(self) -> dict:
        return {"input_shape": list(self.input_shape),
                "layers": [layer.config() for layer in self.layers]}

    @classmethod
    def from_config(cls, cfg: dict) -> "Sequential":
        return cls([layer_from_config(c) for c in cfg["layers"]], tuple(cfg["input_shape"]))

    def copy(self) -> "Sequential":
        clone = Sequential.from_config(self.config())
        clone.set_params(self.params())
        for layer in clone.layers:
            layer.zero_grads()
        return clone


def build_embedder(resolution: int = 64, embedding_dim: int = 32, conv1: int = 16,
                   conv2: int = 32, kernel: int = 5, hidden: int = 256) -> Sequential:
    """LeNet-style image embedder ending in an L2-normalized code."""
    layers = [
        Conv2D(1, conv1, kernel, 1, "relu"),
        MaxPool2D(2, 2),
        Conv2D(conv1, conv2, kernel, 1, "relu"),
        MaxPool2D(2, 2),
        Flatten(),
    ]
    shape = (resolution, resolution, 1)
    for layer in layers:
        shape = layer.output_shape(shape)
    layers += [Dense(shape[0], hidden, "relu"), Dense(hidden, embedding_dim), L2Normalize()]
    return Sequential(layers, (resolution, resolution, 1))


def build_predictor(n_steps: int, lstm1: int = 50, lstm2: int = 25, dense: int = 200) -> Sequential:
    """Two stacked LSTMs and a two-layer dense head producing one value."""
    return Sequential([
        LSTM(1, lstm1, return_sequences=True),
        LSTM(lstm1, lstm2),
        Dense(lstm2, dense, "relu"),
        Dense(dense, 1),
    ], (n_steps, 1))
