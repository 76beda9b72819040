from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 12
    epochs: int = 10
    margin: float = 0.2
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = None
    patience: int | None = None

    def __post_init__(self):
        errors = []
        if not self.learning_rate > 0:
            errors.append("learning_rate must be > 0")
        if self.batch_size < 1:
            errors.append("batch_size must be >= 1")
        if self.epochs < 0:
            errors.append("epochs must be >= 0")
        if self.margin < 0:
            errors.append("margin must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            errors.append("beta1 and beta2 must lie in [0, 1)")
        if errors:
            raise ValueError("; ".join(errors))


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def clip_by_global_norm(grads: dict, max_norm: float | None) -> dict:
    if max_norm is None:
        return grads
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm:
        return grads
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}


def optimizer_step(params: dict, grads: dict, state: AdamState, config: TrainConfig) -> dict:
    """One bias-corrected Adam update. ``params`` is updated in place and returned."""
    grads = clip_by_global_norm(grads, config.clip_norm)
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.eps)
    return params
