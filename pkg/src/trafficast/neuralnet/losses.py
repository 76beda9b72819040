from __future__ import annotations

import numpy as np

UNIT_NORM_TOL = 1e-6


def l2_normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValueError("cannot normalize a zero vector")
    return v / norm


def _check_unit(*vectors):
    for v in vectors:
        norms = np.linalg.norm(np.atleast_2d(v), axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
            raise ValueError("triplet loss expects unit-norm embeddings")


def triplet_loss(anchor, positive, negative, margin: float = 0.2) -> float:
    """max(0, |a - p|^2 - |a - n|^2 + margin) for a single triplet."""
    a, p, n = (np.asarray(v, dtype=np.float64) for v in (anchor, positive, negative))
    if not (a.shape == p.shape == n.shape):
        raise ValueError("embeddings must have the same extent")
    _check_unit(a, p, n)
    return float(max(0.0, np.sum((a - p) ** 2) - np.sum((a - n) ** 2) + margin))


def batch_triplet_loss(emb: np.ndarray, triplets: np.ndarray, margin: float):
    """Mean hinged triplet loss over index triplets into ``emb``.

    ``triplets`` is an (n, 3) integer array of (anchor, positive, negative)
    rows. Returns the loss and its gradient with respect to ``emb``.
    """
    a, p, n = emb[triplets[:, 0]], emb[triplets[:, 1]], emb[triplets[:, 2]]
    raw = np.sum((a - p) ** 2, axis=1) - np.sum((a - n) ** 2, axis=1) + margin
    active = (raw > 0).astype(np.float64)[:, None]
    m = len(triplets)
    loss = float(np.sum(np.maximum(raw, 0.0)) / m)
    grad = np.zeros_like(emb)
    scale = 2.0 * active / m
    np.add.at(grad, triplets[:, 0], scale * (n - p))
    np.add.at(grad, triplets[:, 1], scale * (p - a))
    np.add.at(grad, triplets[:, 2], scale * (a - n))
    return loss, grad


def mse(pred: np.ndarray, target: np.ndarray):
    diff = pred - target
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size
