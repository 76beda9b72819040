from __future__ import annotations

import numpy as np


def relative_error(a, b, floor: float = 1e-6) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def branch_signature(model) -> bytes:
    """Fingerprint of the piecewise branch taken by the last forward pass.

    Covers relu masks (in conv, dense and activation layers) and max-pool
    arg-max choices. Two inputs with equal signatures lie on the same linear
    piece of every non-smooth layer.
    """
    from .layers import Activation, Conv2D, Dense, MaxPool2D

    parts = []
    for layer in model.layers:
        if isinstance(layer, MaxPool2D):
            parts.append(np.ascontiguousarray(layer._cache[1]).tobytes())
        elif isinstance(layer, Conv2D) and layer.activation == "relu":
            parts.append(np.packbits(layer._cache[2] > 0).tobytes())
        elif isinstance(layer, Dense) and layer.activation == "relu":
            parts.append(np.packbits(layer._z > 0).tobytes())
        elif isinstance(layer, Activation) and layer.name == "relu":
            parts.append(np.packbits(layer._z > 0).tobytes())
    return b"|".join(parts)


def numerical_gradient(loss_fn, array: np.ndarray, h: float = 1e-5, indices=None,
                       signature_fn=None) -> np.ndarray:
    """Central differences of ``loss_fn()`` w.r.t. entries of ``array`` (mutated in place).

    Returns the numerical gradient at ``indices`` (flat positions), or at every
    entry when ``indices`` is None. With ``signature_fn``, an entry whose two
    probes land on different branches (a kink inside [x-h, x+h]) comes back NaN.
    """
    flat = array.reshape(-1)
    if indices is None:
        indices = np.arange(flat.size)
    out = np.empty(len(indices))
    for k, idx in enumerate(indices):
        orig = flat[idx]
        flat[idx] = orig + h
        up = loss_fn()
        sig_up = signature_fn() if signature_fn else None
        flat[idx] = orig - h
        down = loss_fn()
        sig_down = signature_fn() if signature_fn else None
        flat[idx] = orig
        out[k] = np.nan if sig_up != sig_down else (up - down) / (2.0 * h)
    return out


def check_model_gradients(model, loss_and_grad, x, h: float = 1e-5, max_per_param=None,
                          rng=None, skip_kinks: bool = False, stats: dict | None = None) -> dict:
    """Compare backprop with central differences for every parameter of ``model``.

    ``loss_and_grad(output)`` returns (loss, d loss / d output). Returns a dict
    mapping parameter name (and ``"input"``) to the maximum relative error.

    ``skip_kinks`` drops entries whose finite difference straddles a relu or
    max-pool switch, where no derivative exists to compare against. The
    number of checked and dropped entries is written into ``stats``.
    """
    rng = rng or np.random.default_rng(0)
    sig = (lambda: branch_signature(model)) if skip_kinks else None
    checked = skipped = 0

    def compare(ana, num):
        nonlocal checked, skipped
        keep = ~np.isnan(num)
        checked += int(keep.sum())
        skipped += int((~keep).sum())
        return float(relative_error(ana[keep], num[keep]).max()) if keep.any() else 0.0

    def loss_only():
        return loss_and_grad(model.forward(x))[0]

    out = model.forward(x)
    _, dout = loss_and_grad(out)
    dx = model.backward(dout)
    analytic = {k: g.copy() for k, g in model.grads().items()}
    errors = {}
    for name, p in model.named_params():
        idx = None
        if max_per_param is not None and p.size > max_per_param:
            idx = rng.choice(p.size, size=max_per_param, replace=False)
        num = numerical_gradient(loss_only, p, h, idx, sig)
        ana = analytic[name].reshape(-1) if idx is None else analytic[name].reshape(-1)[idx]
        errors[name] = compare(ana, num)
    idx = None
    if max_per_param is not None and x.size > max_per_param:
        idx = rng.choice(x.size, size=max_per_param, replace=False)
    num = numerical_gradient(loss_only, x, h, idx, sig)
    ana = dx.reshape(-1) if idx is None else dx.reshape(-1)[idx]
    errors["input"] = compare(ana, num)
    if stats is not None:
        stats.update(checked=checked, skipped=skipped)
    return errors
