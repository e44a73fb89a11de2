"""Minimal MLP with tanh hidden layers and hand-derived gradients.

A network is a list of (W, b) pairs with W shaped (fan_in, fan_out). All
hidden layers apply tanh; the output layer is linear. ``mlp_backward``
consumes the caches produced by ``mlp_forward`` and returns parameter
gradients plus the gradient with respect to the input batch.
"""

from __future__ import annotations

import numpy as np

Layers = list[tuple[np.ndarray, np.ndarray]]


def orthogonal(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float) -> np.ndarray:
    """Orthogonal weight init (rows or columns orthonormal, scaled by gain)."""
    a = rng.standard_normal((max(fan_in, fan_out), min(fan_in, fan_out)))
    q, r = np.linalg.qr(a)
    d = np.sign(np.diag(r))
    d[d == 0.0] = 1.0
    q = q * d
    if fan_in < fan_out:
        q = q.T
    return np.ascontiguousarray(gain * q[:fan_in, :fan_out])


def mlp_init(
    sizes: list[int],
    rng: np.random.Generator,
    hidden_gain: float = float(np.sqrt(2.0)),
    head_gain: float = 1.0,
) -> Layers:
    """Create layers for the given [in, hidden..., out] sizes."""
    layers: Layers = []
    for li in range(len(sizes) - 1):
        gain = head_gain if li == len(sizes) - 2 else hidden_gain
        w = orthogonal(rng, sizes[li], sizes[li + 1], gain)
        layers.append((w, np.zeros(sizes[li + 1])))
    return layers


def mlp_forward(layers: Layers, x: np.ndarray) -> tuple[np.ndarray, list]:
    """Forward pass. x is (B, in); returns (out (B, out), caches)."""
    caches = []
    h = x
    for w, b in layers[:-1]:
        a = np.tanh(h @ w + b)
        caches.append((h, a))
        h = a
    w, b = layers[-1]
    caches.append((h, None))
    return h @ w + b, caches


def mlp_backward(layers: Layers, caches: list, dout: np.ndarray) -> tuple[list, np.ndarray]:
    """Backprop dout (B, out) through the network.

    Returns ([(dW, db), ...] matching the layer list, d_input).
    """
    grads: list = [None] * len(layers)
    d = dout
    for li in range(len(layers) - 1, -1, -1):
        h_in, act = caches[li]
        dz = d if act is None else d * (1.0 - act * act)
        grads[li] = (h_in.T @ dz, dz.sum(axis=0))
        d = dz @ layers[li][0].T
    return grads, d
