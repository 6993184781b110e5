"""A small fully connected ReLU network with hand-written backprop."""

from __future__ import annotations

import numpy as np


class MLP:
    """``sizes = [in, h1, ..., out]``; ReLU on hidden layers, linear output.

    Weights use He-uniform initialisation, ``U(-sqrt(6/fan_in), sqrt(6/fan_in))``,
    and zero biases.
    """

    def __init__(self, sizes, rng: np.random.Generator | None = None):
        self.sizes = [int(s) for s in sizes]
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ValueError("an MLP needs at least an input and an output layer")
        rng = rng or np.random.default_rng(0)
        self.W = []
        self.b = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            lim = np.sqrt(6.0 / fan_in)
            self.W.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
            self.b.append(np.zeros(fan_out))

    @property
    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.W, self.b) for p in pair]

    def copy(self) -> "MLP":
        other = MLP.__new__(MLP)
        other.sizes = list(self.sizes)
        other.W = [w.copy() for w in self.W]
        other.b = [b.copy() for b in self.b]
        return other

    def load_from(self, other: "MLP") -> None:
        for dst, src in zip(self.params, other.params):
            dst[...] = src

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat: np.ndarray) -> None:
        i = 0
        for p in self.params:
            p[...] = flat[i:i + p.size].reshape(p.shape)
            i += p.size

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=float)
        last = len(self.W) - 1
        for layer, (w, b) in enumerate(zip(self.W, self.b)):
            h = h @ w + b
            if layer < last:
                h = np.maximum(h, 0.0)
        return h

    __call__ = forward

    def forward_cache(self, x: np.ndarray):
        """Output plus the layer inputs needed by :meth:`backward`."""
        h = np.asarray(x, dtype=float)
        acts = [h]
        last = len(self.W) - 1
        for layer, (w, b) in enumerate(zip(self.W, self.b)):
            h = h @ w + b
            if layer < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return h, acts

    def backward(self, acts, grad_out: np.ndarray) -> list[np.ndarray]:
        """Gradients (same order as :attr:`params`) of ``sum(grad_out * output)``."""
        grads = [None] * (2 * len(self.W))
        g = grad_out
        for layer in range(len(self.W) - 1, -1, -1):
            inp = acts[layer]
            grads[2 * layer] = inp.T @ g
            grads[2 * layer + 1] = g.sum(axis=0)
            if layer > 0:
                g = (g @ self.W[layer].T) * (acts[layer] > 0)
        return grads

    def to_dict(self) -> dict:
        return {"sizes": self.sizes, "W": [w.tolist() for w in self.W],
                "b": [b.tolist() for b in self.b]}


class SGD:
    def __init__(self, lr: float = 1e-3):
        self.lr = lr

    def step(self, net: MLP, grads) -> None:
        for p, g in zip(net.params, grads):
            p -= self.lr * g


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, net: MLP, grads) -> None:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in net.params]
            self.v = [np.zeros_like(p) for p in net.params]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(net.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def mse_loss_grad(net: MLP, x: np.ndarray, y: np.ndarray):
    """Mean squared error of ``net(x)`` against ``y`` and its parameter gradients."""
    out, acts = net.forward_cache(x)
    y = np.asarray(y, dtype=float).reshape(out.shape)
    r = out - y
    loss = float(np.mean(r * r))
    grads = net.backward(acts, 2.0 * r / r.size)
    return loss, grads
