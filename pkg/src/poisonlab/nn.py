"""Small fully connected networks with exact backprop, Adam and soft updates.

Everything runs in float64 on numpy. Inputs may be a single vector or a
batch of row vectors; gradients are summed over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("relu", "tanh", "softmax", "identity")


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "softmax":
        e = np.exp(z - z.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)
    return z


def _act_backward(name: str, z: np.ndarray, a: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Pull the upstream gradient ``g`` through the activation."""
    if name == "relu":
        return g * (z > 0)
    if name == "tanh":
        return g * (1.0 - a * a)
    if name == "softmax":
        return a * (g - (g * a).sum(axis=-1, keepdims=True))
    return g


class Mlp:
    """Feed-forward network; ``activations[i]`` follows layer ``i``."""

    def __init__(self, dims, activations, rng: np.random.Generator | None = None):
        dims = [int(d) for d in dims]
        activations = [a.lower() for a in activations]
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ValueError("need at least input and output dims, all positive")
        if len(activations) != len(dims) - 1:
            raise ValueError("one activation per layer")
        for i, a in enumerate(activations):
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
            if a == "softmax" and i != len(activations) - 1:
                raise ValueError("softmax is only allowed on the output layer")
        self.dims = dims
        self.activations = activations
        rng = rng if rng is not None else np.random.default_rng()
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))

    @property
    def params(self) -> list[np.ndarray]:
        """Flat parameter list ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "Mlp":
        net = Mlp.__new__(Mlp)
        net.dims = list(self.dims)
        net.activations = list(self.activations)
        net.weights = [w.copy() for w in self.weights]
        net.biases = [b.copy() for b in self.biases]
        return net

    def same_architecture(self, other: "Mlp") -> bool:
        return self.dims == other.dims and self.activations == other.activations

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dims[0] or x.ndim > 2:
            raise ValueError(f"expected input dim {self.dims[0]}, got shape {x.shape}")
        return x

    def forward(self, x) -> np.ndarray:
        a = self._check_input(x)
        for w, b, name in zip(self.weights, self.biases, self.activations):
            a = _act(name, a @ w.T + b)
        return a

    __call__ = forward

    def forward_cache(self, x):
        a = self._check_input(x)
        cache = []
        for w, b, name in zip(self.weights, self.biases, self.activations):
            z = a @ w.T + b
            out = _act(name, z)
            cache.append((a, z, out))
            a = out
        return a, cache

    def backward(self, cache, upstream):
        """Gradients of ``<output, upstream>`` given a cache from :meth:`forward_cache`."""
        g = np.asarray(upstream, dtype=np.float64)
        grads = [None] * (2 * len(self.weights))
        for i in reversed(range(len(self.weights))):
            a_in, z, out = cache[i]
            g = _act_backward(self.activations[i], z, out, g)
            if g.ndim == 1:
                grads[2 * i] = np.outer(g, a_in)
                grads[2 * i + 1] = g.copy()
            else:
                grads[2 * i] = g.T @ a_in
                grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i]
        return grads, g

    def save(self, path) -> None:
        header = "MLP1 " + " ".join(str(d) for d in self.dims) + " " + " ".join(self.activations)
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii") + b"\n")
            for p in self.params:
                fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "Mlp":
        data = Path(path).read_bytes()
        line, _, body = data.partition(b"\n")
        tokens = line.decode("ascii").split()
        if not tokens or tokens[0] != "MLP1":
            raise ValueError("not an MLP1 weight file")
        n_layers = (len(tokens) - 1 - 1) // 2
        dims = [int(t) for t in tokens[1 : 2 + n_layers]]
        acts = tokens[2 + n_layers :]
        net = cls(dims, acts, np.random.default_rng(0))
        expected = sum(p.size for p in net.params) * 8
        if len(body) != expected:
            raise ValueError(f"weight payload has {len(body)} bytes, expected {expected}")
        flat = np.frombuffer(body, dtype="<f8")
        offset = 0
        for p in net.params:
            p[...] = flat[offset : offset + p.size].reshape(p.shape)
            offset += p.size
        return net


def forward(net: Mlp, x) -> np.ndarray:
    return net.forward(x)


def gradients(net: Mlp, x, upstream):
    """Parameter gradients ``[dW0, db0, ...]`` and input gradient of ``<net(x), upstream>``."""
    out, cache = net.forward_cache(x)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != out.shape:
        raise ValueError(f"upstream shape {upstream.shape} does not match output {out.shape}")
    return net.backward(cache, upstream)


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, net: Mlp, grads) -> Mlp:
        """Descend along ``grads`` in place."""
        params = net.params
        if len(grads) != len(params):
            raise ValueError("one gradient per parameter tensor")
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise ValueError("gradient shape mismatch")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return net


def opt_step(net: Mlp, grads, opt: Adam) -> Mlp:
    return opt.step(net, grads)


def soft_update(target: Mlp, source: Mlp, rho: float) -> Mlp:
    """``theta' <- rho * theta + (1 - rho) * theta'`` for every parameter."""
    if not target.same_architecture(source):
        raise ValueError("soft update needs identical architectures")
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    for t, s in zip(target.params, source.params):
        t *= 1.0 - rho
        t += rho * s
    return target


def weight_file_header(path) -> str:
    with open(path, "rb") as fh:
        return fh.readline().decode("ascii").strip()
