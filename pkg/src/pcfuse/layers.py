"""Minimal differentiable building blocks with analytic gradients.

Only what the fusion and point-convolution blocks need: fully connected
layers, a numerically stable sigmoid, and a seeded parameter store with
flat-binary persistence.  There is deliberately no optimizer; gradients
exist to be checked against finite differences.
"""

import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class DenseLayer:
    """y = x @ W.T + b with W of shape (out, in)."""

    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.ndim != 1 or self.W.shape[0] != self.b.shape[0]:
            raise ValueError(f"inconsistent shapes W{self.W.shape} b{self.b.shape}")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise ValueError("layer parameters must be finite")

    @property
    def out_dim(self):
        return self.W.shape[0]

    @property
    def in_dim(self):
        return self.W.shape[1]


def dense_forward(layer: DenseLayer, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.in_dim:
        raise ValueError(f"input width {x.shape[-1]} does not match layer in_dim {layer.in_dim}")
    return x @ layer.W.T + layer.b


def dense_backward(layer: DenseLayer, x, upstream):
    """Exact gradients for y = x @ W.T + b.

    x: (..., in), upstream: (..., out).  Returns (grad_x, grad_W, grad_b);
    grad_W and grad_b are summed over all leading axes.
    """
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if x.shape[-1] != layer.in_dim or upstream.shape[-1] != layer.out_dim:
        raise ValueError("shape mismatch in dense_backward")
    if x.shape[:-1] != upstream.shape[:-1]:
        raise ValueError("x and upstream must share leading shape")
    grad_x = upstream @ layer.W
    u2 = upstream.reshape(-1, layer.out_dim)
    x2 = x.reshape(-1, layer.in_dim)
    grad_W = u2.T @ x2
    grad_b = u2.sum(axis=0)
    return grad_x, grad_W, grad_b


def sigmoid(x):
    """Elementwise logistic function, sign-split for stability."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_grad(y):
    """Derivative of the sigmoid expressed through its output y."""
    return y * (1.0 - y)


def glorot_uniform(rng, out_dim, in_dim):
    bound = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-bound, bound, size=(out_dim, in_dim))


class ParamStore:
    """Named collection of dense layers with deterministic initialization.

    Each layer is seeded from (store seed, layer name), so recreating a
    store with the same seed reproduces identical parameters regardless of
    creation order.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.layers = {}

    def dense(self, name: str, out_dim: int, in_dim: int) -> DenseLayer:
        if name in self.layers:
            layer = self.layers[name]
            if layer.W.shape != (out_dim, in_dim):
                raise ValueError(f"layer {name!r} already exists with shape {layer.W.shape}")
            return layer
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, zlib.crc32(name.encode())]))
        layer = DenseLayer(W=glorot_uniform(rng, out_dim, in_dim), b=np.zeros(out_dim))
        self.layers[name] = layer
        return layer

    def zero_dense(self, name: str, out_dim: int, in_dim: int, bias=0.0) -> DenseLayer:
        layer = DenseLayer(W=np.zeros((out_dim, in_dim)), b=np.full(out_dim, float(bias)))
        self.layers[name] = layer
        return layer

    def save(self, bin_path, manifest_path):
        """Flat little-endian float64 binary plus a text manifest of
        name/shape triples, in sorted name order."""
        names = sorted(self.layers)
        chunks = []
        lines = []
        for name in names:
            layer = self.layers[name]
            chunks.append(layer.W.ravel())
            chunks.append(layer.b)
            lines.append(f"{name} {layer.out_dim} {layer.in_dim}")
        flat = np.concatenate(chunks) if chunks else np.empty(0)
        np.ascontiguousarray(flat, dtype="<f8").tofile(bin_path)
        Path(manifest_path).write_text("\n".join(lines) + ("\n" if lines else ""))

    @classmethod
    def load(cls, bin_path, manifest_path, seed=0):
        store = cls(seed)
        flat = np.fromfile(bin_path, dtype="<f8")
        pos = 0
        for lineno, line in enumerate(Path(manifest_path).read_text().splitlines(), start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"{manifest_path}: line {lineno}: expected 'name out in'")
            name, out_dim, in_dim = parts[0], int(parts[1]), int(parts[2])
            need = out_dim * in_dim + out_dim
            if pos + need > flat.size:
                raise ValueError(f"{bin_path}: too few values for layer {name!r}")
            W = flat[pos:pos + out_dim * in_dim].reshape(out_dim, in_dim)
            b = flat[pos + out_dim * in_dim:pos + need]
            pos += need
            store.layers[name] = DenseLayer(W=W.copy(), b=b.copy())
        if pos != flat.size:
            raise ValueError(f"{bin_path}: {flat.size - pos} trailing values not covered by manifest")
        return store
