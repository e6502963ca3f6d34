"""Fully connected networks with hand-written backprop, and Adam.

Each network keeps all of its parameters in one contiguous vector ``flat``;
the per-layer weights and biases are views into it, so optimizers and target
blending work on a single array.
"""
from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


def orthogonal(rng: np.random.Generator, n_in: int, n_out: int, gain: float = 1.0) -> np.ndarray:
    """Orthogonal (in, out) matrix via QR of a Gaussian draw, sign-corrected."""
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if n_in < n_out:
        q = q.T
    return gain * q[:n_in, :n_out]


def _layout(dims):
    """(offset, shape) of every parameter in [W0, b0, W1, b1, ...] order."""
    out, off = [], 0
    for k in range(len(dims) - 1):
        for shape in ((dims[k], dims[k + 1]), (dims[k + 1],)):
            out.append((off, shape))
            off += int(np.prod(shape))
    return out, off


class Mlp:
    """ReLU hidden layers; linear output, or ``scale * tanh`` when ``squash`` is set.

    Weights are stored (in, out) so a batch ``x`` of shape (n, in) maps as
    ``x @ W + b``. Without an rng every parameter starts at zero.
    """

    def __init__(self, dims, rng: np.random.Generator | None = None, squash: bool = False,
                 scale: float = 1.0, out_gain: float = 1.0):
        dims = [int(d) for d in dims]
        if len(dims) < 2 or min(dims) < 1:
            raise ShapeError(f"bad layer dims {dims}")
        self.dims = dims
        self.squash = squash
        self.scale = float(scale)
        self._bind(np.zeros(_layout(dims)[1]))
        if rng is not None:
            n = len(self.W)
            for k in range(n):
                gain = out_gain if k == n - 1 else np.sqrt(2.0)
                self.W[k][...] = orthogonal(rng, dims[k], dims[k + 1], gain)

    def _bind(self, flat: np.ndarray) -> None:
        self._layout, self._size = _layout(self.dims)
        self.flat = flat
        views = self.unflatten(flat)
        self.W = views[0::2]
        self.b = views[1::2]

    def rebind(self, storage: np.ndarray) -> None:
        """Move the parameters into ``storage`` (a 1-D view of matching size)."""
        storage[...] = self.flat
        self._bind(storage)

    def unflatten(self, flat: np.ndarray) -> list[np.ndarray]:
        """Views of a flat vector laid out like the parameters."""
        if flat.shape != (self._size,):
            raise ShapeError(f"flat vector of shape {flat.shape}, expected ({self._size},)")
        out = []
        for o, s in self._layout:
            n = s[0] * s[1] if len(s) == 2 else s[0]
            out.append(flat[o: o + n].reshape(s))
        return out

    @property
    def params(self) -> list[np.ndarray]:
        return self.unflatten(self.flat)

    @property
    def n_params(self) -> int:
        return self.flat.size

    def copy(self) -> "Mlp":
        new = Mlp.__new__(Mlp)
        new.dims = list(self.dims)
        new.squash = self.squash
        new.scale = self.scale
        new._bind(self.flat.copy())
        return new

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dims[0]:
            raise ShapeError(f"input has {x.shape[-1]} features, network expects {self.dims[0]}")
        return x

    def __call__(self, x) -> np.ndarray:
        h = self._check(x)
        n = len(self.W)
        for k in range(n):
            h = h @ self.W[k] + self.b[k]
            if k < n - 1:
                np.maximum(h, 0.0, out=h)
        if self.squash:
            h = self.scale * np.tanh(h)
        return h

    def forward(self, x):
        """Forward pass that keeps the activations needed by :meth:`backward`."""
        h = self._check(x)
        acts = [h]
        n = len(self.W)
        for k in range(n):
            h = h @ self.W[k] + self.b[k]
            if k < n - 1:
                np.maximum(h, 0.0, out=h)
                acts.append(h)
        if self.squash:
            h = np.tanh(h)
            acts.append(h)
            return self.scale * h, acts
        return h, acts

    def backward(self, acts, g_out, need_input: bool = True, out: np.ndarray | None = None):
        """Reverse pass for a batch (n, in) forward.

        Returns the flat parameter gradient (written into ``out`` when given)
        and the gradient with respect to the input (``None`` when
        ``need_input`` is false).
        """
        g = np.asarray(g_out, dtype=float)
        if self.squash:
            t = acts[-1]
            g = g * (self.scale * (1.0 - t * t))
            acts = acts[:-1]
        grad = np.empty_like(self.flat) if out is None else out
        views = self.unflatten(grad)
        n = len(self.W)
        for k in range(n - 1, -1, -1):
            np.matmul(acts[k].T, g, out=views[2 * k])
            np.sum(g, axis=0, out=views[2 * k + 1])
            if k == 0 and not need_input:
                return grad, None
            g = g @ self.W[k].T
            if k > 0:
                g *= acts[k] > 0
        return grad, g

    def to_dict(self) -> dict:
        return {
            "dims": self.dims,
            "squash": self.squash,
            "scale": self.scale,
            "weights": [W.ravel().tolist() for W in self.W],
            "biases": [b.tolist() for b in self.b],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        net = cls(d["dims"], None, bool(d["squash"]), float(d["scale"]))
        if len(d["weights"]) != len(net.W) or len(d["biases"]) != len(net.b):
            raise ShapeError(f"layer count does not match dims {net.dims}")
        for k, (w, b) in enumerate(zip(d["weights"], d["biases"])):
            if len(w) != net.W[k].size or len(b) != net.b[k].size:
                raise ShapeError(f"layer {k} does not match dims {net.dims}")
            net.W[k][...] = np.asarray(w, dtype=float).reshape(net.W[k].shape)
            net.b[k][...] = b
        return net


def soft_update(online: Mlp, target: Mlp, xi: float) -> None:
    """In place: ``target <- xi * online + (1 - xi) * target``."""
    if online.dims != target.dims:
        raise ShapeError(f"soft update between {online.dims} and {target.dims}")
    t = target.flat
    t *= 1.0 - xi
    t += xi * online.flat


class Adam:
    """Adam with bias correction over one flat parameter vector, updated in place."""

    def __init__(self, flat: np.ndarray, lr: float = 5e-4, b1: float = 0.9, b2: float = 0.999,
                 eps: float = 1e-8):
        self.p = flat
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = np.zeros_like(flat)
        self.v = np.zeros_like(flat)
        self._tmp = np.empty_like(flat)
        self.t = 0

    def step(self, grad: np.ndarray) -> None:
        """Descend ``grad``."""
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        tmp = self._tmp
        self.m *= self.b1
        np.multiply(grad, 1.0 - self.b1, out=tmp)
        self.m += tmp
        self.v *= self.b2
        np.multiply(grad, grad, out=tmp)
        tmp *= 1.0 - self.b2
        self.v += tmp
        # lr * m_hat / (sqrt(v_hat) + eps)
        np.sqrt(self.v, out=tmp)
        tmp *= 1.0 / np.sqrt(c2)
        tmp += self.eps
        np.divide(self.m, tmp, out=tmp)
        tmp *= self.lr / c1
        self.p -= tmp
