"""Small feedforward networks with a location embedding, written against numpy.

All parameters of a network live in one flat float64 vector; the embedding
table and layer weights are views into it, which keeps the optimizer,
soft target tracking and checkpointing trivial.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

CHECKPOINT_MAGIC = b"CSNNCKPT"
CHECKPOINT_VERSION = 1


def elu(x):
    out = np.minimum(x, 0.0)
    np.expm1(out, out=out)
    out += np.maximum(x, 0.0)
    return out


def elu_grad(x):
    out = np.minimum(x, 0.0)
    np.exp(out, out=out)
    return out


class Mlp:
    """Embedding(destination) ++ continuous features -> ELU hidden layers -> scalar."""

    def __init__(self, num_locations: int, num_features: int, embed_dim: int = 10,
                 hidden: Sequence[int] = (300, 300, 300), seed: int = 0, init: bool = True,
                 dtype: str = "float64"):
        self.num_locations = int(num_locations)
        self.num_features = int(num_features)
        self.embed_dim = int(embed_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.seed = seed
        self.dtype = np.dtype(dtype)
        widths = [self.embed_dim + self.num_features, *self.hidden, 1]
        self.shapes = [(self.num_locations, self.embed_dim)]
        for a, b in zip(widths[:-1], widths[1:]):
            self.shapes += [(a, b), (b,)]
        self.size = sum(int(np.prod(s)) for s in self.shapes)
        self.params = np.zeros(self.size, dtype=self.dtype)
        self._bind()
        self._cache = None
        if init:
            self.initialize(seed)

    def _bind(self) -> None:
        views, off = [], 0
        for s in self.shapes:
            n = int(np.prod(s))
            views.append(self.params[off:off + n].reshape(s))
            off += n
        self.embedding = views[0]
        self.weights = views[1::2]
        self.biases = views[2::2]

    def initialize(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        self.embedding[...] = rng.normal(0.0, 0.1, self.embedding.shape)
        for W, b in zip(self.weights, self.biases):
            lim = 1.0 / np.sqrt(W.shape[0])
            W[...] = rng.uniform(-lim, lim, W.shape)
            b[...] = rng.uniform(-lim, lim, b.shape)

    def set_params(self, flat: np.ndarray) -> None:
        if flat.shape != self.params.shape:
            raise ValueError(f"expected {self.params.shape} parameters, got {flat.shape}")
        self.params[...] = flat

    def copy(self) -> "Mlp":
        other = Mlp(self.num_locations, self.num_features, self.embed_dim, self.hidden, self.seed, init=False,
                    dtype=self.dtype.name)
        other.params[...] = self.params
        return other

    def dims(self) -> dict[str, Any]:
        return {"num_locations": self.num_locations, "num_features": self.num_features,
                "embed_dim": self.embed_dim, "hidden": list(self.hidden)}

    def _inputs(self, dest, features):
        dest = np.atleast_1d(np.asarray(dest, dtype=np.int64))
        features = np.asarray(features, dtype=self.dtype).reshape(len(dest), self.num_features)
        if dest.size and (dest.min() < 0 or dest.max() >= self.num_locations):
            raise IndexError(f"destination id out of range 0..{self.num_locations - 1}")
        return dest, np.hstack([self.embedding[dest], features])

    def forward(self, dest, features) -> np.ndarray:
        """Batched forward pass that remembers activations for :meth:`backward`."""
        dest, a = self._inputs(dest, features)
        pre, acts = [], [a]
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ W + b
            if i < last:
                pre.append(z)
                a = elu(z)
                acts.append(a)
            else:
                a = z
        self._cache = (dest, pre, acts)
        return a[:, 0]

    def predict(self, dest, features) -> np.ndarray:
        _, a = self._inputs(dest, features)
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ W + b
            if i < last:
                a = elu(a)
        return a[:, 0]

    def backward(self, upstream) -> np.ndarray:
        """Gradient of ``sum(upstream * output)`` with respect to the flat parameters."""
        if self._cache is None:
            raise RuntimeError("backward called without a matching forward pass")
        dest, pre, acts = self._cache
        self._cache = None
        g = np.asarray(upstream, dtype=self.dtype).reshape(-1, 1)
        if len(g) != len(dest):
            raise ValueError("upstream gradient does not match the forward batch")
        grads_W, grads_b = [], []
        for i in range(len(self.weights) - 1, -1, -1):
            grads_W.append(acts[i].T @ g)
            grads_b.append(g.sum(axis=0))
            g = g @ self.weights[i].T
            if i > 0:
                g = g * elu_grad(pre[i - 1])
        grad_emb = np.zeros_like(self.embedding)
        np.add.at(grad_emb, dest, g[:, :self.embed_dim])
        parts = [grad_emb.ravel()]
        for gw, gb in zip(reversed(grads_W), reversed(grads_b)):
            parts += [gw.ravel(), gb.ravel()]
        return np.concatenate(parts)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int, dtype="float64", **kw) -> "AdamState":
        return cls(np.zeros(size, dtype=dtype), np.zeros(size, dtype=dtype), **kw)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float) -> np.ndarray:
    """One bias-corrected adaptive-moment update, applied in place."""
    if params.shape != grads.shape:
        raise ValueError("parameter and gradient shapes differ")
    if not np.all(np.isfinite(grads)):
        raise FloatingPointError("non-finite gradient; training halted")
    state.t += 1
    tmp = np.multiply(grads, 1 - state.beta1)
    state.m *= state.beta1
    state.m += tmp
    np.multiply(grads, grads, out=tmp)
    tmp *= 1 - state.beta2
    state.v *= state.beta2
    state.v += tmp
    # params -= lr * m_hat / (sqrt(v_hat) + eps), bias corrections folded into scalars
    np.sqrt(state.v, out=tmp)
    tmp *= 1.0 / np.sqrt(1 - state.beta2**state.t)
    tmp += state.eps
    np.divide(state.m, tmp, out=tmp)
    tmp *= lr / (1 - state.beta1**state.t)
    params -= tmp
    return params


@dataclass
class TargetPair:
    online: Mlp
    target: Mlp
    tau: float = 0.001

    @classmethod
    def from_online(cls, online: Mlp, tau: float = 0.001) -> "TargetPair":
        return cls(online, online.copy(), tau)


def soft_update(pair: TargetPair, tau: float | None = None) -> np.ndarray:
    tau = pair.tau if tau is None else tau
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    tp = pair.target.params
    tp *= 1.0 - tau
    tp += np.multiply(pair.online.params, tau)
    return tp


class ReplayBuffer:
    """Proportional prioritized replay with FIFO eviction."""

    def __init__(self, capacity: int = 50_000, alpha: float = 0.6, beta: float = 0.4, tag: str | None = None):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.alpha = alpha
        self.beta = beta
        self.tag = tag
        self.items: list[Any] = [None] * self.capacity
        self.priorities = np.zeros(self.capacity)
        self.next = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, item: Any, priority: float | None = None, tag: str | None = None) -> None:
        if self.tag is not None and tag is not None and tag != self.tag:
            raise ValueError(f"buffer holds experiences of {self.tag!r}, refusing {tag!r}")
        if priority is None:
            priority = self.priorities[:self.size].max() if self.size else 1.0
        if not priority > 0:
            raise ValueError("priority must be positive")
        self.items[self.next] = item
        self.priorities[self.next] = priority
        self.next = (self.next + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def oldest_first(self) -> list[Any]:
        if self.size < self.capacity:
            return self.items[:self.size]
        return self.items[self.next:] + self.items[:self.next]

    def probabilities(self) -> np.ndarray:
        p = self.priorities[:self.size] ** self.alpha
        return p / p.sum()

    def sample(self, batch_size: int, rng: np.random.Generator):
        """Return ``(indices, items, importance_weights)``; weights are scaled so the largest is 1."""
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        probs = self.probabilities()
        idx = rng.choice(self.size, size=batch_size, p=probs)
        w = (self.size * probs[idx]) ** (-self.beta)
        w /= w.max()
        return idx, [self.items[i] for i in idx], w

    def update_priorities(self, indices, td_errors, floor: float = 1e-3) -> None:
        self.priorities[np.asarray(indices)] = np.abs(np.asarray(td_errors, dtype=float)) + floor


def save_checkpoint(path, net: Mlp, meta: dict[str, Any] | None = None) -> None:
    header = json.dumps({"dims": net.dims(), "seed": net.seed, "size": net.size, "dtype": net.dtype.name,
                         "meta": meta or {}}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        fh.write(net.params.astype("<f8").tobytes())   # widened losslessly; header keeps the dtype


def read_checkpoint(path) -> tuple[dict[str, Any], np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a network checkpoint")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[16:16 + hlen])
    dtype = np.dtype(header.get("dtype", "float64"))
    params = np.frombuffer(raw[16 + hlen:], dtype="<f8").astype(dtype)
    if params.size != header["size"]:
        raise ValueError(f"{path}: expected {header['size']} parameters, found {params.size}")
    return header, params


def load_checkpoint(path, expect: dict[str, Any] | None = None) -> Mlp:
    header, params = read_checkpoint(path)
    dims = header["dims"]
    if expect is not None:
        for key, want in expect.items():
            got = dims.get(key)
            if got != want:
                raise ValueError(f"{path}: checkpoint field {key!r} is {got}, config expects {want}")
    net = Mlp(dims["num_locations"], dims["num_features"], dims["embed_dim"], dims["hidden"],
              seed=header["seed"], init=False, dtype=params.dtype.name)
    net.set_params(params)
    return net
