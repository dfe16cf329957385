"""Small dense MLPs with binary pruning masks, manual backprop and Adam.

Parameters of an ``(n_in, n_hidden, n_out)`` network are the list
``[W1 (n_hidden, n_in), b1, W2 (n_out, n_hidden), b2]``.  A mask of the same
layout fixes which entries exist; masked entries are zero and stay zero.

Checkpoint layout (little endian)::

    magic   4s   b"TLMM"
    version u16  1
    ntensor u16
    step    u32  Adam step counter
    per tensor: ndim u8, then ndim x u32 dims
    mask bits, packed LSB-first over all tensors in order, padded to a byte
    params, first moments, second moments: float32, unmasked entries only
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

ACTOR_SIZES = (13, 32, 8)
CRITIC_SIZES = (13, 32, 1)

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8

_MAGIC = b"TLMM"
_VERSION = 1


def param_shapes(sizes: Sequence[int]) -> list[tuple[int, ...]]:
    shapes: list[tuple[int, ...]] = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        shapes += [(n_out, n_in), (n_out,)]
    return shapes


def make_mask(layer_shapes: Sequence[tuple[int, int]], rates: Sequence[float],
              seed: int) -> list[np.ndarray]:
    """Pruning mask for an MLP given its weight-matrix shapes ``(out, in)``.

    ``rates[k]`` is the fraction of weight matrix ``k`` to zero, rounded to
    the nearest element count.  Hidden units shared by matrices ``k`` and
    ``k + 1`` are first removed whole (row of ``k``, bias, column of ``k + 1``)
    as far as both targets allow; the remainder is pruned element-wise.
    Returns masks for ``[W1, b1, W2, b2, ...]``.
    """
    if len(rates) != len(layer_shapes):
        raise ValueError(f"need one rate per weight matrix ({len(layer_shapes)}), got {len(rates)}")
    for r in rates:
        if not 0.0 <= r < 1.0:
            raise ValueError(f"pruning rate must lie in [0, 1), got {r}")
    rng = np.random.default_rng(seed)
    weights = [np.ones(shape) for shape in layer_shapes]
    biases = [np.ones(shape[0]) for shape in layer_shapes]
    targets = [int(round(r * w.size)) for r, w in zip(rates, weights)]

    for k in range(len(layer_shapes) - 1):
        n_units = layer_shapes[k][0]
        fan_in = layer_shapes[k][1]
        fan_out = layer_shapes[k + 1][0]
        removable = min(targets[k] // fan_in, targets[k + 1] // fan_out, n_units - 1)
        if removable <= 0:
            continue
        units = rng.choice(n_units, size=removable, replace=False)
        weights[k][units, :] = 0.0
        biases[k][units] = 0.0
        weights[k + 1][:, units] = 0.0

    for w, target in zip(weights, targets):
        alive = np.flatnonzero(w.ravel())
        extra = target - (w.size - alive.size)
        if extra > 0:
            w.ravel()[rng.choice(alive, size=extra, replace=False)] = 0.0

    masks: list[np.ndarray] = []
    for w, b in zip(weights, biases):
        masks += [w, b]
    for m in masks:
        m.setflags(write=False)
    return masks


def per_layer_rates_to_matrix(rates: Sequence[float]) -> tuple[float, ...]:
    """Map per-neuron-layer pruning rates onto weight matrices.

    A neuron layer's rate is the fraction of its outgoing connections that is
    pruned, so the output layer's entry has no matrix to act on.
    """
    return tuple(rates[:-1])


@dataclass(frozen=True)
class GradientSet:
    vector: np.ndarray
    client_id: int | None = None

    def __post_init__(self) -> None:
        vec = np.array(self.vector, dtype=float)
        vec.setflags(write=False)
        object.__setattr__(self, "vector", vec)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.vector))


@dataclass
class Cache:
    x: np.ndarray
    hidden_pre: np.ndarray
    hidden: np.ndarray
    squeeze: bool


class MaskedModel:
    """Two-layer ReLU MLP with a fixed binary mask and Adam state."""

    def __init__(self, sizes: Sequence[int], params: Sequence[np.ndarray],
                 mask: Sequence[np.ndarray] | None = None):
        self.sizes = tuple(int(s) for s in sizes)
        shapes = param_shapes(self.sizes)
        if len(params) != len(shapes):
            raise ValueError("parameter list does not match layer sizes")
        if mask is None:
            mask = [np.ones(s) for s in shapes]
        self.mask = []
        for m, shape in zip(mask, shapes):
            m = np.array(m, dtype=float)
            if m.shape != shape:
                raise ValueError(f"mask shape {m.shape} != {shape}")
            m.setflags(write=False)
            self.mask.append(m)
        self.params = [np.array(p, dtype=float) * m for p, m in zip(params, self.mask)]
        for p, shape in zip(self.params, shapes):
            if p.shape != shape:
                raise ValueError(f"parameter shape {p.shape} != {shape}")
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.step = 0

    @classmethod
    def initialize(cls, sizes: Sequence[int], seed: int,
                   mask: Sequence[np.ndarray] | None = None,
                   head_scale: float = 1.0) -> "MaskedModel":
        """He-uniform hidden weights, Glorot-uniform output weights scaled by ``head_scale``, zero biases."""
        rng = np.random.default_rng(seed)
        shapes = param_shapes(sizes)
        params = []
        for i, shape in enumerate(shapes):
            if len(shape) == 1:
                params.append(np.zeros(shape))
                continue
            fan_out, fan_in = shape
            if i == len(shapes) - 2:
                limit = head_scale * np.sqrt(6.0 / (fan_in + fan_out))
            else:
                limit = np.sqrt(6.0 / fan_in)
            params.append(rng.uniform(-limit, limit, size=shape))
        return cls(sizes, params, mask)

    def copy(self) -> "MaskedModel":
        other = MaskedModel(self.sizes, self.params, self.mask)
        other.m = [a.copy() for a in self.m]
        other.v = [a.copy() for a in self.v]
        other.step = self.step
        return other

    # -- layout ------------------------------------------------------------

    @property
    def size(self) -> int:
        return sum(p.size for p in self.params)

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def flat_mask(self) -> np.ndarray:
        return np.concatenate([m.ravel() for m in self.mask])

    def set_flat_params(self, vector: np.ndarray) -> None:
        self.params = [p * m for p, m in zip(self._split(vector), self.mask)]

    def _split(self, vector: np.ndarray) -> list[np.ndarray]:
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (self.size,):
            raise ValueError(f"expected flat vector of length {self.size}, got {vector.shape}")
        out, start = [], 0
        for p in self.params:
            out.append(vector[start:start + p.size].reshape(p.shape))
            start += p.size
        return out

    # -- compute -----------------------------------------------------------

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, Cache]:
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.sizes[0]:
            raise ValueError(f"input width {x.shape[1]} != {self.sizes[0]}")
        w1, b1, w2, b2 = self.params
        pre = x @ w1.T + b1
        hidden = np.maximum(pre, 0.0)
        out = hidden @ w2.T + b2
        cache = Cache(x, pre, hidden, squeeze)
        return (out[0] if squeeze else out), cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: Cache, grad_out: np.ndarray) -> GradientSet:
        """Gradient of ``sum(grad_out * output)`` with respect to every parameter."""
        g = np.asarray(grad_out, dtype=float)
        if cache.squeeze:
            g = g.reshape(1, -1)
        w2 = self.params[2]
        g_w2 = g.T @ cache.hidden
        g_b2 = g.sum(axis=0)
        g_hidden = (g @ w2) * (cache.hidden_pre > 0.0)
        g_w1 = g_hidden.T @ cache.x
        g_b1 = g_hidden.sum(axis=0)
        grads = [g_w1, g_b1, g_w2, g_b2]
        return GradientSet(np.concatenate([(gr * m).ravel() for gr, m in zip(grads, self.mask)]))

    def adam_step(self, grad: GradientSet | np.ndarray, lr: float) -> None:
        vector = grad.vector if isinstance(grad, GradientSet) else grad
        self.step += 1
        t = self.step
        c1 = 1.0 - BETA1 ** t
        c2 = 1.0 - BETA2 ** t
        for i, (g, mask) in enumerate(zip(self._split(vector), self.mask)):
            g = g * mask
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g
            update = lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + EPS)
            self.params[i] = self.params[i] - update * mask

    # -- serialisation -----------------------------------------------------

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(struct.pack("<4sHHI", _MAGIC, _VERSION, len(self.params), self.step))
        for p in self.params:
            buf.write(struct.pack("<B", p.ndim))
            buf.write(struct.pack(f"<{p.ndim}I", *p.shape))
        flat_mask = self.flat_mask().astype(bool)
        buf.write(np.packbits(flat_mask, bitorder="little").tobytes())
        for group in (self.params, self.m, self.v):
            flat = np.concatenate([a.ravel() for a in group])[flat_mask]
            buf.write(flat.astype("<f4").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "MaskedModel":
        view = memoryview(data)
        magic, version, n_tensors, step = struct.unpack_from("<4sHHI", view, 0)
        if magic != _MAGIC:
            raise ValueError("not a model checkpoint")
        if version != _VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        offset = struct.calcsize("<4sHHI")
        shapes = []
        for _ in range(n_tensors):
            (ndim,) = struct.unpack_from("<B", view, offset)
            offset += 1
            shapes.append(struct.unpack_from(f"<{ndim}I", view, offset))
            offset += 4 * ndim
        total = sum(int(np.prod(s)) for s in shapes)
        n_bytes = (total + 7) // 8
        bits = np.unpackbits(np.frombuffer(view[offset:offset + n_bytes], dtype=np.uint8),
                             count=total, bitorder="little").astype(bool)
        offset += n_bytes
        alive = int(bits.sum())
        groups = []
        for _ in range(3):
            values = np.zeros(total)
            values[bits] = np.frombuffer(view[offset:offset + 4 * alive], dtype="<f4")
            offset += 4 * alive
            groups.append(values)

        def split(vec):
            out, start = [], 0
            for s in shapes:
                n = int(np.prod(s))
                out.append(vec[start:start + n].reshape(s))
                start += n
            return out

        sizes = [shapes[0][1]] + [shapes[k][0] for k in range(0, n_tensors, 2)]
        model = cls(sizes, split(groups[0]), split(bits.astype(float)))
        model.m = split(groups[1])
        model.v = split(groups[2])
        model.step = step
        return model


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def payload_bytes(mask_vector: np.ndarray) -> int:
    """Bytes needed to send one float32 per unmasked entry."""
    return 4 * int(np.count_nonzero(mask_vector))
