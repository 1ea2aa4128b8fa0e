"""ReLU multilayer perceptrons: parameters, traced forward pass, backprop.

Layer ``l`` (1-based, ``1..L``) maps ``z_{l-1}`` to ``z_l = relu(W_l z_{l-1} + b_l)``,
except the last layer which emits raw logits. Batches are row-major:
an input batch has shape ``(n, layer_dims[0])``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import ShapeError
from .ndcore import log_softmax, relu, softmax


@dataclass(frozen=True)
class Arch:
    layer_dims: tuple[int, ...]
    with_bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        if len(self.layer_dims) < 2:
            raise ValueError("an MLP needs at least input and output dims")
        if any(d < 1 for d in self.layer_dims):
            raise ValueError(f"all layer dims must be >= 1, got {self.layer_dims}")

    @property
    def depth(self) -> int:
        """Number of weight layers L."""
        return len(self.layer_dims) - 1

    @property
    def hidden_dims(self) -> tuple[int, ...]:
        return self.layer_dims[1:-1]

    def weight_shape(self, layer: int) -> tuple[int, int]:
        """Shape of W_layer for 1-based ``layer``."""
        return self.layer_dims[layer], self.layer_dims[layer - 1]


def scale_width(base_dims: Sequence[int], multiplier, with_bias: bool = True) -> Arch:
    """Multiply every hidden width by ``multiplier`` (rounded half-up, min 1)."""
    m = Fraction(multiplier).limit_denominator(1 << 16)
    if m <= 0:
        raise ValueError("width multiplier must be positive")
    dims = list(base_dims)
    hidden = [max(1, math.floor(d * m + Fraction(1, 2))) for d in dims[1:-1]]
    return Arch(tuple([dims[0], *hidden, dims[-1]]), with_bias)


@dataclass(eq=False)
class ParamSet:
    """All weights and (optionally) biases of one MLP.

    ``weights[i]`` is W_{i+1} with shape ``(dims[i+1], dims[i])``; ``biases``
    is ``None`` for bias-free architectures.
    """

    arch: Arch
    weights: list[np.ndarray]
    biases: list[np.ndarray] | None = None

    def __post_init__(self):
        if len(self.weights) != self.arch.depth:
            raise ShapeError(f"expected {self.arch.depth} weight matrices, got {len(self.weights)}")
        for l, w in enumerate(self.weights, start=1):
            if w.shape != self.arch.weight_shape(l):
                raise ShapeError(f"W_{l} has shape {w.shape}, expected {self.arch.weight_shape(l)}")
        if self.arch.with_bias:
            if self.biases is None or len(self.biases) != self.arch.depth:
                raise ShapeError("biased architecture needs one bias per layer")
            for l, b in enumerate(self.biases, start=1):
                if b.shape != (self.arch.layer_dims[l],):
                    raise ShapeError(f"b_{l} has shape {b.shape}")
        elif self.biases is not None:
            raise ShapeError("bias-free architecture must not carry biases")

    def arrays(self) -> list[np.ndarray]:
        """Parameters in canonical order W_1, b_1, W_2, b_2, ..."""
        out = []
        for l in range(self.arch.depth):
            out.append(self.weights[l])
            if self.biases is not None:
                out.append(self.biases[l])
        return out

    def _map(self, fn, other: "ParamSet | None" = None) -> "ParamSet":
        if other is None:
            ws = [fn(w) for w in self.weights]
            bs = None if self.biases is None else [fn(b) for b in self.biases]
        else:
            check_same_arch(self, other)
            ws = [fn(w, v) for w, v in zip(self.weights, other.weights)]
            bs = None if self.biases is None else [fn(b, c) for b, c in zip(self.biases, other.biases)]
        return ParamSet(self.arch, ws, bs)

    def scale(self, c: float) -> "ParamSet":
        return self._map(lambda x: c * x)

    def __add__(self, other: "ParamSet") -> "ParamSet":
        return self._map(np.add, other)

    def __sub__(self, other: "ParamSet") -> "ParamSet":
        return self._map(np.subtract, other)

    def copy(self) -> "ParamSet":
        return self._map(np.copy)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def norm(self) -> float:
        return math.sqrt(sum(float(np.vdot(a, a)) for a in self.arrays()))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def bit_equal(self, other: "ParamSet") -> bool:
        return self.arch == other.arch and all(
            np.array_equal(x, y) for x, y in zip(self.arrays(), other.arrays()))


Gradient = ParamSet


def check_same_arch(a: ParamSet, b: ParamSet) -> None:
    if a.arch != b.arch:
        raise ShapeError(f"architecture mismatch: {a.arch} vs {b.arch}")


@dataclass
class ActivationTrace:
    """Per-layer pre- and post-activations for a batch.

    ``pre[l-1]`` and ``post[l-1]`` hold layer ``l``; the last entry of
    ``post`` is the logits (identical to the last ``pre``).
    """

    pre: list[np.ndarray]
    post: list[np.ndarray] = field(default_factory=list)

    @property
    def logits(self) -> np.ndarray:
        return self.post[-1]

    def inputs_to(self, layer: int, x: np.ndarray) -> np.ndarray:
        """z_{layer-1}: the input consumed by W_layer."""
        return x if layer == 1 else self.post[layer - 2]


def init(arch: Arch, rng: np.random.Generator) -> ParamSet:
    """Kaiming-uniform weights, bound sqrt(6 / fan_in); zero biases."""
    weights = []
    for l in range(1, arch.depth + 1):
        fan_out, fan_in = arch.weight_shape(l)
        bound = math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
    biases = [np.zeros(arch.layer_dims[l]) for l in range(1, arch.depth + 1)] if arch.with_bias else None
    return ParamSet(arch, weights, biases)


def _check_input(p: ParamSet, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != p.arch.layer_dims[0]:
        raise ShapeError(f"input of shape {x.shape} does not match input dim {p.arch.layer_dims[0]}")
    return x


def forward_trace(p: ParamSet, x: np.ndarray) -> ActivationTrace:
    x = _check_input(p, x)
    pre, post = [], []
    z = x
    for l in range(p.arch.depth):
        h = z @ p.weights[l].T
        if p.biases is not None:
            h = h + p.biases[l]
        pre.append(h)
        z = relu(h) if l < p.arch.depth - 1 else h
        post.append(z)
    return ActivationTrace(pre, post)


def forward(p: ParamSet, x: np.ndarray) -> np.ndarray:
    """Logits only; same arithmetic as :func:`forward_trace`."""
    x = _check_input(p, x)
    z = x
    for l in range(p.arch.depth):
        z = z @ p.weights[l].T
        if p.biases is not None:
            z = z + p.biases[l]
        if l < p.arch.depth - 1:
            z = relu(z)
    return z


def backward(p: ParamSet, x: np.ndarray, labels: np.ndarray) -> tuple[float, Gradient]:
    """Mean softmax cross-entropy over the batch and its gradient."""
    x = _check_input(p, x)
    labels = np.asarray(labels)
    n, k = x.shape[0], p.arch.layer_dims[-1]
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch size {n}")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range for {k} classes")
    tr = forward_trace(p, x)
    lp = log_softmax(tr.logits)
    rows = np.arange(n)
    loss = float(-lp[rows, labels].mean())

    delta = softmax(tr.logits)
    delta[rows, labels] -= 1.0
    delta /= n
    gw: list[np.ndarray] = [None] * p.arch.depth
    gb: list[np.ndarray] = [None] * p.arch.depth
    for l in range(p.arch.depth - 1, -1, -1):
        z_in = x if l == 0 else tr.post[l - 1]
        gw[l] = delta.T @ z_in
        gb[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ p.weights[l]) * (tr.pre[l - 1] > 0)
    return loss, ParamSet(p.arch, gw, gb if p.arch.with_bias else None)


def interpolate(a: ParamSet, b: ParamSet, lam: float) -> ParamSet:
    """Convex combination ``lam * a + (1 - lam) * b``; lam=1 returns a's values."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    check_same_arch(a, b)
    if lam == 1.0:
        return a.copy()
    if lam == 0.0:
        return b.copy()
    # b + lam*(a - b) is exactly b at every lam when a == b
    return a._map(lambda x, y: y + lam * (x - y), b)


def param_distance(a: ParamSet, b: ParamSet) -> float:
    check_same_arch(a, b)
    return (a - b).norm()
