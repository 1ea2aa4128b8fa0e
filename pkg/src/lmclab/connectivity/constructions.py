"""Hand-built model pairs with known connectivity properties."""
from __future__ import annotations

import math

import numpy as np

from ..mlp import Arch, ParamSet


def build_lewc_pair(arch: Arch, rng: np.random.Generator) -> tuple[ParamSet, ParamSet]:
    """Two bias-free nets living on disjoint halves of every hidden layer.

    Model ``a`` only uses the first half of each hidden layer's units, model
    ``b`` only the second half. Their pre-activations therefore have disjoint
    supports (ReLU acts additively on their mix) and each model's activations
    lie in the kernel of the other's next weight matrix, so the pair is
    layerwise exponentially weighted connected for every lambda.
    Active blocks are Kaiming-uniform with the block's own fan-in.
    """
    if arch.with_bias:
        raise ValueError("the construction needs a bias-free architecture")
    if arch.depth < 2:
        raise ValueError("the construction needs at least one hidden layer")
    if any(d % 2 for d in arch.hidden_dims):
        raise ValueError(f"every hidden dim must be even, got {arch.hidden_dims}")

    dims = arch.layer_dims
    L = arch.depth

    def halves(l: int) -> list[slice]:
        # units of layer l owned by each model; input and output layers are shared
        if l in (0, L):
            return [slice(None), slice(None)]
        h = dims[l] // 2
        return [slice(0, h), slice(h, dims[l])]

    pair = []
    for side in (0, 1):
        weights = []
        for l in range(1, L + 1):
            w = np.zeros(arch.weight_shape(l))
            rows, cols = halves(l)[side], halves(l - 1)[side]
            block = w[rows, cols]
            bound = math.sqrt(6.0 / block.shape[1])
            w[rows, cols] = rng.uniform(-bound, bound, size=block.shape)
            weights.append(w)
        pair.append(ParamSet(arch, weights, None))
    return pair[0], pair[1]
