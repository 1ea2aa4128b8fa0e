"""Hidden-unit permutations of MLPs and weight matching.

A :class:`Permutation` holds one index array per hidden layer. Applying it
maps new unit ``i`` of layer ``l`` to old unit ``perm[l][i]``: rows of W_l
and entries of b_l are gathered, and columns of W_{l+1} are gathered with
the same indices, so the network function is unchanged.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import storage
from .errors import ShapeError
from .mlp import Arch, ParamSet, check_same_arch, param_distance

log = logging.getLogger(__name__)

PERMUTATION_KIND = "permutation"


@dataclass(eq=False)
class Permutation:
    perms: list[np.ndarray]

    def __post_init__(self):
        self.perms = [np.asarray(p, dtype=np.int64) for p in self.perms]
        for p in self.perms:
            if p.ndim != 1 or not np.array_equal(np.sort(p), np.arange(p.size)):
                raise ValueError("each layer permutation must be a bijection on 0..n-1")

    @classmethod
    def identity(cls, arch: Arch) -> "Permutation":
        return cls([np.arange(d) for d in arch.hidden_dims])

    def inverse(self) -> "Permutation":
        return Permutation([np.argsort(p) for p in self.perms])

    def compose(self, other: "Permutation") -> "Permutation":
        """Permutation equivalent to applying ``other`` first, then ``self``."""
        if [p.size for p in self.perms] != [p.size for p in other.perms]:
            raise ShapeError("cannot compose permutations of different widths")
        return Permutation([o[s] for s, o in zip(self.perms, other.perms)])

    def is_identity(self) -> bool:
        return all(np.array_equal(p, np.arange(p.size)) for p in self.perms)

    def __eq__(self, other) -> bool:
        return (isinstance(other, Permutation) and len(self.perms) == len(other.perms)
                and all(np.array_equal(a, b) for a, b in zip(self.perms, other.perms)))


def _check_fits(pi: Permutation, arch: Arch) -> None:
    if [p.size for p in pi.perms] != list(arch.hidden_dims):
        raise ShapeError(f"permutation widths {[p.size for p in pi.perms]} "
                         f"do not match hidden dims {arch.hidden_dims}")


def apply(pi: Permutation, p: ParamSet) -> ParamSet:
    _check_fits(pi, p.arch)
    ws = [w.copy() for w in p.weights]
    bs = None if p.biases is None else [b.copy() for b in p.biases]
    for l, perm in enumerate(pi.perms):
        ws[l] = ws[l][perm, :]
        ws[l + 1] = ws[l + 1][:, perm]
        if bs is not None:
            bs[l] = bs[l][perm]
    return ParamSet(p.arch, ws, bs)


def random_permutation(arch: Arch, rng: np.random.Generator) -> Permutation:
    return Permutation([rng.permutation(d) for d in arch.hidden_dims])


def assignment_solve(cost: np.ndarray) -> np.ndarray:
    """Minimum-cost perfect matching of a square cost matrix.

    Returns ``col`` with row ``i`` assigned to column ``col[i]``. Solved by
    scipy's shortest-augmenting-path (Jonker-Volgenant style) routine.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ShapeError(f"assignment needs a square matrix, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    rows, cols = linear_sum_assignment(cost)
    out = np.empty(cost.shape[0], dtype=np.int64)
    out[rows] = cols
    return out


def _layer_similarity(a: ParamSet, b: ParamSet, perms: list[np.ndarray], l: int) -> np.ndarray:
    """Similarity S[i, j] of unit i in a with unit j in b at hidden layer ``l`` (0-based).

    Sums the inner products of incoming weights (with b's inputs already
    permuted), the biases, and outgoing weights (with b's outputs permuted).
    """
    w_in_b = b.weights[l]
    if l > 0:
        w_in_b = w_in_b[:, perms[l - 1]]
    s = a.weights[l] @ w_in_b.T
    if a.biases is not None:
        s += np.outer(a.biases[l], b.biases[l])
    w_out_b = b.weights[l + 1]
    if l + 1 < len(perms):
        w_out_b = w_out_b[perms[l + 1], :]
    s += a.weights[l + 1].T @ w_out_b
    return s


def weight_match(a: ParamSet, b: ParamSet, rng: np.random.Generator, max_sweeps: int = 50,
                 history: list[float] | None = None) -> Permutation:
    """Find pi minimising ``param_distance(a, apply(pi, b))`` by coordinate descent.

    Each sweep visits the hidden layers in a seeded random order and solves
    that layer's assignment exactly with the others held fixed. A layer only
    changes when its objective strictly improves, so the distance never
    increases. Stops after a sweep with no change or ``max_sweeps`` sweeps.
    If ``history`` is given, the distance before the first sweep and after
    each sweep is appended to it.
    """
    check_same_arch(a, b)
    perms = [np.arange(d) for d in a.arch.hidden_dims]
    if history is not None:
        history.append(param_distance(a, b))
    for sweep in range(max_sweeps):
        changed = False
        for l in rng.permutation(len(perms)):
            s = _layer_similarity(a, b, perms, l)
            new = assignment_solve(-s)
            rows = np.arange(s.shape[0])
            gain = s[rows, new].sum() - s[rows, perms[l]].sum()
            if gain > 1e-12 * max(1.0, abs(s[rows, perms[l]].sum())):
                perms[l] = new
                changed = True
        if history is not None:
            history.append(param_distance(a, apply(Permutation(perms), b)))
        if not changed:
            log.debug("weight matching converged after %d sweeps", sweep + 1)
            break
    return Permutation(perms)


def save_permutation(pi: Permutation, path, meta: dict | None = None) -> None:
    arrays = [(f"P{l + 1}", p) for l, p in enumerate(pi.perms)]
    storage.save(path, PERMUTATION_KIND, {"layers": len(pi.perms), **(meta or {})}, arrays)


def load_permutation(path) -> Permutation:
    meta, arrays = storage.load(path, PERMUTATION_KIND)
    return Permutation([arrays[f"P{l + 1}"] for l in range(meta["layers"])])
