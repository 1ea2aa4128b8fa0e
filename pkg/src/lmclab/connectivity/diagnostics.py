"""Layerwise diagnostics comparing two models and their interpolation.

Every statistic is an average over the samples of a dataset. Inputs are
processed in chunks so wide networks fit in memory; per-sample values are
summed with ``math.fsum`` so results do not depend on the chunk size.

Layers are numbered 1..L as in :mod:`lmclab.mlp`; index ``i`` of a returned
array refers to layer ``i + 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from ..dataio import Dataset
from ..mlp import ActivationTrace, ParamSet, check_same_arch, forward_trace, interpolate
from ..ndcore import COSINE_EPS, relu, rowwise_cosine, singular_values

CHUNK = 1024
SMALL_STD_RATIO = 0.01
EPS_RANK_RATIO = 0.01


class LayerMeans(NamedTuple):
    """Per-layer dataset means plus the number of degenerate samples excluded."""

    values: np.ndarray
    flagged: np.ndarray


class _MeanAcc:
    """Exact running mean per layer that skips flagged samples."""

    def __init__(self, layers: int):
        self.parts: list[list[np.ndarray]] = [[] for _ in range(layers)]
        self.flagged = np.zeros(layers, dtype=np.int64)

    def add(self, layer: int, values: np.ndarray, flagged: np.ndarray | None = None) -> None:
        if flagged is not None:
            self.flagged[layer] += int(flagged.sum())
            values = values[~flagged]
        self.parts[layer].append(values)

    def result(self) -> LayerMeans:
        means = []
        for parts in self.parts:
            v = np.concatenate(parts) if parts else np.zeros(0)
            means.append(math.fsum(v) / v.size if v.size else 0.0)
        return LayerMeans(np.array(means), self.flagged.copy())


def _inputs(d: Dataset | np.ndarray) -> np.ndarray:
    return d.images if isinstance(d, Dataset) else np.asarray(d, dtype=np.float64)


def _chunks(x: np.ndarray) -> Iterator[np.ndarray]:
    for i in range(0, x.shape[0], CHUNK):
        yield x[i:i + CHUNK]


def _traces(models: list[ParamSet], x: np.ndarray) -> Iterator[tuple[np.ndarray, list[ActivationTrace]]]:
    for xc in _chunks(x):
        yield xc, [forward_trace(m, xc) for m in models]


def _finish_pooled(acc: _MeanAcc, parts: list[list[tuple[float, float, float]]]) -> None:
    # pooled cosine needs sums over all chunks before dividing
    for l, items in enumerate(parts):
        uv = math.fsum(p[0] for p in items)
        uu = math.fsum(p[1] for p in items)
        vv = math.fsum(p[2] for p in items)
        bad = uu < COSINE_EPS ** 2 or vv < COSINE_EPS ** 2
        acc.add(l, np.array([0.0 if bad else uv / math.sqrt(uu * vv)]), np.array([bad]))


# --- LEWC and ReLU additivity -------------------------------------------------

def lewc_diagnostic(a: ParamSet, b: ParamSet, lam: float, d, aggregation: str = "sample") -> LayerMeans:
    """Cosine between f_l(x; lam a + (1-lam) b) and lam^l f_l(x; a) + (1-lam)^l f_l(x; b).

    ``aggregation="sample"`` averages per-sample cosines; ``"pooled"`` takes
    one cosine over all samples' concatenated vectors.
    """
    check_same_arch(a, b)
    _check_aggregation(aggregation)
    merged = interpolate(a, b, lam)
    depth = a.arch.depth
    acc = _MeanAcc(depth)
    pooled_parts = [[] for _ in range(depth)]
    for _, (ta, tb, tc) in _traces([a, b, merged], _inputs(d)):
        for l in range(depth):
            target = lam ** (l + 1) * ta.post[l] + (1.0 - lam) ** (l + 1) * tb.post[l]
            _accumulate(acc, pooled_parts, l, tc.post[l], target, aggregation)
    if aggregation == "pooled":
        _finish_pooled(acc, pooled_parts)
    return acc.result()


def relu_additivity_cosine(za: np.ndarray, zb: np.ndarray, lam: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Per-row cosine of relu(lam za + (1-lam) zb) with lam relu(za) + (1-lam) relu(zb)."""
    za = np.atleast_2d(za)
    zb = np.atleast_2d(zb)
    return rowwise_cosine(relu(lam * za + (1.0 - lam) * zb), lam * relu(za) + (1.0 - lam) * relu(zb))


def relu_additivity_diagnostic(a: ParamSet, b: ParamSet, d, lam: float = 0.5,
                               aggregation: str = "sample") -> LayerMeans:
    """Weak-additivity cosine at each hidden layer, using each model's own pre-activations."""
    check_same_arch(a, b)
    _check_aggregation(aggregation)
    hidden = a.arch.depth - 1
    acc = _MeanAcc(hidden)
    pooled_parts = [[] for _ in range(hidden)]
    for _, (ta, tb) in _traces([a, b], _inputs(d)):
        for l in range(hidden):
            za, zb = ta.pre[l], tb.pre[l]
            u = relu(lam * za + (1.0 - lam) * zb)
            v = lam * relu(za) + (1.0 - lam) * relu(zb)
            _accumulate(acc, pooled_parts, l, u, v, aggregation)
    if aggregation == "pooled":
        _finish_pooled(acc, pooled_parts)
    return acc.result()


def _check_aggregation(aggregation: str) -> None:
    if aggregation not in ("sample", "pooled"):
        raise ValueError(f"aggregation must be 'sample' or 'pooled', got {aggregation!r}")


def _accumulate(acc, pooled_parts, l, u, v, aggregation):
    if aggregation == "sample":
        cos, flagged = rowwise_cosine(u, v)
        acc.add(l, cos, flagged)
    else:
        pooled_parts[l].append((float(np.vdot(u, v)), float(np.vdot(u, u)), float(np.vdot(v, v))))


# --- reciprocal orthogonality and commutativity -------------------------------

@dataclass
class ReciprocalOrthogonality:
    """Per-layer cross-application statistics, both directions.

    ``norm_ratio_ab[l]`` = E||W_a z_b|| / E||W_a z_a|| where z are the inputs
    of layer l; ``merged_cos_a[l]`` = mean cos(W_a z_c, W_a z_a) with z_c from
    the interpolated model. The ``_ba`` / ``_b`` fields swap the roles.
    """

    norm_ratio_ab: np.ndarray
    norm_ratio_ba: np.ndarray
    merged_cos_a: np.ndarray
    merged_cos_b: np.ndarray
    flagged_a: np.ndarray
    flagged_b: np.ndarray


def reciprocal_orthogonality_diagnostic(a: ParamSet, b: ParamSet, lam: float, d) -> ReciprocalOrthogonality:
    check_same_arch(a, b)
    merged = interpolate(a, b, lam)
    depth = a.arch.depth
    norms = {k: _MeanAcc(depth) for k in ("aa", "ab", "bb", "ba")}
    cos_a, cos_b = _MeanAcc(depth), _MeanAcc(depth)
    for x, (ta, tb, tc) in _traces([a, b, merged], _inputs(d)):
        for l in range(1, depth + 1):
            za, zb, zc = (t.inputs_to(l, x) for t in (ta, tb, tc))
            wa, wb = a.weights[l - 1], b.weights[l - 1]
            wa_za, wa_zb, wb_zb, wb_za = za @ wa.T, zb @ wa.T, zb @ wb.T, za @ wb.T
            for key, v in (("aa", wa_za), ("ab", wa_zb), ("bb", wb_zb), ("ba", wb_za)):
                norms[key].add(l - 1, np.linalg.norm(v, axis=1))
            c, f = rowwise_cosine(zc @ wa.T, wa_za)
            cos_a.add(l - 1, c, f)
            c, f = rowwise_cosine(zc @ wb.T, wb_zb)
            cos_b.add(l - 1, c, f)
    n = {k: v.result().values for k, v in norms.items()}
    ra, rb = cos_a.result(), cos_b.result()
    return ReciprocalOrthogonality(
        norm_ratio_ab=_safe_ratio(n["ab"], n["aa"]),
        norm_ratio_ba=_safe_ratio(n["ba"], n["bb"]),
        merged_cos_a=ra.values,
        merged_cos_b=rb.values,
        flagged_a=ra.flagged,
        flagged_b=rb.flagged,
    )


def _safe_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    return np.where(den < COSINE_EPS, 0.0, num / np.where(den < COSINE_EPS, 1.0, den))


def dist(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise ||x - y||^2 / (||x|| ||y||); rows with a near-zero norm are flagged."""
    nx = np.linalg.norm(x, axis=1)
    ny = np.linalg.norm(y, axis=1)
    flagged = (nx < COSINE_EPS) | (ny < COSINE_EPS)
    diff = np.einsum("ij,ij->i", x - y, x - y)
    return np.where(flagged, 0.0, diff / np.where(flagged, 1.0, nx * ny)), flagged


def commutativity_diagnostic(a: ParamSet, b: ParamSet, d) -> LayerMeans:
    """Mean dist between W_a z_a + W_b z_b and W_a z_b + W_b z_a at every layer."""
    check_same_arch(a, b)
    depth = a.arch.depth
    acc = _MeanAcc(depth)
    for x, (ta, tb) in _traces([a, b], _inputs(d)):
        for l in range(1, depth + 1):
            za, zb = ta.inputs_to(l, x), tb.inputs_to(l, x)
            wa, wb = a.weights[l - 1], b.weights[l - 1]
            lhs = za @ wa.T + zb @ wb.T
            rhs = zb @ wa.T + za @ wb.T
            v, f = dist(lhs, rhs)
            acc.add(l - 1, v, f)
    return acc.result()


# --- variance, overlap and rank statistics ------------------------------------

@dataclass
class PreactStats:
    std: np.ndarray  # per-unit sqrt(E z~^2)
    small_std_fraction: float
    degenerate: bool

    @property
    def high_variance(self) -> np.ndarray:
        """Indices of units whose std is not small."""
        if self.degenerate:
            return np.zeros(0, dtype=np.int64)
        return np.flatnonzero(self.std >= SMALL_STD_RATIO * self.std.max())


def preactivation_stats(p: ParamSet, d) -> list[PreactStats]:
    """Std-about-zero of every hidden unit's pre-activation, and the small-std fraction.

    A unit is small when its std is below 1/100 of the layer maximum. A layer
    whose maximum std is below 1e-12 is degenerate: fraction 1.0, flagged.
    """
    hidden = p.arch.depth - 1
    sq = [np.zeros(w) for w in p.arch.hidden_dims]
    x = _inputs(d)
    for xc in _chunks(x):
        tr = forward_trace(p, xc)
        for l in range(hidden):
            sq[l] += np.square(tr.pre[l]).sum(axis=0)
    out = []
    for l in range(hidden):
        std = np.sqrt(sq[l] / max(x.shape[0], 1))
        top = float(std.max())
        if top < COSINE_EPS:
            out.append(PreactStats(std, 1.0, True))
        else:
            out.append(PreactStats(std, float(np.mean(std < SMALL_STD_RATIO * top)), False))
    return out


def overlap_stats(a: ParamSet, b: ParamSet, d, mode: str = "min") -> list[float | None]:
    """Non-overlap of the two models' high-variance unit sets per hidden layer.

    ``mode="min"``: 1 - |A & B| / min(|A|, |B|); ``mode="jaccard"``:
    |A ^ B| / |A | B|. ``None`` marks layers where the value is undefined
    (an empty set).
    """
    check_same_arch(a, b)
    if mode not in ("min", "jaccard"):
        raise ValueError(f"unknown overlap mode {mode!r}")
    out = []
    for sa, sb in zip(preactivation_stats(a, d), preactivation_stats(b, d)):
        ha, hb = set(sa.high_variance.tolist()), set(sb.high_variance.tolist())
        if mode == "min":
            out.append(None if not ha or not hb else 1.0 - len(ha & hb) / min(len(ha), len(hb)))
        else:
            union = ha | hb
            out.append(None if not union else len(ha ^ hb) / len(union))
    return out


@dataclass(frozen=True)
class RankStats:
    stable_rank: float
    eps_rank: int
    width: int


def rank_profile(p: ParamSet) -> list[RankStats]:
    """Stable rank ||W||_F^2 / s_max^2 and the count of s_i > 0.01 s_max per layer.

    ``width`` is the layer's output dimension. An all-zero matrix has stable
    rank 0 and eps-rank 0.
    """
    out = []
    for w in p.weights:
        s = singular_values(w)
        top = float(s[0]) if s.size else 0.0
        if top == 0.0:
            out.append(RankStats(0.0, 0, w.shape[0]))
            continue
        fro2 = math.fsum((w * w).ravel())
        out.append(RankStats(fro2 / top ** 2, int(np.sum(s > EPS_RANK_RATIO * top)), w.shape[0]))
    return out
