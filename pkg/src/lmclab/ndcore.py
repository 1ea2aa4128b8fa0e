"""Dense float64 numerics shared by every other module.

Matrices and vectors are plain ``numpy.ndarray`` objects of dtype float64.
Randomness always flows through an explicit ``numpy.random.Generator``
backed by PCG64, seeded from a ``SeedSequence``; there is no global RNG.
PCG64 output for a given seed is specified by numpy and identical across
platforms.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import ConvergenceError, ShapeError

COSINE_EPS = 1e-12


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Return a PCG64 generator for ``seed``.

    Extra integer ``keys`` derive an independent stream, e.g.
    ``make_rng(seed, trial)`` gives per-trial generators whose output does
    not depend on scheduling order.
    """
    if seed < 0 or any(k < 0 for k in keys):
        raise ValueError("seeds and keys must be non-negative")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *keys])))


def matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeError(f"cannot multiply {m.shape} by {v.shape}")
    return m @ v


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine of the angle between ``u`` and ``v``.

    Returns 0.0 when either norm is below ``COSINE_EPS``; use
    :func:`rowwise_cosine` to also learn which inputs were degenerate.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ShapeError(f"cosine needs equal 1-d shapes, got {u.shape} and {v.shape}")
    cos, _ = rowwise_cosine(u[None, :], v[None, :])
    return float(cos[0])


def rowwise_cosine(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cosine similarity between matching rows of two 2-d arrays.

    Returns ``(cos, flagged)`` where ``flagged[i]`` marks rows in which either
    vector has norm below ``COSINE_EPS``; those rows get cosine 0.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 2:
        raise ShapeError(f"rowwise cosine needs equal 2-d shapes, got {u.shape} and {v.shape}")
    nu = np.linalg.norm(u, axis=1)
    nv = np.linalg.norm(v, axis=1)
    flagged = (nu < COSINE_EPS) | (nv < COSINE_EPS)
    denom = np.where(flagged, 1.0, nu * nv)
    cos = np.einsum("ij,ij->i", u, v) / denom
    cos = np.where(flagged, 0.0, np.clip(cos, -1.0, 1.0))
    return cos, flagged


def singular_values(m: np.ndarray) -> np.ndarray:
    """Singular values of ``m`` in descending order.

    Backed by LAPACK's divide-and-conquer driver, retried with the QR
    iteration driver; failure of both raises :class:`ConvergenceError`.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    if m.size == 0:
        return np.zeros(0)
    for driver in ("gesdd", "gesvd"):
        try:
            s = scipy.linalg.svd(m, compute_uv=False, lapack_driver=driver, check_finite=False)
        except np.linalg.LinAlgError:
            continue
        return np.sort(s)[::-1]
    raise ConvergenceError(f"SVD did not converge for matrix of shape {m.shape}")


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax via the max-shifted log-sum-exp."""
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def xent_per_sample(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Cross-entropy of each row of ``logits`` against integer ``labels``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} incompatible with labels {labels.shape}")
    k = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range for {k} classes")
    lp = log_softmax(logits)
    return -lp[np.arange(labels.shape[0]), labels]


def softmax_xent(logits: np.ndarray, label: int) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise ShapeError("softmax_xent expects a single logit vector")
    if not 0 <= label < logits.shape[0]:
        raise ValueError(f"label {label} out of range for {logits.shape[0]} classes")
    # clamp the -0.0 produced when the label logit dominates
    return max(float(-log_softmax(logits)[label]), 0.0)
