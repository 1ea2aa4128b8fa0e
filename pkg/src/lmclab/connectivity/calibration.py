"""Inverse-temperature calibration of softmax outputs."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..dataio import split_sizes
from ..ndcore import xent_per_sample

LOG_BETA_RANGE = (math.log(1e-2), math.log(1e2))
LOG_BETA_TOL = 1e-4
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class TemperatureFit:
    """Result of fitting one inverse temperature ``beta``.

    ``calib_*`` values are measured on the split used for fitting (where
    ``calib_nll_after <= calib_nll_before`` always holds); ``nll_before`` and
    ``nll_after`` are measured on the held-out remainder.
    """

    beta: float
    nll_before: float
    nll_after: float
    calib_nll_before: float
    calib_nll_after: float
    n_calib: int
    n_eval: int


def scaled_nll(logits: np.ndarray, labels: np.ndarray, beta: float) -> float:
    """Mean NLL of softmax(beta * logits)."""
    return math.fsum(xent_per_sample(beta * logits, labels)) / labels.shape[0]


def golden_section_min(f, lo: float, hi: float, tol: float) -> float:
    """Minimiser of a unimodal ``f`` on [lo, hi] to bracket width ``tol``."""
    c = hi - _INV_PHI * (hi - lo)
    d = lo + _INV_PHI * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > tol:
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - _INV_PHI * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _INV_PHI * (hi - lo)
            fd = f(d)
    return 0.5 * (lo + hi)


def fit_beta(logits: np.ndarray, labels: np.ndarray) -> float:
    """Inverse temperature minimising mean NLL on the given samples.

    The NLL is convex in beta, so golden-section search over log beta is
    exact up to the tolerance; beta = 1 is kept unless strictly beaten.
    """
    t = golden_section_min(lambda lb: scaled_nll(logits, labels, math.exp(lb)),
                           *LOG_BETA_RANGE, LOG_BETA_TOL)
    beta = math.exp(t)
    return beta if scaled_nll(logits, labels, beta) < scaled_nll(logits, labels, 1.0) else 1.0


def fit_temperature(logits: np.ndarray, labels: np.ndarray, calibration_fraction: float,
                    rng: np.random.Generator) -> TemperatureFit:
    """Fit beta on a random ``calibration_fraction`` of the samples, report NLL on the rest."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if not 0.0 < calibration_fraction < 1.0:
        raise ValueError("calibration_fraction must lie in (0, 1)")
    n = labels.shape[0]
    n_calib, n_eval = split_sizes(n, [calibration_fraction, 1.0 - calibration_fraction])
    if n_calib == 0 or n_eval == 0:
        raise ValueError(f"{n} samples leave an empty calibration or evaluation split")
    order = rng.permutation(n)
    cal, ev = order[:n_calib], order[n_calib:]
    beta = fit_beta(logits[cal], labels[cal])
    return TemperatureFit(
        beta=beta,
        nll_before=scaled_nll(logits[ev], labels[ev], 1.0),
        nll_after=scaled_nll(logits[ev], labels[ev], beta),
        calib_nll_before=scaled_nll(logits[cal], labels[cal], 1.0),
        calib_nll_after=scaled_nll(logits[cal], labels[cal], beta),
        n_calib=n_calib,
        n_eval=n_eval,
    )
