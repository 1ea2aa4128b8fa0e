"""Loss barriers along the linear path between two parameter sets."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from ..dataio import Dataset
from ..mlp import ParamSet, check_same_arch, interpolate
from ..ndcore import make_rng
from ..trainer import logit_metrics, predict
from .calibration import TemperatureFit, fit_temperature

DEFAULT_GRID = 25
CALIBRATION_FRACTION = 0.2
CSV_COLUMNS = ("lambda", "train_loss", "test_loss", "test_acc", "calibrated_test_loss", "beta")


def lambda_grid(n: int = DEFAULT_GRID) -> np.ndarray:
    """``n`` evenly spaced points on [0, 1]; 0.5 is added when ``n`` is even and > 2."""
    if n < 2:
        raise ValueError("the grid needs at least the two endpoints")
    pts = {i / (n - 1) for i in range(n)}
    if n > 2:
        pts.add(0.5)
    return np.array(sorted(pts))


def loss_barrier(lambdas: np.ndarray, losses: np.ndarray) -> float:
    """max over the grid of L(lam) - [lam L(1) + (1 - lam) L(0)].

    ``losses[i]`` is the loss of ``lam*theta_a + (1-lam)*theta_b`` at
    ``lambdas[i]``, so ``L(1)`` belongs to theta_a.
    """
    lambdas = np.asarray(lambdas, dtype=np.float64)
    losses = np.asarray(losses, dtype=np.float64)
    if lambdas[0] != 0.0 or lambdas[-1] != 1.0:
        raise ValueError("the grid must include both endpoints")
    l0, l1 = losses[0], losses[-1]
    baseline = l0 + lambdas * (l1 - l0)
    return float(np.max(losses - baseline))


@dataclass
class BarrierCurve:
    lambdas: np.ndarray
    train_loss: np.ndarray
    train_acc: np.ndarray
    test_loss: np.ndarray
    test_acc: np.ndarray
    calibrated_test_loss: np.ndarray
    beta: np.ndarray
    fits: list[TemperatureFit] = field(default_factory=list, repr=False)

    @property
    def barrier_raw(self) -> float:
        """Raw loss barrier on the test split."""
        return loss_barrier(self.lambdas, self.test_loss)

    @property
    def barrier_raw_train(self) -> float:
        return loss_barrier(self.lambdas, self.train_loss)

    @property
    def barrier_calibrated(self) -> float:
        """Barrier of the temperature-calibrated test NLL (held-out split)."""
        return loss_barrier(self.lambdas, self.calibrated_test_loss)

    def index_of(self, lam: float) -> int:
        hits = np.flatnonzero(np.isclose(self.lambdas, lam, rtol=0, atol=1e-12))
        if hits.size == 0:
            raise KeyError(f"lambda {lam} is not on the grid")
        return int(hits[0])

    def accuracy_gap(self, lam: float = 0.5) -> float:
        """Mean endpoint test accuracy minus the merged model's accuracy at ``lam``."""
        return 0.5 * (self.test_acc[0] + self.test_acc[-1]) - self.test_acc[self.index_of(lam)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in zip(self.lambdas, self.train_loss, self.test_loss, self.test_acc,
                       self.calibrated_test_loss, self.beta):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "BarrierCurve":
        rows = list(csv.reader(io.StringIO(text)))
        if tuple(rows[0]) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV header {rows[0]}")
        cols = np.array([[float(v) for v in r] for r in rows[1:]]).T
        lam, tr, te, acc, cal, beta = cols
        return cls(lam, tr, np.full_like(lam, np.nan), te, acc, cal, beta)

    def summary(self) -> dict:
        s = {
            "barrier_raw": self.barrier_raw,
            "barrier_raw_train": self.barrier_raw_train,
            "barrier_calibrated": self.barrier_calibrated,
            "endpoint_a": {"test_loss": self.test_loss[-1], "test_acc": self.test_acc[-1],
                           "train_loss": self.train_loss[-1]},
            "endpoint_b": {"test_loss": self.test_loss[0], "test_acc": self.test_acc[0],
                           "train_loss": self.train_loss[0]},
            "beta": dict(zip(map(repr, self.lambdas.tolist()), self.beta.tolist())),
        }
        if np.any(np.isclose(self.lambdas, 0.5)):
            s["accuracy_gap_mid"] = self.accuracy_gap(0.5)
        return json.loads(json.dumps(s, default=float))


def barrier_curve(a: ParamSet, b: ParamSet, train: Dataset, test: Dataset,
                  grid: int | np.ndarray = DEFAULT_GRID,
                  calibration_fraction: float = CALIBRATION_FRACTION,
                  calibration_seed: int = 0) -> BarrierCurve:
    """Evaluate the merged model at every grid point on both splits.

    Each merged model gets its own inverse temperature, fitted on the same
    random ``calibration_fraction`` of the test set; the calibrated loss is
    the NLL on the remaining test samples.
    """
    check_same_arch(a, b)
    lambdas = lambda_grid(grid) if np.isscalar(grid) else np.asarray(grid, dtype=np.float64)
    cols = {k: [] for k in ("train_loss", "train_acc", "test_loss", "test_acc")}
    fits = []
    for lam in lambdas:
        merged = interpolate(a, b, float(lam))
        tr_loss, tr_acc = logit_metrics(predict(merged, train), train.labels)
        logits = predict(merged, test)
        te_loss, te_acc = logit_metrics(logits, test.labels)
        fits.append(fit_temperature(logits, test.labels, calibration_fraction,
                                    make_rng(calibration_seed)))
        for k, v in zip(cols, (tr_loss, tr_acc, te_loss, te_acc)):
            cols[k].append(v)
    return BarrierCurve(
        lambdas=lambdas,
        **{k: np.array(v) for k, v in cols.items()},
        calibrated_test_loss=np.array([f.nll_after for f in fits]),
        beta=np.array([f.beta for f in fits]),
        fits=fits,
    )


def ensemble_weights(lam: float, depth: int) -> tuple[float, float]:
    """Normalised logit weights lam^L / (lam^L + (1-lam)^L) and its complement."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    wa, wb = lam ** depth, (1.0 - lam) ** depth
    return wa / (wa + wb), wb / (wa + wb)


def ensemble_eval(a: ParamSet, b: ParamSet, lam: float, depth: int, d: Dataset) -> tuple[float, float]:
    """Loss and accuracy of the depth-weighted logit ensemble of ``a`` and ``b``."""
    check_same_arch(a, b)
    wa, wb = ensemble_weights(lam, depth)
    if wb == 0.0:
        logits = predict(a, d)
    elif wa == 0.0:
        logits = predict(b, d)
    else:
        logits = wa * predict(a, d) + wb * predict(b, d)
    return logit_metrics(logits, d.labels)
