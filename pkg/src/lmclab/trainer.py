"""Deterministic Adam training, evaluation and checkpoint persistence."""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import storage
from .dataio import Dataset, batches
from .errors import DivergenceError, ShapeError
from .mlp import Arch, ParamSet, backward, forward, init
from .ndcore import make_rng, xent_per_sample

log = logging.getLogger(__name__)

CHECKPOINT_KIND = "checkpoint"
EVAL_CHUNK = 4096


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 3e-3
    batch_size: int = 512
    epochs: int = 20
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    width_multiplier: str = "1"
    # False: L2 term added to the gradient before the moment updates (coupled)
    decoupled_weight_decay: bool = False

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        # normalise the multiplier to an exact rational string such as "1/4"
        m = Fraction(str(self.width_multiplier)).limit_denominator(1 << 16)
        if m <= 0:
            raise ValueError("width_multiplier must be positive")
        object.__setattr__(self, "width_multiplier", str(m))

    @property
    def multiplier(self) -> Fraction:
        return Fraction(self.width_multiplier)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(eq=False)
class Checkpoint:
    params: ParamSet
    config: TrainConfig
    dataset_name: str
    final_train_loss: float
    final_test_loss: float
    final_test_acc: float
    format_version: int = storage.FORMAT_VERSION


class Adam:
    """Adam over a list of arrays, updating them in place.

    With ``decoupled=False`` weight decay is L2 regularisation: the decay
    term joins the gradient before the moment updates.
    """

    def __init__(self, params: list[np.ndarray], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0,
                 decoupled: bool = False):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.decoupled = decoupled
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    @classmethod
    def from_config(cls, params: list[np.ndarray], cfg: TrainConfig) -> "Adam":
        return cls(params, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
                   cfg.weight_decay, cfg.decoupled_weight_decay)

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        b1, b2, wd = self.beta1, self.beta2, self.weight_decay
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if wd and not self.decoupled:
                g = g + wd * p
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if wd and self.decoupled:
                p -= self.lr * wd * p
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def predict(p: ParamSet, d: Dataset | np.ndarray) -> np.ndarray:
    """Logits for every sample, computed in fixed-size chunks."""
    x = d.images if isinstance(d, Dataset) else np.asarray(d, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != p.arch.layer_dims[0]:
        raise ShapeError(f"inputs {x.shape} do not match input dim {p.arch.layer_dims[0]}")
    if x.shape[0] == 0:
        return np.zeros((0, p.arch.layer_dims[-1]))
    return np.concatenate([forward(p, x[i:i + EVAL_CHUNK]) for i in range(0, x.shape[0], EVAL_CHUNK)])


def logit_metrics(logits: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """Mean cross-entropy and accuracy of precomputed logits.

    The loss sum is exactly rounded (``math.fsum``) so it does not depend on
    sample order. Argmax ties go to the lowest class index.
    """
    if labels.shape[0] == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    loss = math.fsum(xent_per_sample(logits, labels)) / labels.shape[0]
    acc = int((logits.argmax(axis=1) == labels).sum()) / labels.shape[0]
    return loss, acc


def evaluate(p: ParamSet, d: Dataset) -> tuple[float, float]:
    """Exact mean loss and accuracy of ``p`` over all of ``d``."""
    return logit_metrics(predict(p, d), d.labels)


def train(arch: Arch, cfg: TrainConfig, train_set: Dataset, test_set: Dataset) -> Checkpoint:
    """Train from a seeded init with minibatch Adam; no LR schedule."""
    if train_set.dim != arch.layer_dims[0] or train_set.num_classes > arch.layer_dims[-1]:
        raise ShapeError(f"dataset ({train_set.dim} dims, {train_set.num_classes} classes) "
                         f"incompatible with {arch.layer_dims}")
    params = init(arch, make_rng(cfg.seed, 0))
    order_rng = make_rng(cfg.seed, 1)
    arrays = params.arrays()
    opt = Adam.from_config(arrays, cfg)
    for epoch in range(cfg.epochs):
        total, count = 0.0, 0
        for idx in batches(train_set, cfg.batch_size, order_rng):
            loss, grad = backward(params, train_set.images[idx], train_set.labels[idx])
            if not math.isfinite(loss):
                raise DivergenceError(epoch, loss)
            opt.step(grad.arrays())
            total += loss * len(idx)
            count += len(idx)
        log.debug("seed %d epoch %d train loss %.6f", cfg.seed, epoch, total / count)
    if not params.is_finite():
        raise DivergenceError(cfg.epochs - 1, float("nan"))
    train_loss, _ = evaluate(params, train_set)
    test_loss, test_acc = evaluate(params, test_set)
    log.info("seed %d width x%s: test loss %.4f acc %.4f", cfg.seed, cfg.width_multiplier,
             test_loss, test_acc)
    return Checkpoint(params, cfg, train_set.name, train_loss, test_loss, test_acc)


# --- persistence -------------------------------------------------------------

def checkpoint_bytes(c: Checkpoint) -> bytes:
    meta = {
        "layer_dims": list(c.params.arch.layer_dims),
        "with_bias": c.params.arch.with_bias,
        "config": c.config.to_dict(),
        "dataset_name": c.dataset_name,
        "final_train_loss": c.final_train_loss,
        "final_test_loss": c.final_test_loss,
        "final_test_acc": c.final_test_acc,
    }
    arrays = [(f"W{l + 1}", w) for l, w in enumerate(c.params.weights)]
    if c.params.biases is not None:
        arrays += [(f"b{l + 1}", b) for l, b in enumerate(c.params.biases)]
    return storage.dumps(CHECKPOINT_KIND, meta, arrays, version=c.format_version)


def save_checkpoint(c: Checkpoint, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(c))


def load_checkpoint(path) -> Checkpoint:
    meta, arrays = storage.load(path, CHECKPOINT_KIND)
    arch = Arch(tuple(meta["layer_dims"]), meta["with_bias"])
    weights = [arrays[f"W{l}"] for l in range(1, arch.depth + 1)]
    biases = [arrays[f"b{l}"] for l in range(1, arch.depth + 1)] if arch.with_bias else None
    return Checkpoint(
        params=ParamSet(arch, weights, biases),
        config=TrainConfig.from_dict(meta["config"]),
        dataset_name=meta["dataset_name"],
        final_train_loss=meta["final_train_loss"],
        final_test_loss=meta["final_test_loss"],
        final_test_acc=meta["final_test_acc"],
    )
