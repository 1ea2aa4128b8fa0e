"""Pipeline pieces shared by the CLI: data loading, cached training, pair runs, sweeps."""
from __future__ import annotations

import dataclasses
import hashlib
import itertools
import json
import logging
import math
import os
import tempfile
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .config import IDX_FILES, ExperimentConfig
from .connectivity import BarrierCurve, DiagnosticsReport, barrier_curve, diagnose
from .dataio import Dataset, SplitSpec, load_idx, split, synth_blobs
from .errors import ConfigError, FormatError, LmcError
from .mlp import ParamSet, scale_width
from .ndcore import make_rng
from .symmetry import Permutation, apply, random_permutation, weight_match
from .trainer import Checkpoint, TrainConfig, checkpoint_bytes, load_checkpoint, train

log = logging.getLogger(__name__)

SWEEP_SCHEMA_VERSION = 1
SWEEP_CSV_COLUMNS = (
    "multiplier", "n", "test_acc_mean", "acc_gap_mean", "acc_gap_std",
    "barrier_raw_mean", "barrier_raw_std", "barrier_calibrated_mean", "barrier_calibrated_std",
    "lewc_last_mean", "lewc_last_std", "eps_rank_frac_mean", "eps_rank_frac_std",
)


# --- files -------------------------------------------------------------------

def write_atomic(path, data: bytes | str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def ensure_writable(directory) -> Path:
    """Create ``directory`` if needed and prove it accepts files."""
    d = Path(directory)
    try:
        d.mkdir(parents=True, exist_ok=True)
        fd, probe = tempfile.mkstemp(dir=d, prefix=".probe.")
        os.close(fd)
        os.unlink(probe)
    except OSError as exc:
        raise ConfigError(f"output directory {d} is not writable: {exc}") from exc
    return d


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


@dataclass
class RunManifest:
    """Bookkeeping for one command: what was produced and how long each stage took.

    Timings make the manifest itself non-reproducible; every other output is
    byte-deterministic.
    """

    command: str
    config_hash: str
    artifacts: list[str] = field(default_factory=list)
    stage_seconds: dict[str, float] = field(default_factory=dict)
    cache_hits: list[str] = field(default_factory=list)
    tool_version: str = __version__

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.stage_seconds[name] = self.stage_seconds.get(name, 0.0) + time.perf_counter() - t0

    def add(self, path) -> None:
        self.artifacts.append(str(path))

    def write(self, directory) -> Path:
        missing = [a for a in self.artifacts if not Path(a).exists()]
        if missing:
            raise LmcError(f"manifest references missing files: {missing}")
        path = Path(directory) / f"manifest.{self.command}.json"
        write_atomic(path, dumps_json(dataclasses.asdict(self)))
        return path


# --- data --------------------------------------------------------------------

def _find(directory: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        if (directory / name).exists():
            return directory / name
    raise ConfigError(f"missing {stem}[.gz] in {directory}")


def load_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    ds = cfg.dataset
    if ds.kind == "idx":
        root = ds.resolved_dir()
        tr = load_idx(_find(root, IDX_FILES["train_images"]), _find(root, IDX_FILES["train_labels"]),
                      f"{ds.name}-train", ds.classes)
        te = load_idx(_find(root, IDX_FILES["test_images"]), _find(root, IDX_FILES["test_labels"]),
                      f"{ds.name}-test", ds.classes)
        return tr, te
    full = synth_blobs(make_rng(ds.seed), ds.n, ds.dim, ds.classes, ds.sep, ds.name)
    parts = split(full, SplitSpec((("train", 1.0 - ds.test_fraction), ("test", ds.test_fraction)),
                                  ds.split_seed))
    return parts["train"], parts["test"]


# --- training ----------------------------------------------------------------

def cell_config(cfg: ExperimentConfig, multiplier: str, seed: int) -> TrainConfig:
    return dataclasses.replace(cfg.train, seed=seed, width_multiplier=multiplier)


def cell_hash(cfg: ExperimentConfig, multiplier: str, seed: int) -> str:
    """Hash of everything that determines one trained model."""
    key = {
        "dataset": dataclasses.asdict(cfg.dataset),
        "base_dims": list(cfg.base_dims),
        "with_bias": cfg.with_bias,
        "train": cell_config(cfg, multiplier, seed).to_dict(),
    }
    key["dataset"].pop("data_dir")
    return hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()


def checkpoint_path(cfg: ExperimentConfig, out: Path, multiplier: str, seed: int) -> Path:
    tag = multiplier.replace("/", "-")
    return out / "checkpoints" / f"m{tag}_s{seed}_{cell_hash(cfg, multiplier, seed)[:12]}.lmc"


def train_cells(cfg: ExperimentConfig, train_set: Dataset, test_set: Dataset, out: Path,
                manifest: RunManifest | None = None,
                multipliers=None, seeds=None) -> dict[tuple[str, int], Path]:
    """Train (or reuse) one checkpoint per (multiplier, seed) cell."""
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    paths = {}
    for m in multipliers or cfg.multipliers:
        arch = scale_width(cfg.base_dims, Fraction(m), cfg.with_bias)
        for s in seeds or cfg.seeds:
            path = checkpoint_path(cfg, out, m, s)
            paths[(m, s)] = path
            if path.exists():
                try:
                    load_checkpoint(path)
                    if manifest is not None:
                        manifest.cache_hits.append(str(path))
                        manifest.add(path)
                    log.info("cache hit %s", path.name)
                    continue
                except FormatError:
                    log.warning("discarding unreadable cached checkpoint %s", path)
            try:
                ckpt = train(arch, cell_config(cfg, m, s), train_set, test_set)
            except LmcError:
                log.error("training failed for multiplier %s seed %d", m, s)
                raise
            write_atomic(path, checkpoint_bytes(ckpt))
            if manifest is not None:
                manifest.add(path)
    return paths


# --- pairs -------------------------------------------------------------------

def seed_pairs(seeds, pairing: str = "all") -> list[tuple[int, int]]:
    if pairing == "disjoint":
        return [(seeds[i], seeds[i + 1]) for i in range(0, len(seeds) - 1, 2)]
    return list(itertools.combinations(seeds, 2))


def align(a: ParamSet, b: ParamSet, mode: str, seed: int = 0,
          max_sweeps: int = 50) -> tuple[ParamSet, Permutation | None]:
    """Return ``b`` re-expressed under the requested permutation mode.

    ``random`` applies a seeded random permutation to ``b``;
    ``weight_match`` aligns ``b`` to ``a``. The permutation is returned so
    it can be saved alongside the results.
    """
    if mode == "none":
        return b, None
    if mode == "random":
        pi = random_permutation(b.arch, make_rng(seed))
    elif mode == "weight_match":
        pi = weight_match(a, b, make_rng(seed), max_sweeps)
    else:
        raise ConfigError(f"unknown permutation mode {mode!r}")
    return apply(pi, b), pi


@dataclass
class PairResult:
    multiplier: str
    seeds: tuple[int, int]
    curve: BarrierCurve
    report: DiagnosticsReport
    permutation: Permutation | None

    @property
    def lewc_last(self) -> float:
        return self.report.layers[-1]["lewc_cos"]

    @property
    def eps_rank_fraction(self) -> float:
        """eps-rank / width averaged over layers and both models."""
        vals = [row[k] / row["width"] for row in self.report.layers for k in ("eps_rank_a", "eps_rank_b")]
        return math.fsum(vals) / len(vals)

    def summary(self) -> dict:
        return {
            "multiplier": self.multiplier,
            "seeds": list(self.seeds),
            "accuracy_gap": float(self.curve.accuracy_gap(0.5)),
            "barrier_raw": self.curve.barrier_raw,
            "barrier_calibrated": self.curve.barrier_calibrated,
            "endpoint_test_acc": [float(self.curve.test_acc[-1]), float(self.curve.test_acc[0])],
            "lewc_last": self.lewc_last,
            "eps_rank_fraction": self.eps_rank_fraction,
            "commutativity_dist": self.report.column("commutativity_dist"),
        }


def run_pair(cfg: ExperimentConfig, a: ParamSet, b: ParamSet, train_set: Dataset, test_set: Dataset,
             multiplier: str = "", seeds: tuple[int, int] = (0, 0)) -> PairResult:
    """Barrier curve (grid always contains 0.5) plus the diagnostics report."""
    b_al, pi = align(a, b, cfg.perm_mode, cfg.perm_seed, cfg.wm_max_sweeps)
    curve = barrier_curve(a, b_al, train_set, test_set, cfg.grid,
                          cfg.calibration_fraction, cfg.calibration_seed)
    report = diagnose(a, b_al, test_set, cfg.diagnose_lambda, cfg.overlap_mode, cfg.aggregation,
                      metadata={"width_multiplier": multiplier or None, "seeds": list(seeds),
                                "perm_mode": cfg.perm_mode})
    return PairResult(multiplier, seeds, curve, report, pi)


# --- sweeps ------------------------------------------------------------------

def _mean_std(xs: list[float]) -> tuple[float, float]:
    mean = math.fsum(xs) / len(xs)
    std = float(np.std(xs, ddof=1)) if len(xs) > 1 else 0.0
    return mean, std


def aggregate(results: list[PairResult], multipliers) -> list[dict]:
    """Per-multiplier mean and sample std (ddof=1) over seed pairs."""
    rows = []
    for m in multipliers:
        rs = [r for r in results if r.multiplier == m]
        row: dict = {"multiplier": m, "n": len(rs)}
        accs = [a for r in rs for a in r.summary()["endpoint_test_acc"]]
        row["test_acc_mean"] = math.fsum(accs) / len(accs)
        for key, get in (("acc_gap", lambda r: float(r.curve.accuracy_gap(0.5))),
                         ("barrier_raw", lambda r: r.curve.barrier_raw),
                         ("barrier_calibrated", lambda r: r.curve.barrier_calibrated),
                         ("lewc_last", lambda r: r.lewc_last),
                         ("eps_rank_frac", lambda r: r.eps_rank_fraction)):
            row[f"{key}_mean"], row[f"{key}_std"] = _mean_std([get(r) for r in rs])
        depth = len(rs[0].report.layers)
        row["commutativity_dist_mean"] = [
            math.fsum(r.report.layers[i]["commutativity_dist"] for r in rs) / len(rs) for i in range(depth)
        ]
        rows.append(row)
    return rows


def trend_flags(rows: list[dict]) -> dict[str, bool]:
    """Monotonicity of the aggregated metrics along increasing width."""
    steps = list(zip(rows, rows[1:]))
    return {
        "acc_gap_strictly_decreasing": all(
            s["acc_gap_mean"] < r["acc_gap_mean"] for r, s in steps),
        "barrier_calibrated_strictly_decreasing": all(
            s["barrier_calibrated_mean"] < r["barrier_calibrated_mean"] for r, s in steps),
        # one std of slack, using the noisier of the two neighbours
        "barrier_calibrated_nonincreasing_within_std": all(
            s["barrier_calibrated_mean"] <= r["barrier_calibrated_mean"]
            + max(r["barrier_calibrated_std"], s["barrier_calibrated_std"]) for r, s in steps),
        "lewc_last_strictly_increasing": all(
            s["lewc_last_mean"] > r["lewc_last_mean"] for r, s in steps),
    }


@dataclass
class SweepResult:
    config_hash: str
    rows: list[dict]
    trends: dict[str, bool]
    pairs: list[PairResult]

    def to_dict(self) -> dict:
        return {
            "schema_version": SWEEP_SCHEMA_VERSION,
            "config_hash": self.config_hash,
            "rows": self.rows,
            "trends": self.trends,
            "pairs": [p.summary() for p in self.pairs],
        }

    def to_json(self) -> str:
        return dumps_json(self.to_dict())

    def to_csv(self) -> str:
        lines = [",".join(SWEEP_CSV_COLUMNS)]
        for row in self.rows:
            lines.append(",".join(str(row[c]) if c in ("multiplier", "n") else repr(float(row[c]))
                                  for c in SWEEP_CSV_COLUMNS))
        return "\n".join(lines) + "\n"


def run_sweep(cfg: ExperimentConfig, out: Path, manifest: RunManifest | None = None,
              data: tuple[Dataset, Dataset] | None = None) -> SweepResult:
    """Train every cell, evaluate every seed pair, aggregate per multiplier."""
    manifest = manifest or RunManifest("sweep", cfg.config_hash())
    with manifest.stage("data"):
        train_set, test_set = data or load_data(cfg)
    with manifest.stage("train"):
        paths = train_cells(cfg, train_set, test_set, out, manifest)
    results = []
    with manifest.stage("pairs"):
        for m in cfg.multipliers:
            models: dict[int, Checkpoint] = {s: load_checkpoint(paths[(m, s)]) for s in cfg.seeds}
            for sa, sb in seed_pairs(cfg.seeds, cfg.pairing):
                log.info("pair m=%s seeds=(%d, %d)", m, sa, sb)
                results.append(run_pair(cfg, models[sa].params, models[sb].params,
                                        train_set, test_set, m, (sa, sb)))
    rows = aggregate(results, cfg.multipliers)
    return SweepResult(cfg.config_hash(), rows, trend_flags(rows), results)
