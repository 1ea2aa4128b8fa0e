"""``lmclab`` command-line interface.

Exit codes: 0 on success, 2 for configuration or usage errors, 1 for
runtime failures (bad files, divergence, architecture mismatches).
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import yaml

from . import __version__
from .connectivity import barrier_curve, diagnose
from .config import ExperimentConfig, load_config, override_keys
from .errors import ConfigError, LmcError
from .experiment import (
    RunManifest,
    align,
    dumps_json,
    ensure_writable,
    load_data,
    run_sweep,
    train_cells,
    write_atomic,
)
from .mlp import check_same_arch, param_distance
from .ndcore import make_rng
from .symmetry import (
    Permutation,
    apply,
    load_permutation,
    random_permutation,
    save_permutation,
    weight_match,
)
from .theoryprobe import concentration_bound, mc_cosine_concentration, mc_relu_product
from .trainer import Checkpoint, checkpoint_bytes, load_checkpoint

log = logging.getLogger("lmclab")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
PROBES = ("relu_product", "cross_term", "abs_product", "cosine_concentration", "bound")
_CFG_PREFIX = "cfg:"


def _flag(key: str) -> str:
    return "--" + key.replace(".", "-").replace("_", "-")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML experiment config; flags override it")
    g = p.add_argument_group("config overrides", "any config key, dotted path joined by '-'")
    for key in override_keys():
        g.add_argument(_flag(key), dest=_CFG_PREFIX + key, default=argparse.SUPPRESS,
                       metavar="V", help=argparse.SUPPRESS if key != "output_dir" else
                       "output directory (default $LMCLAB_OUTPUT_DIR or ./lmclab-out)")


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {}
    for k, v in vars(args).items():
        if k.startswith(_CFG_PREFIX):
            try:
                overrides[k[len(_CFG_PREFIX):]] = yaml.safe_load(v)
            except yaml.YAMLError:
                overrides[k[len(_CFG_PREFIX):]] = v
    return load_config(args.config, overrides)


def _pair(args) -> tuple[Checkpoint, Checkpoint]:
    a, b = load_checkpoint(args.checkpoint_a), load_checkpoint(args.checkpoint_b)
    check_same_arch(a.params, b.params)
    return a, b


# --- commands ----------------------------------------------------------------

def cmd_train(args, cfg: ExperimentConfig, out: Path, manifest: RunManifest) -> None:
    with manifest.stage("data"):
        train_set, test_set = load_data(cfg)
    with manifest.stage("train"):
        paths = train_cells(cfg, train_set, test_set, out, manifest)
    for p in paths.values():
        print(p)


def cmd_barrier(args, cfg, out, manifest) -> None:
    a, b = _pair(args)
    with manifest.stage("data"):
        train_set, test_set = load_data(cfg)
    with manifest.stage("align"):
        b_al, pi = align(a.params, b.params, cfg.perm_mode, cfg.perm_seed, cfg.wm_max_sweeps)
    with manifest.stage("curve"):
        curve = barrier_curve(a.params, b_al, train_set, test_set, cfg.grid,
                              cfg.calibration_fraction, cfg.calibration_seed)
    csv_path = out / f"{args.name}.csv"
    side = {
        "schema_version": 1,
        "checkpoints": [Path(args.checkpoint_a).name, Path(args.checkpoint_b).name],
        "perm_mode": cfg.perm_mode,
        "grid": cfg.grid,
        "calibration_fraction": cfg.calibration_fraction,
        **curve.summary(),
    }
    if pi is not None:
        perm_path = out / f"{args.name}.perm.lmc"
        save_permutation(pi, perm_path, {"mode": cfg.perm_mode})
        side["permutation"] = perm_path.name
        manifest.add(perm_path)
    write_atomic(csv_path, curve.to_csv())
    write_atomic(out / f"{args.name}.json", dumps_json(side))
    manifest.add(csv_path)
    manifest.add(out / f"{args.name}.json")
    print(f"raw barrier {curve.barrier_raw:.6f}  calibrated {curve.barrier_calibrated:.6f}")


def cmd_diagnose(args, cfg, out, manifest) -> None:
    a, b = _pair(args)
    with manifest.stage("data"):
        _, test_set = load_data(cfg)
    with manifest.stage("align"):
        b_al, _ = align(a.params, b.params, cfg.perm_mode, cfg.perm_seed, cfg.wm_max_sweeps)
    with manifest.stage("diagnose"):
        report = diagnose(a.params, b_al, test_set, cfg.diagnose_lambda, cfg.overlap_mode,
                          cfg.aggregation, metadata={"perm_mode": cfg.perm_mode})
    path = out / f"{args.name}.json"
    write_atomic(path, report.to_json())
    manifest.add(path)
    print(path)


def _finite(x):
    return x if x is None or math.isfinite(x) else None


def theory_rows(probes, seed: int, n: int, rhos, d: int, trials: int,
                delta: float, c: float) -> list[dict]:
    rows = []
    relu_keys = [p for p in ("relu_product", "cross_term", "abs_product") if p in probes]
    if relu_keys:
        for i, rho in enumerate(rhos):
            res = mc_relu_product(rho, n, make_rng(seed, 1, i))
            for k in relu_keys:
                r = res[k]
                rows.append({"op": k, "params": {"rho": rho, "n": n, "seed": seed},
                             "estimate": r.estimate, "std_error": r.std_error,
                             "analytic": r.analytic_value, "z_score": r.z_score})
    if "cosine_concentration" in probes:
        r = mc_cosine_concentration(d, trials, seed)
        rows.append({"op": "cosine_concentration", "params": {"d": d, "trials": trials, "seed": seed},
                     "estimate": r.estimate, "std_error": r.std_error,
                     "analytic": r.analytic_value, "z_score": r.z_score,
                     "spread": r.spread, "min": min(r.cosines), "max": max(r.cosines),
                     "flagged": r.flagged})
    if "bound" in probes:
        eps, lo, hi = concentration_bound(d, delta, c)
        rows.append({"op": "bound", "params": {"d": d, "delta": delta, "c": c},
                     "estimate": eps, "std_error": None, "analytic": None, "z_score": None,
                     "lower": lo, "upper": _finite(hi)})
    return rows


def cmd_theory(args, out, manifest) -> None:
    probes = args.probe or list(PROBES)
    with manifest.stage("probes"):
        try:
            rows = theory_rows(probes, args.seed, args.n, args.rho, args.d, args.trials,
                               args.delta, args.c)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    path = out / f"{args.name}.json"
    write_atomic(path, dumps_json(rows))
    manifest.add(path)
    for r in rows:
        z = "" if r["z_score"] is None else f"  z={r['z_score']:+.2f}"
        print(f"{r['op']:<22} {json.dumps(r['params'], sort_keys=True)}  {r['estimate']:.6f}{z}")


def cmd_sweep(args, cfg, out, manifest) -> None:
    res = run_sweep(cfg, out, manifest)
    pair_dir = out / "pairs" / args.name
    pair_dir.mkdir(parents=True, exist_ok=True)
    for p in res.pairs:
        stem = f"m{p.multiplier.replace('/', '-')}_s{p.seeds[0]}-{p.seeds[1]}"
        for path, text in ((pair_dir / f"{stem}.csv", p.curve.to_csv()),
                           (pair_dir / f"{stem}.report.json", p.report.to_json())):
            write_atomic(path, text)
            manifest.add(path)
    for path, text in ((out / f"{args.name}.json", res.to_json()),
                       (out / f"{args.name}.csv", res.to_csv())):
        write_atomic(path, text)
        manifest.add(path)
    for row in res.rows:
        print(f"m={row['multiplier']:<5} n={row['n']}  gap {row['acc_gap_mean']:.4f}"
              f"  barrier {row['barrier_raw_mean']:.4f}  calibrated {row['barrier_calibrated_mean']:.4f}"
              f"  lewc {row['lewc_last_mean']:.4f}")
    for k, v in res.trends.items():
        print(f"{k}: {v}")


def cmd_perm(args, cfg, out, manifest) -> None:
    if args.perm_cmd == "search":
        a, b = _pair(args)
        history: list[float] = []
        with manifest.stage("weight_match"):
            pi = weight_match(a.params, b.params, make_rng(cfg.perm_seed), cfg.wm_max_sweeps, history)
        path = out / f"{args.name}.lmc"
        save_permutation(pi, path, {"mode": "weight_match", "distance_history": history})
        print(f"distance {history[0]:.6f} -> {history[-1]:.6f}")
    elif args.perm_cmd == "save":
        arch = load_checkpoint(args.checkpoint).params.arch
        if args.kind == "identity":
            pi = Permutation.identity(arch)
        else:
            pi = random_permutation(arch, make_rng(cfg.perm_seed))
        path = out / f"{args.name}.lmc"
        save_permutation(pi, path, {"mode": args.kind})
    else:
        ck = load_checkpoint(args.checkpoint)
        pi = load_permutation(args.permutation)
        permuted = dataclasses.replace(ck, params=apply(pi, ck.params))
        path = out / f"{args.name}.lmc"
        write_atomic(path, checkpoint_bytes(permuted))
        print(f"moved {param_distance(ck.params, permuted.params):.6f} in parameter space")
    manifest.add(path)
    print(path)


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lmclab", description=(
        "Train MLPs, measure loss barriers along linear interpolations, "
        "and run layerwise connectivity diagnostics."))
    parser.add_argument("--version", action="version", version=f"lmclab {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS,
                        help="more logging (repeat for debug)")

    p = sub.add_parser("train", help="train one checkpoint per (multiplier, seed)", parents=[common])
    _add_config_flags(p)

    for name, help_, default in (("barrier", "loss/accuracy along the interpolation path", "barrier"),
                                 ("diagnose", "per-layer diagnostics report", "report")):
        p = sub.add_parser(name, help=help_, parents=[common])
        p.add_argument("checkpoint_a", type=Path)
        p.add_argument("checkpoint_b", type=Path)
        p.add_argument("--name", default=default, help="output file stem")
        _add_config_flags(p)

    p = sub.add_parser("theory", help="Monte Carlo probes of the Gaussian/ReLU identities", parents=[common])
    p.add_argument("--probe", action="append", choices=PROBES,
                   help="repeatable; default runs every probe")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=1_000_000, help="samples per correlation")
    p.add_argument("--rho", type=float, nargs="+", default=[-0.9, -0.5, 0.0, 0.5, 0.9])
    p.add_argument("--d", type=int, default=100_000, help="dimension for the cosine probe and bound")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--c", type=float, default=1.0, help="constant in the concentration bound")
    p.add_argument("--name", default="theory")
    p.add_argument("--output-dir", type=Path, default=None)

    p = sub.add_parser("sweep", help="train all cells, evaluate all pairs, aggregate per width", parents=[common])
    p.add_argument("--name", default="sweep")
    _add_config_flags(p)

    p = sub.add_parser("perm", help="search, save or apply hidden-unit permutations", parents=[common])
    perm = p.add_subparsers(dest="perm_cmd", required=True)
    q = perm.add_parser("search", help="weight-match checkpoint B onto checkpoint A", parents=[common])
    q.add_argument("checkpoint_a", type=Path)
    q.add_argument("checkpoint_b", type=Path)
    q.add_argument("--name", default="perm")
    _add_config_flags(q)
    q = perm.add_parser("save", help="write an identity or seeded random permutation", parents=[common])
    q.add_argument("checkpoint", type=Path, help="checkpoint providing the architecture")
    q.add_argument("--kind", choices=("random", "identity"), default="random")
    q.add_argument("--name", default="perm")
    _add_config_flags(q)
    q = perm.add_parser("apply", help="permute a checkpoint's hidden units", parents=[common])
    q.add_argument("checkpoint", type=Path)
    q.add_argument("permutation", type=Path)
    q.add_argument("--name", default="permuted")
    _add_config_flags(q)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "theory":
            cfg = None
            out = args.output_dir or ExperimentConfig().out_dir()
            params = {k: v for k, v in sorted(vars(args).items()) if k not in ("output_dir", "verbose")}
            chash = hashlib.sha256(json.dumps(params, sort_keys=True, default=str).encode()).hexdigest()
        else:
            cfg = config_from_args(args)
            out = cfg.out_dir()
            chash = cfg.config_hash()
        out = ensure_writable(out)
        name = args.command if args.command != "perm" else f"perm-{args.perm_cmd}"
        manifest = RunManifest(name, chash)
        if args.command == "theory":
            cmd_theory(args, out, manifest)
        else:
            {"train": cmd_train, "barrier": cmd_barrier, "diagnose": cmd_diagnose,
             "sweep": cmd_sweep, "perm": cmd_perm}[args.command](args, cfg, out, manifest)
        manifest.write(out)
    except ConfigError as exc:
        print(f"lmclab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LmcError, OSError, ValueError) as exc:
        print(f"lmclab: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
