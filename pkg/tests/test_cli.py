import csv
import json
import os

import numpy as np
import pytest

from lmclab.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, PROBES, main, theory_rows
from lmclab.mlp import forward
from lmclab.symmetry import load_permutation
from lmclab.theoryprobe import COSINE_LIMIT
from lmclab.trainer import load_checkpoint


def run(*argv):
    return main([str(a) for a in argv])


def manifest(out, name):
    return json.loads((out / f"manifest.{name}.json").read_text())


@pytest.fixture(scope="module")
def trained(tiny_yaml, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli")
    assert run("train", "--config", tiny_yaml, "--output-dir", out) == EXIT_OK
    ckpts = {p.name.split("_")[0] + "_" + p.name.split("_")[1]: p for p in (out / "checkpoints").iterdir()}
    return out, ckpts


class TestTrain:
    def test_grid_in_manifest(self, trained):
        out, ckpts = trained
        m = manifest(out, "train")
        assert len(m["artifacts"]) == 6 and m["cache_hits"] == []
        assert sorted(ckpts) == ["m1-2_s0", "m1-2_s1", "m1_s0", "m1_s1", "m2_s0", "m2_s1"]

    def test_rerun_hits_cache(self, trained, tiny_yaml, capsys):
        out, _ = trained
        assert run("train", "--config", tiny_yaml, "--output-dir", out) == EXIT_OK
        assert len(manifest(out, "train")["cache_hits"]) == 6

    def test_flag_overrides(self, tiny_yaml, tmp_path):
        rc = run("train", "--config", tiny_yaml, "--output-dir", tmp_path, "--multipliers", "1",
                 "--train-epochs", "1", "--train-weight-decay", "1e-4")
        assert rc == EXIT_OK and len(list((tmp_path / "checkpoints").iterdir())) == 2

    def test_unwritable_output(self, tiny_yaml, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert run("train", "--config", tiny_yaml, "--output-dir", blocker / "out") == EXIT_CONFIG
        assert not (blocker.parent / "manifest.train.json").exists()

    @pytest.mark.parametrize("flags", [["--multipliers", "[]"], ["--train-lr", "0"],
                                       ["--grid", "many"], ["--perm-mode", "sorted"]])
    def test_bad_config(self, tiny_yaml, tmp_path, flags):
        assert run("train", "--config", tiny_yaml, "--output-dir", tmp_path, *flags) == EXIT_CONFIG

    def test_missing_config(self, tmp_path):
        assert run("train", "--config", tmp_path / "none.yaml", "--output-dir", tmp_path) == EXIT_CONFIG

    def test_env_output_dir(self, tiny_yaml, tmp_path, monkeypatch):
        monkeypatch.setenv("LMCLAB_OUTPUT_DIR", str(tmp_path))
        assert run("train", "--config", tiny_yaml, "--multipliers", "1/2", "--train-epochs", "1") == EXIT_OK
        assert (tmp_path / "manifest.train.json").exists()


class TestBarrier:
    def test_outputs_and_determinism(self, trained, tiny_yaml, tmp_path):
        _, ck = trained
        args = ("barrier", ck["m2_s0"], ck["m2_s1"], "--config", tiny_yaml)
        assert run(*args, "--output-dir", tmp_path / "a") == EXIT_OK
        assert run(*args, "--output-dir", tmp_path / "b") == EXIT_OK
        for name in ("barrier.csv", "barrier.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        rows = list(csv.DictReader((tmp_path / "a" / "barrier.csv").open()))
        assert len(rows) == 5 and float(rows[0]["lambda"]) == 0.0
        side = json.loads((tmp_path / "a" / "barrier.json").read_text())
        assert side["perm_mode"] == "none" and "permutation" not in side

    def test_weight_match_not_worse(self, trained, tiny_yaml, tmp_path):
        _, ck = trained
        base = ("barrier", ck["m2_s0"], ck["m2_s1"], "--config", tiny_yaml, "--output-dir", tmp_path)
        assert run(*base, "--name", "none") == EXIT_OK
        assert run(*base, "--name", "wm", "--perm-mode", "weight_match") == EXIT_OK
        none = json.loads((tmp_path / "none.json").read_text())
        wm = json.loads((tmp_path / "wm.json").read_text())
        assert wm["barrier_raw"] <= none["barrier_raw"] + 1e-6
        assert (tmp_path / "wm.perm.lmc").exists() and wm["permutation"] == "wm.perm.lmc"

    def test_self_barrier_zero(self, trained, tiny_yaml, tmp_path):
        _, ck = trained
        assert run("barrier", ck["m1_s0"], ck["m1_s0"], "--config", tiny_yaml, "--output-dir", tmp_path) == 0
        side = json.loads((tmp_path / "barrier.json").read_text())
        assert side["barrier_raw"] == 0.0

    def test_arch_mismatch(self, trained, tiny_yaml, tmp_path):
        _, ck = trained
        assert run("barrier", ck["m1_s0"], ck["m2_s0"], "--config", tiny_yaml,
                   "--output-dir", tmp_path) == EXIT_RUNTIME

    def test_missing_checkpoint(self, trained, tiny_yaml, tmp_path):
        _, ck = trained
        assert run("barrier", ck["m1_s0"], tmp_path / "no.lmc", "--config", tiny_yaml,
                   "--output-dir", tmp_path) == EXIT_RUNTIME


class TestDiagnose:
    def test_identical(self, trained, tiny_yaml, tmp_path):
        _, ck = trained
        assert run("diagnose", ck["m1_s1"], ck["m1_s1"], "--config", tiny_yaml, "--output-dir", tmp_path) == 0
        rep = json.loads((tmp_path / "report.json").read_text())
        assert all(abs(l["lewc_cos"] - 1) < 1e-12 and l["commutativity_dist"] == 0 for l in rep["layers"])

    def test_weight_match_commutativity(self, trained, tiny_yaml, tmp_path):
        _, ck = trained
        base = ("diagnose", ck["m2_s0"], ck["m2_s1"], "--config", tiny_yaml, "--output-dir", tmp_path)
        assert run(*base, "--name", "none") == 0
        assert run(*base, "--name", "wm", "--perm-mode", "weight_match") == 0
        none = json.loads((tmp_path / "none.json").read_text())["layers"]
        wm = json.loads((tmp_path / "wm.json").read_text())["layers"]
        assert none[0]["commutativity_dist"] == wm[0]["commutativity_dist"] == 0
        assert all(w["commutativity_dist"] < n["commutativity_dist"] for n, w in zip(none[1:], wm[1:]))


class TestTheory:
    def test_rows(self):
        rows = theory_rows(PROBES, 0, 20_000, [0.0, 0.5], 1000, 5, 0.05, 1.0)
        ops = [r["op"] for r in rows]
        assert ops.count("relu_product") == 2 and ops[-2:] == ["cosine_concentration", "bound"]
        assert all(abs(r["z_score"]) < 5 for r in rows if r["z_score"] is not None)

    def test_command(self, tmp_path):
        rc = run("theory", "--probe", "relu_product", "--probe", "bound", "--n", 5000, "--rho", 0.3,
                 "--d", 10, "--output-dir", tmp_path)
        assert rc == EXIT_OK
        rows = json.loads((tmp_path / "theory.json").read_text())
        assert [r["op"] for r in rows] == ["relu_product", "bound"]
        assert rows[1]["upper"] is None
        assert manifest(tmp_path, "theory")["artifacts"] == [str(tmp_path / "theory.json")]

    def test_unknown_probe(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run("theory", "--probe", "nope", "--output-dir", tmp_path)
        assert exc.value.code == EXIT_CONFIG

    def test_invalid_value(self, tmp_path):
        assert run("theory", "--probe", "bound", "--delta", 2, "--output-dir", tmp_path) == EXIT_CONFIG

    def test_large_d_cosines(self, tmp_path):
        assert run("theory", "--probe", "cosine_concentration", "--d", 1_000_000,
                   "--output-dir", tmp_path) == EXIT_OK
        (row,) = json.loads((tmp_path / "theory.json").read_text())
        assert abs(row["min"] - COSINE_LIMIT) < 0.005 and abs(row["max"] - COSINE_LIMIT) < 0.005


class TestPerm:
    def test_search_save_apply(self, trained, tiny_yaml, tmp_path):
        _, ck = trained
        common = ("--config", tiny_yaml, "--output-dir", tmp_path)
        assert run("perm", "search", ck["m1_s0"], ck["m1_s1"], *common) == 0
        pi = load_permutation(tmp_path / "perm.lmc")
        assert len(pi.perms) == 2
        assert run("perm", "apply", ck["m1_s1"], tmp_path / "perm.lmc", *common) == 0
        orig, moved = load_checkpoint(ck["m1_s1"]), load_checkpoint(tmp_path / "permuted.lmc")
        x = np.random.default_rng(0).standard_normal((64, 8))
        np.testing.assert_allclose(forward(moved.params, x), forward(orig.params, x), atol=1e-9)

    def test_save_kinds(self, trained, tiny_yaml, tmp_path):
        _, ck = trained
        common = ("--config", tiny_yaml, "--output-dir", tmp_path)
        assert run("perm", "save", ck["m1_s0"], "--kind", "identity", "--name", "id", *common) == 0
        ident = load_permutation(tmp_path / "id.lmc")
        assert all(np.array_equal(p, np.arange(len(p))) for p in ident.perms)
        assert run("perm", "save", ck["m1_s0"], "--name", "r", *common) == 0
        assert any(not np.array_equal(p, np.arange(len(p))) for p in load_permutation(tmp_path / "r.lmc").perms)

    def test_apply_wrong_arch(self, trained, tiny_yaml, tmp_path):
        _, ck = trained
        common = ("--config", tiny_yaml, "--output-dir", tmp_path)
        assert run("perm", "save", ck["m2_s0"], *common) == 0
        assert run("perm", "apply", ck["m1_s0"], tmp_path / "perm.lmc", *common) == EXIT_RUNTIME


class TestSweepCommand:
    def test_sweep_and_rerun(self, tiny_yaml, tmp_path):
        assert run("sweep", "--config", tiny_yaml, "--output-dir", tmp_path) == EXIT_OK
        snap = {p: p.read_bytes() for p in tmp_path.rglob("*") if p.is_file() and "manifest" not in p.name}
        assert len(list((tmp_path / "pairs" / "sweep").iterdir())) == 6
        assert run("sweep", "--config", tiny_yaml, "--output-dir", tmp_path, "-v") == EXIT_OK
        again = {p: p.read_bytes() for p in tmp_path.rglob("*") if p.is_file() and "manifest" not in p.name}
        assert again == snap
        assert len(manifest(tmp_path, "sweep")["cache_hits"]) == 6


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        run("--version")
    assert exc.value.code == 0 and "lmclab" in capsys.readouterr().out


def test_console_script_entry_point():
    from importlib.metadata import entry_points

    eps = [e for e in entry_points(group="console_scripts") if e.name == "lmclab"]
    assert eps and eps[0].value == "lmclab.cli:main"
    assert os.path.basename(eps[0].module) == "lmclab.cli"
