import json
import os

import numpy as np
import pytest

from nnreg import designs
from nnreg.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main


def run(*argv):
    return main(list(argv))


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def test_gen_design_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run("--out", str(d), "gen", "gaussian-iid",
                   "n=24", "p=10", "seed=3") == EXIT_OK
    name = "design-gaussian-iid-seed3"
    for ext in (".json", ".bin"):
        fa = (a / (name + ext)).read_bytes()
        fb = (b / (name + ext)).read_bytes()
        assert fa == fb
    x, manifest = designs.load_design(str(a / (name + ".json")))
    assert x.shape == (24, 10)
    assert manifest["config"]["command"] == "gen"


def test_gen_solve_recover_roundtrip(tmp_path):
    d = str(tmp_path)
    assert run("--out", d, "gen", "orthonormal", "n=40", "p=12", "s=3",
               "sigma=0.05", "seed=5") == EXIT_OK
    inst = os.path.join(d, "instance-orthonormal-seed5.json")
    assert run("--out", d, "solve", inst) == EXIT_OK
    doc = read_json(os.path.join(d, "solve-nnls.json"))
    assert doc["method"] == "nnls"
    assert doc["kktMaxViolation"] <= 1e-8
    assert doc["errors"]["linf"] < 0.5
    assert len(doc["rows"]) == 12

    assert run("--out", d, "recover", inst) == EXIT_OK
    rec = read_json(os.path.join(d, "recover.json"))
    assert rec["exact"] is True
    assert rec["sizeHat"] == 3 and rec["support"] == [0, 1, 2]


def test_solve_methods_and_missing_args(tmp_path):
    d = str(tmp_path)
    run("--out", d, "gen", "orthonormal", "n=30", "p=8", "s=2",
        "sigma=0.01", "seed=1")
    inst = os.path.join(d, "instance-orthonormal-seed1.json")
    assert run("--out", d, "solve", inst, "method=omp") == EXIT_OK
    assert read_json(os.path.join(d, "solve-omp.json"))["steps"] == 2
    assert run("--out", d, "solve", inst, "method=ridge",
               "gamma=0.5") == EXIT_OK
    assert run("--out", d, "solve", inst, "method=ridge") == EXIT_CONFIG
    assert run("--out", d, "solve", inst, "method=nnlasso") == EXIT_CONFIG
    assert run("--out", d, "solve", inst, "method=nope") == EXIT_CONFIG


def test_unknown_keys_kinds_and_families(tmp_path):
    d = str(tmp_path)
    assert run("--out", d, "gen", "orthonormal", "n=10", "p=5",
               "bogus=3") == EXIT_CONFIG
    assert run("--out", d, "gen", "banded", "n=10", "p=5") == EXIT_CONFIG
    # an ensemble family is not a design kind on its own
    assert run("--out", d, "gen", "E1", "n=10", "p=5") == EXIT_CONFIG
    assert run("--out", d, "experiment", "nope") == EXIT_CONFIG
    assert run("--out", d, "experiment", "prop2", "bogus=1") == EXIT_CONFIG


def test_seed_env_fallback(tmp_path, monkeypatch):
    d = str(tmp_path)
    monkeypatch.setenv("NNR_SEED", "9")
    assert run("--out", d, "gen", "orthonormal", "n=12", "p=4") == EXIT_OK
    assert os.path.exists(os.path.join(d, "design-orthonormal-seed9.json"))
    # explicit seed beats the environment
    assert run("--out", d, "gen", "orthonormal", "n=12", "p=4",
               "seed=4") == EXIT_OK
    assert os.path.exists(os.path.join(d, "design-orthonormal-seed4.json"))
    monkeypatch.setenv("NNR_SEED", "abc")
    assert run("--out", d, "gen", "orthonormal", "n=12", "p=4") == EXIT_CONFIG


def test_config_file_merged_under_cli(tmp_path):
    d = str(tmp_path)
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text("# comment\nn=30\np=12\nseed=2\n")
    assert run("--config", str(cfgfile), "--out", d, "gen", "gaussian-iid",
               "p=8") == EXIT_OK
    manifest = read_json(os.path.join(d, "design-gaussian-iid-seed2.json"))
    assert manifest["config"]["p"] == "8"       # CLI wins
    assert manifest["config"]["n"] == "30"      # file fills the rest
    bad = tmp_path / "bad.cfg"
    bad.write_text("notakeyvalue\n")
    assert run("--config", str(bad), "--out", d, "gen", "orthonormal",
               "n=10", "p=5") == EXIT_CONFIG
    assert run("--config", str(tmp_path / "missing.cfg"), "--out", d,
               "gen", "orthonormal", "n=10", "p=5") == EXIT_CONFIG


def test_ensemble_family_token(tmp_path, capsys):
    d = str(tmp_path)
    assert run("--out", d, "gen", "ens-plus", "E1", "a=1", "n=30", "p=40",
               "seed=7") == EXIT_OK
    out = capsys.readouterr().out
    assert "# family=uniform" in out
    assert "# command=gen" in out
    x, _ = designs.load_design(os.path.join(d,
                                            "design-nonneg-iid-seed7.json"))
    assert np.all(x >= 0)
    assert np.allclose(np.sum(x * x, axis=0), 30.0)


def test_negcorr_block_gram_echo(tmp_path):
    d = str(tmp_path)
    assert run("--out", d, "gen", "appendix-i", "s=3", "seed=0") == EXIT_OK
    manifest = read_json(os.path.join(d, "design-negcorr-block-seed0.json"))
    gram = np.asarray(manifest["gram"])
    assert gram.shape == (4, 4)
    assert gram[0, 1] == pytest.approx(-0.5)
    assert np.allclose(np.diag(gram), 1.0)


def test_singular_explicit_gram_rejected_as_config(tmp_path):
    # a degenerate user-supplied Gram is caught at validation time
    d = str(tmp_path)
    gram_path = tmp_path / "gram.json"
    gram_path.write_text(json.dumps([[1.0, 1.0], [1.0, 1.0]]))
    assert run("--out", d, "gen", "explicit-gram", f"gram={gram_path}",
               "n=4", "p=2") == EXIT_CONFIG


def test_midcomputation_singularity_exits_three(tmp_path):
    # duplicated support columns only surface once the support Gram is
    # inverted inside diagnose
    x = np.random.default_rng(0).standard_normal((20, 5))
    x[:, 1] = x[:, 0]
    x *= np.sqrt(20.0) / np.linalg.norm(x, axis=0)
    path = str(tmp_path / "dup.json")
    designs.save_design(path, x,
                        spec=designs.DesignSpec("explicit-gram", 20, 5,
                                                {"gram": x.T @ x / 20.0}))
    assert run("--out", str(tmp_path), "diagnose", path,
               "support=0,1") == EXIT_NUMERIC


def test_diagnose_design(tmp_path):
    d = str(tmp_path)
    run("--out", d, "gen", "equicorr", "rho=0.5", "n=20", "p=6", "seed=1")
    design = os.path.join(d, "design-equicorr-gram-seed1.json")
    assert run("--out", d, "diagnose", design, "s=2") == EXIT_OK
    doc = read_json(os.path.join(d, "diagnose.json"))
    assert doc["support"] == [0, 1]
    assert doc["irrepresentable"] == pytest.approx(2 * 0.5 / 1.5, abs=1e-9)
    assert doc["tau0Sq"] > 0 and doc["margin_sq_support"] > 0
    # without any support hint only the full margin is reported
    assert run("--out", d, "diagnose", design, "name=d2") == EXIT_OK
    doc2 = read_json(os.path.join(d, "d2.json"))
    assert "irrepresentable" not in doc2
    assert doc2["tau0Sq"] == pytest.approx(doc["tau0Sq"], rel=1e-6)


def test_experiment_artifacts_and_figures(tmp_path):
    d = str(tmp_path)
    assert run("--out", d, "experiment", "prop2", "n=40", "p=40", "s=4",
               "reps=4", "sampler_draws=300", "seed=1") == EXIT_OK
    base = os.path.join(d, "active-size-seed1")
    assert os.path.exists(base + ".csv")
    assert os.path.exists(base + ".json")
    assert os.path.getsize(base + ".png") > 1000
    with open(base + ".csv") as fh:
        first = fh.readline()
    assert first.startswith("# ")

    d2 = str(tmp_path / "nofig")
    assert run("--out", d2, "--no-figures", "experiment", "active-size",
               "n=40", "p=40", "s=4", "reps=4", "sampler_draws=300",
               "seed=1") == EXIT_OK
    assert not os.path.exists(os.path.join(d2, "active-size-seed1.png"))
    same = (open(base + ".csv", "rb").read()
            == open(os.path.join(d2, "active-size-seed1.csv"), "rb").read())
    assert same


def test_solve_csv_artifact(tmp_path):
    d = str(tmp_path)
    run("--out", d, "gen", "orthonormal", "n=20", "p=6", "s=2",
        "sigma=0.1", "seed=2")
    inst = os.path.join(d, "instance-orthonormal-seed2.json")
    assert run("--out", d, "solve", inst, "format=csv") == EXIT_OK
    path = os.path.join(d, "solve-nnls.csv")
    with open(path) as fh:
        lines = fh.read().splitlines()
    assert any(line == "# command=solve" for line in lines)
    header = next(l for l in lines if not l.startswith("#"))
    assert header == "j,beta"


def test_usage_error_exits_two():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
