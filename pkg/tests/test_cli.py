import json
import os

import pytest

from shelab import config as cfgmod
from shelab.cli import main
from shelab.noise import GENERATOR_ID, load_tensor


@pytest.fixture
def out(tmp_path, monkeypatch):
    monkeypatch.setenv("SHELAB_OUTPUT_DIR", str(tmp_path / "runs"))
    return tmp_path / "runs"


def _only_run(base):
    runs = sorted(base.iterdir())
    return runs[-1]


SMOKE = ["--model.drift=zero", "--scheme.N=16", "--scheme.K=15", "--scheme.M=32", "--output.n_paths=3"]


def test_version(capsys):
    assert main(["version"]) == 0
    assert GENERATOR_ID in capsys.readouterr().out


def test_simulate_smoke(out):
    assert main(["simulate", *SMOKE]) == 0
    run = _only_run(out)
    lines = (run / "perturbed.csv").read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    assert lines[1] == "path,x_j,value"
    assert len(lines) == 2 + 3 * 32
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["generator"] == GENERATOR_ID
    assert manifest["seed"] == cfgmod.DEFAULTS["seed"]


def test_simulate_is_reproducible(out):
    assert main(["simulate", *SMOKE, "--model.drift=sin"]) == 0
    assert main(["simulate", *SMOKE, "--model.drift=sin"]) == 0
    a, b = sorted(out.iterdir())
    assert a.name != b.name
    for name in ("perturbed.csv", "reference.csv", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_simulate_noise_dump(out):
    assert main(["simulate", *SMOKE, "--output.n_paths=1", "--output.noise_dump=true"]) == 0
    t = load_tensor(_only_run(out) / "noise_path0.bin")
    assert t.values.shape == (16 * 4, 16)


def test_strict_refusal_cites_bound(out, capsys):
    assert main(["simulate", "--scheme.N=4"]) == 1
    assert "T/12" in capsys.readouterr().err


def test_config_file_and_errors(out, tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"schema_version": 1, "seed": 5, "model": {"drift": "zero"},
                                "scheme": {"N": 16, "K": 15, "M": 32}}))
    assert main(["simulate", str(path)]) == 0
    assert json.loads((_only_run(out) / "manifest.json").read_text())["seed"] == 5
    assert main(["simulate", "--model.colour=red"]) == 1
    path.write_text("{not json")
    assert main(["simulate", str(path)]) == 1
    assert main(["simulate", "--scheme.K=64", "--scheme.M=64"]) == 1


def test_numerical_failure_exit(out, monkeypatch):
    from shelab import cli
    from shelab.errors import TruncationError

    def boom(*a, **k):
        raise TruncationError("series did not converge", bound=1.0)

    monkeypatch.setattr(cli, "kernel_checks", boom)
    assert main(["study", "--study.kind=kernel_checks"]) == 3


def test_study_kernel_checks(out):
    assert main(["study", "--study.kind=kernel_checks"]) == 0
    rep = json.loads((_only_run(out) / "report.json").read_text())
    assert rep["status"] == "ok"
    for name in ("representation", "neumann_mass", "semigroup"):
        assert rep["checks"][name]["value"] <= rep["checks"][name]["tol"]


def test_study_affine(out):
    assert main(["study", "--study.kind=affine", "--model.drift=affine", "--model.b1=1"]) == 0
    run = _only_run(out)
    rep = json.loads((run / "report.json").read_text())
    assert 0.8 <= rep["slope"] <= 1.1
    assert (run / "long.csv").read_text().splitlines()[1] == "study,level,delta,metric,value,stderr"


def test_study_asymptotics_boundary_factor(out):
    coefs = []
    for x in (0.0, 0.5):
        assert main(["study", "--study.kind=asymptotics", "--model.drift=zero", "--model.u0=zero",
                     f"--study.x={x}"]) == 0
        coefs.append(json.loads((_only_run(out) / "report.json").read_text())["coefficient"])
        for d in list(out.iterdir()):
            d.rename(out.parent / ("done-" + d.name))
    assert coefs[1] / coefs[0] == pytest.approx(2.0)


def test_study_inconclusive_is_not_an_error(out):
    args = ["study", "--model.drift=zero", "--study.paths=200", "--scheme.strict=false",
            "--scheme.K=15", "--scheme.M=32", "--scheme.ref_refinement=1"]
    assert main(args) == 0
    assert json.loads((_only_run(out) / "report.json").read_text())["status"] == "inconclusive"


def test_weak_study_reproducible_across_threads(out):
    args = ["study", "--study.paths=2500", "--scheme.strict=false", "--scheme.K=15", "--scheme.M=32",
            "--scheme.ref_refinement=1"]
    assert main([*args, "--threads", "1"]) == 0
    assert main([*args, "--threads", "3"]) == 0
    a, b = sorted(out.iterdir())
    for name in ("report.json", "levels.csv", "long.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_ladder_respects_strict_mode(out, capsys):
    assert main(["study", "--study.paths=200"]) == 1
    assert "refused" in capsys.readouterr().err


def test_selftest(capsys):
    assert main(["selftest"]) == 0
    first = capsys.readouterr().out
    assert main(["selftest"]) == 0
    assert capsys.readouterr().out == first


def test_selftest_fault_injection(capsys):
    assert main(["selftest", "--inject-fault", "isometry"]) != 0
    assert "FAIL noise_isometry" in capsys.readouterr().out


def test_override_parsing():
    assert cfgmod.parse_override("--scheme.N=32") == ("scheme", "N", 32)
    assert cfgmod.parse_override("--model.drift=sin") == ("model", "drift", "sin")
    assert cfgmod.parse_override("--seed=9") == ("seed", None, 9)
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.parse_override("--scheme")


def test_config_hash_ignores_key_order():
    a = cfgmod.load(None, ["--scheme.N=32", "--model.sigma=2"])
    b = cfgmod.load(None, ["--model.sigma=2", "--scheme.N=32"])
    assert cfgmod.config_hash(a) == cfgmod.config_hash(b)
    assert cfgmod.config_hash(a) != cfgmod.config_hash(cfgmod.load(None, ["--scheme.N=16"]))


def test_module_entry_point():
    import subprocess
    import sys

    r = subprocess.run([sys.executable, "-m", "shelab", "version"], capture_output=True, text=True,
                       env={**os.environ})
    assert r.returncode == 0 and "shelab" in r.stdout
