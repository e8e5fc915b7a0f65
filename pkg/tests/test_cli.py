import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from demixdeconv.cli import main
from demixdeconv.operators import build_ensemble, lift, sample_factored, synthesize_observation
from demixdeconv.serialization import (
    bundle_from_dict,
    bundle_to_dict,
    decode_complex,
    dump_bundle,
    encode_complex,
    load_bundle,
)
from demixdeconv.errors import DimensionError


def _run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def bundle(tmp_path, capsys):
    path = tmp_path / "b.json"
    code, _, _ = _run(["--seed", "3", "gen", "--r", "2", "--k", "4", "--n", "4", "--l", "64", "--out", str(path)], capsys)
    assert code == 0
    return path


def test_encode_decode_roundtrip():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2))
    enc = encode_complex(a)
    assert np.shape(enc) == (3, 2, 2)
    np.testing.assert_array_equal(decode_complex(json.loads(json.dumps(enc))), a)
    with pytest.raises(DimensionError):
        decode_complex([[1.0, 2.0, 3.0]])


def test_bundle_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    ens = build_ensemble(20, [3, 2], [2, 4], rng, basis="random")
    truth = sample_factored(ens.K_dims, ens.N_dims, rng)
    obs = synthesize_observation(ens, truth, 0.1, rng)
    path = tmp_path / "x.json"
    dump_bundle(path, ens, obs, truth)
    ens2, obs2, truth2 = load_bundle(path)
    for i in range(2):
        np.testing.assert_array_equal(ens2.basis(i), ens.basis(i))
        np.testing.assert_array_equal(ens2.encoder(i), ens.encoder(i))
    np.testing.assert_array_equal(obs2.y, obs.y)
    assert obs2.tau == obs.tau
    assert (lift(truth2) - lift(truth)).norm() == 0
    d = bundle_to_dict(ens, obs)
    assert "truth" not in d and bundle_from_dict(d)[2] is None
    d["y"] = d["y"][:-1]
    with pytest.raises(DimensionError):
        bundle_from_dict(d)


def test_gen_is_deterministic(tmp_path, capsys):
    outs = [_run(["--seed", "9", "gen", "--l", "32"], capsys)[1] for _ in range(2)]
    assert outs[0] == outs[1]
    assert outs[0] != _run(["--seed", "10", "gen", "--l", "32"], capsys)[1]
    # the global flag also works after the subcommand
    assert outs[0] == _run(["gen", "--l", "32", "--seed", "9"], capsys)[1]


def test_solve_convex_bundle(bundle, capsys):
    code, out, _ = _run(["solve", "--bundle", str(bundle), "--method", "convex"], capsys)
    assert code == 0
    d = json.loads(out)
    assert d["feasibility_gap"] <= 1e-9
    assert max(d["relative_errors"]) <= 1e-3
    assert d["status"] == "Converged"


def test_solve_wirtinger_bundle_csv(bundle, capsys):
    code, out, _ = _run(["--format", "csv", "solve", "--bundle", str(bundle), "--method", "wirtinger"], capsys)
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["field", "value"]
    fields = dict(rows[1:])
    assert fields["status"] in ("Converged", "MaxIters")
    assert "factored" in fields


@pytest.mark.parametrize(
    "argv",
    [
        ["coherence", "--l", "256", "--P", "4"],
        ["partition", "--l", "1024", "--basis", "random", "--P", "4"],
        ["partition", "--l", "512"],
        ["certify", "--l", "1024"],
        ["isometry", "--l", "512", "--with-partition"],
    ],
)
def test_theory_commands(argv, capsys):
    code, out, err = _run(argv, capsys)
    assert code == 0, err
    d = json.loads(out)
    assert isinstance(d, dict) and d


def test_partition_report_fields(capsys):
    code, out, _ = _run(["partition", "--l", "1024", "--basis", "random", "--P", "4", "--seed", "1"], capsys)
    d = json.loads(out)
    assert d["nu_achieved"] <= 1 / 32
    assert {"size_ok", "nu_ok", "p_range_ok", "gamma_tilde"} <= set(d)


def test_certify_on_bundle(bundle, capsys):
    code, out, _ = _run(["certify", "--bundle", str(bundle), "--P", "2"], capsys)
    assert code == 0
    d = json.loads(out)
    assert len(d["w_norms"]) == 3


def test_sweep_rows(capsys):
    code, out, _ = _run(
        ["sweep", "--solver", "wirtinger", "--r", "1", "--k", "2", "--n", "2", "--rho", "0.8:3.2:0.2", "--trials", "1", "--seed", "7"],
        capsys,
    )
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 13
    assert [float(r["rho"]) for r in rows] == pytest.approx(np.arange(0.8, 3.21, 0.2))


def test_sweep_json_to_file(tmp_path, capsys):
    path = tmp_path / "s.json"
    code, out, _ = _run(
        ["sweep", "--solver", "convex", "--r", "1", "--k", "2", "--n", "2", "--rho", "4", "--trials", "1", "--format", "json", "--out", str(path)],
        capsys,
    )
    assert code == 0 and out == ""
    d = json.loads(path.read_text())
    assert d["rows"][0]["solver"] == "Convex"


def test_noise_command(capsys):
    code, out, _ = _run(["noise", "--r", "1", "--k", "2", "--n", "2", "--taus", "0.01,0.1", "--trials", "1"], capsys)
    assert code == 0
    assert out.splitlines()[0] == "tau,mean_error,theorem_bound_value"


def test_unknown_flag_exit_1(capsys):
    code, out, err = _run(["sweep", "--bogus"], capsys)
    assert code == 1
    assert "usage" in err


def test_missing_command_exit_1(capsys):
    assert _run([], capsys)[0] == 1


def test_bad_bundle_exit_1(tmp_path, capsys):
    code, _, err = _run(["solve", "--bundle", str(tmp_path / "missing.json")], capsys)
    assert code == 1 and "error" in err


def test_bad_grid_exit_1(capsys):
    assert _run(["sweep", "--rho", "3:1:0.5"], capsys)[0] == 1


def test_numeric_failure_exit_2(capsys):
    # K > Q with random bases cannot be partitioned
    code, _, err = _run(["partition", "--l", "64", "--k", "20", "--basis", "random", "--P", "8", "--max-attempts", "2"], capsys)
    assert code == 2
    assert "ConstructionError" in err


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "demixdeconv", "--version"], capture_output=True, text=True
    )
    assert proc.returncode == 0 and proc.stdout.strip()
