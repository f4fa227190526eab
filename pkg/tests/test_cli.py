import csv

import pytest

from hotml.cli import main
from hotml.unfolded import load_params

SIM = """[experiment]
mode = onebit
m_c = 6
n_c = 2
snr_db = 0, 10
trials = 20
detectors = zf, hotml, ml
seed = 1
"""

TRAIN = """[experiment]
mode = onebit
m_c = 6
n_c = 2
layers = 3
snr_db = 10
trials = 10
detectors = zf, hotml
seed = 2

[train]
iters = 20
batch = 16
"""

DUAL = """[experiment]
mode = onebit
m_c = 4
n_c = 2
snr_db = 10
trials = 2
seed = 5

[duality]
resolution = 21
lambda_points = 50
tolerance = 5e-2
"""


def _write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_missing_config_is_an_error(tmp_path, capsys):
    assert main(["simulate", str(tmp_path / "nope.cfg")]) == 1
    assert "hotml: error" in capsys.readouterr().err


def test_usage_errors():
    assert main(["frobnicate"]) == 2
    assert main(["simulate", "x.cfg", "--bogus"]) == 2
    assert main([]) == 2


def test_bad_config_reports_error(tmp_path, capsys):
    assert main(["simulate", _write(tmp_path, SIM + "colour = red\n")]) == 1
    assert "colour" in capsys.readouterr().err


def test_simulate_to_stdout(tmp_path, capsys):
    assert main(["simulate", _write(tmp_path, SIM)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "detector,M,N,snr_db,errors,bits,ber,flops,phi_calls,time_s"
    assert len(out) == 1 + 6


def test_simulate_file_and_plot(tmp_path):
    pytest.importorskip("matplotlib")
    out = tmp_path / "ber.csv"
    assert main(["simulate", _write(tmp_path, SIM), "--out", str(out), "--plot", "--seed", "4"]) == 0
    rows = _rows(out)
    assert {r["detector"] for r in rows} == {"zf", "hotml", "ml"}
    assert (tmp_path / "ber.png").stat().st_size > 0


def test_seed_override_is_deterministic(tmp_path):
    cfg = _write(tmp_path, SIM)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["simulate", cfg, "--out", str(a), "--seed", "9"]) == 0
    assert main(["simulate", cfg, "--out", str(b), "--seed", "9", "--workers", "2"]) == 0
    strip = lambda rows: [(r["detector"], r["snr_db"], r["errors"], r["flops"]) for r in rows]
    assert strip(_rows(a)) == strip(_rows(b))


def test_train_then_eval(tmp_path):
    cfg = _write(tmp_path, TRAIN)
    net = tmp_path / "net.bin"
    assert main(["train", cfg, "--out", str(net)]) == 0
    params = load_params(net)
    assert (params.M, params.N, params.K) == (12, 4, 3)
    losses = _rows(tmp_path / "net.loss.csv")
    assert len(losses) == 20
    out = tmp_path / "eval.csv"
    assert main(["eval", cfg, "--params", str(net), "--out", str(out)]) == 0
    rows = _rows(out)
    assert [r["detector"] for r in rows] == ["zf", "hotml", "deephotml"]
    assert float(rows[-1]["phi_calls"]) == 3 * 12


def test_eval_rejects_mismatched_params(tmp_path, capsys):
    net = tmp_path / "net.bin"
    assert main(["train", _write(tmp_path, TRAIN), "--out", str(net)]) == 0
    other = _write(tmp_path, TRAIN.replace("m_c = 6", "m_c = 8"), "other.cfg")
    assert main(["eval", other, "--params", str(net)]) == 1
    assert "parameter file" in capsys.readouterr().err


def test_eval_missing_params_file(tmp_path):
    assert main(["eval", _write(tmp_path, TRAIN), "--params", str(tmp_path / "none.bin")]) == 1


def test_check_duality(tmp_path, capsys):
    out = tmp_path / "dual.csv"
    assert main(["check-duality", _write(tmp_path, DUAL), "--out", str(out)]) == 0
    rows = _rows(out)
    assert len(rows) == 2
    assert all(abs(float(r["gap"])) <= 5e-2 for r in rows)


def test_check_duality_tolerance_exceeded(tmp_path):
    # with lambda pinned near 0 the dual is the box minimum, well below f*
    text = DUAL.replace("tolerance = 5e-2", "tolerance = 1e-9\nlambda_max_factor = 1e-9")
    assert main(["check-duality", _write(tmp_path, text)]) == 1


def test_gradcheck(capsys):
    assert main(["gradcheck", "--draws", "2"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 2
