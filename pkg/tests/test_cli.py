import json

import numpy as np
import pytest

from fdot.cli import main
from fdot.measurement import MeasurementSet


def write_config(tmp_path, **extra):
    d = {
        "medium": {"mu_s_prime": 1.0, "mu_a": 0.01, "beta": 0.5493},
        "layout": {"centers": [[-10, 0], [10, 0]]},
        "grid": {"dt": 6.67, "T": 3335},
        "truth": {"type": "cube", "X1": 0, "X2": 0, "X3": 8, "L": 3, "Q": 0.01},
        "inversion": {"cube_init": [0.5, 0.5, 7.5, 3.2, 0.01],
                      "gamma": {"x1": [-10, 10], "x2": [-10, 10]}},
        "lm": {"max_iter": 40},
    }
    d.update(extra)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(d))
    return p


def test_forward_writes_tpsfs(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "u.csv"
    assert main(["forward", "--config", str(cfg), "--out", str(out)]) == 0
    ms = MeasurementSet.from_csv(out)
    assert len(ms.pairs) == 8 and len(ms) == 8 * 500


def test_forward_named_targets(tmp_path):
    cfg = write_config(tmp_path, targets={
        "cube": {"type": "cube", "X1": 0, "X2": 0, "X3": 8, "L": 3, "Q": 0.01},
        "sphere": {"type": "sphere", "center": [0, 0, 8], "R": 1.5, "P": 0.01}})
    out = tmp_path / "u.csv"
    assert main(["forward", "--config", str(cfg), "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0].endswith(",cube,sphere")


def test_simulate_is_seeded(tmp_path):
    cfg = write_config(tmp_path)
    a, b, c = (tmp_path / n for n in ("a.csv", "b.csv", "c.csv"))
    for path, seed in ((a, 5), (b, 5), (c, 6)):
        assert main(["simulate", "--config", str(cfg), "--out", str(path),
                     "--noise", "0.05", "--seed", str(seed)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != c.read_bytes()
    assert len(MeasurementSet.from_csv(a)) == 8 * 20


def test_invert_round_trip(tmp_path, capsys):
    cfg = write_config(tmp_path)
    data = tmp_path / "d.csv"
    out = tmp_path / "r.json"
    assert main(["simulate", "--config", str(cfg), "--out", str(data)]) == 0
    code = main(["invert", "--config", str(cfg), "--data", str(data), "--out", str(out), "--threads", "1"])
    assert code in (0, 4)
    rep = json.loads(out.read_text())
    assert rep["gamma"] == {"x1": [-10, 10], "x2": [-10, 10]}
    np.testing.assert_allclose(rep["cube"]["params"], [0, 0, 8, 3, 0.01], atol=1e-3)
    assert "cuboid" in capsys.readouterr().err


def test_invert_max_iter_exit_code(tmp_path):
    cfg = write_config(tmp_path, lm={"max_iter": 1})
    data = tmp_path / "d.csv"
    assert main(["simulate", "--config", str(cfg), "--out", str(data)]) == 0
    assert main(["invert", "--config", str(cfg), "--data", str(data), "--out", str(tmp_path / "r.json")]) == 4


def test_truncated_csv_is_an_input_error(tmp_path, capsys):
    cfg = write_config(tmp_path)
    data = tmp_path / "d.csv"
    main(["simulate", "--config", str(cfg), "--out", str(data)])
    text = data.read_text()
    data.write_text(text[: len(text) // 2].rsplit(",", 2)[0] + "\n")
    assert main(["invert", "--config", str(cfg), "--data", str(data)]) == 2
    assert "row" in capsys.readouterr().err


def test_sensitivity_and_asymptotics(tmp_path):
    pairs = [[[x, 12], [x, -8]] for x in (-16, -12, -8, -4, 5, 10, 15)]
    cfg = write_config(tmp_path, truth={"type": "cuboid", "params": [-1, 1, -3, 3, 10, 12, 0.01]},
                       sensitivity={"pairs": pairs},
                       asymptotics={"pairs": [[[-3, -3], [-3, -7]]], "times": [20, 10], "n_time": 256})
    out = tmp_path / "s.json"
    assert main(["sensitivity", "--config", str(cfg), "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["rank"] == 7 and len(rep["determinants"]) == 1
    cfg2 = write_config(tmp_path, truth={"type": "cuboid", "params": [0, 2, -2, 2, 1, 3, 0.01]},
                        asymptotics={"pairs": [[[-3, -3], [-3, -7]]], "times": [20, 10], "n_time": 256})
    assert main(["asymptotics", "--config", str(cfg2), "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert len(rep["pairs"][0]["rows"]) == 2


def test_intensity_map(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "map.txt"
    assert main(["intensity-map", "--config", str(cfg), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("#") and len(lines) == 3


@pytest.mark.parametrize("args", [
    ["forward"],
    ["nonsense", "--config", "x"],
    ["forward", "--config", "/does/not/exist.json"],
    ["invert", "--config", "CFG"],
    ["simulate", "--config", "CFG", "--threads", "0"],
])
def test_usage_errors_exit_2(tmp_path, args):
    cfg = write_config(tmp_path)
    args = [str(cfg) if a == "CFG" else a for a in args]
    assert main(args) == 2


def test_bad_config_exit_2(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"medium": {"mu_a": -1}}))
    assert main(["forward", "--config", str(p)]) == 2


def test_numeric_failure_exit_3(tmp_path, monkeypatch):
    import fdot.inversion as inv
    from fdot.lm import NonFiniteResidualError

    cfg = write_config(tmp_path)
    data = tmp_path / "d.csv"
    main(["simulate", "--config", str(cfg), "--out", str(data)])

    def boom(*a, **k):
        raise NonFiniteResidualError("nan in model")

    monkeypatch.setattr(inv, "lm_iterate", boom)
    assert main(["invert", "--config", str(cfg), "--data", str(data)]) == 3
