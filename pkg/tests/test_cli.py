import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maghomog.cli import main, study_summary
from maghomog.config import echo, from_dict, parse_config, parse_config_text
from maghomog.errors import ParseError, ValidationError
from maghomog.io import CSV_HEADER, read_tensor_csv

MINIMAL = {"command": "cell", "geometry": {"shape": "none"}, "mu": 1.0}


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def test_minimal_defaults():
    cfg = from_dict(MINIMAL)
    assert (cfg.d, cfg.n, cfg.tol) == (2, 64, 1e-10)
    e = echo(cfg)
    assert e["d"] == 2 and e["n"] == 64 and e["tol"] == 1e-10
    assert e["macro"]["Re"] == 1.0 and e["dns"]["n_cell"] == 16


def test_re_zero():
    with pytest.raises(ValidationError, match="Re must be positive"):
        from_dict({**MINIMAL, "macro": {"Re": 0}})


def test_parse_error_has_position():
    with pytest.raises(ParseError, match="line 2"):
        parse_config_text('{"command": "cell",\n "n": }')


@pytest.mark.parametrize("bad,needle", [
    ({**MINIMAL, "nn": 3}, "nn"),
    ({**MINIMAL, "geometry": {"shape": "blob"}}, "geometry.shape"),
    ({**MINIMAL, "n": 2}, "n must"),
    ({**MINIMAL, "dns": {"eps": [0.3]}}, "whole number"),
    ({**MINIMAL, "geometry": {"shape": "layered", "split": 0.3}, "mu": [1, 3]}, "geometry"),
    ({**MINIMAL, "geometry": {"shape": "disk", "radius": 0.49}, "mu": [1, 2]}, "geometry"),
    ({**MINIMAL, "mu": -1.0}, "mu"),
    ({"geometry": {"shape": "none"}}, "command"),
])
def test_validation_names_the_field(bad, needle):
    with pytest.raises(ValidationError, match=needle):
        from_dict(bad)


configs = st.fixed_dictionaries({
    "command": st.sampled_from(["cell", "macro", "dns", "verify"]),
    "n": st.sampled_from([16, 32, 64]),
    "tol": st.sampled_from([1e-8, 1e-10, 1e-12]),
    "geometry": st.one_of(
        st.just({"shape": "none"}),
        st.builds(lambda r: {"shape": "disk", "radius": r}, st.sampled_from([0.2, 0.25, 0.3])),
        st.builds(lambda a: {"shape": "layered", "axis": a}, st.sampled_from([0, 1])),
        st.just({"shape": "checkerboard"}),
    ),
    "macro": st.fixed_dictionaries({
        "Re": st.floats(0.1, 10), "Fr": st.floats(0.1, 10), "S": st.floats(0, 5),
        "g": st.lists(st.floats(-2, 2), min_size=2, max_size=2),
    }),
})


@given(configs)
@settings(max_examples=30)
def test_echo_round_trip(data):
    if data["geometry"]["shape"] != "none":
        data = {**data, "mu": [1.0, 2.0]}
    cfg = from_dict(data)
    back = parse_config_text(json.dumps(echo(cfg)))
    assert back == cfg
    assert echo(back) == echo(cfg)


def test_cell_fluid_csv(tmp_path):
    p = _write(tmp_path, {**MINIMAL, "n": 16})
    out = tmp_path / "out"
    assert main(["cell", "--config", str(p), "--out", str(out)]) == 0
    lines = (out / "effective_tensors.csv").read_text().splitlines()
    assert lines[0].startswith("# config_hash: ")
    assert lines[1] == CSV_HEADER
    rows = read_tensor_csv(out / "effective_tensors.csv")
    assert abs(rows["mu_eff"][(1, 1, 0, 0)] - 1.0) <= 1e-9
    assert abs(rows["mu_eff"][(2, 2, 0, 0)] - 1.0) <= 1e-9
    assert len(rows["N"]) == 16
    h = lines[0].split(": ")[1]
    report = json.loads((out / "report.json").read_text())
    assert report["config_hash"] == h
    assert json.loads((out / "config.echo.json").read_text())["config_hash"] == h


def test_macro_writes_vtk(tmp_path):
    cfg = {**MINIMAL, "command": "macro", "n": 16, "macro": {"n": 8}, "output": {"sample_n": 8}}
    out = tmp_path / "out"
    assert main(["macro", "--config", str(_write(tmp_path, cfg)), "--out", str(out)]) == 0
    text = (out / "macro_fields.vtk").read_text().splitlines()
    assert text[0] == "# vtk DataFile Version 3.0"
    assert "config_hash=" in text[1]
    assert "DATASET STRUCTURED_POINTS" in text
    assert "POINT_DATA 81" in text and "CELL_DATA 64" in text
    assert any(t.startswith("TENSORS maxwell_stress") for t in text)
    assert (out / "reconstructed_fields.vtk").exists()


def test_dns_writes_fields(tmp_path):
    cfg = {"command": "dns", "geometry": {"shape": "disk"}, "mu": [1, 2],
           "macro": {"Re": 2.0, "g": [0, 1]}, "dns": {"eps": [0.5], "n_cell": 8}}
    out = tmp_path / "out"
    assert main(["dns", "--config", str(_write(tmp_path, cfg)), "--out", str(out)]) == 0
    rep = json.loads((out / "dns_report.json").read_text())
    assert len(rep["runs"][0]["particles"]) == 4
    assert (out / "dns_eps_1.vtk").read_text().count("SCALARS") == 4


def test_verify_fluid_norms_small(tmp_path):
    cfg = {"command": "verify", "geometry": {"shape": "none"}, "mu": 1.0, "n": 16,
           "macro": {"n": 16}, "dns": {"eps": [0.5, 0.25], "n_cell": 8}}
    out = tmp_path / "out"
    assert main(["verify", "--config", str(_write(tmp_path, cfg)), "--out", str(out)]) == 0
    rep = json.loads((out / "corrector_report.json").read_text())
    for row in rep["rows"]:
        for key in ("potential_corrector", "velocity_corrector", "maxwell_gap_l1", "maxwell_gap_l2"):
            assert row[key] <= 1e-7
    assert (out / "corrector_report.csv").read_text().startswith("# config_hash: ")
    assert "finished" in (out / "timings.log").read_text()


def test_exit_codes(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["cell", "--config", str(_write(tmp_path, {**MINIMAL, "macro": {"Re": 0}})), "--out", str(out)]) == 2
    err = json.loads((out / "error.json").read_text())
    assert err["error"] == "ValidationError" and err["exit_code"] == 2
    assert main(["cell", "--config", str(tmp_path / "missing.json"), "--out", str(out)]) == 2
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["cell", "--config", str(_write(tmp_path, MINIMAL)), "--out", str(blocker / "sub")]) == 4
    capsys.readouterr()


def test_no_convergence_exit_code(tmp_path, monkeypatch):
    from maghomog import cli
    from maghomog.errors import NoConvergence

    def boom(*a, **k):
        raise NoConvergence("stalled", residual=1e-3, iterations=10)

    monkeypatch.setattr(cli, "solve_cell_problems", boom)
    out = tmp_path / "o"
    assert main(["cell", "--config", str(_write(tmp_path, MINIMAL)), "--out", str(out)]) == 3
    err = json.loads((out / "error.json").read_text())
    assert err["residual"] == 1e-3 and err["iterations"] == 10


def test_study_summary_flags():
    rows = [{"potential_corrector": 1.0, "potential_ablation": 1.0, "maxwell_gap_l1": 3.0},
            {"potential_corrector": 0.5, "potential_ablation": 0.9, "maxwell_gap_l1": 2.0},
            {"potential_corrector": 0.45, "potential_ablation": 0.8, "maxwell_gap_l1": 1.0}]
    s = study_summary(rows)
    assert s["potential_corrector"]["strictly_decreasing"]
    assert not s["potential_corrector"]["ratio_ok"]
    assert s["potential_ablation_stalls"] and s["maxwell_gap_decreasing"]


def test_config_file_round_trip(tmp_path):
    cfg = parse_config(_write(tmp_path, {**MINIMAL, "geometry": {"shape": "disk"}, "mu": [1, 2]}))
    p = tmp_path / "echo.json"
    p.write_text(json.dumps(echo(cfg)))
    assert parse_config(p) == cfg
    assert np.isclose(cfg.geometry.radius, 0.25)
