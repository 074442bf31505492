import json

import pytest

from planefield_lab.cli import main

SCENARIO = """seed 0
dim 2
probes 300
box U -1 1
flow a center=0.1,0 radius=0.5 direction=1,0 time=1
flow b center=-0.1,0.1 radius=0.4 direction=0,1 time=0.5
translation h box=U shift=3,0
tsuboi a b h U
"""


def run(argv, capsys):
    rc = main(argv)
    return rc, capsys.readouterr()


def test_genpos_success_and_failure(tmp_path, capsys):
    mesh = tmp_path / "mesh.txt"
    rc, out = run(["genpos", "--field", "rotating", "--l", "1", "--attempts", "3", "--mesh", str(mesh)], capsys)
    rep = json.loads(out.out)
    assert rc == 0 and rep["ok"] and mesh.exists()
    rc, out = run(["genpos", "--field", "constant", "--l", "1", "--attempts", "1", "--box", "-2", "2"], capsys)
    assert rc == 1 and not json.loads(out.out)["ok"]


def test_torus_verify_exit_codes(tmp_path, capsys):
    out = tmp_path / "torus.json"
    assert main(["torus-verify", "--grid", "12", "--probes", "100", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["ok"]
    assert main(["torus-verify", "--grid", "12", "--probes", "100", "--cutoffs", "corrupted",
                 "--out", str(tmp_path / "bad.json")]) == 1
    assert main(["torus-verify", "--a", "3.0"]) == 2


def test_diffeo_command(tmp_path, capsys):
    sc = tmp_path / "s.txt"
    sc.write_text(SCENARIO)
    rc, out = run(["diffeo", "tsuboi", "--scenario", str(sc)], capsys)
    res = json.loads(out.out)["result"]
    assert rc == 0 and res["max_discrepancy"] < 1e-9
    sc.write_text("flow a\n")
    assert main(["diffeo", "tsuboi", "--scenario", str(sc)]) == 2
    assert main(["diffeo", "tsuboi", "--scenario", str(tmp_path / "missing.txt")]) == 2


def test_emit_plots_header_only(tmp_path, capsys):
    rc, out = run(["emit-plots", "--out", str(tmp_path / "plots")], capsys)
    assert rc == 0 and set(json.loads(out.out).values()) == {0}


def test_pipeline_bad_config(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("frobnicate = 1\n")
    assert main(["pipeline", "--config", str(cfg)]) == 2
    cfg.write_text("pair = degenerate\n")
    assert main(["pipeline", "--config", str(cfg), "--out", str(tmp_path / "r.json")]) == 1


def test_civilize_roundtrip(tmp_path, capsys):
    state = tmp_path / "state.txt"
    rc, _ = run(["civilize", "--skeleton", "0", "--pair", "rotating", "--out", str(state),
                 "--probes", "100", "--report", str(tmp_path / "c0.json")], capsys)
    assert rc == 0 and state.exists()
    rc, _ = run(["civilize", "--skeleton", "1", "--checkpoint", str(state), "--probes", "100",
                 "--report", str(tmp_path / "c1.json")], capsys)
    assert rc == 0 and json.loads((tmp_path / "c1.json").read_text())["conditions"]["ok"]


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        main(["nonsense"])
    assert exc.value.code == 2
