import numpy as np
import pytest

from planefield_lab import diffeo_group as dg
from planefield_lab.errors import FormatError
from planefield_lab.scenario import Scenario, parse_scenario, run_program, run_tsuboi, run_veps

TEXT = """
seed 3
dim 2
probes 500
box U -1 1
flow a center=0.1,0 radius=0.5 direction=1,0 time=1
flow b center=-0.1,0.1 radius=0.4 direction=0,1 time=0.5
translation h box=U shift=3,0
perturbation p center=0,0 radius=1 direction=1,0 scale=0.01
program c a b comm
tsuboi a b h U
veps p c
"""


def test_parse_scenario():
    sc = parse_scenario(TEXT)
    assert sc.k == 2 and sc.seed == 3 and sc.probes == 500
    assert set(sc.maps) == {"a", "b", "h", "p", "c"} and sc.tsuboi == [("a", "b", "h", "U")]
    y = np.random.default_rng(0).uniform(-1, 1, (100, 2))
    assert np.max(np.abs(sc.map("c")(y) - dg.commutator(sc.map("a"), sc.map("b"))(y))) == 0.0


def test_program_semantics():
    maps = {"a": dg.make_bump_flow([0.0, 0.0], 0.5, [1.0, 0.0], 1.0),
            "g": dg.make_bump_flow([0.2, 0.0], 0.7, [0.0, 1.0], 0.6)}
    y = np.random.default_rng(1).uniform(-1, 1, (100, 2))
    conj = run_program("g a conj".split(), maps, 2)
    assert np.max(np.abs(conj(y) - dg.conjugate(maps["g"], maps["a"])(y))) == 0.0
    ident = run_program("a a inv compose".split(), maps, 2)
    assert np.max(np.abs(ident(y) - y)) < 1e-10
    assert np.array_equal(run_program(["id"], maps, 2)(y), y)


@pytest.mark.parametrize("tokens", [["a", "compose"], ["a", "b"], ["zzz"], []])
def test_program_errors(tokens):
    with pytest.raises(FormatError):
        run_program(tokens, {"a": dg.identity(2), "b": dg.identity(2)}, 2)


@pytest.mark.parametrize("text", [
    "seed x", "dim 0", "frobnicate a", "flow a radius", "flow a center=0 time=1",
    "box U 1 -1", "tsuboi a b", "program c a", "perturbation p center=0", "q 1,x",
])
def test_scenario_errors(text):
    with pytest.raises(FormatError):
        parse_scenario(text)


def test_run_checks_on_parsed_scenario():
    sc = parse_scenario(TEXT)
    ts = run_tsuboi(sc)
    assert ts["scenarios"] == 1 and ts["preconditions_ok"] and ts["max_discrepancy"] < 1e-9
    rows = {r["name"]: r for r in run_veps(sc)["rows"]}
    assert rows["p"]["in_V_eps"] and rows["p"]["norm"] < 0.05


def test_default_scenario_runs_random_cases():
    rep = run_tsuboi(Scenario(probes=300, settings={"random-tsuboi": 2}))
    assert rep["scenarios"] == 2 and rep["max_discrepancy"] < 1e-9
