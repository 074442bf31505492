import csv
import os

import pytest

from planefield_lab.errors import FormatError, PreconditionError
from planefield_lab.pipeline import RunConfig, emit_plot_data, parse_config, run_pipeline, shell_probes


def test_parse_config_values_and_defaults():
    cfg = parse_config("n = 4  # dimension\npair = rotating\nrate = 0.1\nfamily = yes\n")
    assert cfg.n == 4 and cfg.pair == "rotating" and cfg.rate == 0.1 and cfg.family is True
    assert cfg.max_l == RunConfig().max_l


@pytest.mark.parametrize("text", ["bogus = 1", "n 4", "n = four", "family = maybe"])
def test_parse_config_format_errors(text):
    with pytest.raises(FormatError):
        parse_config(text)


@pytest.mark.parametrize("text", ["n = 2", "rate = 0", "eps_frac = 0.5", "j_max = 9",
                                  "diffeo_checks = tsuboi,nope", "torus_orientation = upside",
                                  "torus_sweep = 8,x"])
def test_parse_config_precondition_errors(text):
    with pytest.raises(PreconditionError):
        parse_config(text)


def test_degenerate_pair_fails_audit():
    rep = run_pipeline(RunConfig(pair="degenerate"))
    audit = rep["stages"][0]
    assert not rep["ok"] and not audit["ok"] and "witness" in audit
    assert all(s.get("skipped") for s in rep["stages"][1:])


def test_coarse_lattice_fails_conditions():
    rep = run_pipeline(RunConfig(pair="constant", max_l=1))
    by = {s["stage"]: s for s in rep["stages"]}
    assert by["genpos"]["ok"] and not by["lattice"]["ok"] and not rep["ok"]
    assert by["civilize"]["skipped"]


def test_emit_plot_data_headers_only(tmp_path):
    counts = emit_plot_data({}, tmp_path)
    assert set(counts.values()) == {0}
    for name in counts:
        with open(os.path.join(tmp_path, name), newline="") as fh:
            assert len(list(csv.reader(fh))) == 1


def test_shell_probes_avoid_inner_box():
    pts = shell_probes(4, 200, 0, inner=(-1.5, 1.5))
    assert pts.shape == (200, 4) and (abs(pts) > 1.5).any(axis=1).all() and (abs(pts) <= 3.0).all()
