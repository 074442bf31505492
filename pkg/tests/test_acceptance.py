"""The nine primary acceptance criteria, each at its stated tolerance and time budget."""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from planefield_lab import diffeo_group as dg
from planefield_lab.civilization import check_civilized, civilize_skeleta, coface_eta_ratio
from planefield_lab.geom_core import extend_by_normal_kernel
from planefield_lab.pipeline import (central_simplex, dumps_report, read_config, run_pipeline, shell_probes,
                                     top_cofaces)
from planefield_lab.presets import CHART_PRESETS, coordinate_one_form, make_field, make_pair, x_dy
from planefield_lab.scenario import Scenario, run_concat, run_suspend, run_tsuboi
from planefield_lab.torus_example import SolidTorusModel, default_cutoffs, verify_example
from planefield_lab.triangulation import (LatticeSpec, find_general_position, general_position_report, jiggle,
                                          kuhn_triangulation)

GOLDEN = Path(__file__).parent / "golden"


def test_criterion_1_tsuboi(criterion):
    t0 = time.perf_counter()
    res = run_tsuboi(Scenario(k=2, seed=0, probes=10_000, settings={"random-tsuboi": 20}))
    dt = time.perf_counter() - t0
    ok = (res["scenarios"] == 20 and res["preconditions_ok"] and res["max_discrepancy"] < 1e-9 and dt < 120)
    criterion(1, "Tsuboi identity", ok,
              f"20 scenarios x 1e4 probes, max discrepancy {res['max_discrepancy']:.2e}, {dt:.1f}s")
    assert ok


def test_criterion_2_torus(criterion):
    t0 = time.perf_counter()
    rep = verify_example(SolidTorusModel(0.5, default_cutoffs()), grid=48, probes=1000, seed=0)
    dt = time.perf_counter() - t0
    ok = (rep["defect_max"] < 1e-12 and rep["margin_min"] > 0.2 and rep["margin_min_radial_scan"] > 0.2
          and rep["boundary_alpha_check"] < 1e-12 and abs(rep["alpha_on_kernel"] - 1.25) < 1e-12
          and rep["alpha_on_kernel_error"] < 1e-12 and dt < 60)
    criterion(2, "solid torus a=0.5 grid 48^3", ok,
              f"defect {rep['defect_max']:.1e}, margin {rep['margin_min']:.4f}, "
              f"boundary {rep['boundary_alpha_check']:.1e}, alpha(kernel) {rep['alpha_on_kernel']:.15f}, {dt:.1f}s")
    assert ok


def test_criterion_3_general_position(criterion):
    t0 = time.perf_counter()
    tau = make_field("constant", 4)
    base = kuhn_triangulation(LatticeSpec(4, 2, [(-2.0, 2.0)] * 4))
    unjiggled = general_position_report(base, tau, floor=1e-6)
    zero_face = any(w["margin"] == 0.0 and len(w["face"]) == 3 for w in unjiggled.witnesses)
    search = find_general_position(tau, (-1.0, 1.0), 0.1, max_l=4, attempts=50, seed=0, floor=1e-6)
    dt = time.perf_counter() - t0
    meets = search.complex.meeting(np.array([[-1.0, 1.0]] * 4)) if search.success else np.zeros(0, int)
    margins_ok = bool(search.success and np.all(search.report.margins > 1e-6)
                      and np.isin(meets, search.report.simplex_ids).all())
    golden = json.loads((GOLDEN / "genpos_search.json").read_text())
    got = json.loads(json.dumps(search.to_dict()))
    ok = (not unjiggled.ok and zero_face and search.success and search.l <= 4 and margins_ok
          and got == golden and dt < 300)
    criterion(3, "general position n=4", ok,
              f"unjiggled l=2 zero-margin 2-face {zero_face}; accepted l={search.l} after {search.attempts} "
              f"attempts (seed {search.seed}), min margin {search.report.min_margin:.2e}, "
              f"golden match {got == golden}, {dt:.1f}s")
    assert ok


def test_criterion_4_jiggling_contract(criterion):
    rows = []
    for n, l in ((2, 4), (3, 2), (4, 1)):
        base = kuhn_triangulation(LatticeSpec(n, l, [(-1.0, 1.0)] * n))
        eps = 0.1 / l
        for seed in range(3):
            jig, cx = jiggle(base, eps, seed)
            disp = np.linalg.norm(cx.vertices - base.vertices, axis=1)
            vols = cx.signed_volumes() * base.orientation
            rows.append((disp.max() < eps, vols.min() > 0, np.array_equal(cx.simplices, base.simplices)))
    ok = all(all(r) for r in rows)
    criterion(4, "jiggling contract", ok, f"{len(rows)} jigglings: displacement < eps, volumes > 0, "
              f"combinatorics unchanged")
    assert ok


def test_criterion_5_extension(criterion):
    grid = np.random.default_rng(0).uniform(-1.0, 1.0, (20, 3))
    worst = {}
    for name, make in CHART_PRESETS.items():
        chart = make()
        for form in (coordinate_one_form(0), coordinate_one_form(1)):
            _, rep = extend_by_normal_kernel(form, chart, grid, h=1e-4)
            assert rep.leafwise_closed
            worst[f"{name}:{form.name}"] = rep.max_ambient_derivative
    _, neg = extend_by_normal_kernel(x_dy(), CHART_PRESETS["flat"](), grid, h=1e-4)
    bad = {k: v for k, v in worst.items() if not v < 1e-6}
    ok = not bad and neg.flagged and neg.max_ambient_derivative > 0.5
    detail = (f"max|d eta'| = {max(worst.values()):.2e} over {len(worst)} chart/form pairs, "
              f"negative control {neg.max_ambient_derivative:.3f}")
    if bad:
        detail += f"; above 1e-6 with the orthogonal normal: {bad}"
    criterion(5, "d_F and kernel extension", ok, detail)
    assert ok


def test_criterion_6_civilization(criterion):
    n = 4
    pair = make_pair("rotating", n)
    tau = pair.tau
    search = find_general_position(tau, (-1.0, 1.0), 0.1, max_l=1, attempts=50, seed=0, floor=1e-6)
    top = central_simplex(search.complex, ids=search.report.simplex_ids)
    ratio = coface_eta_ratio(pair, top, 1)
    steps: list = []
    state = civilize_skeleta(pair, top, 1, 0.1, seed=0, reports=steps, probes=1000, eta_ratio=ratio)
    cond = check_civilized(state, top_cofaces(top, 1), seed=0)
    probes = shell_probes(n, 1000, 0, inner=(-1.5, 1.5))
    f0, w0 = pair.values(probes)
    f1, w1 = state.pair.values(probes)
    far = float(max(np.abs(f0 - f1).max(), np.abs(w0 - w1).max()))
    inner = max(s["inner_deviation"] for s in steps)
    support = max(s["support_deviation"] for s in steps)
    idem = max(s["idempotence_deviation"] for s in steps)
    margins_ok = all(s["min_output_margin"] >= s["min_input_margin"] for s in steps)
    ok = (len(steps) == 2 and inner < 1e-9 and support == 0.0 and all(s["support_probes"] == 1000 for s in steps)
          and far == 0.0 and margins_ok and idem == 0.0 and cond.ok)
    criterion(6, "civilization n=4, skeleta 0 and 1", ok,
              f"inner deviation {inner:.1e}, outside-tube change {support} (plus {far} far away), "
              f"margins inherited {margins_ok}, idempotence {idem}, (C)(D)(E) {cond.ok}")
    assert ok


def test_criterion_7_concatenation(criterion):
    sc = Scenario(k=2, seed=0, probes=2000)
    cat = run_concat(sc)
    sus = run_suspend(sc)
    ok = (cat["endpoint_law_error"] < 1e-12 and sus["holonomy_error"] < 1e-8
          and cat["telescoping_error"] < 1e-10)
    criterion(7, "concatenation", ok,
              f"endpoint law {cat['endpoint_law_error']:.1e}, h_f holonomy {sus['holonomy_error']:.1e}, "
              f"telescoping {cat['telescoping_error']:.1e}")
    assert ok


def test_criterion_8_compose_72(criterion):
    t0 = time.perf_counter()
    good = dg.compose_72_check(0.005, seed=0, trials=20)
    neg = dg.compose_72_check(0.5, seed=0, trials=5)
    dt = time.perf_counter() - t0
    norms_ok = all(r["norm"] < 0.95 for r in good["rows"])
    ok = norms_ok and good["trials"] == 20 and not neg["all_in_V1"] and dt < 180
    criterion(8, "72-fold composition", ok,
              f"eps=0.005 worst norm {good['worst_norm']:.4f} over 20 trials; eps=0.5 pass rate "
              f"{neg['pass_rate']:.2f}, worst {neg['worst_norm']:.2f}; {dt:.1f}s")
    assert ok


@pytest.mark.slow
def test_criterion_9_determinism(criterion):
    cfg = read_config(GOLDEN / "pipeline.cfg")
    first = dumps_report(run_pipeline(cfg))
    second = dumps_report(run_pipeline(read_config(GOLDEN / "pipeline.cfg")))
    golden = (GOLDEN / "pipeline_report.json").read_text()
    ok = first == second and first == golden
    criterion(9, "pipeline determinism", ok,
              f"two runs identical {first == second}, equal to the stored report {first == golden}")
    assert ok
