import io

import numpy as np
import pytest

from planefield_lab.civilization import (RadialRetraction, SkeletonState, Simplex, Tube, check_civilized, civilize_skeleta,
                                         civilize_step, coface_eta_ratio, default_constants, fiber_deviation,
                                         homotopy_sample, tubular_fiber)
from planefield_lab.errors import ModelConsistencyError, PreconditionError
from planefield_lab.formats import dumps, read_checkpoint, write_checkpoint
from planefield_lab.pipeline import checkpoint_from_state, resume_civilization, start_simplex, top_cofaces
from planefield_lab.presets import make_pair


@pytest.fixture(scope="module")
def top():
    return start_simplex(4, 1, 0.1, 0)[0]


@pytest.fixture(scope="module")
def pair():
    return make_pair("twisting", 4, 0.3)


@pytest.fixture(scope="module")
def civilized(pair, top):
    steps = []
    ratio = coface_eta_ratio(pair, top, 1)
    state = civilize_skeleta(pair, top, 1, 0.1, seed=0, reports=steps, probes=300, eta_ratio=ratio)
    return state, steps, ratio


@pytest.mark.parametrize("dim", [0, 1, 2, 3])
def test_fiber_dimension(pair, top, dim):
    sigma = top.faces(dim)[0]
    fib = tubular_fiber(sigma.points.mean(axis=0), sigma, pair, 0.05, 0.005)
    expected = 1 if dim == 3 else 4 - dim
    assert fib.dim == expected
    basis = np.vstack([fib.b_basis, fib.e_basis])
    assert np.allclose(basis @ basis.T, np.eye(expected), atol=1e-12)
    # fibers are transverse to the simplex
    if dim:
        q = np.linalg.qr(sigma.edges.T)[0]
        assert np.linalg.matrix_rank(np.hstack([q, basis.T]), tol=1e-9) == dim + expected


def test_radial_retraction_profile():
    f = RadialRetraction()
    g = np.array([0.0, 0.5, 1.0, 1.5, 2.0, 3.0])
    assert np.allclose(f(g), [0.0, 0.0, 0.0, 1.0, 2.0, 3.0])
    assert np.allclose(f.interpolated(g, 0.0), g)
    with pytest.raises(PreconditionError):
        RadialRetraction(2.0, 1.0)


def test_default_constants_decrease():
    d, e = default_constants(0.1, 0.0125)
    assert d == 0.025 and e == pytest.approx(0.003125)


def test_monotone_violation_is_reported(pair):
    state = SkeletonState(1, [0.1, 0.2], [0.01, 0.001], pair)
    bad = state.monotone_violations()
    assert bad and bad[0]["constant"] == "delta"


def test_step_requires_decreasing_radii(pair, top):
    with pytest.raises(PreconditionError):
        civilize_step(SkeletonState(0, [0.01], [0.001], pair), top.faces(1), 0.02, 0.0005)
    with pytest.raises(PreconditionError):
        civilize_step(SkeletonState(-1, [], [], pair), top.faces(1), 0.02, 0.0005)


def test_inner_fibers_are_constant(civilized):
    state, steps, _ = civilized
    for s in steps:
        assert s["inner_deviation"] < 1e-9
        assert s["support_deviation"] == 0.0 and s["support_probes"] == 300
        assert s["idempotence_deviation"] == 0.0
        assert s["min_output_margin"] >= s["min_input_margin"]
        assert s["inheritance_error"] < 1e-12


def test_input_fibers_are_not_constant(pair, civilized):
    state, _, _ = civilized
    tube = state.tubes[0][0]
    raw = Tube(tube.simplex, pair, tube.delta, tube.eta)
    assert fiber_deviation(pair, raw)["max"] > 1e-4    # the twisting field varies across a fiber


def test_conditions_hold(civilized, top):
    state, _, _ = civilized
    rep = check_civilized(state, top_cofaces(top, 1), seed=0)
    assert rep.ok, rep.to_dict()
    assert rep.C["fibers_built"] == 5 + 10
    assert rep.C["max_exit_ratio"] < 1.0


def test_large_eta_ratio_breaks_coface_clause(pair, top, civilized):
    _, _, ratio = civilized
    state = civilize_skeleta(pair, top, 0, 0.1, seed=0, eta_ratio=min(1.0, 40 * ratio))
    rep = check_civilized(state, top_cofaces(top, 0), seed=0)
    assert not rep.C["ok"]


def test_homotopy_endpoints(pair, top):
    state0 = civilize_skeleta(pair, top, 0, 0.1, seed=0, eta_ratio=0.01)
    result = state0.pair
    pts = top.points.mean(axis=0) + 0.01 * np.random.default_rng(0).normal(size=(50, 4))
    at0 = homotopy_sample(SkeletonState(-1, [], [], pair), result, 0.0)
    at1 = homotopy_sample(SkeletonState(-1, [], [], pair), result, 1.0)
    f0, w0 = at0.values(pts)
    fs, ws = pair.values(pts)
    assert np.array_equal(f0, fs) and np.array_equal(w0, ws)
    f1, w1 = at1.values(pts)
    fr, wr = result.values(pts)
    assert np.array_equal(f1, fr) and np.array_equal(w1, wr)
    mid = homotopy_sample(SkeletonState(-1, [], [], pair), result, 0.5)
    assert mid.values(pts)[0].shape == f0.shape
    with pytest.raises(PreconditionError):
        homotopy_sample(SkeletonState(-1, [], [], pair), result, 1.5)


def test_simplex_faces_and_intersection():
    s = Simplex((3, 5, 7), np.array([[0.0, 0], [1, 0], [0, 1]]))
    assert len(s.faces(1)) == 3 and s.has_face(s.faces(0)[1])
    other = Simplex((5, 9), np.array([[1.0, 0], [2, 2]]))
    common = s.intersection(other)
    assert common.ids == (5,) and np.array_equal(common.points, [[1.0, 0]])
    assert s.grid_params(2).shape == (6, 2)


def test_checkpoint_replay_is_exact():
    top, mesh = start_simplex(4, 1, 0.1, 0)
    pair = make_pair("rotating", 4, 0.05)
    ratio = coface_eta_ratio(pair, top, 0)
    state = civilize_skeleta(pair, top, 0, 0.1, seed=0, eta_ratio=ratio)
    ck = checkpoint_from_state(state, "rotating", 0.05, top, 0, mesh, 0.1, ratio)
    again = read_checkpoint(io.StringIO(dumps(write_checkpoint, ck)))
    resumed, _, _ = resume_civilization(again, 1, probes=100)
    assert resumed.j == 1
    again.fibers[0] = (again.fibers[0][0], again.fibers[0][1], again.fibers[0][2],
                       again.fibers[0][3], again.fibers[0][4] + 1e-9)
    with pytest.raises(ModelConsistencyError):
        resume_civilization(again, 1, probes=100)
