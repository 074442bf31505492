import numpy as np
import pytest
from scipy.integrate import solve_ivp

from planefield_lab import diffeo_group as dg
from planefield_lab.errors import PreconditionError
from planefield_lab.scenario import random_tsuboi_case
from planefield_lab.smooth import plateau_bump_derivative


def probes(count=1000, lo=-2.0, hi=2.0, k=2, seed=0):
    return np.random.default_rng(seed).uniform(lo, hi, (count, k))


@pytest.fixture(scope="module")
def flows():
    a = dg.make_bump_flow([0.2, -0.1], 0.8, [1.0, 0.3], 0.7, name="a")
    b = dg.make_bump_flow([-0.3, 0.2], 0.6, [-0.2, 1.0], 0.9, name="b")
    c = dg.make_bump_flow([0.0, 0.4], 1.0, [0.5, -0.5], 0.5, name="c")
    return a, b, c


def test_bump_flow_zero_time_is_identity():
    y = probes(50)
    g = dg.make_bump_flow([0.0, 0.0], 1.0, [1.0, 0.0], 0.0)
    assert g.support is None and np.array_equal(g(y), y)


def test_bump_flow_matches_independent_ode_oracle():
    g = dg.make_bump_flow([0.0, 0.0], 1.0, [1.0, 0.0], 1.0)
    X = dg.bump_field([0.0, 0.0], 1.0, [1.0, 0.0])
    y0 = np.array([[0.0, 0.0], [0.3, -0.2], [-0.5, 0.4]])
    for y in y0:
        sol = solve_ivp(lambda t, z: X(z)[0], (0.0, 1.0), y, method="Radau", rtol=1e-12, atol=1e-14,
                        max_step=0.005)
        assert np.max(np.abs(g(y)[0] - sol.y[:, -1])) < 1e-9


def test_bump_flow_fixes_points_outside_the_ball():
    g = dg.make_bump_flow([0.0, 0.0], 1.0, [1.0, 0.0], 1.0)
    y = np.array([[1.5, 0.0], [0.0, -1.01], [3.0, 3.0]])
    assert np.array_equal(g(y), y)


def test_group_axioms(flows):
    a, b, c = flows
    y = probes()
    assert np.max(np.abs(dg.compose(dg.compose(a, b), c)(y) - dg.compose(a, dg.compose(b, c))(y))) < 1e-10
    assert np.max(np.abs(dg.compose(a, a.inv)(y) - y)) < 1e-10
    assert np.max(np.abs(dg.compose(dg.identity(2), b)(y) - b(y))) == 0.0
    assert a.inverse_error() < 1e-10


def test_support_algebra(flows):
    a, b, _ = flows
    y = probes(2000, -3, 3)
    outside = ~(a.in_support(y) | b.in_support(y))
    assert np.array_equal(dg.compose(a, b)(y[outside]), y[outside])
    assert np.array_equal(dg.commutator(a, b)(y[outside]), y[outside])


def test_disjoint_supports_commute():
    a = dg.make_bump_flow([-2.0, 0.0], 0.8, [1.0, 0.0], 0.6)
    b = dg.make_bump_flow([2.0, 0.0], 0.8, [0.0, 1.0], 0.6)
    y = probes(1000, -3, 3)
    assert np.max(np.abs(dg.commutator(a, b)(y) - y)) < 1e-12


def test_conjugate_of_commutator(flows):
    a, b, g = flows
    y = probes()
    lhs = dg.conjugate(g, dg.commutator(a, b))(y)
    rhs = dg.commutator(dg.conjugate(g, a), dg.conjugate(g, b))(y)
    assert np.max(np.abs(lhs - rhs)) < 1e-10


def test_power(flows):
    a = flows[0]
    y = probes(100)
    assert np.max(np.abs(dg.power(a, 2)(y) - a(a(y)))) == 0.0
    assert np.max(np.abs(dg.power(a, -1)(a(y)) - y)) < 1e-10


def test_rotation_path_examples():
    f = dg.RadialProfile(0.5)
    y = probes(500, -1.6, 1.6)
    theta, x, inside = dg.tube_chart(y)
    h = dg.make_rotation_path(f)
    expected = np.where(inside[:, None], dg.tube_embed(theta + np.where(inside, f(x), 0.0), x), y)
    assert np.max(np.abs(h(1.0)(y) - expected)) < 1e-12
    hm = dg.rotation_diffeo(f.scaled(-1.0), 1.0)
    assert np.max(np.abs(dg.compose(h(1.0), hm)(y) - y)) < 1e-12
    zero = dg.make_rotation_path(lambda x: np.zeros(np.atleast_2d(x).shape[0]))
    assert np.max(np.abs(zero(0.7)(y) - y)) < 1e-15
    with pytest.raises(PreconditionError):
        dg.make_rotation_path(lambda x: 2.0 * np.ones(np.atleast_2d(x).shape[0]))


def test_v_eps_identity_and_dense_grid_oracle():
    assert dg.v_eps_norm(dg.identity(2)).norm == 0.0
    c = 0.01
    g = dg.make_perturbation([0.0, 0.0], 1.0, [1.0, 0.0], c)
    est = dg.v_eps_norm(g, samples=2000)
    # oracle: |de| = c |bump'(s)| on a 10^5 grid (de has rank one along e1, norm c |grad bump|)
    s = np.linspace(0.0, 1.0, 100_000)
    oracle = c * np.max(np.abs(plateau_bump_derivative(s)))
    assert est.norm == pytest.approx(oracle, rel=0.02)


def test_composition_norm_chain_rule_bound():
    eps = 0.02
    a = dg.make_perturbation([0.1, 0.0], 1.0, [1.0, 0.0], eps / 2)
    b = dg.make_perturbation([-0.1, 0.2], 1.0, [0.0, 1.0], eps / 2)
    na, nb = dg.v_eps_norm(a).norm, dg.v_eps_norm(b).norm
    nab = dg.v_eps_norm(dg.compose(a, b)).norm
    assert nab <= na + nb + na * nb + 1e-4


def test_concatenation_examples():
    k = 2
    const = dg.PairedPath(dg.constant_path(k), dg.one_form_ds(k))
    y = probes(200, -1.6, 1.6)
    cat, rep = dg.concatenate(const, const, y)
    assert np.array_equal(cat.path(1.0)(y), y) and np.array_equal(cat.path(0.3)(y), y)
    f = dg.RadialProfile(0.25)
    p = dg.PairedPath(dg.make_rotation_path(f, k, adjust=0.1), dg.one_form_ds(k))
    cat, rep = dg.concatenate(p, p, y)
    h2f = dg.rotation_diffeo(f.scaled(2.0), 1.0, k)
    assert np.max(np.abs(cat.path(1.0)(y) - h2f(y))) < 1e-12
    assert np.min(np.abs(cat.alpha_on_tangent(0.5, y))) > 0
    unadjusted = dg.PairedPath(dg.make_rotation_path(f, k), dg.one_form_ds(k))
    with pytest.raises(PreconditionError):
        dg.concatenate(unadjusted, p)


def test_subdivision():
    f = dg.RadialProfile(0.5)
    gamma = dg.make_rotation_path(f)
    y = probes(300, -1.6, 1.6)
    assert dg.subdivide_path(gamma, 1) == [gamma]
    segs = dg.subdivide_path(gamma, 2)
    half = dg.rotation_diffeo(f.scaled(0.5), 1.0)
    for s in segs:
        assert np.max(np.abs(s(1.0)(y) - half(y))) < 1e-12
    assert dg.telescoping_error(gamma, dg.subdivide_path(gamma, 4), y) < 1e-10
    norms = [dg.v_eps_norm(dg.subdivide_path(gamma, q)[0](1.0), samples=800).norm for q in (1, 2, 4)]
    assert norms[0] > norms[1] > norms[2]


def test_suspension_holonomy():
    f = dg.RadialProfile(0.5)
    y = probes(60, -1.6, 1.6)
    _, rep = dg.suspend(dg.PairedPath(dg.make_rotation_path(f), dg.one_form_ds(2)), y)
    assert rep["holonomy_error"] < 1e-8
    _, const = dg.suspend(dg.PairedPath(dg.constant_path(2), dg.one_form_ds(2)), y)
    assert const["holonomy_error"] == 0.0


def test_torus_boundary_alpha_nonvanishing():
    f = dg.RadialProfile(0.5)
    y = probes(60, -1.6, 1.6)
    _, rep = dg.suspend(dg.PairedPath(dg.make_rotation_path(f), dg.torus_boundary_alpha(f)), y)
    assert rep["alpha_min_on_tangent"] > 0.1


def test_tsuboi_examples():
    U = (np.full(2, -1.0), np.full(2, 1.0))
    h = dg.make_translation_flow(U[0], U[1], [3.0, 0.0])
    ident = dg.tsuboi_verify(dg.identity(2), dg.identity(2), h, U, probes=1000)
    assert ident["discrepancy"] < 1e-10 and ident["preconditions_ok"]
    rng = np.random.default_rng(3)
    a, b, h, U = random_tsuboi_case(rng)
    rep = dg.tsuboi_verify(a, b, h, U, probes=2000)
    assert rep["preconditions_ok"] and rep["discrepancy"] < 1e-9 and len(rep["factors"]) == 4


def test_tsuboi_flags_broken_precondition(flows):
    a, b, _ = flows
    U = (np.full(2, -1.0), np.full(2, 1.0))
    lazy = dg.make_translation_flow(U[0], U[1], [0.5, 0.0])
    rep = dg.tsuboi_verify(a, b, lazy, U, probes=500)
    assert not rep["preconditions_ok"] and "h(U) meets U" in rep["flags"]


def test_tsuboi_corollary_eight_conjugates():
    rng = np.random.default_rng(11)
    a1, b1, h, U = random_tsuboi_case(rng)
    a2, b2, _, _ = random_tsuboi_case(rng)
    rep = dg.tsuboi_corollary_verify([(a1, b1), (a2, b2)], h, U, probes=2000)
    assert rep["conjugates"] == 8 and rep["discrepancy"] < 1e-9


def test_fragmentation():
    ident = [dg.identity(2)] * 6
    rep = dg.fragmentation_verify(dg.identity(2), ident, [None] * 6)
    assert rep["discrepancy"] == 0.0
    s = dg.make_bump_flow([0.1, 0.1], 0.6, [1.0, 0.0], 0.5)
    X = dg.FieldSpec((0.0, 0.0), 0.8, (0.0, 1.0))
    g = dg.commutator(s, X.exp())
    good = dg.fragmentation_verify(g, [s] + ident[:5], [X] + [None] * 5, probes=1000)
    assert good["discrepancy"] < 1e-9
    wrong = dg.make_bump_flow([-0.2, -0.2], 0.5, [1.0, 0.0], 1.5)
    bad = dg.fragmentation_verify(g, [wrong] + ident[:5], [X] + [None] * 5, probes=1000)
    assert bad["discrepancy"] > 0.1


def test_compose_72_identities_and_small_run():
    y = probes(100)
    assert np.array_equal(dg.compose_all([dg.identity(2)] * 72)(y), y)
    rep = dg.compose_72_check(0.005, seed=1, trials=2, count=72, samples=500)
    assert rep["all_in_V1"] and rep["worst_norm"] < 0.95
