import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from planefield_lab.errors import DegenerateInputError, InversionError, PreconditionError
from planefield_lab.geom_core import (LeafwiseForm, PairedDistribution, PlaneField, PlaneFieldSample, TwoFormField,
                                      bivector_from_pair, extend_by_normal_kernel, grassmann_distance,
                                      orthonormalize, pair_nondegenerate, project_along, recontract,
                                      tangential_derivative)
from planefield_lab.presets import (constant_field, constant_one_form, coordinate_one_form, elementary_form,
                                    flat_chart, standard_form, tilted_chart, wavy_chart, x_dy)

E = np.eye(4)


def sample(vectors, base=None):
    return PlaneFieldSample.from_vectors(np.zeros(4) if base is None else base, vectors)


def pair_of(vectors, form):
    return PairedDistribution(constant_field(4, vectors), form)


# project_along


def test_project_along_complement_face():
    assert project_along(sample(E[:2]), E[2:]).margin == pytest.approx(1.0, abs=1e-15)


def test_project_along_kills_tau():
    assert project_along(sample(E[:2]), E[:2]).margin == pytest.approx(0.0, abs=1e-15)


def test_project_along_half_diagonal_matches_svd_oracle():
    sub = np.array([E[0] + E[2], E[1] + E[3]])
    res = project_along(sample(E[:2]), sub)
    q, _ = np.linalg.qr(sub.T)
    oracle = np.linalg.svd(q[2:, :], compute_uv=False).min()
    assert res.margin == pytest.approx(oracle, abs=1e-14)
    assert res.margin == pytest.approx(1 / math.sqrt(2), abs=1e-14)


def test_project_along_dependent_subspace():
    with pytest.raises(DegenerateInputError):
        project_along(sample(E[:2]), [E[2], 2 * E[2]])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_project_along_margin_invariant_under_reframing(seed):
    rng = np.random.default_rng(seed)
    frame = orthonormalize(rng.normal(size=(2, 4)))
    sub = rng.normal(size=(2, 4))
    theta = rng.uniform(0, 2 * np.pi)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    a = project_along(PlaneFieldSample(np.zeros(4), frame), sub).margin
    b = project_along(PlaneFieldSample(np.zeros(4), rot @ frame), sub).margin
    assert a == pytest.approx(b, abs=1e-12)


# pair_nondegenerate


def test_nondegenerate_examples():
    x = np.zeros(4)
    yes = pair_nondegenerate(pair_of(E[:2], elementary_form(4, 0, 1)), x)
    assert yes.ok and yes.margin == pytest.approx(1.0)
    no = pair_nondegenerate(pair_of(E[:2], elementary_form(4, 2, 3)), x)
    assert not no.ok and no.margin == 0.0
    tilted = [E[0], math.cos(0.4) * E[1] + math.sin(0.4) * E[2]]
    res = pair_nondegenerate(pair_of(tilted, standard_form(4)), x)
    assert res.ok and res.margin == pytest.approx(math.cos(0.4), abs=1e-14)


def test_nondegenerate_odd_rank():
    with pytest.raises(PreconditionError):
        pair_nondegenerate(pair_of(E[:3], standard_form(4)), np.zeros(4))


def test_nondegenerate_rank_four_uses_pfaffian():
    res = pair_nondegenerate(pair_of(E, standard_form(4)), np.zeros(4), half_rank=2)
    assert res.ok and res.margin == pytest.approx(2.0)   # (w^w)(e1..e4) = 2! Pf


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_nondegeneracy_is_open(seed):
    rng = np.random.default_rng(seed)
    frame = orthonormalize(rng.normal(size=(2, 4)))
    a = rng.normal(size=(4, 4))
    w = a - a.T
    pair = PairedDistribution(constant_field(4, frame), TwoFormField(4, lambda p: np.broadcast_to(w, (len(p), 4, 4))))
    base = pair_nondegenerate(pair, np.zeros(4))
    if base.margin <= 1e-6:
        return
    b = rng.uniform(-1, 1, size=(4, 4))
    b = b - b.T
    w2 = w + b * (0.999 * base.margin / (2 * math.factorial(2)) / np.abs(b).max())
    pert = PairedDistribution(pair.tau, TwoFormField(4, lambda p: np.broadcast_to(w2, (len(p), 4, 4))))
    assert pair_nondegenerate(pert, np.zeros(4)).ok


# frames and fields


def test_sample_rejects_non_orthonormal_frame():
    with pytest.raises(PreconditionError):
        PlaneFieldSample(np.zeros(4), [[1.0, 0, 0, 0], [1.0, 1.0, 0, 0]])


def test_two_form_rejects_asymmetric_matrix():
    f = TwoFormField(2, lambda p: np.broadcast_to(np.array([[0.0, 1.0], [1.0, 0.0]]), (len(p), 2, 2)))
    with pytest.raises(PreconditionError):
        f(np.zeros(2))


def test_declared_lipschitz_bound_is_enforced():
    fast = PlaneField(3, 1, lambda p: np.stack([np.cos(5 * p[:, 0]), np.sin(5 * p[:, 0]), 0 * p[:, 0]], 1)[:, None],
                      lipschitz=1.0)
    with pytest.raises(PreconditionError):
        fast.check_continuity(np.random.default_rng(0).normal(size=(20, 3)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_orthonormalized_frames_have_identity_gram(seed):
    f = orthonormalize(np.random.default_rng(seed).normal(size=(3, 5)))
    assert np.max(np.abs(f @ f.T - np.eye(3))) < 1e-12


def test_grassmann_distance_is_projector_norm():
    a = E[:2]
    b = np.array([E[0], math.cos(0.3) * E[1] + math.sin(0.3) * E[2]])
    assert grassmann_distance(a, b) == pytest.approx(math.sin(0.3), abs=1e-14)


# tangential derivative and extension


def fields_xy():
    return [lambda x: np.array([1.0, 0, 0]), lambda x: np.array([0, 1.0, 0])]


def test_constant_form_has_zero_derivative():
    for chart in (flat_chart(), tilted_chart()):
        fields = [chart.coordinate_field(0), chart.coordinate_field(1)]
        val = tangential_derivative(constant_one_form([0.3, -1.0, 0.0]), chart, [0.2, 0.1, 0.4], fields)
        assert abs(val) < 1e-8


def test_x_dy_gives_area_form():
    val = tangential_derivative(x_dy(), flat_chart(), [0.3, -0.2, 0.5], fields_xy())
    assert val == pytest.approx(1.0, abs=1e-6)


def test_dy_is_leafwise_closed():
    rng = np.random.default_rng(1)
    for x in rng.uniform(-1, 1, (5, 3)):
        a, b = rng.normal(size=2), rng.normal(size=2)
        X = [lambda y, a=a: np.array([a[0], a[1], 0.0]), lambda y, b=b: np.array([b[0], b[1], 0.0])]
        assert abs(tangential_derivative(coordinate_one_form(1), flat_chart(), x, X)) < 1e-8


def test_non_tangent_field_is_rejected():
    with pytest.raises(PreconditionError):
        tangential_derivative(x_dy(), flat_chart(), np.zeros(3), [lambda x: np.array([0, 0, 1.0]),
                                                                    lambda x: np.array([0, 1.0, 0])])


def test_one_form_reduces_to_two_term_formula_for_commuting_fields():
    eta = LeafwiseForm(1, lambda x, v: (x[0] ** 2) * v[0][1] + np.sin(x[1]) * v[0][0])
    x = np.array([0.4, -0.3, 0.0])
    X, Y = fields_xy()
    d_x = (eta(x + 1e-5 * X(x), Y(x)) - eta(x - 1e-5 * X(x), Y(x))) / 2e-5
    d_y = (eta(x + 1e-5 * Y(x), X(x)) - eta(x - 1e-5 * Y(x), X(x))) / 2e-5
    assert tangential_derivative(eta, flat_chart(), x, [X, Y]) == pytest.approx(d_x - d_y, abs=1e-7)


def test_leafwise_form_is_alternating():
    eta = LeafwiseForm(2, lambda x, v: float(np.linalg.det(v[:, :2])))
    v = np.random.default_rng(2).normal(size=(2, 3))
    assert eta(np.zeros(3), v) == pytest.approx(-eta(np.zeros(3), v[::-1]))


def test_extension_examples():
    grid = np.random.default_rng(0).uniform(-1, 1, (10, 3))
    _, flat = extend_by_normal_kernel(coordinate_one_form(1), flat_chart(), grid)
    assert flat.leafwise_closed and flat.max_ambient_derivative < 1e-8
    ext, tilt = extend_by_normal_kernel(coordinate_one_form(1), tilted_chart(), grid)
    assert tilt.max_ambient_derivative < 1e-6
    assert abs(ext(np.zeros(3), np.array([-1.0, 0, 1.0]))) < 1e-15
    _, neg = extend_by_normal_kernel(x_dy(), flat_chart(), grid)
    assert neg.flagged and neg.max_ambient_derivative == pytest.approx(1.0, abs=1e-6)


def test_orthogonal_normal_breaks_closedness_on_curved_leaves():
    grid = np.random.default_rng(0).uniform(-1, 1, (10, 3))
    _, ortho = extend_by_normal_kernel(coordinate_one_form(0), wavy_chart(), grid)
    _, trans = extend_by_normal_kernel(coordinate_one_form(0), wavy_chart(), grid, complement="transverse")
    assert ortho.leafwise_closed and ortho.max_ambient_derivative > 0.1
    assert trans.max_ambient_derivative < 1e-6


def test_extension_kills_normal_and_agrees_on_tangents():
    chart = wavy_chart()
    ext, _ = extend_by_normal_kernel(x_dy(), chart, np.zeros((1, 3)))
    x = np.array([0.3, 0.2, 0.1])
    assert abs(ext(x, chart.normal(x))) < 1e-14
    t = chart.coordinate_field(1)(x)
    assert ext(x, t) == pytest.approx(x_dy()(x, t))


# bivector


def test_bivector_examples():
    x = np.zeros(4)
    b = bivector_from_pair(pair_of(E[:2], elementary_form(4, 0, 1)), x)
    assert abs(abs(b.matrix[0, 1]) - 1.0) < 1e-14 and np.count_nonzero(np.abs(b.matrix) > 1e-14) == 2
    assert b.image_distance < 1e-12
    b2 = bivector_from_pair(pair_of(E[:2], elementary_form(4, 0, 1, 2.0)), x)
    assert abs(b2.matrix[0, 1]) == pytest.approx(0.5)
    rot = [E[0], math.cos(0.7) * E[1] + math.sin(0.7) * E[3]]
    assert bivector_from_pair(pair_of(rot, standard_form(4)), x).image_distance < 1e-10


def test_bivector_degenerate_restriction():
    with pytest.raises(InversionError):
        bivector_from_pair(pair_of(E[:2], elementary_form(4, 2, 3)), np.zeros(4))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_recontract_is_identity_on_tau(seed):
    rng = np.random.default_rng(seed)
    frame = orthonormalize(rng.normal(size=(2, 4)))
    pair = pair_of(frame, standard_form(4))
    if pair_nondegenerate(pair, np.zeros(4)).margin < 1e-3:
        return
    b = bivector_from_pair(pair, np.zeros(4))
    v = rng.normal(size=2) @ frame
    assert np.allclose(recontract(b, standard_form(4)(np.zeros(4)), v), v, atol=1e-10)
    assert np.allclose(b.matrix, -b.matrix.T)
    assert np.linalg.matrix_rank(b.matrix, tol=1e-10) % 2 == 0
