import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from flowcap.errors import DimensionMismatch, EmptyBox
from flowcap.fields import (
    COS, FD_STEP, QUADRATIC, RELU, SIN, Activation, Affine, Box, Conjugated, Named, Separable, Sum,
    constant, difference_field, divergence, eval_field, field_from_dict, gaussian, is_fully_coordinate_nonlinear,
    jacobian, leaky_relu, lie_bracket, lipschitz_estimate, negate, power, relu_field, sample_points,
    slice_nonlinearity_test, softplus,
)
from helpers import kinked_zoo, off_kink_points, smooth_zoo

E12 = np.array([[0.0, 1.0], [0.0, 0.0]])
E21 = E12.T


# eval_field


def test_zero_affine_field():
    f = Affine(np.zeros((2, 2)), np.zeros(2))
    assert np.array_equal(eval_field(f, [3.0, -1.0]), [0.0, 0.0])


def test_permute_relu_value():
    assert np.array_equal(eval_field(Named("permute_relu"), [2.0, -3.0]), [0.0, 2.0])


def test_sum_linearity():
    f = Sum([(2.0, relu_field(2)), (-1.0, relu_field(2))])
    assert np.array_equal(eval_field(f, [1.0, -1.0]), [1.0, 0.0])


def test_eval_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        eval_field(relu_field(2), [1.0, 2.0, 3.0])


def test_batch_matches_single():
    f = Named("sinsum")
    X = np.random.default_rng(0).normal(size=(7, 2))
    assert np.allclose(f(X), np.stack([f(x) for x in X]), rtol=0, atol=0)


def test_named_definitions():
    x = np.array([0.4, -1.2])
    s = math.sin(0.4) + math.sin(-1.2)
    assert np.allclose(Named("sinsum")(x), [s, s], rtol=0, atol=1e-15)
    g = math.exp(-(0.4 ** 2 + 1.2 ** 2))
    assert np.allclose(Named("gauss", 3)([0.4, -1.2, 0.0]), [g, g, g], rtol=0, atol=1e-15)
    with pytest.raises(DimensionMismatch):
        Named("permute_relu", 3)
    with pytest.raises(ValueError):
        Named("nope")


# jacobian


def test_affine_jacobian_is_A():
    A = np.array([[1.0, 2.0], [-3.0, 0.5]])
    assert np.array_equal(jacobian(Affine(A, [1.0, 1.0]), [7.0, -2.0]), A)


def test_relu_jacobian_off_kink():
    assert np.array_equal(jacobian(relu_field(2), [2.0, -2.0]), np.diag([1.0, 0.0]))


def test_relu_kink_uses_zero_subgradient():
    assert np.array_equal(jacobian(relu_field(2), [0.0, 1.0]), np.diag([0.0, 1.0]))


def test_identity_conjugation_jacobian():
    base = Named("sinsum")
    f = Conjugated(np.eye(2), np.eye(2), np.zeros(2), base)
    x = np.array([0.3, 1.1])
    assert np.array_equal(jacobian(f, x), jacobian(base, x))


def test_forward_difference_option():
    f = Separable(SIN, dim=2)
    x = np.array([0.2, 0.9])
    J = jacobian(f, x, method="forward")
    assert np.allclose(J, np.diag(np.cos(x)), atol=1e-7)
    with pytest.raises(ValueError):
        jacobian(f, x, method="spline")


# divergence


def test_permute_relu_divergence_free():
    X = np.random.default_rng(1).uniform(-3, 3, (200, 2))
    assert np.all(divergence(Named("permute_relu"), X) == 0.0)


def test_affine_divergence_is_trace():
    A = np.array([[1.5, 2.0], [0.0, -0.25]])
    assert divergence(Affine(A), [0.3, 0.4]) == pytest.approx(1.25, abs=1e-15)


def test_relu_divergence():
    assert divergence(relu_field(2), [1.0, 1.0]) == 2.0


# lie_bracket


def test_bracket_with_itself_vanishes():
    f = Named("sinsum")
    assert np.allclose(lie_bracket(f, f, [0.3, -0.8]), 0.0, atol=1e-15)


def test_monomial_bracket_value():
    f = Separable(power(2), dim=1)
    g = Separable(power(3), dim=1)
    assert lie_bracket(f, g, [2.0])[0] == pytest.approx(16.0, abs=1e-12)


def test_linear_bracket_value():
    out = lie_bracket(Affine(E12), Affine(E21), [1.0, 1.0])
    assert np.allclose(out, [-1.0, 1.0], atol=1e-15)


def test_bracket_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        lie_bracket(relu_field(2), relu_field(3), [1.0, 1.0])


# lipschitz_estimate


def test_affine_lipschitz_is_operator_norm():
    A = np.array([[1.0, 2.0], [-3.0, 0.5]])
    est = lipschitz_estimate(Affine(A, [1.0, 0.0]), Box.cube(-1, 1, 2), 16)
    assert abs(est - np.linalg.norm(A, 2)) <= 1e-12


@pytest.mark.parametrize("d", [1, 2, 4])
def test_relu_lipschitz_on_cube(d):
    assert lipschitz_estimate(relu_field(d), Box.cube(-1, 1, d), 32) == 1.0


def test_softplus_lipschitz_matches_derivative_sup():
    est = lipschitz_estimate(Separable(softplus(4.0), dim=1), Box([-1.0], [1.0]), 64)
    assert est == pytest.approx(4.0 / (1.0 + math.exp(-4.0)), abs=1e-12)


def test_lipschitz_nondecreasing_in_samples():
    f = Conjugated(np.array([[1.0, 0.3], [0.2, -1.0]]), np.array([[2.0, 1.0], [0.0, 1.5]]), [0.1, -0.2],
                   Named("sinsum"))
    box = Box.cube(-2, 2, 2)
    ests = [lipschitz_estimate(f, box, s) for s in (2, 4, 16, 64, 256)]
    assert all(b >= a for a, b in zip(ests, ests[1:]))


def test_lipschitz_errors():
    with pytest.raises(ValueError):
        lipschitz_estimate(relu_field(1), Box([0.0], [1.0]), 1)
    with pytest.raises(EmptyBox):
        Box([1.0], [0.0])


def test_sample_points_nested():
    box = Box.cube(-1, 2, 3)
    small, big = sample_points(box, 10), sample_points(box, 40)
    assert np.array_equal(big[: len(small)], small)
    assert np.all(box.contains(big))


# slice_nonlinearity_test


def test_affine_slices_linear():
    f = Affine(np.array([[1.0, 2.0], [3.0, 4.0]]), [0.5, -1.0])
    shifts = [np.zeros(2), np.array([1.0, -2.0]), np.array([5.0, 5.0])]
    for i in range(2):
        for j in range(2):
            assert slice_nonlinearity_test(f, i, j, shifts).linear


def test_relu_slice_nonlinear():
    v = slice_nonlinearity_test(relu_field(2), 0, 0, [np.zeros(2)], interval=(-1.0, 1.0))
    assert v.nonlinear
    assert np.array_equal(v.shift, np.zeros(2))


def test_permute_relu_slices():
    f = Named("permute_relu")
    shifts = [np.zeros(2), np.array([0.5, -0.5])]
    assert slice_nonlinearity_test(f, 0, 0, shifts).linear
    assert slice_nonlinearity_test(f, 0, 1, shifts).nonlinear
    assert not is_fully_coordinate_nonlinear(f, shifts)


def test_sinsum_fully_coordinate_nonlinear():
    assert is_fully_coordinate_nonlinear(Named("sinsum"), [np.zeros(2)])


def test_difference_slices_of_relu_nonlinear():
    g = difference_field(relu_field(1), [1.0])
    assert slice_nonlinearity_test(g, 0, 0, [np.zeros(1)], interval=(-2.0, 2.0)).nonlinear


def test_slice_precondition_errors():
    with pytest.raises(ValueError):
        slice_nonlinearity_test(relu_field(2), 0, 0, [])
    with pytest.raises(ValueError):
        slice_nonlinearity_test(relu_field(2), 0, 0, [np.zeros(2)], interval=(1.0, 1.0))
    with pytest.raises(DimensionMismatch):
        slice_nonlinearity_test(relu_field(2), 0, 2, [np.zeros(2)])


# properties


def test_antisymmetry_on_zoo():
    rng = np.random.default_rng(2)
    zoo = list(smooth_zoo(rng).values())
    X = rng.normal(size=(20, 2))
    for f in zoo:
        for g in zoo:
            assert np.max(np.abs(lie_bracket(f, g, X) + lie_bracket(g, f, X))) <= 1e-10


@settings(max_examples=40, deadline=None)
@given(arrays(float, (2, 2), elements=st.floats(-3, 3)), arrays(float, (2, 2), elements=st.floats(-3, 3)))
def test_linear_bracket_is_commutator(A, B):
    X = np.random.default_rng(3).uniform(-2, 2, (100, 2))
    out = lie_bracket(Affine(A), Affine(B), X)
    assert np.max(np.abs(out - X @ (B @ A - A @ B).T)) <= 1e-10


@pytest.mark.parametrize("n", [2, 3, 4])
@pytest.mark.parametrize("m", [2, 3, 4])
def test_monomial_bracket_identity(n, m):
    x = np.linspace(-2.0, 2.0, 50)[:, None]
    x = x[np.abs(x[:, 0]) > 1e-3]
    out = lie_bracket(Separable(power(n), dim=1), Separable(power(m), dim=1), x)[:, 0]
    expect = (m - n) * x[:, 0] ** (n + m - 1)
    scale = np.maximum(np.abs(expect), 1e-300)
    if n == m:
        assert np.all(out == 0.0)
    else:
        assert np.max(np.abs(out - expect) / scale) <= 1e-8


def test_analytic_jacobian_matches_central_difference():
    rng = np.random.default_rng(4)
    X = rng.uniform(-2, 2, (100, 2))
    for name, f in smooth_zoo(rng).items():
        diff = np.max(np.abs(jacobian(f, X) - jacobian(f, X, method="central")))
        assert diff <= 1e-6, name
    for name, f in kinked_zoo(rng).items():
        P = off_kink_points(rng, 100, 2, margin=4 * FD_STEP * 4)
        diff = np.max(np.abs(jacobian(f, P) - jacobian(f, P, method="central")))
        assert diff <= 1e-6, name


@pytest.mark.parametrize("act", [SIN, COS, QUADRATIC, softplus(3.0), power(4), gaussian(0.5, 0.7),
                                 leaky_relu(0.2), RELU, Activation("neg_relu")])
def test_activation_derivative_second_order(act):
    t = np.array([-1.3, -0.4, 0.35, 0.9, 1.7])
    err = []
    for h in (1e-3, 5e-4):
        fd = (act(t + h) - act(t - h)) / (2 * h)
        err.append(np.max(np.abs(fd - act.deriv(t))))
    if err[0] > 1e-11:
        assert err[0] / err[1] == pytest.approx(4.0, rel=0.05)
    else:
        assert err[1] <= 1e-9


def test_divergence_zero_property_off_kinks():
    X = off_kink_points(np.random.default_rng(5), 500, 2)
    assert np.all(divergence(Named("permute_relu"), X) == 0.0)


# construction and serialization


def test_sum_flattens_nested():
    f = Sum([(2.0, Sum([(3.0, relu_field(2)), (1.0, constant([1.0, 0.0]))])), (1.0, relu_field(2))])
    assert len(f.terms) == 3
    assert not any(isinstance(g, Sum) for _, g in f.terms)
    assert [c for c, _ in f.terms] == [6.0, 2.0, 1.0]


def test_sum_rejects_nonfinite_and_mixed_dims():
    with pytest.raises(ValueError):
        Sum([(math.inf, relu_field(2))])
    with pytest.raises(DimensionMismatch):
        Sum([(1.0, relu_field(2)), (1.0, relu_field(3))])


def test_fields_are_immutable():
    f = Affine(np.eye(2), [1.0, 2.0])
    with pytest.raises(ValueError):
        f.A[0, 0] = 5.0
    with pytest.raises(Exception):
        f.b = np.zeros(2)


def test_conformance_checks():
    with pytest.raises(DimensionMismatch):
        Affine(np.ones((2, 3)))
    with pytest.raises(DimensionMismatch):
        Affine(np.eye(2), [1.0, 2.0, 3.0])
    with pytest.raises(DimensionMismatch):
        Conjugated(np.eye(3), np.eye(2), None, relu_field(2))
    with pytest.raises(ValueError):
        Activation("softplus", -1.0)


def test_negate_keeps_closed_kinds():
    assert negate(relu_field(2)).act.name == "neg_relu"
    assert isinstance(negate(Affine(np.eye(2))), Affine)
    X = np.random.default_rng(6).normal(size=(5, 2))
    for f in smooth_zoo(np.random.default_rng(7)).values():
        assert np.allclose(negate(f)(X), -f(X), rtol=0, atol=1e-14)


def test_serialization_round_trip_all_kinds():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(10, 2))
    fields = list(smooth_zoo(rng).values()) + list(kinked_zoo(rng).values())
    for f in fields:
        doc = json.loads(json.dumps(f.to_dict()))
        g = field_from_dict(doc)
        assert g.to_dict() == f.to_dict()
        assert np.array_equal(g(X), f(X))


@settings(max_examples=30, deadline=None)
@given(arrays(float, (2, 2), elements=st.floats(-5, 5)), arrays(float, 2, elements=st.floats(-5, 5)),
       st.floats(-3, 3, allow_nan=False))
def test_round_trip_property(A, b, c):
    f = Sum([(c, Conjugated(A, A.T, b, Named("sinsum"))), (1.0, Affine(A, b))])
    g = field_from_dict(json.loads(json.dumps(f.to_dict())))
    X = np.array([[0.1, 0.2], [-1.0, 3.0]])
    assert np.array_equal(g(X), f(X))


def test_lowered_form_matches_evaluation():
    from flowcap._kernels import act_eval

    rng = np.random.default_rng(9)
    X = rng.normal(size=(20, 2))
    fields = {**smooth_zoo(rng), **kinked_zoo(rng)}
    for name, f in fields.items():
        low = f.lower()
        if low is None:
            assert name == "gauss"
            continue
        out = X @ low.A.T + low.c
        for k in range(low.codes.size):
            U = X @ low.W[k].T + low.B[k]
            out = out + act_eval(low.codes[k], *low.params[k], U) @ low.S[k].T
        assert np.allclose(out, f(X), rtol=1e-13, atol=1e-13), name
