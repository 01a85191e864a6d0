import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quasiflat import autodiff as ad
from quasiflat.flatmodel import (
    ChartError,
    FlatSystem,
    ModelError,
    ParameterizationError,
    SingularConfigurationError,
    find_equilibrium,
    inputs_from_motion,
    parameterize,
    sample_jets,
    solve_small,
)
from quasiflat.models import UnknownModelError, get_model, vtol
from quasiflat.multijet import JetFunction, JetPoint

from conftest import EPS
from oracles import crane_lagrange, crane_symbolic, vtol_accel, vtol_flat_output, vtol_symbolic

small = st.floats(-1.0, 1.0, allow_nan=False)


@pytest.fixture(scope="module")
def vtol_sym():
    return vtol_symbolic(EPS)


@pytest.fixture(scope="module")
def crane_sym():
    return crane_symbolic()


@settings(max_examples=30, deadline=None)
@given(x=st.lists(small, min_size=8, max_size=8))
def test_vtol_dynamics_match_newton_euler(x):
    # [DERIVED] independent copy of the equations of motion
    sys_ = vtol(EPS)
    q, v, u = x[:3], x[3:6], x[6:8]
    np.testing.assert_allclose(sys_.dynamics(q, v, u), vtol_accel(q, v, u, EPS), atol=1e-14)
    np.testing.assert_allclose(ad_list(sys_.flat_output(q)), vtol_flat_output(q, EPS), atol=1e-15)


def ad_list(xs):
    return [ad.value(x) for x in xs]


def test_crane_dynamics_match_euler_lagrange(rng=np.random.default_rng(3)):
    # [DERIVED] sympy Euler-Lagrange equations of the crane
    mass, rhs = crane_lagrange()
    sys_ = get_model("gantry-crane")
    B = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    for _ in range(20):
        q = [rng.uniform(-1, 1), rng.uniform(0.5, 2.0), rng.uniform(-0.6, 0.6)]
        v = rng.uniform(-1, 1, 3)
        u = rng.uniform(-5, 5, 2)
        want = np.linalg.solve(mass(q), rhs(q, v) + B @ u)
        np.testing.assert_allclose(sys_.dynamics(q, v, u), want, rtol=1e-12, atol=1e-12)


def _check_against_symbolic(bundle, sym, count, seed):
    rng = np.random.default_rng(seed)
    jets = sample_jets(bundle.sys, count, bundle.pmap.jet_shape, rng)
    for p in jets:
        q, v = bundle.pmap.state(p)
        u = bundle.pmap.inputs(p)
        q_o, v_o, u_o = sym.evaluate(p.channels())
        np.testing.assert_allclose(q, q_o, atol=1e-12)
        np.testing.assert_allclose(v, v_o, atol=1e-11)
        np.testing.assert_allclose(u, u_o, rtol=1e-10, atol=1e-10)


def test_vtol_parameterizing_map_matches_symbolic(vt, vtol_sym):
    # [DERIVED] Fq, D Fq and the inputs from sympy
    _check_against_symbolic(vt, vtol_sym, 40, 11)


def test_crane_parameterizing_map_matches_symbolic(crane, crane_sym):
    # [DERIVED] Fq, D Fq and the Euler-Lagrange forces from sympy
    _check_against_symbolic(crane, crane_sym, 40, 12)


def test_minimal_multi_index(vt, crane):
    # [PAPER] VTOL: R = (4, 4); the crane has the same structure
    assert vt.pmap.R == (4, 4)
    assert crane.pmap.R == (4, 4)
    assert vt.pmap.jet_shape == (4, 4)


def test_vtol_hover_equilibrium(vt):
    # [TRIVIAL] hover: level attitude and thrust equal to gravity
    eq = find_equilibrium(vt.sys, vt.pmap, (0.0, EPS))
    np.testing.assert_allclose(eq.q_s, [0.0, 0.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(eq.u_s, [1.0, 0.0], atol=1e-15)


def test_crane_rest_equilibrium(crane):
    # [DERIVED] the winch holds the load weight: u2 = -m g, u1 = 0
    eq = find_equilibrium(crane.sys, crane.pmap, (0.4, 1.5))
    np.testing.assert_allclose(eq.q_s, [0.4, 1.5, 0.0], atol=1e-14)
    np.testing.assert_allclose(eq.u_s, [0.0, -9.81], atol=1e-12)


def test_equilibrium_outside_chart_raises(crane):
    # [TRIVIAL] zero cable length is outside the chart
    with pytest.raises(ChartError):
        find_equilibrium(crane.sys, crane.pmap, (0.0, 0.0))
    with pytest.raises(ValueError):
        find_equilibrium(crane.sys, crane.pmap, (0.0,))


def test_wrong_parameterization_is_detected():
    # [TRIVIAL] Fq built for another eps is inconsistent with the dynamics
    good = vtol(0.1)
    wrong = dataclasses.replace(good, Fq=vtol(0.3).Fq)
    pmap = parameterize(wrong, samples=20)
    p = JetPoint([[0.0, 0.1, 0.2, 0.1, 0.0], [0.1, 0.0, 0.1, -0.2, 0.1]])
    with pytest.raises(ParameterizationError):
        pmap.inputs(p)


def test_rank_deficient_input_matrix_raises():
    # [TRIVIAL] b(q) of rank one
    sys_ = dataclasses.replace(vtol(0.1), input_matrix=lambda q: [[1.0, 1.0], [0.0, 0.0], [0.0, 0.0]])
    with pytest.raises(SingularConfigurationError):
        inputs_from_motion(sys_, [0.0, 0.0, 0.0], [0.0] * 3, [0.0, 0.0, 0.0])


def test_model_validation():
    # [TRIVIAL]
    base = vtol(0.1)
    with pytest.raises(ModelError):
        dataclasses.replace(base, Fq=base.Fq[:2])
    with pytest.raises(ModelError):
        FlatSystem("bad", 1, base.flat_output, base.completion,
                   [JetFunction(lambda y: y[0, 0], (0,))], base.drift, base.input_matrix)
    with pytest.raises(UnknownModelError):
        get_model("vtl")
    with pytest.raises(TypeError):
        get_model("vtol", epsilon=0.1)


def test_adapted_state_is_transform_and_its_velocity():
    # [DERIVED] central difference of the transform along q + t v
    sys_ = vtol(EPS)
    q = np.array([0.3, -0.2, 0.4])
    v = np.array([0.5, 0.1, -0.7])
    qbar, vbar = sys_.adapted_state(q, v)
    h = 1e-6
    fd = (np.array(ad_list(sys_.transform(q + h * v))) - np.array(ad_list(sys_.transform(q - h * v)))) / (2 * h)
    np.testing.assert_allclose(qbar, [*vtol_flat_output(q, EPS), q[2]], atol=1e-15)
    np.testing.assert_allclose(vbar, fd, atol=1e-8)
    np.testing.assert_allclose(sys_.transform_jacobian(q) @ v, vbar, atol=1e-14)


def test_chart_membership():
    # [TRIVIAL]
    sys_ = vtol(EPS)
    assert sys_.in_chart([0.0, 0.0, 0.3])
    assert not sys_.in_chart([0.0, 0.0, 2.0])
    assert not sys_.in_chart([float("nan"), 0.0, 0.0])


@settings(max_examples=40, deadline=None)
@given(a=st.lists(small, min_size=9, max_size=9), b=st.lists(small, min_size=3, max_size=3))
def test_solve_small_matches_numpy(a, b):
    # [DERIVED] numpy.linalg.solve
    A = np.array(a).reshape(3, 3) + 3.0 * np.eye(3)
    np.testing.assert_allclose(solve_small(A.tolist(), list(b)), np.linalg.solve(A, b), atol=1e-12)
    A2 = A[:2, :2]
    np.testing.assert_allclose(solve_small(A2.tolist(), list(b[:2])), np.linalg.solve(A2, b[:2]), atol=1e-12)


def test_solve_small_singular():
    # [TRIVIAL]
    with pytest.raises(SingularConfigurationError):
        solve_small([[1.0, 2.0], [2.0, 4.0]], [1.0, 1.0], rel_pivot=1e-14)
    with pytest.raises(SingularConfigurationError):
        solve_small([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]], [1.0, 1.0, 1.0])


def test_sample_jets_reproducible():
    # [TRIVIAL] same seed, same jets
    sys_ = vtol(EPS)
    a = sample_jets(sys_, 5, (4, 4), np.random.default_rng(7))
    b = sample_jets(sys_, 5, (4, 4), np.random.default_rng(7))
    assert a == b
    assert all(abs(p[1, 0] - EPS) <= sys_.probe_box[0] for p in a)


def test_fu_consistent_with_dynamics_at_random_jets(vt):
    # [DERIVED] f(Fq, Fv, Fu) equals the prolongation of Fv
    from quasiflat.multijet import prolong
    rng = np.random.default_rng(5)
    Fa = [prolong(F) for F in vt.pmap.Fv]
    for p in sample_jets(vt.sys, 20, vt.pmap.jet_shape, rng):
        q, v = vt.pmap.state(p)
        u = vt.pmap.inputs(p)
        acc = [F(p) for F in Fa]
        assert np.max(np.abs(vt.sys.dynamics(q, v, u) - acc)) < 1e-10
        # the flat output of Fq is y[0]
        assert np.max(np.abs(np.array(ad_list(vt.sys.flat_output(q))) - [p[0, 0], p[1, 0]])) < 1e-12
    assert math.isclose(vt.sys.parameters["eps"], EPS)
