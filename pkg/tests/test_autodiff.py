import math

import numpy as np
import pytest
import mpmath as mp
from hypothesis import given, settings
from hypothesis import strategies as st

from quasiflat import autodiff as ad
from quasiflat.autodiff import Dual, Taylor, new_level, value

from oracles import central_diff

coef = st.floats(-1.5, 1.5, allow_nan=False)

mp.mp.dps = 40

FUNCS = {
    "sin": (ad.sin, mp.sin),
    "cos": (ad.cos, mp.cos),
    "exp": (ad.exp, mp.exp),
    "atan": (ad.atan, mp.atan),
    "tan": (ad.tan, mp.tan),
}


def poly(c):
    return lambda s: sum(mp.mpf(v) * s ** k for k, v in enumerate(c))


def mp_coeffs(f, degree):
    """Taylor coefficients at 0 by high-precision numerical differentiation."""
    return [float(x) for x in mp.taylor(f, 0, degree)]


@pytest.mark.parametrize("degree", [2, 4])
@pytest.mark.parametrize("name", sorted(FUNCS))
@settings(max_examples=15, deadline=None)
@given(c=st.lists(coef, min_size=5, max_size=5))
def test_series_of_elementary_functions_match_mpmath(name, degree, c):
    # [DERIVED] Taylor coefficients of f(p(t)) against mpmath
    f, fs = FUNCS[name]
    c = c[:degree + 1]
    if name == "tan" and abs(math.cos(c[0])) < 0.2:
        return
    x = Taylor(list(c), new_level())
    got = f(x).c
    p = poly(c)
    want = mp_coeffs(lambda s: fs(p(s)), degree)
    np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("degree", [2, 3, 5])
@settings(max_examples=30, deadline=None)
@given(a=st.lists(coef, min_size=6, max_size=6), b=st.lists(coef, min_size=6, max_size=6))
def test_atan2_series_matches_mpmath(degree, a, b):
    # [DERIVED] both the degree-2 fast path and the general recursion;
    # x stays positive so that t = 0 is away from the branch cut
    b = [abs(b[0]) + 0.5] + b[1:]
    lvl = new_level()
    y, x = Taylor(a[:degree + 1], lvl), Taylor(b[:degree + 1], lvl)
    got = ad.atan2(y, x).c
    py, px = poly(a[:degree + 1]), poly(b[:degree + 1])
    want = mp_coeffs(lambda s: mp.atan2(py(s), px(s)), degree)
    np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(a=st.lists(coef, min_size=4, max_size=4), b=st.lists(coef, min_size=4, max_size=4))
def test_arithmetic_series(a, b):
    # [DERIVED] products and quotients against mpmath
    b = [b[0] + 2.0 * math.copysign(1.0, b[0])] + b[1:]
    lvl = new_level()
    x, y = Taylor(list(a), lvl), Taylor(list(b), lvl)
    pa, pb = poly(a), poly(b)
    cases = [((x * y).c, lambda s: pa(s) * pb(s)), ((x / y).c, lambda s: pa(s) / pb(s)),
             ((x - 2.0 * y).c, lambda s: pa(s) - 2 * pb(s)),
             (ad.sqrt(y * y).c, lambda s: mp.sqrt(pb(s) ** 2)), ((y ** 3).c, lambda s: pb(s) ** 3)]
    for got, f in cases:
        np.testing.assert_allclose(got, mp_coeffs(f, 3), rtol=1e-10, atol=1e-10)


def f_model(x):
    return ad.atan2(x[0] * ad.sin(x[1]), 1.5 + x[2] ** 2) * ad.exp(x[1] / 3.0) + ad.sqrt(2.0 + ad.cos(x[0]))


@settings(max_examples=25, deadline=None)
@given(x=st.lists(coef, min_size=3, max_size=3))
def test_dual_gradient_matches_central_differences(x):
    # [DERIVED] central differences
    d = [Dual.variable(v, i, 3) for i, v in enumerate(x)]
    got = f_model(d)
    want = central_diff(lambda z: f_model(list(z)), x)
    np.testing.assert_allclose(got.grad, want, rtol=1e-6, atol=1e-7)
    assert got.val == pytest.approx(f_model(x), abs=1e-14)


def test_dual_with_scalar_tangent():
    # [TRIVIAL] directional derivative with a float tangent
    d = Dual(0.3, 1.0)
    out = ad.sin(d) * d
    assert out.grad == pytest.approx(math.cos(0.3) * 0.3 + math.sin(0.3))


def test_nested_levels_do_not_confuse_perturbations():
    # [DERIVED] d/ds [x * d/dt (x + t)]_{t=0} with x = s is 1, not 2
    outer, inner = new_level(), new_level()
    x = Taylor([0.7, 1.0], outer)
    y = Taylor([x, 1.0], inner)  # x + t
    dy = (x * y).c[1]  # d/dt (x (x + t)) = x
    assert isinstance(dy, Taylor) and dy.lvl == outer
    assert dy.c == pytest.approx([0.7, 1.0])


@pytest.mark.parametrize("op", ["add", "sub", "mul", "div"])
def test_mixed_levels_commute_with_operand_order(op):
    # [DERIVED] a lower-level series acts as a constant on either side
    lo, hi = new_level(), new_level()
    a = Taylor([0.5, 2.0], lo)
    b = Taylor([1.5, -1.0, 0.25], hi)
    f = {"add": lambda x, y: x + y, "sub": lambda x, y: x - y,
         "mul": lambda x, y: x * y, "div": lambda x, y: x / y}[op]
    left, right = f(a, b), f(b, a)
    assert left.lvl == hi and right.lvl == hi
    # compare against the constant value of a at the lower level
    for got, ref in [(left, f(0.5, b)), (right, f(b, 0.5))]:
        assert [value(c) for c in got.c] == pytest.approx([value(c) for c in ref.c])


def test_taylor_of_dual_gives_mixed_partials():
    # [DERIVED] d/dt d/da sin(a + b t) = cos(a) b at t = 0
    a = Dual.variable(0.4, 0, 2)
    b = Dual.variable(1.3, 1, 2)
    s = ad.sin(Taylor([a, b], new_level()))
    dt = s.c[1]
    assert dt.val == pytest.approx(math.cos(0.4) * 1.3)
    np.testing.assert_allclose(dt.grad, [-math.sin(0.4) * 1.3, math.cos(0.4)])


def test_value_unwraps_nested_numbers():
    # [TRIVIAL]
    x = Taylor([Taylor([Dual(2.5, np.ones(1)), 1.0], new_level()), 3.0], new_level())
    assert value(x) == 2.5
    assert value(4) == 4.0


def test_float_fallbacks():
    # [TRIVIAL]
    assert ad.atan2(1.0, -1.0) == math.atan2(1.0, -1.0)
    assert ad.hypot(3.0, 4.0) == 5.0
    assert ad.sincos(0.2) == (math.sin(0.2), math.cos(0.2))
