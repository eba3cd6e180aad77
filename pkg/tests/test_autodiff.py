import itertools
import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from finsler2d import autodiff as ad
from finsler2d import expr as ex
from finsler2d.acceptance import AD_CORPUS
from finsler2d.autodiff import Jet, jet_apply, jet_point, jet_variable, partial
from finsler2d.errors import DegreeExceedsOrder, DivisionByZeroValue, DomainError, OrderMismatch

INDICES_UP_TO_3 = [i for i in itertools.product(range(4), repeat=4) if 0 < sum(i) <= 3]


def test_coefficient_count_matches_binomial():
    for order in range(7):
        assert ad.ncoeffs(order) == math.comb(order + 4, 4)
        assert Jet.constant(1.0, order).coeffs.shape == (math.comb(order + 4, 4),)


def test_coordinate_jet_has_value_and_unit_slope():
    j = jet_variable(2.0, 0, 2)
    assert j.coefficient((0, 0, 0, 0)) == 2.0
    assert j.coefficient((1, 0, 0, 0)) == 1.0
    rest = [j.coefficient(i) for i in ad.layout(2) if i not in ((0, 0, 0, 0), (1, 0, 0, 0))]
    assert rest == [0.0] * len(rest)


def test_coordinate_jet_in_Y():
    j = jet_variable(0.0, 3, 1)
    assert j.value == 0.0
    assert partial(j, (0, 0, 0, 1)) == 1.0


def test_variable_index_out_of_range():
    with pytest.raises(IndexError):
        jet_variable(1.0, 4, 2)


@pytest.mark.parametrize("a", [-1.3, 0.5, 2.0])
def test_second_derivative_of_cube(a):
    j = jet_variable(a, 0, 4) ** 3
    assert partial(j, (2, 0, 0, 0)) == pytest.approx(6 * a, rel=1e-14)
    # the coefficient itself is f''/2! = 3a
    assert j.coefficient((2, 0, 0, 0)) == pytest.approx(3 * a, rel=1e-14)
    fd = ad.fd_derivative(lambda x1, x2, X, Y: x1**3, (a, 0, 0, 0), (2, 0, 0, 0))
    assert fd == pytest.approx(6 * a, rel=1e-6)


def test_square_value_and_slope():
    x = jet_variable(3.0, 0, 3)
    y = jet_apply("mul", [x, x])
    assert y.value == 9.0
    assert partial(y, (1, 0, 0, 0)) == 6.0


def test_division_by_zero_value():
    with pytest.raises(DivisionByZeroValue):
        jet_apply("div", [Jet.constant(1.0, 2), jet_variable(0.0, 2, 2)])


@pytest.mark.parametrize("op,value", [("ln", 0.0), ("ln", -1.0), ("sqrt", -0.5), ("cbrt", 0.0)])
def test_domain_errors(op, value):
    with pytest.raises(DomainError):
        jet_apply(op, [jet_variable(value, 0, 2)])


def test_order_mismatch():
    with pytest.raises(OrderMismatch):
        jet_apply("add", [jet_variable(1.0, 0, 2), jet_variable(1.0, 1, 3)])


def test_partial_of_square_and_constant():
    x = jet_variable(0.7, 0, 4)
    assert partial(x * x, (2, 0, 0, 0)) == 2.0
    c = Jet.constant(5.0, 4)
    for idx in INDICES_UP_TO_3:
        assert partial(c, idx) == 0.0


def test_partial_of_exp_sum_at_origin():
    x1, x2, _, _ = jet_point(0.0, 0.0, 0.0, 0.0)
    assert partial(ad.exp(x1 + x2), (1, 1, 0, 0)) == pytest.approx(1.0, abs=1e-15)


def test_partial_degree_exceeds_order():
    with pytest.raises(DegreeExceedsOrder):
        partial(jet_variable(1.0, 0, 2), (2, 1, 0, 0))


def test_deriv_lowers_order_and_shifts():
    x1, x2, X, Y = jet_point(0.4, 0.3, 1.2, -0.5, order=4)
    f = ad.sin(x1 * X) * ad.exp(x2 * Y)
    g = f.deriv(2)
    assert g.order == 3
    for idx in ad.layout(3):
        up = (idx[0], idx[1], idx[2] + 1, idx[3])
        assert partial(g, idx) == pytest.approx(partial(f, up), rel=1e-13, abs=1e-14)


def test_batched_jets_match_scalar_ones():
    xs = np.array([0.1, 0.5, 0.9])
    x1, x2, X, Y = jet_point(xs, 0.3, 1.0, 0.5, order=3)
    batch = ad.cos(x1 * x2) / (X + Y)
    for k, v in enumerate(xs):
        a1, a2, aX, aY = jet_point(v, 0.3, 1.0, 0.5, order=3)
        single = ad.cos(a1 * a2) / (aX + aY)
        np.testing.assert_allclose(batch.coeffs[k], single.coeffs, rtol=1e-15, atol=0)


# -- finite-difference oracle -------------------------------------------------


def test_sin_product_mixed_partials_to_order_two():
    def f(x1, x2, X, Y):
        return ad.sin(x1 * X)

    for a in range(3):
        for c in range(3 - a):
            if a + c:
                _, _, rel = ad.fd_crosscheck(f, (0.7, 0.0, 1.3, 0.0), (a, 0, c, 0))
                assert rel < 1e-6


@pytest.mark.xfail(strict=True, reason="third differences at h = 1e-4 carry round-off near 1e-5; the jet values are exact")
def test_sin_product_mixed_partials_order_three_at_1e_6():
    def f(x1, x2, X, Y):
        return ad.sin(x1 * X)

    worst = max(ad.fd_crosscheck(f, (0.7, 0.0, 1.3, 0.0), (a, 0, 3 - a, 0))[2] for a in range(4))
    assert worst < 1e-6


def test_sin_product_order_three_exact_against_closed_form():
    x1, _, X, _ = jet_point(0.7, 0.0, 1.3, 0.0, order=3)
    f = ad.sin(x1 * X)
    u, v = 0.7, 1.3
    # d^3/dx^3 sin(xX) = -X^3 cos(xX); d^2/dx^2 d/dX = -2X sin - x X^2 cos
    assert partial(f, (3, 0, 0, 0)) == pytest.approx(-(v**3) * math.cos(u * v), rel=1e-14)
    assert partial(f, (2, 0, 1, 0)) == pytest.approx(-2 * v * math.sin(u * v) - u * v * v * math.cos(u * v), rel=1e-14)


POLY_POINTS = [(0.3, -0.2, 0.8, 1.1), (0.5, 0.5, 0.5, 0.5), (-0.9, 0.1, 0.6, -0.7)]


def _x1_XX(x1, x2, X, Y):
    return x1 * X * X


@pytest.mark.parametrize("point", POLY_POINTS)
def test_crosscheck_of_polynomial(point):
    ad_val, _, rel = ad.fd_crosscheck(_x1_XX, point, (1, 0, 2, 0))
    assert ad_val == 2.0
    assert rel < 1e-5


@pytest.mark.xfail(strict=False, reason="third differences at h = 1e-4 sit at a round-off floor near 1e-6 |f|")
@pytest.mark.parametrize("point", POLY_POINTS + [(2.0, 1.0, -1.5, 0.4)])
def test_crosscheck_of_polynomial_at_1e_6(point):
    assert ad.fd_crosscheck(_x1_XX, point, (1, 0, 2, 0))[2] < 1e-6


def test_crosscheck_of_constant():
    def f(x1, x2, X, Y):
        return Jet.constant(np.full(np.shape(x1.value), 3.5), x1.order)

    for idx in INDICES_UP_TO_3:
        a, d, _ = ad.fd_crosscheck(f, (0.1, 0.2, 0.3, 0.4), idx)
        assert abs(a) < 1e-9 and abs(d) < 1e-9


def test_crosscheck_of_canonical_metric():
    from finsler2d.metrics import MetricSpec, make_metric

    metric = make_metric(MetricSpec("KropinaCanonical", {"phi": "sin(x1)*cos(x2)"}))
    _, _, rel = ad.fd_crosscheck(metric.L, (0.4, 0.6, 0.9, 0.7), (0, 1, 1, 0))
    assert rel < 1e-5


OPS = ["sin", "cos", "exp", "neg", "abs", "ln", "sqrt", "cbrt", "pow_int", "pow_real", "div", "mul"]
POSITIVE_ONLY = {"ln", "sqrt", "pow_real"}


def _random_field(rng: np.random.Generator, op: str, size: float):
    """A quadratic field u of the four variables with |u| in [size/10, size] at the returned point."""
    point = rng.uniform(-0.5, 0.5, size=4)
    c = rng.uniform(-0.3, 0.3, size=8) * size / 10
    lo = size / 10
    u0 = rng.uniform(lo, size) * (1 if op in POSITIVE_ONLY else rng.choice([-1, 1]))
    d = rng.uniform(-0.3, 0.3, size=8)

    def u(x1, x2, X, Y, c=c):
        return c[0] * x1 + c[1] * x2 + c[2] * X + c[3] * Y + c[4] * x1 * X + c[5] * x2 * Y + c[6] * x1 * x2 + c[7] * X * Y

    shift = u0 - float(u(*point))

    def f(x1, x2, X, Y):
        a = u(x1, x2, X, Y) + shift
        if op == "pow_int":
            return jet_apply(op, [a, 3])
        if op == "pow_real":
            return jet_apply(op, [a, 1.7])
        if op in ("div", "mul"):
            b = d[0] * x1 + d[1] * x2 + d[2] * X + d[3] * Y + 2.0
            return jet_apply(op, [a, b])
        return jet_apply(op, [a])

    return f, point


def _worst_by_degree(op: str, size: float, seed: int) -> dict[int, float]:
    rng = np.random.default_rng([seed, OPS.index(op)])
    worst = {1: 0.0, 2: 0.0, 3: 0.0}
    for _ in range(5):
        f, point = _random_field(rng, op, size)
        for idx in INDICES_UP_TO_3:
            worst[sum(idx)] = max(worst[sum(idx)], ad.fd_crosscheck(f, point, idx)[2])
    return worst


_LOW_DEGREE_FLOOR = pytest.mark.xfail(
    strict=False, reason="second differences at h = 1e-4 carry round-off near eps*|f|/h^2, above 1e-5 once |f| reaches 1e3"
)


@pytest.mark.parametrize(
    "op", [pytest.param(op, marks=_LOW_DEGREE_FLOOR) if op in ("exp", "pow_int") else op for op in OPS]
)
def test_elementary_ops_low_degrees_with_values_up_to_ten(op):
    worst = _worst_by_degree(op, 10.0, 1)
    assert worst[1] < 1e-5 and worst[2] < 1e-5


@pytest.mark.parametrize("op", OPS)
def test_elementary_ops_third_degree_with_unit_values(op):
    assert _worst_by_degree(op, 1.0, 2)[3] < 1e-3


@pytest.mark.xfail(strict=False, reason="round-off of third differences at h = 1e-4 grows with |f|; values near 10 can exceed 1e-3")
@pytest.mark.parametrize("op", ["exp", "pow_int", "pow_real", "mul"])
def test_elementary_ops_third_degree_with_values_up_to_ten(op):
    assert _worst_by_degree(op, 10.0, 1)[3] < 1e-3


# -- exactness against a symbolic oracle --------------------------------------


def _to_sympy(source: str):
    s1, s2 = sp.symbols("x1 x2", real=True)
    text = source.replace("^", "**")
    return sp.sympify(
        text,
        locals={"x1": s1, "x2": s2, "ln": sp.log, "cbrt": lambda u: sp.real_root(u, 3), "abs": sp.Abs},
    ), (s1, s2)


@pytest.mark.parametrize("source", AD_CORPUS)
def test_corpus_derivatives_match_symbolic_values(source):
    rng = np.random.default_rng(sum(map(ord, source)))
    p1, p2 = rng.uniform(0.2, 0.8, size=2)
    sym, (s1, s2) = _to_sympy(source)
    jet = ex.eval_expr(ex.parse(source), {}, *jet_point(p1, p2, 0.0, 0.0, order=3)[:2])
    for a in range(4):
        for b in range(4 - a):
            exact = sp.diff(sym, s1, a, s2, b) if a + b else sym
            want = float(exact.subs({s1: sp.Float(p1, 30), s2: sp.Float(p2, 30)}).evalf(30))
            got = partial(jet, (a, b, 0, 0))
            assert got == pytest.approx(want, rel=1e-11, abs=1e-11), (a, b)


# -- algebraic properties -------------------------------------------------------

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def _jet_from(values, order=3):
    return Jet(np.array(values), order)


jets = st.lists(finite, min_size=ad.ncoeffs(3), max_size=ad.ncoeffs(3)).map(_jet_from)


def _close(a: Jet, b: Jet, tol: float) -> None:
    scale = np.maximum(1.0, np.maximum(np.abs(a.coeffs), np.abs(b.coeffs)))
    assert np.all(np.abs(a.coeffs - b.coeffs) <= tol * scale)


@settings(max_examples=60, deadline=None)
@given(jets, jets, jets)
def test_ring_axioms(a, b, c):
    _close(a + b, b + a, 1e-12)
    _close(a * b, b * a, 1e-12)
    _close((a + b) + c, a + (b + c), 1e-12)
    # products of three |c| <= 10 jets reach 1e3 per term; tolerance is relative per coefficient
    _close((a * b) * c, a * (b * c), 1e-12)
    _close(a * (b + c), a * b + a * c, 1e-12)


@settings(max_examples=60, deadline=None)
@given(jets, jets)
def test_division_undoes_multiplication(a, b):
    if abs(b.value) < 1e-3:
        b = b + (1.0 if b.value >= 0 else -1.0)
    if abs(b.value) < 0.5:
        # keep the divisor bounded away from zero so the quotient recursion stays well conditioned
        b = b + 2.0 * np.sign(b.value or 1.0)
    _close((a * b) / b, a, 1e-10)


@settings(max_examples=60, deadline=None)
@given(jets)
def test_cube_root_undoes_cube(a):
    if a.value <= 0.5:
        a = a + (1.0 - a.value)
    _close(ad.cbrt(ad.pow_int(a, 3)), a, 1e-10)
