from math import comb

import numpy as np
import pytest

from phi3ren import contraction as C
from phi3ren.mc import isserlis_moment
from phi3ren.terms import PHI, expand_solution, integ, phi_power, prod, smooth


def dfact(n):
    out = 1
    while n > 1:
        out *= n
        n -= 2
    return out


@pytest.mark.parametrize("k", range(13))
def test_vacuum_coefficient_matches_matchings(k):
    total = sum(t.coefficient for t in C.evaluate_at_zero(C.gamma_cdotQ(phi_power(k), d=None)))
    assert total == isserlis_moment(np.ones((1, 1)), [k])
    assert total == (dfact(k - 1) if k % 2 == 0 else 0)


def test_partial_contractions_of_phi4():
    # Φ⁴ + 6 Φ²·Q + 3 Q², all at one vertex
    coefs = sorted(int(t.coefficient) for t in C.gamma_cdotQ(phi_power(4), d=None))
    assert coefs == [1, 3, 6]


@pytest.mark.parametrize("j", range(4))
def test_odd_orders_vanish_at_zero(j):
    assert C.evaluate_at_zero(C.gamma_series(3, d=3)[j]) == []


def test_tadpole_symbol_in_three_dimensions():
    names = sorted(n for t in C.gamma_cdotQ(phi_power(3), d=3) for n in t.symbol_names())
    assert names == ["C1"]
    assert all(not t.symbols for t in C.gamma_cdotQ(phi_power(3), d=1))


def test_two_point_symmetric_under_swap():
    w = C.two_point_correlation(2, d=3)
    for k in w.orders():
        assert C.equal_sums(w[k], C.swap_roots(w[k]))


def test_two_point_order_zero_is_covariance():
    (t,) = C.evaluate_at_zero(C.two_point_correlation(0, d=3)[0])
    assert t.q_edges == ((0, 1),) and t.coefficient == 1


def test_pointwise_product_is_associative():
    a = C.gamma_cdotQ(PHI)
    b = C.gamma_cdotQ(phi_power(2))
    c = C.gamma_cdotQ(integ(phi_power(3)))
    left = C.pointwise_product(C.pointwise_product(a, b), c)
    right = C.pointwise_product(a, C.pointwise_product(b, c))
    assert C.equal_sums(left, right)


@pytest.mark.parametrize("k", range(2, 7))
def test_shift_binomial_pattern(k):
    lhs = C.subtract(C.apply_renorm_shift(C.gamma_cdotQ(phi_power(k)), {"C1": "c"}),
                     C.gamma_cdotQ(phi_power(k)))
    rhs = []
    for j in range(2, k + 1, 2):
        base = prod(*([smooth("c")] * (j // 2)), phi_power(k - j))
        rhs += [t.scaled(comb(k, j) * dfact(j - 1)) for t in C.gamma_cdotQ(base)]
    assert C.equal_sums(lhs, rhs)


def test_unknown_shift_symbol():
    with pytest.raises(KeyError):
        C.apply_renorm_shift(C.gamma_cdotQ(phi_power(2)), {"Z9": "c"})


def test_gamma_inverse_round_trip():
    F = expand_solution(2)
    for j in range(3):
        for t, c in F[j].items():
            assert C.gamma_inverse(C.gamma_cdotQ(t)) == {t: 1}


def test_renormalized_equation_first_two_orders():
    M = C.renormalized_equation(2, d=3)
    assert [C.to_text(t) for t in M[1]] == ["3 · [v0(root)(arg): C1]"]
    assert len(M[2]) == 3 and all(t.coefficient == -18 for t in M[2])
    assert any("C2" in t.symbol_names() for t in M[2])
    with pytest.raises(ValueError):
        C.renormalized_equation(0)


def test_json_and_dot_round_trip():
    for t in C.two_point_correlation(1, d=3)[1]:
        back = C.diagram_from_json(C.diagram_to_json(t))
        assert C.equal_sums([back], [t])
    dot = C.diagram_to_dot(C.gamma_cdotQ(phi_power(3), d=3)[0])
    assert dot.startswith("digraph")
