from fractions import Fraction

import pytest

from phi3ren.terms import (ONE, PHI, FormalSeries, expand_solution, grading, integ, phi_parity,
                           phi_power, prod, series_from_json, series_to_json, smooth, to_text)


def test_product_is_commutative_and_absorbs_unit():
    a = prod(PHI, integ(phi_power(3)))
    assert a == prod(integ(phi_power(3)), PHI)
    assert prod(ONE, PHI) == PHI
    assert prod(prod(PHI, PHI), PHI) == phi_power(3)
    assert phi_power(0) == ONE


def test_grading_counts_parametrices_and_fields():
    t = prod(PHI, integ(phi_power(3)), PHI)
    assert grading(t) == (1, 5)
    assert str(t) == "Φ²·P⊛(Φ³)"


@pytest.mark.parametrize("k,parity", [(0, "even"), (1, "odd"), (4, "even"), (5, "odd")])
def test_parity(k, parity):
    assert phi_parity(phi_power(k)) == parity


def test_expansion_low_orders():
    F = expand_solution(2)
    assert F[0] == {PHI: 1}
    assert F[1] == {integ(phi_power(3)): Fraction(-1)}
    assert F[2] == {integ(prod(phi_power(2), integ(phi_power(3)))): Fraction(3)}


def test_expansion_third_order_coefficients_sum():
    # F3 coefficients: 3·(sum of ordered triples) reproduces the recursion
    F = expand_solution(3)
    total = sum(F[3].values())
    assert total == -12
    assert all(grading(t) == (3, 7) for t in F[3])


def test_order_zero_and_invalid():
    assert list(expand_solution(0).orders()) == [0]
    with pytest.raises(ValueError):
        expand_solution(-1)
    with pytest.raises(ValueError):
        smooth("")


def test_series_json_round_trip():
    F = expand_solution(3)
    assert series_from_json(series_to_json(F)) == F


def test_truncate():
    F = expand_solution(3)
    assert F.truncate(1) == expand_solution(1)
    assert isinstance(F.truncate(1), FormalSeries)
    assert to_text(PHI) == "Φ"
