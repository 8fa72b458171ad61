import math

import numpy as np
import pytest

from phi3ren import contraction as C
from phi3ren import mc
from phi3ren.terms import phi_power

SMALL = dict(nt=24, nx=16, dx=0.25, dt=0.25**2 / 4, eps=0.3)


@pytest.fixture(scope="module")
def small():
    cfg = mc.LatticeConfig(seed=3, samples=4000, **SMALL)
    return cfg, mc.lattice_operators(cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        mc.LatticeConfig(dt=0.1)
    with pytest.raises(ValueError):
        mc.LatticeConfig(samples=50)
    with pytest.raises(NotImplementedError):
        mc.lattice_operators(mc.LatticeConfig(d=2, nt=4, nx=4, dt=0.125**2 / 4))


def test_noise_statistics():
    cfg = mc.LatticeConfig(**SMALL)
    xs = np.stack([mc.sample_noise(cfg, i) for i in range(400)])
    n = xs.size
    assert abs(xs.mean()) < 3 * math.sqrt(1 / cfg.dV / n)
    var = xs.var()
    assert abs(var * cfg.dV - 1) < 3 * math.sqrt(2 / n)
    a, b = xs[:, 3, 4], xs[:, 5, 7]
    assert abs(np.mean(a * b)) * cfg.dV < 3 * math.sqrt(1 / a.size)


def test_reproducible_streams():
    cfg = mc.LatticeConfig(**SMALL)
    assert np.array_equal(mc.sample_noise(cfg, 5), mc.sample_noise(cfg, 5))
    assert not np.array_equal(mc.sample_noise(cfg, 5), mc.sample_noise(cfg, 6))
    a = mc.sample_fields(cfg, 0, 10)
    b = np.concatenate([mc.sample_fields(cfg, 0, 4), mc.sample_fields(cfg, 4, 10)])
    assert np.array_equal(a, b)


def test_zero_noise_gives_shift():
    cfg = mc.LatticeConfig(**SMALL)
    assert not np.any(mc.solve_linear(cfg, np.zeros(cfg.shape)))
    phi = lambda t, x: 0.5 + 0 * x  # noqa: E731
    assert np.allclose(mc.solve_linear(cfg, np.zeros(cfg.shape), phi), 0.5)


def test_parametrix_matches_operator(small):
    cfg, ops = small
    src = mc.sample_noise(cfg, 0)
    direct = mc.apply_parametrix(cfg, src).reshape(-1)
    assert np.allclose(direct, ops.P @ src.reshape(-1) * cfg.dV)


def test_isserlis_moments():
    one = np.ones((1, 1))
    assert mc.isserlis_moment(one, [4]) == 3
    assert mc.isserlis_moment(one, [6]) == 15
    assert mc.isserlis_moment(one, [5]) == 0
    cov = np.array([[2.0, 0.5], [0.5, 1.0]])
    assert mc.isserlis_moment(cov, [2, 2]) == pytest.approx(2.0 * 1.0 + 2 * 0.25)
    with pytest.raises(ValueError):
        mc.isserlis_moment(cov, [1])


@pytest.mark.parametrize("k", range(0, 13, 2))
def test_diagram_evaluator_reproduces_isserlis(k, small):
    # with the test function a point mass the vacuum diagrams of Φ^k give E[X^k]
    cfg, ops = small
    idx = (12 * cfg.nx + 8)
    f = np.zeros(ops.Q.shape[0])
    f[idx] = 1 / cfg.dV
    terms = C.evaluate_at_zero(C.gamma_cdotQ(phi_power(k), d=None))
    val = mc.evaluate_sum(terms, ops, np.zeros_like(f), [f])
    assert val == pytest.approx(mc.isserlis_moment(np.array([[ops.Q[idx, idx]]]), [k]), rel=1e-12)


def test_covariance_and_standard_error(small):
    cfg, ops = small
    f1, f2, _ = mc.default_tests(cfg)
    r = mc.validate_covariance(cfg, f1, f2, ops)
    assert r.passed(3.0)
    half = mc.validate_covariance(mc.LatticeConfig(seed=3, samples=2000, **SMALL), f1, f2, ops)
    assert half.stderr / r.stderr == pytest.approx(math.sqrt(2), rel=0.15)


def test_first_order_and_two_point_small_lattice(small):
    cfg, ops = small
    f1, f2, phi = mc.default_tests(cfg)
    reports = mc.validate_first_order(cfg, None, 0.5, f1, ops)
    reports += mc.validate_first_order(cfg, phi, 0.5, f1, ops)
    reports += mc.validate_two_point(cfg, phi, 0.5, f1, f2, ops)
    for r in reports:
        assert r.passed(3.0), r.as_row()
    assert reports[0].prediction == 0.0


def test_lambda_zero_reduces_to_shift(small):
    cfg, ops = small
    f1, _, phi = mc.default_tests(cfg)
    combined = mc.validate_first_order(cfg, phi, 0.0, f1, ops)[2]
    exact = float(np.sum(cfg.grid_function(f1) * cfg.grid_function(phi)) * cfg.dV)
    assert combined.prediction == pytest.approx(exact, rel=1e-12)
    assert combined.passed(3.0)


def test_report_z():
    r = mc.ComparisonReport("x", 1.0, 0.5, 0.0, 100)
    assert r.z == 2.0 and r.passed() and not r.passed(1.0)
