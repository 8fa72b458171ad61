import math

import numpy as np
import pytest

from phi3ren import kernels as K
from phi3ren import scaling as S
from phi3ren.scaling import (INF, BumpFamily, QuadConfig, ScalingContext, SdValue,
                             ambiguity_dimension, estimate_sd, extend_pairing)

ELL = "elliptic"
PAR = "parabolic"


def test_sd_delta():
    assert S.sd_delta(2, ScalingContext(3)) == 3
    assert S.sd_delta(2, ScalingContext(3, PAR)) == 4
    with pytest.raises(ValueError):
        S.sd_delta(1, ScalingContext(3))


def test_sd_parametrix_conventions():
    assert S.sd_parametrix(ScalingContext(4)) == 2
    assert S.sd_parametrix(ScalingContext(3, PAR)) == 2
    assert S.sd_parametrix(ScalingContext(3, PAR, "spatial")) == 3


def test_convolution_and_gamma_bounds():
    assert S.sd_convolution_bound(2, 4, ScalingContext(4)) == 2
    assert S.sd_convolution_bound(0, 0, ScalingContext(4)) == 0
    assert S.sd_convolution_bound(INF, 1, ScalingContext(2)) == INF
    for k in (1, 3, 5):
        for p in range(1, k + 1):
            assert S.gamma_sd_bound(k, p, ScalingContext(3)) == 3 * p
    assert S.gamma_sd_bound(4, 2, ScalingContext(6)) == 14


def test_sd_value_arithmetic():
    assert SdValue.of(2) + 3 == 5
    assert (INF + 1).infinite
    with pytest.raises(ValueError):
        SdValue.of(1) - INF
    assert float(INF) == math.inf


def test_ambiguity_dimension():
    assert ambiguity_dimension(0, 3) == 1
    assert ambiguity_dimension(2, 2) == 6
    assert ambiguity_dimension(2, (1, 1)) == 4
    assert ambiguity_dimension(-1, 5) == 0
    with pytest.raises(ValueError):
        ambiguity_dimension(1, 2, ScalingContext(1, PAR))


def test_bump_family_has_delta_jets():
    # ψ_α(y) = y^α/α! · g near 0 for the plateau; check value and derivative numerically
    b = BumpFamily("gaussian", 2.0)
    alphas = S.multi_indices(2, 1)
    polys = b.correction(alphas, [1])
    h = 1e-3
    for a in alphas:
        psi = lambda y: S._eval_poly(polys[a], y) * b.g(y)  # noqa: E731
        ys = np.array([[-h], [0.0], [h]])
        v = psi(ys)
        derivs = [v[1], (v[2] - v[0]) / (2 * h), (v[2] - 2 * v[1] + v[0]) / h**2]
        expected = [1.0 if a == (k,) else 0.0 for k in range(3)]
        assert np.allclose(derivs, expected, atol=1e-5)


def test_inverse_cube_radial_oracle():
    # ∫ |x|^-3 (f - f(0) g) over R³ with f = e^{-r²}, g = e^{-r²/4} is -4π ln 2
    t = lambda y: np.sum(y * y, -1) ** -1.5  # noqa: E731
    f = lambda y: np.exp(-np.sum(y * y, -1))  # noqa: E731
    fd = lambda a: 1.0 if a == (0, 0, 0) else 0.0  # noqa: E731
    v = extend_pairing(t, 0, f, QuadConfig(outer_radius=12.0), dim=3, f_derivs=fd,
                       bumps=BumpFamily("gaussian", 2.0))
    assert v == pytest.approx(-4 * math.pi * math.log(2.0), rel=1e-8)


def test_flat_function_needs_no_subtraction():
    t = lambda y: np.sum(y * y, -1) ** -1.5  # noqa: E731
    f = lambda y: np.sum(y * y, -1) * np.exp(-np.sum(y * y, -1))  # noqa: E731
    v = extend_pairing(t, 0, f, QuadConfig(outer_radius=12.0), dim=3,
                       f_derivs=lambda a: 0.0)
    assert v == pytest.approx(4 * math.pi * 0.5, rel=1e-8)  # 4π∫ r e^{-r²} dr


def test_heat_square_without_subtraction():
    f = K.gaussian_test_function(1)
    tk = lambda y: K.heat_kernel(y[..., 0], y[..., 1:]) ** 2  # noqa: E731
    F = lambda y: f(y[..., 0], y[..., 1])  # noqa: E731
    v = extend_pairing(tk, -1, F, dim=2, geometry="heat")
    ref = K.plain_power_pairing(K.KernelSpec(1, 1), f)
    assert v == pytest.approx(ref, rel=1e-6)


def test_requires_taylor_data():
    with pytest.raises(ValueError):
        extend_pairing(lambda y: y[..., 0], 0, lambda y: y[..., 0], dim=1)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_estimate_sd_heat_kernel(d):
    est = estimate_sd(K.power_sd_sampler(1, d), ScalingContext(d, PAR), np.geomspace(0.05, 0.4, 5))
    assert est == pytest.approx(d, abs=0.1)


def test_estimate_sd_square_in_three_dimensions():
    est = estimate_sd(K.power_sd_sampler(2, 3), None, np.geomspace(0.05, 0.4, 5))
    assert est == pytest.approx(6, abs=0.15)


def test_estimate_sd_smooth_function_and_delta():
    ctx = ScalingContext(1)
    f = lambda y: np.exp(-np.sum(y * y, -1))  # noqa: E731
    smooth_t = lambda lam: float(np.sum(S.scaled_test_function(f, lam, ctx)(np.linspace(-3, 3, 2001)[:, None])  # noqa: E731
                                        * np.cos(np.linspace(-3, 3, 2001))) * 0.003)
    assert estimate_sd(smooth_t, ctx) <= 0.05
    delta = lambda lam: float(S.scaled_test_function(f, lam, ctx)(np.zeros((1, 1)))[0])  # noqa: E731
    assert estimate_sd(delta, ctx) == pytest.approx(1.0, abs=1e-9)
