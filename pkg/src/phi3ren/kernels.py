"""Heat kernels, their powers and explicit extensions of the powers.

Everything here is plain floating point. Test functions on ``R^{1+d}`` are
given symbolically (:class:`SpaceTimeFunction`) so that the differential
operator of the extension can be moved onto them exactly.

Conventions: the heat kernel solves ``(∂_t - κΔ)p = δ``; the power
``p^{n+1}`` is written through massive kernels of diffusivity
``κ_n = 1/(n+1)``, and ``ℓ = ⌊nd/2⌋``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
import sympy as sp
from scipy import integrate, special

from .scaling import NonConvergence


@dataclass(frozen=True)
class KernelSpec:
    """Parameters of the extended power ``_a p^{n+1}`` on ``R^{1+d}``."""

    d: int
    n: int
    a: float = 1.0
    kappa: float = 1.0

    def __post_init__(self):
        if self.d < 1 or self.n < 1:
            raise ValueError("need d >= 1 and n >= 1")
        if not self.a > 0:
            raise ValueError("extension parameter a must be > 0")

    @property
    def ell(self) -> int:
        return (self.n * self.d) // 2

    @property
    def alpha(self) -> float:
        return self.n * self.d / 2

    @property
    def kappa_n(self) -> float:
        return 1.0 / (self.n + 1)

    @property
    def c_nd(self) -> float:
        nd = self.n * self.d
        return (4 * math.pi) ** (-nd / 2) * (self.n + 1) ** (-self.d / 2) / math.gamma(nd / 2)


@dataclass
class KernelQuad:
    """Quadrature settings shared by the kernel routines."""

    gh_nodes: int = 40
    panel_nodes: int = 16
    t_floor: float = 1e-14
    epsabs: float = 0.0
    epsrel: float = 1e-11
    limit: int = 400
    panels: int = 32


# ---------------------------------------------------------------------------
# kernels


def _sq_norm(x, d):
    x = np.asarray(x, dtype=float)
    if d is None:
        return (x * x if x.ndim == 0 else np.sum(x * x, axis=-1)), (1 if x.ndim == 0 else x.shape[-1])
    if d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        return x * x, 1
    return np.sum(x * x, axis=-1), d


def heat_kernel(t, x, kappa: float = 1.0, d: int | None = None):
    """``Θ(t)(4πκt)^{-d/2} exp(-|x|²/4κt)``.

    Args:
        t: Time (scalar or array broadcastable against the points).
        x: A point (shape ``(d,)``), a batch ``(..., d)``, or scalars when
            ``d == 1``.
        kappa: Diffusivity.
        d: Spatial dimension; inferred from ``x`` when omitted.
    """
    r2, d = _sq_norm(x, d)
    t = np.asarray(t, dtype=float)
    pos = t > 0
    ts = np.where(pos, t, 1.0)
    val = np.where(pos, (4 * math.pi * kappa * ts) ** (-d / 2) * np.exp(-r2 / (4 * kappa * ts)), 0.0)
    return val if val.ndim else float(val)


def massive_kernel(t, x, z: float, kappa: float, d: int | None = None):
    """Fundamental solution of ``∂_t - κΔ + z``."""
    return heat_kernel(t, x, kappa, d) * np.exp(-z * np.maximum(np.asarray(t, dtype=float), 0.0))


def kl_representation(spec: KernelSpec, t: float, x, quad: KernelQuad | None = None) -> float:
    """``p(t,x)^{n+1}`` through its spectral integral over massive kernels.

    Raises:
        NonConvergence: if the z quadrature reports an error above tolerance.
    """
    quad = quad or KernelQuad()
    if t <= 0:
        return 0.0
    base = heat_kernel(t, x, spec.kappa_n, spec.d)
    alpha = spec.alpha
    # split at 1/t; the algebraic weight takes the z^{α-1} endpoint
    zc = 1.0 / t
    a1, e1 = integrate.quad(lambda z: math.exp(-z * t), 0.0, zc, weight="alg",
                            wvar=(alpha - 1, 0.0), epsabs=0.0, epsrel=quad.epsrel,
                            limit=quad.limit)
    a2, e2 = integrate.quad(lambda z: z ** (alpha - 1) * math.exp(-z * t), zc, np.inf,
                            epsabs=0.0, epsrel=quad.epsrel, limit=quad.limit)
    total = a1 + a2
    if e1 + e2 > 1e-6 * abs(total):
        raise NonConvergence(f"z-integral error {e1 + e2:.3g}")
    return float(spec.c_nd * base * total)


def power_kernel(spec: KernelSpec, t, x):
    """Direct ``p(t,x)^{n+1}`` (heat kernel with κ = 1)."""
    return heat_kernel(t, x, 1.0, spec.d) ** (spec.n + 1)


def torus_kernel(t, x, terms: int = 6, kappa: float = 1.0, return_tail: bool = False):
    """Heat kernel on ``(0,1)^d`` with periodic boundary by images.

    Args:
        t: Time.
        x: Point of shape ``(d,)`` (or a scalar for d = 1).
        terms: Images ``n`` with ``max|n_i| <= terms`` are summed.
        kappa: Diffusivity.
        return_tail: Also return a bound on the omitted images.

    Returns:
        The truncated sum, or ``(value, tail_bound)``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = x.shape[-1]
    if t <= 0:
        return (0.0, 0.0) if return_tail else 0.0
    rng = np.arange(-terms, terms + 1)
    shifts = np.stack(np.meshgrid(*([rng] * d), indexing="ij"), -1).reshape(-1, d)
    val = float(np.sum(heat_kernel(t, x + shifts, kappa, d)))
    if not return_tail:
        return val
    # images outside the box sit at distance >= terms in some coordinate
    g1 = sum(math.exp(-((k - 1) ** 2) / (4 * kappa * t)) for k in range(terms + 1, terms + 60)
             ) / math.sqrt(4 * math.pi * kappa * t)
    one_d = (1 + 2 * terms) / math.sqrt(4 * math.pi * kappa * t) + 2 * g1
    tail = 2 * d * g1 * one_d ** (d - 1)
    return val, tail


def q_epsilon(x1, x2, eps: float, T_window: float, kappa: float = 1.0) -> float:
    """Regularised covariance of ``P_χ⊛ξ_ε`` between space-time points.

    The noise is smoothed in space with the heat kernel at time ``ε²/2``
    and the source is restricted to ``0 <= s <= T_window``, so by the
    semigroup property

        Q_ε(x1, x2) = ∫_0^{min(t1, t2, T)} p(t1 + t2 - 2s + ε², y1 - y2) ds.

    Args:
        x1, x2: ``(t, y...)`` space-time points.
        eps: Mollification width (> 0).
        T_window: Length of the source window.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    t1, t2 = x1[0], x2[0]
    dy = x1[1:] - x2[1:]
    d = dy.size
    top = min(t1, t2, T_window)
    if top <= 0:
        return 0.0
    val, _ = integrate.quad(
        lambda s: heat_kernel(t1 + t2 - 2 * s + eps**2, dy, kappa, d), 0.0, top,
        epsabs=0.0, epsrel=1e-12, limit=200)
    return float(val)


def q_epsilon_direct(x1, x2, eps: float, T_window: float, kappa: float = 1.0,
                     half_width: float = 12.0, nodes: int = 400) -> float:
    """Same quantity by explicit source integration (d = 1 only).

    ``∫ ds ∫ dy p_ε(t1 - s, y1 - y) p_ε(t2 - s, y2 - y)`` with ``p_ε`` the
    spatially smoothed kernel. Used as an independent check.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x1.size != 2:
        raise ValueError("direct quadrature implemented for d = 1")
    t1, y1, t2, y2 = x1[0], x1[1], x2[0], x2[1]
    top = min(t1, t2, T_window)
    if top <= 0:
        return 0.0
    width = math.sqrt(2 * kappa * (max(t1, t2) + eps**2)) * half_width
    centre = 0.5 * (y1 + y2)
    yn, yw = np.polynomial.legendre.leggauss(nodes)
    ys = centre + width * yn
    yw = yw * width
    h = eps**2 / 2

    def inner(s):
        a = heat_kernel(t1 - s + h, y1 - ys, kappa, 1)
        b = heat_kernel(t2 - s + h, y2 - ys, kappa, 1)
        return float(np.sum(yw * a * b))

    val, _ = integrate.quad(inner, 0.0, top, epsabs=0.0, epsrel=1e-11, limit=200)
    return float(val)


# ---------------------------------------------------------------------------
# test functions


@dataclass(frozen=True)
class SpaceTimeFunction:
    """Symbolic test function ``f(t, x_1..x_d)``.

    Attributes:
        expr: Sympy expression in :attr:`t` and :attr:`xs`.
        d: Spatial dimension.
        t_support: Interval of times outside of which ``f`` is zero (or
            negligible at double precision).
    """

    expr: sp.Expr
    d: int
    t_support: tuple = (0.0, 10.0)

    @property
    def t(self) -> sp.Symbol:
        return sp.Symbol("t", real=True)

    @property
    def xs(self) -> tuple:
        return tuple(sp.Symbol(f"x{i + 1}", real=True) for i in range(self.d))

    @cached_property
    def numeric(self):
        return sp.lambdify((self.t,) + self.xs, self.expr, "numpy")

    def __call__(self, t, *xs):
        out = self.numeric(t, *xs)
        return np.broadcast_to(out, np.broadcast(t, *xs).shape) if np.ndim(out) == 0 else out

    def apply_heat_adjoint(self, kappa: float, a: float, power: int) -> "SpaceTimeFunction":
        """``(∂_t + κΔ + a)^power f``, the adjoint of ``(-∂_t + κΔ + a)^power``."""
        e = self.expr
        for _ in range(power):
            e = sp.diff(e, self.t) + kappa * sum(sp.diff(e, x, 2) for x in self.xs) + a * e
        return SpaceTimeFunction(sp.simplify(e) if power <= 1 else e, self.d, self.t_support)

    def value_at_origin(self) -> float:
        return float(self.expr.subs({self.t: 0, **{x: 0 for x in self.xs}}))

    def scaled(self, lam: float) -> "SpaceTimeFunction":
        """``λ^{-(d+2)} f(t/λ², x/λ)``."""
        e = self.expr.subs({self.t: self.t / lam**2, **{x: x / lam for x in self.xs}},
                           simultaneous=True) / lam ** (self.d + 2)
        lo, hi = self.t_support
        return SpaceTimeFunction(e, self.d, (lo * lam**2, hi * lam**2))


def gaussian_test_function(d: int, t0: float = 0.3, st: float = 0.25, sx: float = 1.5,
                           poly: str | sp.Expr = "1") -> SpaceTimeFunction:
    """``poly · exp(-(t-t0)²/st² - |x|²/sx²)``; effective time support ±8 st."""
    t = sp.Symbol("t", real=True)
    xs = [sp.Symbol(f"x{i + 1}", real=True) for i in range(d)]
    p = sp.sympify(poly, locals={"t": t, **{str(x): x for x in xs}})
    e = p * sp.exp(-((t - t0) ** 2) / st**2 - sum(x**2 for x in xs) / sx**2)
    return SpaceTimeFunction(e, d, (t0 - 8 * st, t0 + 8 * st))


def bump_test_function(d: int, t1: float, t2: float, sx: float = 1.5,
                       poly: str | sp.Expr = "1") -> SpaceTimeFunction:
    """Smooth bump in time supported on ``[t1, t2]`` times a spatial Gaussian."""
    t = sp.Symbol("t", real=True)
    xs = [sp.Symbol(f"x{i + 1}", real=True) for i in range(d)]
    p = sp.sympify(poly, locals={"t": t, **{str(x): x for x in xs}})
    c, w = (t1 + t2) / 2, (t2 - t1) / 2
    s = (t - c) / w
    bump = sp.Piecewise((sp.exp(1 - 1 / (1 - s**2)), s**2 < 1), (0, True))
    e = p * bump * sp.exp(-sum(x**2 for x in xs) / sx**2)
    return SpaceTimeFunction(e, d, (t1, t2))


# ---------------------------------------------------------------------------
# pairings


def _gauss_expectation(g: SpaceTimeFunction, ts: np.ndarray, var_coef: float, nodes: int):
    """``E[g(t, X)]`` with ``X ~ N(0, var_coef·t·I_d)`` for each t."""
    z, w = np.polynomial.hermite_e.hermegauss(nodes)
    w = w / math.sqrt(2 * math.pi)
    d = g.d
    grids = np.meshgrid(*([z] * d), indexing="ij")
    weights = np.ones_like(grids[0])
    for wi in np.meshgrid(*([w] * d), indexing="ij"):
        weights = weights * wi
    sd = np.sqrt(var_coef * ts)[:, None]
    pts = [sd * gz.reshape(1, -1) for gz in grids]
    T = np.broadcast_to(ts[:, None], pts[0].shape)
    vals = np.asarray(g(T, *pts), dtype=float)
    return vals @ weights.reshape(-1)


def _time_nodes(lo: float, hi: float, quad: KernelQuad, graded: bool):
    x, w = np.polynomial.legendre.leggauss(quad.panel_nodes)
    if graded:
        edges = [hi]
        while edges[-1] > quad.t_floor * hi:
            edges.append(edges[-1] / 2)
        edges = np.array(edges[::-1])
    else:
        edges = np.linspace(lo, hi, quad.panels + 1)
    ts, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        ts.append((a + b) / 2 + (b - a) / 2 * x)
        ws.append((b - a) / 2 * w)
    return np.concatenate(ts), np.concatenate(ws), edges[0]


def _z_integral(alpha: float, ell: int, a: float, laplace, head0: float,
                substitution: str, quad: KernelQuad) -> float:
    """``∫_0^∞ z^{α-1} (z+a)^{-ℓ} L(z) dz`` where ``L(z) ~ head0/z`` at infinity."""
    if substitution == "rational":
        scale = a ** (alpha - ell)

        def F(u):
            if u >= 1.0 - 1e-15:
                return scale * head0 / a
            z = a * u / (1 - u)
            return scale * laplace(z) / (1 - u)

        val, err = integrate.quad(F, 0.0, 1.0, weight="alg", wvar=(alpha - 1, ell - alpha),
                                  epsabs=quad.epsabs, epsrel=quad.epsrel, limit=quad.limit)
    elif substitution == "exponential":
        def G(s):
            if s > 200.0:
                return 0.0
            z = a * math.exp(s)
            return z**alpha * (z + a) ** (-ell) * laplace(z)

        v1, e1 = integrate.quad(G, -np.inf, 0.0, epsabs=quad.epsabs, epsrel=quad.epsrel,
                                limit=quad.limit)
        v2, e2 = integrate.quad(G, 0.0, np.inf, epsabs=quad.epsabs, epsrel=quad.epsrel,
                                limit=quad.limit)
        val, err = v1 + v2, e1 + e2
    else:
        raise ValueError(f"unknown substitution {substitution!r}")
    if not np.isfinite(val) or err > 1e-7 * max(abs(val), 1e-300) + 1e-14:
        raise NonConvergence(f"z-integral error estimate {err:.3g} for value {val:.6g}")
    return float(val)


def extended_power_pairing(spec: KernelSpec, f: SpaceTimeFunction, quad: KernelQuad | None = None,
                           substitution: str = "rational") -> float:
    """``⟨_a p^{n+1}, f⟩`` for the spectral extension with parameter ``a``.

    The operator ``(-∂_t + Δ/(n+1) + a)^ℓ`` is moved onto ``f`` (exactly,
    by symbolic differentiation), the space integral of the massive kernel
    against the result becomes a Gaussian expectation ``h(t)``, the time
    integral is a Laplace transform of ``h`` on graded Gauss-Legendre
    panels, and the damped z-integral is done last.

    Args:
        spec: Kernel parameters.
        f: Symbolic test function.
        quad: Quadrature settings.
        substitution: ``"rational"`` (``z = a u/(1-u)``) or
            ``"exponential"`` (``z = a e^s``); both give the same value.

    Raises:
        NonConvergence: if the z quadrature misses its tolerance.
    """
    quad = quad or KernelQuad()
    if f.d != spec.d:
        raise ValueError("dimension mismatch between kernel and test function")
    ell, alpha, kap = spec.ell, spec.alpha, spec.kappa_n
    g = f.apply_heat_adjoint(kap, spec.a, ell)
    lo, hi = f.t_support
    if hi <= 0:
        return 0.0
    graded = lo <= 0
    ts, ws, t0 = _time_nodes(max(lo, 0.0), hi, quad, graded)
    h = _gauss_expectation(g, ts, 2 * kap, quad.gh_nodes)
    hw = h * ws
    h0 = float(_gauss_expectation(g, np.array([0.0]), 2 * kap, 1)[0]) if graded else 0.0

    def laplace(z):
        val = float(np.dot(hw, np.exp(-z * ts)))
        if graded:
            val += h0 * (-math.expm1(-z * t0)) / z if z > 0 else h0 * t0
        return val

    return spec.c_nd * _z_integral(alpha, ell, spec.a, laplace, h0, substitution, quad)


def heat_power_pairing(k: int, d: int, f: SpaceTimeFunction,
                       quad: KernelQuad | None = None) -> float:
    """``∫ p^k f`` where it converges (f supported off the origin, or kd < d+2).

    Uses ``∫ p(t,x)^k g(x) dx = (4πt)^{-(k-1)d/2} k^{-d/2} E[g(X)]`` with
    ``X ~ N(0, (2t/k)·I)``.
    """
    quad = quad or KernelQuad()
    if k < 1:
        raise ValueError("k must be >= 1")
    lo, hi = f.t_support
    expo = (k - 1) * d / 2
    if lo <= 0 and expo >= 1:
        raise ValueError("p^k is not locally integrable here; use an extension")
    if hi <= 0:
        return 0.0
    pref = k ** (-d / 2) * (4 * math.pi) ** (-expo)
    if lo > 0:
        ts, ws, _ = _time_nodes(lo, hi, quad, graded=False)
        hv = _gauss_expectation(f, ts, 2.0 / k, quad.gh_nodes)
        return float(pref * np.sum(ws * hv * ts ** (-expo)))

    def h(t):
        return float(_gauss_expectation(f, np.array([t]), 2.0 / k, quad.gh_nodes)[0])

    # t^{-expo} endpoint handled by the algebraic weight
    val, _ = integrate.quad(h, 0.0, hi, weight="alg", wvar=(-expo, 0.0),
                            epsabs=0.0, epsrel=1e-11, limit=quad.limit)
    return float(pref * val)


def plain_power_pairing(spec: KernelSpec, f: SpaceTimeFunction,
                        quad: KernelQuad | None = None) -> float:
    """``∫ p^{n+1} f`` for the unextended power (where it converges)."""
    if f.d != spec.d:
        raise ValueError("dimension mismatch between kernel and test function")
    return heat_power_pairing(spec.n + 1, spec.d, f, quad)


def power_sd_sampler(k: int, d: int, f: SpaceTimeFunction | None = None,
                     quad: KernelQuad | None = None):
    """``λ -> ⟨p^k, f^λ⟩`` with parabolic rescaling ``f^λ = λ^{-(d+2)} f(t/λ², x/λ)``.

    The default ``f`` is supported in ``t ∈ [0.5, 2]`` so the pairing exists
    for every power. The default quadrature is coarse: nodes scale with
    ``f^λ``, so the slope does not depend on the resolution.
    """
    f = f or bump_test_function(d, 0.5, 2.0)
    quad = quad or KernelQuad(gh_nodes=12, panels=8)
    return lambda lam: heat_power_pairing(k, d, f.scaled(lam), quad)


def extension_difference(spec_a: KernelSpec, spec_b: KernelSpec, f: SpaceTimeFunction,
                         quad: KernelQuad | None = None) -> float:
    """``⟨_b p^{n+1} - _a p^{n+1}, f⟩`` for two extension parameters."""
    if (spec_a.d, spec_a.n) != (spec_b.d, spec_b.n):
        raise ValueError("extensions of different powers cannot be compared")
    if spec_a.a == spec_b.a:
        return 0.0
    return extended_power_pairing(spec_b, f, quad) - extended_power_pairing(spec_a, f, quad)


def delta_basis(spec: KernelSpec, f: SpaceTimeFunction) -> np.ndarray:
    """``[(H + a)^q δ](f) = [(∂_t + κΔ + a)^q f](0)`` for ``q < ℓ``."""
    return np.array([f.apply_heat_adjoint(spec.kappa_n, spec.a, q).value_at_origin()
                     for q in range(spec.ell)])


def regress_difference(spec_a: KernelSpec, spec_b: KernelSpec,
                       fs: Sequence[SpaceTimeFunction], quad: KernelQuad | None = None):
    """Fit extension differences on ``fs`` to the local basis of ``spec_a``.

    Returns:
        ``(zeta, residual, scale)``: least-squares coefficients, the max
        absolute residual and the max absolute difference (for scale).
    """
    diffs = np.array([extension_difference(spec_a, spec_b, f, quad) for f in fs])
    B = np.array([delta_basis(spec_a, f) for f in fs])
    if B.shape[1] == 0:
        return np.zeros(0), float(np.max(np.abs(diffs))), float(np.max(np.abs(diffs)))
    zeta, *_ = np.linalg.lstsq(B, diffs, rcond=None)
    res = diffs - B @ zeta
    return zeta, float(np.max(np.abs(res))), float(np.max(np.abs(diffs)))


def confluent_oracle(spec: KernelSpec, t: float) -> float:
    """``∫_0^∞ z^{α-1}(z+a)^{-ℓ} e^{-zt} dz`` in closed form (Tricomi U)."""
    al, ell, a = spec.alpha, spec.ell, spec.a
    return math.gamma(al) * a ** (al - ell) * float(special.hyperu(al, al - ell + 1, a * t))
