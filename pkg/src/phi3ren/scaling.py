"""Scaling-degree calculus, ambiguity counting and numerical extensions.

Two parts live here. The integer calculus (:func:`sd_delta`,
:func:`sd_parametrix`, :func:`sd_convolution_bound`, :func:`gamma_sd_bound`,
:func:`ambiguity_dimension`) is exact. The numerical part
(:func:`extend_pairing`, :func:`estimate_sd`) pairs singular kernels with test
functions through Taylor subtraction and estimates scaling degrees from a
λ-regression.

Parabolic conventions: the appendix-style convention takes ``d`` to be the
dimension of the space-time manifold, so the effective dimension is ``d+1``;
the spatial convention (used for diagram power counting) takes ``d`` to be the
spatial dimension of ``R^{1+d}``, so the effective dimension is ``d+2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import product as cartesian
from typing import Callable, Sequence

import numpy as np

ELLIPTIC = "elliptic"
PARABOLIC = "parabolic"


class NonConvergence(RuntimeError):
    """A numerical limit did not settle within tolerance."""


@dataclass(frozen=True)
class ScalingContext:
    """Dimension and scaling mode.

    Attributes:
        d: Dimension (see module docstring for the parabolic conventions).
        mode: ``"elliptic"`` or ``"parabolic"``.
        convention: ``"manifold"`` or ``"spatial"``; only used in parabolic
            mode.
    """

    d: int
    mode: str = ELLIPTIC
    convention: str = "manifold"

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.mode not in (ELLIPTIC, PARABOLIC):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.convention not in ("manifold", "spatial"):
            raise ValueError(f"unknown convention {self.convention!r}")

    @property
    def effective_dimension(self) -> int:
        if self.mode == ELLIPTIC:
            return self.d
        return self.d + 1 if self.convention == "manifold" else self.d + 2


@dataclass(frozen=True, order=True)
class SdValue:
    """Scaling degree: an exact rational or +∞ (saturating)."""

    value: Fraction = Fraction(0)
    infinite: bool = False

    @classmethod
    def of(cls, x) -> "SdValue":
        if isinstance(x, SdValue):
            return x
        if x == math.inf:
            return INF
        return cls(Fraction(x))

    def __add__(self, other) -> "SdValue":
        other = SdValue.of(other)
        if self.infinite or other.infinite:
            return INF
        return SdValue(self.value + other.value)

    __radd__ = __add__

    def __sub__(self, other) -> "SdValue":
        other = SdValue.of(other)
        if other.infinite:
            raise ValueError("cannot subtract an infinite scaling degree")
        if self.infinite:
            return INF
        return SdValue(self.value - other.value)

    def __eq__(self, other) -> bool:
        try:
            other = SdValue.of(other)
        except (TypeError, ValueError):
            return NotImplemented
        return (self.infinite, self.value if not self.infinite else 0) == (
            other.infinite, other.value if not other.infinite else 0)

    def __hash__(self):
        return hash((self.infinite, self.value if not self.infinite else 0))

    def __float__(self) -> float:
        return math.inf if self.infinite else float(self.value)

    def __repr__(self) -> str:
        return "SdValue(+inf)" if self.infinite else f"SdValue({self.value})"


INF = SdValue(Fraction(0), True)


def _max(a: SdValue, b: SdValue) -> SdValue:
    if a.infinite or b.infinite:
        return INF
    return a if a.value >= b.value else b


def sd_delta(n: int, ctx: ScalingContext) -> SdValue:
    """Scaling degree of the delta on the n-fold total diagonal."""
    if n < 2:
        raise ValueError("n must be >= 2")
    return SdValue((n - 1) * ctx.effective_dimension)


def sd_parametrix(ctx: ScalingContext) -> SdValue:
    """Scaling degree of a parametrix on the two-point diagonal.

    Elliptic: ``d-2``. Parabolic: ``effective_dimension - 2``, which is
    ``d-1`` in the manifold convention and ``d`` in the spatial one.
    """
    return SdValue(ctx.effective_dimension - 2)


def sd_convolution_bound(sdK, sdT, ctx: ScalingContext) -> SdValue:
    """Bound ``max{0, sdK + sdT - effective_dimension}`` for ``K ⊛ t``."""
    total = SdValue.of(sdK) + SdValue.of(sdT)
    if total.infinite:
        return INF
    return _max(SdValue(0), total - ctx.effective_dimension)


def gamma_sd_bound(k: int, p: int, ctx: ScalingContext) -> SdValue:
    """Bound ``p·D + (k-p)/2 · max{0, D-4}`` with D the effective dimension."""
    if not 1 <= p <= k:
        raise ValueError("need 1 <= p <= k")
    D = ctx.effective_dimension
    return SdValue(p * D + Fraction(k - p, 2) * max(0, D - 4))


def parabolic_codim(points: int, d: int) -> tuple[int, int]:
    """Transverse variables of the diagonal of ``points+1`` space-time points.

    Returns ``(time variables, space variables)`` in the spatial convention.
    """
    return (points, points * d)


def ambiguity_dimension(rho: int, codim, ctx: ScalingContext | None = None) -> int:
    """Number of multi-indices of weight ≤ rho in the transverse variables.

    Args:
        rho: Degree of divergence; negative values give 0.
        codim: An integer (elliptic, all weights 1) or a pair
            ``(n_time, n_space)`` for the parabolic count where each time
            derivative has weight 2.
        ctx: Optional context; a parabolic context requires a pair.

    Example:
        >>> ambiguity_dimension(2, 2)
        6
        >>> ambiguity_dimension(2, (1, 1))
        4
    """
    if rho < 0:
        return 0
    if isinstance(codim, tuple):
        nt, nx = codim
    else:
        if ctx is not None and ctx.mode == PARABOLIC:
            raise ValueError("parabolic counting needs codim=(n_time, n_space)")
        nt, nx = 0, codim
    total = 0
    for j in range(rho // 2 + 1 if nt else 1):
        time_part = math.comb(j + nt - 1, nt - 1) if nt else 1
        total += time_part * math.comb(rho - 2 * j + nx, nx)
    return total


# ---------------------------------------------------------------------------
# Taylor subtraction W_rho


def multi_indices(rho: int, dim: int, weights: Sequence[int] | None = None):
    """All α ∈ N^dim with Σ weights_i α_i ≤ rho, in graded order."""
    w = list(weights) if weights is not None else [1] * dim
    out = []
    for alpha in cartesian(*(range(rho // wi + 1) for wi in w)):
        if sum(a * wi for a, wi in zip(alpha, w)) <= rho:
            out.append(alpha)
    out.sort(key=lambda a: (sum(x * wi for x, wi in zip(a, w)), a))
    return out


def smooth_step(r):
    """C^∞ cutoff: 1 for r ≤ 1/2, 0 for r ≥ 1."""
    r = np.asarray(r, dtype=float)

    def h(s):
        s = np.clip(s, 0.0, None)
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)

    s = (1.0 - r) / 0.5
    a, b = h(s), h(1.0 - s)
    return np.where(r <= 0.5, 1.0, np.where(r >= 1.0, 0.0, a / (a + b)))


@dataclass(frozen=True)
class BumpFamily:
    """Family ψ_α(y) = q_α(y)·g(y) with ∂^β ψ_α(0) = δ^β_α for weight ≤ rho.

    ``kind="plateau"`` uses ``g(y) = smooth_step(|y|/radius)``; it equals one
    near 0, so ``q_α = y^α/α!`` exactly. ``kind="gaussian"`` uses
    ``g(y) = exp(-|y|²/radius²)``; the jet of ``1/g`` is then folded into
    ``q_α`` (a triangular correction) so the δ property still holds.
    Norms are Euclidean in the variables given; parabolic callers pass
    rescaled coordinates.
    """

    kind: str = "plateau"
    radius: float = 1.0

    def g(self, y: np.ndarray) -> np.ndarray:
        r2 = np.sum(y * y, axis=-1)
        if self.kind == "plateau":
            return smooth_step(np.sqrt(r2) / self.radius)
        if self.kind == "gaussian":
            return np.exp(-r2 / self.radius**2)
        raise ValueError(f"unknown bump kind {self.kind!r}")

    def correction(self, alphas, weights) -> dict:
        """Polynomial q_α as {monomial: coefficient} for each α."""
        out = {}
        for alpha in alphas:
            poly = {alpha: 1.0 / math.prod(math.factorial(a) for a in alpha)}
            if self.kind == "gaussian":
                rho = max(sum(a * w for a, w in zip(b, weights)) for b in alphas)
                poly = _times_inv_gaussian_jet(poly, self.radius, rho, weights)
            out[alpha] = poly
        return out


def _times_inv_gaussian_jet(poly, radius, rho, weights):
    # 1/g = Π_i exp(y_i²/R²) = Π_i Σ_k y_i^{2k}/(R^{2k} k!)
    dim = len(weights)
    res = dict(poly)
    for i in range(dim):
        new = {}
        for mono, c in res.items():
            k = 0
            while True:
                m = list(mono)
                m[i] += 2 * k
                if sum(a * w for a, w in zip(m, weights)) > rho:
                    break
                new[tuple(m)] = new.get(tuple(m), 0.0) + c / (radius ** (2 * k) * math.factorial(k))
                k += 1
        res = new
    return res


def _eval_poly(poly: dict, y: np.ndarray) -> np.ndarray:
    out = np.zeros(y.shape[:-1])
    for mono, c in poly.items():
        term = np.full(y.shape[:-1], c)
        for i, a in enumerate(mono):
            if a:
                term = term * y[..., i] ** a
        out = out + term
    return out


@dataclass(frozen=True)
class QuadConfig:
    """Quadrature settings for :func:`extend_pairing`.

    Attributes:
        r0: Initial excision radius.
        levels: Maximum number of halvings of the radius.
        tol: Relative tolerance on successive extrapolated values.
        radial_nodes: Gauss-Legendre nodes per unit of log-radius.
        angular_nodes: Angular resolution (per angle).
        outer_radius: Support radius of the integrand (f and bumps); in
            the heat geometry, the largest time.
        heat_sigma: Gauss-Hermite scale for the heat variable ``x/sqrt(t)``.
    """

    r0: float = 0.25
    levels: int = 12
    tol: float = 1e-9
    radial_nodes: int = 48
    angular_nodes: int = 48
    outer_radius: float = 4.0
    heat_sigma: float = 2.0


def _sphere_rule(n: int, m: int):
    """Quadrature nodes/weights on S^{n-1} (n ≤ 3)."""
    if n == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if n == 2:
        th = 2 * np.pi * (np.arange(m) + 0.5) / m
        return np.stack([np.cos(th), np.sin(th)], axis=1), np.full(m, 2 * np.pi / m)
    if n == 3:
        x, wx = np.polynomial.legendre.leggauss(m)
        ph = 2 * np.pi * (np.arange(2 * m) + 0.5) / (2 * m)
        ct, P = np.meshgrid(x, ph, indexing="ij")
        st = np.sqrt(1 - ct**2)
        pts = np.stack([st * np.cos(P), st * np.sin(P), ct], axis=-1).reshape(-1, 3)
        w = (wx[:, None] * np.full(2 * m, 2 * np.pi / (2 * m))[None, :]).reshape(-1)
        return pts, w
    raise ValueError("angular rules implemented for dimension <= 3")


def taylor_data(f_derivs: Callable[[tuple], float], alphas) -> dict:
    """Collect ∂^α f(x0) for the given multi-indices."""
    return {a: float(f_derivs(a)) for a in alphas}


def extend_pairing(t: Callable[[np.ndarray], np.ndarray], rho: int,
                   f: Callable[[np.ndarray], np.ndarray], quad: QuadConfig | None = None,
                   *, dim: int, f_derivs: Callable[[tuple], float] | None = None,
                   bumps: BumpFamily | None = None, x0=None,
                   geometry: str = "euclidean") -> float:
    """Numerical ⟨t̂, f⟩ = ⟨t, W_rho f⟩ for a kernel singular at ``x0``.

    A neighbourhood of the singular point is excised, the rest is integrated
    by Gauss-Legendre quadrature in a logarithmic radial variable, the
    excision is halved repeatedly and the resulting sequence is extrapolated
    (Aitken/Richardson with an estimated exponent) until successive
    extrapolants agree to ``quad.tol``.

    Two geometries are available:

    * ``"euclidean"``: spherical shells ``r < |y - x0| < R`` (dim ≤ 3).
    * ``"heat"``: for kernels supported in ``t >= 0`` on ``R^{1+d}`` (first
      coordinate is time, singular point at the origin). The excised region
      is the slab ``t < r²``; space is integrated in the heat variable
      ``x = sqrt(t)·y`` with Gauss-Hermite nodes of scale ``quad.heat_sigma``.
      Taylor data uses parabolic weights (2 for time, 1 for space).

    Args:
        t: Kernel, called on arrays of shape ``(..., dim)``.
        rho: Degree of divergence; no subtraction when negative.
        f: Test function on ``(..., dim)`` arrays.
        quad: Quadrature configuration.
        dim: Ambient dimension.
        f_derivs: ``alpha -> ∂^α f(x0)``; required when ``rho >= 0``.
        bumps: Bump family for W_rho (default plateau of radius 1).
        x0: Singular point (default origin).
        geometry: ``"euclidean"`` or ``"heat"``.

    Raises:
        NonConvergence: when the radius extrapolation does not settle.
    """
    quad = quad or QuadConfig()
    bumps = bumps or BumpFamily()
    x0 = np.zeros(dim) if x0 is None else np.asarray(x0, dtype=float)
    if geometry == "heat":
        weights = [2] + [1] * (dim - 1)
    elif geometry == "euclidean":
        weights = [1] * dim
    else:
        raise ValueError(f"unknown geometry {geometry!r}")
    alphas = multi_indices(rho, dim, weights) if rho >= 0 else []
    if alphas and f_derivs is None:
        raise ValueError("rho >= 0 requires Taylor data of f (f_derivs)")
    data = taylor_data(f_derivs, alphas) if alphas else {}
    polys = bumps.correction(alphas, weights) if alphas else {}

    def wf(y):
        val = f(y)
        if alphas:
            rel = y - x0
            g = bumps.g(rel)
            for a in alphas:
                val = val - data[a] * _eval_poly(polys[a], rel) * g
        return val

    R = quad.outer_radius
    if geometry == "euclidean":
        dirs, wdir = _sphere_rule(dim, quad.angular_nodes)

        def shell(r_lo, r_hi):
            span = math.log(r_hi / r_lo)
            m = max(8, int(math.ceil(quad.radial_nodes * span)))
            u, wu = np.polynomial.legendre.leggauss(m)
            s = r_lo * np.exp(0.5 * (u + 1) * span)
            ws = wu * 0.5 * span * s
            pts = x0 + s[:, None, None] * dirs[None, :, :]
            vals = t(pts) * wf(pts)
            return float(np.sum(ws[:, None] * s[:, None] ** (dim - 1) * wdir[None, :] * vals))

        excise = lambda r: r  # noqa: E731
    else:
        ds = dim - 1
        h, wh = np.polynomial.hermite.hermgauss(quad.angular_nodes)
        sig = quad.heat_sigma
        if ds:
            grids = np.meshgrid(*([h] * ds), indexing="ij")
            wgrid = np.meshgrid(*([wh] * ds), indexing="ij")
            eta = np.stack([g.reshape(-1) for g in grids], axis=-1)
            weta = np.prod(np.stack([w.reshape(-1) for w in wgrid], axis=-1), axis=-1)
        else:
            eta, weta = np.zeros((1, 0)), np.ones(1)
        gauss_back = np.exp(np.sum(eta**2, axis=-1))

        def shell(t_lo, t_hi):
            span = math.log(t_hi / t_lo)
            m = max(8, int(math.ceil(quad.radial_nodes * span)))
            u, wu = np.polynomial.legendre.leggauss(m)
            tt = t_lo * np.exp(0.5 * (u + 1) * span)
            wt = wu * 0.5 * span * tt
            pts = np.empty((m, eta.shape[0], dim))
            pts[..., 0] = tt[:, None]
            pts[..., 1:] = np.sqrt(tt)[:, None, None] * sig * eta[None, :, :]
            pts = pts + x0
            vals = t(pts) * wf(pts) * gauss_back[None, :]
            inner = np.sum(weta[None, :] * vals, axis=1) * sig**ds * tt ** (ds / 2)
            return float(np.sum(wt * inner))

        excise = lambda r: r * r  # noqa: E731

    r = quad.r0
    total = shell(excise(r), R)
    seq = [total]
    extrap = []
    for _ in range(quad.levels):
        r_new = r / 2
        total += shell(excise(r_new), excise(r))
        r = r_new
        seq.append(total)
        if len(seq) >= 3:
            d1, d2 = seq[-2] - seq[-3], seq[-1] - seq[-2]
            if d2 == 0.0 or d1 == 0.0 or d1 / d2 <= 1.0:
                est = seq[-1]
            else:
                est = seq[-1] + d2 / (d1 / d2 - 1.0)
            extrap.append(est)
            if len(extrap) >= 2 and abs(extrap[-1] - extrap[-2]) <= quad.tol * max(1.0, abs(extrap[-1])):
                return extrap[-1]
    raise NonConvergence(f"radius extrapolation did not settle: {extrap[-3:]}")


# ---------------------------------------------------------------------------
# λ-regression


def scaled_test_function(f: Callable, lam: float, ctx: ScalingContext) -> Callable:
    """f^λ for the context's scaling, centred at the origin.

    Elliptic: ``λ^{-D} f(y/λ)``. Parabolic (first coordinate is time):
    ``λ^{-D} f(s/λ², z/λ)`` with D the effective dimension.
    """
    D = ctx.effective_dimension

    def f_lam(y):
        y = np.asarray(y, dtype=float)
        if ctx.mode == PARABOLIC:
            z = y.copy()
            z[..., 0] = y[..., 0] / lam**2
            z[..., 1:] = y[..., 1:] / lam
        else:
            z = y / lam
        return f(z) / lam**D

    return f_lam


def estimate_sd(sampler: Callable[[float], float], ctx: ScalingContext | None = None,
                lambdas: Sequence[float] = tuple(np.geomspace(0.05, 0.4, 8)),
                noise_floor: float = 1e-300) -> float:
    """Least-squares estimate of the scaling degree from ⟨t, f^λ⟩.

    Args:
        sampler: ``lam -> ⟨t, f^lam⟩``; callers build it with
            :func:`scaled_test_function` or an equivalent closed form.
        ctx: Unused by the fit itself; kept so callers state the scaling.
        lambdas: Grid of scales (should approach 0).
        noise_floor: Pairings with modulus below this are discarded.

    Returns:
        ``-slope`` of ``log|⟨t, f^λ⟩|`` against ``log λ``: for a pairing
        behaving like ``λ^{-ω}`` this returns ``ω``.

    Raises:
        ValueError: if fewer than two pairings are above the noise floor.
    """
    lam = np.asarray(lambdas, dtype=float)
    vals = np.array([abs(sampler(float(x))) for x in lam])
    keep = vals > noise_floor
    if keep.sum() < 2:
        raise ValueError("degenerate regression: pairings below the noise floor")
    slope = np.polyfit(np.log(lam[keep]), np.log(vals[keep]), 1)[0]
    return float(-slope)
