"""Lattice Monte-Carlo and exact Gaussian moments.

The stochastic heat equation ``∂_t u = Δu + ξ_ε`` is stepped with explicit
Euler on a periodic grid, from zero data, with the source switched on only
inside the time window ``[0, T_window)`` (the lattice version of χ). The
noise is white at lattice scale and smoothed in space by a normalised
Gaussian of width ε.

Predictions are computed from the same lattice: the discrete parametrix
``P`` and covariance ``Q`` are assembled exactly, and symbolic diagrams are
evaluated on them. Monte-Carlo and prediction therefore agree up to
sampling error only, which is what the 3 SE comparisons check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np

from . import contraction as C


@dataclass(frozen=True)
class LatticeConfig:
    """Grid, regularisation and sampling parameters.

    Attributes:
        d: Spatial dimension (1 or 2; exact lattice operators need d = 1).
        nt, nx: Time levels and points per spatial direction.
        dt, dx: Spacings.
        T_window: Source window length (defaults to the whole grid).
        eps: Spatial smoothing width of the noise (0 disables it).
        seed: Root seed; sample ``i`` uses its own spawned stream.
        samples: Number of Monte-Carlo samples.
    """

    d: int = 1
    nt: int = 64
    nx: int = 64
    dx: float = 0.125
    dt: float = 0.125**2 / 4
    T_window: float | None = None
    eps: float = 0.25
    seed: int = 0
    samples: int = 10_000
    batch: int = 500

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError("d must be 1 or 2")
        if self.nt < 2 or self.nx < 3:
            raise ValueError("grid too small")
        if self.dt > self.dx**2 / (2 * self.d) * (1 + 1e-12):
            raise ValueError("explicit scheme unstable: need dt <= dx²/(2d)")
        if self.samples < 100:
            raise ValueError("samples must be >= 100")
        if self.eps < 0:
            raise ValueError("eps must be >= 0")

    @property
    def window(self) -> float:
        return self.nt * self.dt if self.T_window is None else self.T_window

    @property
    def dV(self) -> float:
        return self.dt * self.dx**self.d

    @property
    def shape(self) -> tuple:
        return (self.nt,) + (self.nx,) * self.d

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.nt) * self.dt

    @property
    def space(self) -> np.ndarray:
        return np.arange(self.nx) * self.dx

    def chi(self) -> np.ndarray:
        """Source window indicator per time level."""
        return (self.times < self.window - 1e-12).astype(float)

    def grid_function(self, g) -> np.ndarray:
        """Sample ``g(t, x...)`` on the grid; arrays pass through."""
        if g is None:
            return np.zeros(self.shape)
        if callable(g):
            axes = np.meshgrid(self.times, *([self.space] * self.d), indexing="ij")
            return np.asarray(g(*axes), dtype=float) * np.ones(self.shape)
        g = np.asarray(g, dtype=float)
        if g.shape != self.shape:
            raise ValueError(f"expected grid shape {self.shape}, got {g.shape}")
        return g


def sample_stream(cfg: LatticeConfig, index: int) -> np.random.Generator:
    """Independent, reproducible generator for sample ``index``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed, spawn_key=(index,))))


def sample_noise(cfg: LatticeConfig, index: int = 0) -> np.ndarray:
    """White noise on the grid: i.i.d. N(0, 1/(dt·dx^d)) per cell."""
    return sample_stream(cfg, index).standard_normal(cfg.shape) / math.sqrt(cfg.dV)


def mollifier(cfg: LatticeConfig) -> np.ndarray:
    """Row-normalised periodic Gaussian smoothing matrix (one direction)."""
    n = cfg.nx
    if cfg.eps == 0:
        return np.eye(n)
    k = np.arange(n)
    dist = np.minimum(k, n - k) * cfg.dx
    # heat kernel at time ε²/2: its self-convolution is the kernel at ε²
    row = np.exp(-dist**2 / (2 * cfg.eps**2))
    row /= row.sum()
    return np.stack([np.roll(row, i) for i in range(n)])


def smooth_noise(cfg: LatticeConfig, noise: np.ndarray) -> np.ndarray:
    M = mollifier(cfg)
    out = noise @ M.T
    if cfg.d == 2:
        out = np.swapaxes(np.swapaxes(out, -1, -2) @ M.T, -1, -2)
    return out


def _laplacian(u: np.ndarray, cfg: LatticeConfig) -> np.ndarray:
    lap = np.zeros_like(u)
    for ax in range(1, cfg.d + 1):
        axis = u.ndim - ax
        lap += np.roll(u, 1, axis) + np.roll(u, -1, axis) - 2 * u
    return lap / cfg.dx**2


def apply_parametrix(cfg: LatticeConfig, source: np.ndarray) -> np.ndarray:
    """Lattice ``P_χ⊛source`` by explicit Euler from zero data.

    Works on a single field or on a batch with leading axes.
    """
    src = np.asarray(source, dtype=float)
    chi = cfg.chi()
    tax = src.ndim - 1 - cfg.d
    out = np.zeros_like(src)
    u = np.zeros_like(np.take(src, 0, axis=tax))
    for n in range(cfg.nt - 1):
        u = u + cfg.dt * (_laplacian(u, cfg) + chi[n] * np.take(src, n, axis=tax))
        idx = [slice(None)] * src.ndim
        idx[tax] = n + 1
        out[tuple(idx)] = u
    return out


def solve_linear(cfg: LatticeConfig, noise: np.ndarray, phi=None) -> np.ndarray:
    """``φ̂ = P_χ⊛ξ_ε + φ`` on the lattice."""
    return apply_parametrix(cfg, smooth_noise(cfg, noise)) + cfg.grid_function(phi)


def sample_fields(cfg: LatticeConfig, start: int, stop: int, phi=None) -> np.ndarray:
    """Batch of solutions for samples ``start..stop-1``."""
    noise = np.stack([sample_noise(cfg, i) for i in range(start, stop)])
    return solve_linear(cfg, noise, phi)


# ---------------------------------------------------------------------------
# exact lattice operators


@dataclass
class LatticeOperators:
    """Dense lattice kernels on the flattened space-time grid (d = 1)."""

    cfg: LatticeConfig
    P: np.ndarray
    Q: np.ndarray

    @cached_property
    def q_diag(self) -> np.ndarray:
        return np.diag(self.Q).copy()


def lattice_operators(cfg: LatticeConfig) -> LatticeOperators:
    """Assemble ``P((n,i),(m,j)) = χ_m [A^{n-1-m}]_{ij} / dx`` and ``Q``.

    ``A = I + dt·Δ_h`` is the one-step propagator and
    ``Q = dV · P (I ⊗ M Mᵀ) Pᵀ`` the exact covariance of the smoothed field.
    """
    if cfg.d != 1:
        raise NotImplementedError("dense lattice operators are built for d = 1 only")
    nt, nx = cfg.nt, cfg.nx
    lap = (np.roll(np.eye(nx), 1, 0) + np.roll(np.eye(nx), -1, 0) - 2 * np.eye(nx)) / cfg.dx**2
    A = np.eye(nx) + cfg.dt * lap
    powers = [np.eye(nx)]
    for _ in range(nt - 1):
        powers.append(A @ powers[-1])
    chi = cfg.chi()
    N = nt * nx
    P = np.zeros((nt, nx, nt, nx))
    for n in range(1, nt):
        for m in range(n):
            if chi[m]:
                P[n, :, m, :] = powers[n - 1 - m] / cfg.dx
    P = P.reshape(N, N)
    M = mollifier(cfg)
    MM = M @ M.T
    PM = (P.reshape(N, nt, nx) @ MM).reshape(N, N)
    Q = cfg.dV * (PM @ P.T)
    Q = 0.5 * (Q + Q.T)
    return LatticeOperators(cfg, P, Q)


def evaluate_diagram(ct: C.ContractedTerm, ops: LatticeOperators, phi: np.ndarray,
                     tests: Sequence[np.ndarray]) -> float:
    """Value of one diagram (coefficient included) on the lattice.

    Roots are smeared with ``tests`` (one per root), internal vertices are
    summed with weight ``dV``, P-edges and Q-edges use the lattice kernels,
    symbols are evaluated through the covariance edges they absorbed, and
    open legs are replaced by the shift ``phi``.
    """
    cfg = ops.cfg
    dV = cfg.dV
    phi = np.asarray(phi, dtype=float).reshape(-1)
    if len(tests) != len(ct.roots):
        raise ValueError("one test function per root required")
    weights = [np.full(phi.size, dV) for _ in range(ct.n_vertices)]
    for f, r in zip(tests, ct.roots):
        weights[r] = weights[r] * np.asarray(f, dtype=float).reshape(-1)
    for v in range(ct.n_vertices):
        if ct.legs[v]:
            weights[v] = weights[v] * phi ** ct.legs[v]
        if ct.smooth[v]:
            raise ValueError(f"smooth labels {ct.smooth[v]} have no lattice value")
    q_edges = list(ct.q_edges)
    for s in ct.symbols:
        q_edges.extend(s.all_q_edges())
    letters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
    operands = []
    for v in range(ct.n_vertices):
        operands += [weights[v], [v]]
    for u, v in ct.p_edges:
        operands += [ops.P, [u, v]]
    for u, v in q_edges:
        if u == v:
            operands += [ops.q_diag, [u]]
        else:
            operands += [ops.Q, [u, v]]
    if ct.n_vertices > len(letters):
        raise ValueError("diagram too large for the lattice evaluator")
    val = np.einsum(*operands, [], optimize="greedy")
    return float(ct.coefficient) * float(val)


def evaluate_sum(terms: Iterable[C.ContractedTerm], ops: LatticeOperators, phi,
                 tests: Sequence[np.ndarray]) -> float:
    return float(sum(evaluate_diagram(t, ops, phi, tests) for t in terms))


# ---------------------------------------------------------------------------
# exact Gaussian moments


def isserlis_moment(cov, multi_index: Sequence[int]) -> float:
    """``E[Π X_i^{k_i}]`` for a centred Gaussian vector by perfect matchings.

    Args:
        cov: Covariance matrix (positive semidefinite).
        multi_index: Power of each component.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1] or cov.shape[0] != len(multi_index):
        raise ValueError("covariance and multi-index sizes disagree")
    if any(k < 0 for k in multi_index):
        raise ValueError("negative power")
    slots = [i for i, k in enumerate(multi_index) for _ in range(k)]
    if len(slots) % 2:
        return 0.0

    def rec(rest: tuple) -> float:
        if not rest:
            return 1.0
        first, others = rest[0], rest[1:]
        total = 0.0
        for j in range(len(others)):
            total += cov[first, others[j]] * rec(others[:j] + others[j + 1:])
        return total

    return rec(tuple(slots))


def count_perfect_matchings(k: int) -> int:
    """Number of perfect matchings of ``k`` points (brute force)."""
    if k % 2:
        return 0

    def rec(items):
        if not items:
            return 1
        return sum(rec(items[1:j] + items[j + 1:]) for j in range(1, len(items)))

    return rec(tuple(range(k)))


# ---------------------------------------------------------------------------
# comparisons


@dataclass
class ComparisonReport:
    """Monte-Carlo estimate against a deterministic prediction."""

    name: str
    estimate: float
    stderr: float
    prediction: float
    samples: int

    @property
    def z(self) -> float:
        if self.stderr == 0:
            return 0.0 if self.estimate == self.prediction else math.inf
        return (self.estimate - self.prediction) / self.stderr

    def passed(self, k: float = 3.0) -> bool:
        return abs(self.z) <= k

    def as_row(self) -> dict:
        return {"name": self.name, "estimate": self.estimate, "stderr": self.stderr,
                "prediction": self.prediction, "z": self.z, "samples": self.samples}


def _report(name, values: np.ndarray, prediction: float) -> ComparisonReport:
    values = np.asarray(values, dtype=float)
    n = values.size
    return ComparisonReport(name, float(values.mean()), float(values.std(ddof=1) / math.sqrt(n)),
                            float(prediction), n)


def _pair(cfg: LatticeConfig, f: np.ndarray, u: np.ndarray) -> np.ndarray:
    axes = tuple(range(u.ndim - f.ndim, u.ndim))
    return np.sum(u * f, axis=axes) * cfg.dV


def _collect_statistics(cfg: LatticeConfig, phi, stat: Callable[[np.ndarray], dict]) -> dict:
    chunks: dict[str, list] = {}
    for start in range(0, cfg.samples, cfg.batch):
        stop = min(cfg.samples, start + cfg.batch)
        fields = sample_fields(cfg, start, stop, phi)
        for k, v in stat(fields).items():
            chunks.setdefault(k, []).append(v)
    return {k: np.concatenate(v) for k, v in chunks.items()}


def validate_covariance(cfg: LatticeConfig, f1, f2, ops: LatticeOperators | None = None):
    """Empirical ``Cov(φ̂(f1), φ̂(f2))`` against ``Q(f1⊗f2)``."""
    ops = ops or lattice_operators(cfg)
    f1, f2 = cfg.grid_function(f1), cfg.grid_function(f2)
    pred = float(f1.reshape(-1) @ ops.Q @ f2.reshape(-1)) * cfg.dV**2
    stats = _collect_statistics(cfg, None, lambda u: {"c": _pair(cfg, f1, u) * _pair(cfg, f2, u)})
    return _report("covariance", stats["c"], pred)


def validate_first_order(cfg: LatticeConfig, phi, lam: float, f,
                         ops: LatticeOperators | None = None) -> list[ComparisonReport]:
    """``E[φ̂(f) - λ(P_χ⊛φ̂³)(f)]`` against ``Γ_·Q(F_0 + λF_1)`` at ``φ``.

    Returns reports for the order-0 part, the order-1 coefficient and the
    combined first-order expectation.
    """
    ops = ops or lattice_operators(cfg)
    phi_g, f = cfg.grid_function(phi), cfg.grid_function(f)
    G = C.gamma_series(1, d=None)
    p0 = evaluate_sum(G[0], ops, phi_g, [f])
    p1 = evaluate_sum(G[1], ops, phi_g, [f])

    def stat(u):
        a = _pair(cfg, f, u)
        b = -_pair(cfg, f, apply_parametrix(cfg, u**3))
        return {"o0": a, "o1": b, "all": a + lam * b}

    s = _collect_statistics(cfg, phi_g, stat)
    return [_report("first-order: order 0", s["o0"], p0),
            _report("first-order: order 1", s["o1"], p1),
            _report("first-order: combined", s["all"], p0 + lam * p1)]


def validate_two_point(cfg: LatticeConfig, phi, lam: float, f1, f2,
                       ops: LatticeOperators | None = None) -> list[ComparisonReport]:
    """Second moment of the first-order solution against ω₂ to order 1."""
    ops = ops or lattice_operators(cfg)
    phi_g = cfg.grid_function(phi)
    f1, f2 = cfg.grid_function(f1), cfg.grid_function(f2)
    w = C.two_point_correlation(1, d=None)
    p0 = evaluate_sum(w[0], ops, phi_g, [f1, f2])
    p1 = evaluate_sum(w[1], ops, phi_g, [f1, f2])

    def stat(u):
        pu3 = apply_parametrix(cfg, u**3)
        a1, a2 = _pair(cfg, f1, u), _pair(cfg, f2, u)
        b1, b2 = -_pair(cfg, f1, pu3), -_pair(cfg, f2, pu3)
        o0 = a1 * a2
        o1 = a1 * b2 + b1 * a2
        return {"o0": o0, "o1": o1, "all": o0 + lam * o1}

    s = _collect_statistics(cfg, phi_g, stat)
    return [_report("two-point: order 0", s["o0"], p0),
            _report("two-point: order 1", s["o1"], p1),
            _report("two-point: combined", s["all"], p0 + lam * p1)]


def default_tests(cfg: LatticeConfig):
    """Smooth test functions and shift used by the CLI and acceptance run."""
    L = cfg.nx * cfg.dx
    T = cfg.nt * cfg.dt

    def f1(t, x):
        return np.exp(-((t - 0.7 * T) / (0.2 * T)) ** 2 - ((x - 0.45 * L) / (0.08 * L)) ** 2)

    def f2(t, x):
        return np.exp(-((t - 0.8 * T) / (0.15 * T)) ** 2 - ((x - 0.55 * L) / (0.08 * L)) ** 2)

    def phi(t, x):
        return 0.8 * np.cos(2 * np.pi * x / L) + 0.3

    return f1, f2, phi
