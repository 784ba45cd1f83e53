"""Forward problem ``d_t^a u - D_x^b u = lam(t) f(x)`` on (0, 1).

Homogeneous Dirichlet data and zero initial data throughout.  Two
independent routes are provided:

* ``solve_spectral`` sums the eigenfunction expansion with Duhamel time
  coefficients,
* ``assemble_fractional_stiffness`` + ``time_march_discrete`` use
  piecewise-linear finite elements on a graded mesh and Grunwald-Letnikov
  convolution quadrature in time.

The observation is the flux ``phi(t) = u_x(1, t)``.
"""

from __future__ import annotations

import math
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import integrate, linalg, special

from .csvio import write_csv
from .errors import QuadratureFailure, SingularSystem, TruncationWarning
from .mlf import MLParams, eval_ml, kernel_primitives
from .spectral import EigenSystem, _xfun, project_source

__all__ = [
    "INTENSITIES",
    "SOURCES",
    "ProblemSpec",
    "SpatialMesh",
    "TimeGrid",
    "ForwardSolution",
    "ObservationTrace",
    "duhamel_coefficient",
    "duhamel_grid",
    "solve_spectral",
    "stationary_solution",
    "observe_flux_spectral",
    "assemble_fractional_stiffness",
    "gl_weights",
    "time_march_discrete",
    "observe_flux_discrete",
    "solve_discrete",
    "relative_l2",
]

INTENSITIES: dict[str, Callable] = {
    "exp2": lambda t: 2.0 * np.exp(t),
    "sin5": lambda t: 5.0 * np.sin(t),
}

SOURCES: dict[str, Callable] = {
    "poly1": lambda x: x * (1 - x),
    "poly2": lambda x: x**2 * (1 - x),
    "poly4": lambda x: x**4 * (1 - x),
}


def _as_function(obj, name):
    """Callable, registry name, or ``(nodes, values)`` samples turned into a linear interpolant."""
    if callable(obj):
        return obj
    if isinstance(obj, str):
        table = INTENSITIES if name == "intensity" else SOURCES
        if obj not in table:
            raise ValueError(f"unknown {name} {obj!r}; known: {sorted(table)}")
        return table[obj]
    nodes, values = (np.asarray(v, dtype=float) for v in obj)
    if nodes.ndim != 1 or nodes.shape != values.shape or np.any(np.diff(nodes) <= 0):
        raise ValueError(f"{name} samples must be increasing nodes with matching values")
    return lambda s: np.interp(s, nodes, values)


@dataclass(frozen=True)
class ProblemSpec:
    """Orders, horizon, intensity ``lam(t)`` and source ``f(x)``.

    ``intensity`` and ``source`` are callables or ``(nodes, values)``
    pairs.  Nodal sources keep their samples so the spectral projection
    can integrate the interpolant exactly.
    """

    alpha: float
    beta: float
    intensity: object
    source: object
    T: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 1.0 < v <= 2.0:
                raise ValueError(f"{name} must lie in (1, 2], got {v}")
        if not self.T > 0:
            raise ValueError("T must be positive")
        lam0 = float(self.lam(0.0))
        if lam0 == 0.0:
            warnings.warn("intensity vanishes at t = 0; uniqueness and the spectral "
                          "reconstruction need lam(0) != 0", UserWarning, stacklevel=2)

    @cached_property
    def _lam(self):
        return _as_function(self.intensity, "intensity")

    @cached_property
    def _f(self):
        return _as_function(self.source, "source")

    def lam(self, t):
        return np.asarray(self._lam(np.asarray(t, dtype=float)), dtype=float)

    def f(self, x):
        return np.asarray(self._f(np.asarray(x, dtype=float)), dtype=float)

    @property
    def projectable_source(self):
        """What ``project_source`` should receive for this source."""
        if isinstance(self.source, tuple):
            return self.source
        return self.f

    def with_source(self, source) -> "ProblemSpec":
        return ProblemSpec(self.alpha, self.beta, self.intensity, source, self.T)


@dataclass(frozen=True)
class SpatialMesh:
    """Graded nodes ``x_i = (i / N)**g``, clustered near ``x = 0``."""

    n_cells: int
    grading_exponent: float = 4.0

    def __post_init__(self):
        if self.n_cells < 2:
            raise ValueError("need at least two cells")
        if self.grading_exponent < 1:
            raise ValueError("grading exponent must be >= 1")

    @classmethod
    def from_h(cls, h: float, grading_exponent: float = 4.0) -> "SpatialMesh":
        n = round(1.0 / h)
        if abs(n * h - 1.0) > 1e-9:
            raise ValueError(f"h = {h} does not divide [0, 1] into whole cells")
        return cls(n, grading_exponent)

    @cached_property
    def nodes(self) -> np.ndarray:
        x = (np.arange(self.n_cells + 1) / self.n_cells) ** self.grading_exponent
        x[-1] = 1.0
        return x

    @property
    def interior(self) -> np.ndarray:
        return self.nodes[1:-1]

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.nodes)

    def trapezoid_weights(self) -> np.ndarray:
        h = self.widths
        w = np.zeros(self.n_cells + 1)
        w[:-1] += h / 2
        w[1:] += h / 2
        return w


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = k tau``, ``k = 0..n_steps``."""

    n_steps: int
    tau: float

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.n_steps < 1:
            raise ValueError("need at least one step")

    @classmethod
    def over(cls, T: float, tau: float) -> "TimeGrid":
        n = round(T / tau)
        if abs(n * tau - T) > 1e-9 * T:
            raise ValueError(f"tau = {tau} does not divide T = {T}")
        return cls(n, tau)

    @property
    def T(self) -> float:
        return self.n_steps * self.tau

    @cached_property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.tau

    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.n_steps + 1, self.tau)
        w[[0, -1]] = self.tau / 2
        return w

    def subsample(self, ratio: int) -> "TimeGrid":
        if self.n_steps % ratio:
            raise ValueError(f"ratio {ratio} does not divide {self.n_steps} steps")
        return TimeGrid(self.n_steps // ratio, self.tau * ratio)


@dataclass(frozen=True)
class ForwardSolution:
    """Nodal field ``values[k, i] = u(x_i, t_k)``."""

    values: np.ndarray
    route: str
    mesh: SpatialMesh
    grid: TimeGrid
    meta: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        X, Tt = np.meshgrid(self.mesh.nodes, self.grid.times)
        write_csv(path, ["x", "t", "u"], [X, Tt, self.values])


@dataclass(frozen=True)
class ObservationTrace:
    """Flux samples ``phi(t_k)`` with their provenance."""

    samples: np.ndarray
    grid: TimeGrid
    provenance: str = "clean"
    delta: float | None = None
    seed: int | None = None

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.shape != (self.grid.n_steps + 1,):
            raise ValueError(f"expected {self.grid.n_steps + 1} samples, got {s.shape}")
        if abs(s[0]) > 1e-10 * max(1.0, np.max(np.abs(s))):
            raise ValueError("flux must vanish at t = 0")
        object.__setattr__(self, "samples", s)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def subsample(self, ratio: int) -> "ObservationTrace":
        return ObservationTrace(self.samples[::ratio], self.grid.subsample(ratio),
                                self.provenance, self.delta, self.seed)

    def to_csv(self, path) -> None:
        write_csv(path, ["t", "phi"], [self.times, self.samples])


def relative_l2(u, ref, mesh: SpatialMesh | None = None, grid: TimeGrid | None = None) -> float:
    """``||u - ref|| / ||ref||`` with trapezoid weights on whichever axes are given.

    Arrays are ``(time, space)`` when both grids are given.
    """
    u = np.asarray(u, dtype=float)
    ref = np.asarray(ref, dtype=float)
    w = np.ones_like(ref)
    if grid is not None and mesh is not None:
        w = grid.trapezoid_weights()[:, None] * mesh.trapezoid_weights()[None, :]
    elif grid is not None:
        w = grid.trapezoid_weights()
    elif mesh is not None:
        w = mesh.trapezoid_weights()
    den = math.sqrt(float(np.sum(w * ref**2)))
    return math.sqrt(float(np.sum(w * (u - ref) ** 2))) / den


# ---------------------------------------------------------------------------
# spectral route

def duhamel_coefficient(alpha: float, lambda_n: complex, intensity: Callable, t: float,
                        quad_tol: float = 1e-10) -> complex:
    """``int_0^t lam(t - s) s**(a-1) E_{a,a}(lambda_n s**a) ds`` for a single ``t``.

    The power factor goes into the quadrature weight, so the remaining
    integrand is smooth.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return 0j
    p = MLParams(alpha, alpha)

    def g(s):
        return complex(intensity(t - s)) * complex(eval_ml(p, lambda_n * s**alpha))

    parts = []
    for take in (np.real, np.imag):
        val, err = integrate.quad(lambda s: float(take(g(s))), 0.0, t, weight="alg",
                                  wvar=(alpha - 1.0, 0.0), epsabs=0.0, epsrel=quad_tol,
                                  limit=400)
        parts.append((val, err))
    val = complex(parts[0][0], parts[1][0])
    err = math.hypot(parts[0][1], parts[1][1])
    if not np.isfinite(val) or err > max(10 * quad_tol * abs(val), 1e-300):
        raise QuadratureFailure(f"Duhamel quadrature error {err:.3e} for value {abs(val):.3e}")
    return val


def duhamel_grid(alpha: float, lambdas, lam_samples, grid: TimeGrid, opts=None) -> np.ndarray:
    """Duhamel coefficients of every mode at every grid time, shape ``(modes, K + 1)``.

    The intensity is interpolated linearly between grid samples; the kernel
    ``s**(a-1) E_{a,a}(lambda s**a)`` is integrated exactly against each
    linear piece via ``kernel_primitives``.
    """
    lambdas = np.atleast_1d(np.asarray(lambdas, dtype=complex))
    L = np.asarray(lam_samples, dtype=float)
    K, tau = grid.n_steps, grid.tau
    t = grid.times
    out = np.zeros((lambdas.size, K + 1), dtype=complex)
    for m, lam in enumerate(lambdas):
        P0, P1 = kernel_primitives(alpha, lam, t, opts)
        d0 = np.diff(P0)
        d1 = np.diff(P1) - t[:-1] * d0
        a = d0 - d1 / tau
        b = d1 / tau
        # c_k = sum_{j<k} a_j L_{k-j} + b_j L_{k-1-j}
        ca = np.convolve(a, L)[: K + 1]
        ca[:K] -= a * L[0]
        cb = np.convolve(b, L)[:K]
        out[m, 1:] = ca[1:] + cb
    return out


def _modal_setup(spec, system, n_modes):
    if abs(system.beta - spec.beta) > 1e-14:
        raise ValueError(f"eigensystem has beta={system.beta}, problem has beta={spec.beta}")
    if n_modes > len(system):
        raise ValueError(f"system holds only {len(system)} modes, asked for {n_modes}")
    return system.lambdas[:n_modes], system.mode_weights(n_modes)


def stationary_solution(beta: float, f, x, derivative_at_one: bool = False):
    """Solution of ``D_x^b w = f``, ``w(0) = w(1) = 0``: ``w = I^b f - (I^b f)(1) x**(b-1)``.

    ``f`` is a callable (adaptive quadrature with the power weight) or
    ``(nodes, values)``, whose linear interpolant is integrated exactly.
    With ``derivative_at_one`` the pair ``(w, w'(1))`` is returned.
    """
    x = np.asarray(x, dtype=float)
    pts = np.append(x.ravel(), 1.0)
    if callable(f):
        I_b = np.array([_frac_integral_quad(f, beta, xi) for xi in pts])
        dI1 = _frac_integral_quad(f, beta - 1.0, 1.0)
    else:
        I_b = _frac_integral_linear(*f, beta, pts)
        dI1 = float(_frac_integral_linear(*f, beta - 1.0, np.array([1.0]))[0])
    w = I_b[:-1] - I_b[-1] * np.where(x.ravel() > 0, x.ravel(), 0.0) ** (beta - 1)
    w = w.reshape(x.shape)
    if derivative_at_one:
        return w, dI1 - (beta - 1) * I_b[-1]
    return w


def _frac_integral_quad(f, order, x, tol=1e-12):
    if x <= 0:
        return 0.0
    val, err = integrate.quad(lambda y: float(f(y)), 0.0, x, weight="alg",
                              wvar=(0.0, order - 1.0), epsabs=1e-15, epsrel=tol, limit=200)
    if err > max(1e3 * tol * abs(val), 1e-13):
        raise QuadratureFailure(f"fractional integral error {err:.2e}")
    return val / math.gamma(order)


def _frac_integral_linear(nodes, values, order, x):
    """``I^order`` of the piecewise-linear interpolant, via ``(y - c)_+`` kinks."""
    nodes = np.asarray(nodes, dtype=float)
    values = np.asarray(values, dtype=float)
    slopes = np.diff(values) / np.diff(nodes)
    kinks = np.diff(slopes)
    c = nodes[1:-1]
    g1, g2 = math.gamma(order + 1), math.gamma(order + 2)
    out = values[0] * x**order / g1 + slopes[0] * x ** (order + 1) / g2
    d = np.clip(x[:, None] - c[None, :], 0.0, None)
    return out + (d ** (order + 1) / g2) @ kinks


_TABLES: "OrderedDict[tuple, tuple]" = OrderedDict()


def _time_tables(alpha, lams, L, grid, accelerate, opts):
    """Duhamel table, optionally with the quasi-static part ``-lam(t) / lambda_n`` removed.

    Tables depend on the intensity and the spectrum only, so sources that
    share them reuse one evaluation.
    """
    key = ("t", alpha, lams.tobytes(), L.tobytes(), grid, opts)
    C = _TABLES.get(key)
    if C is None:
        C = _remember(key, duhamel_grid(alpha, lams, L, grid, opts))
    if accelerate:
        C = C + L[None, :] / lams[:, None]
        # c_n(0) = 0 exactly; the split form would leave the tail of w's expansion
        C[:, 0] = 0.0
    return C


def _space_table(beta, lams, mesh, opts):
    key = ("x", beta, lams.tobytes(), mesh, opts)
    hit = _TABLES.get(key)
    if hit is None:
        X = np.array([_xfun(beta, l, mesh.nodes, opts) for l in lams])
        X[:, [0, -1]] = 0.0  # X_n(0) = X_n(1) = 0; evaluation noise only
        hit = _remember(key, X)
    return hit


def _remember(key, value):
    value.flags.writeable = False
    _TABLES[key] = value
    while len(_TABLES) > 8:
        _TABLES.popitem(last=False)
    return value


def solve_spectral(spec: ProblemSpec, system: EigenSystem, mesh: SpatialMesh, grid: TimeGrid,
                   n_modes: int = 40, coeffs=None, tail_band: int | None = None,
                   accelerate: bool = True, opts=None) -> ForwardSolution:
    """Truncated eigenfunction expansion evaluated on ``mesh x grid``.

    Conjugate pairs are summed as ``2 Re``; real modes once.  A
    ``TruncationWarning`` is issued when the last ``tail_band`` modes
    carry more than 1e-6 of the field norm.

    The raw series converges slowly near ``x = 0`` because every Duhamel
    coefficient tends to ``-lam(t) / lambda_n``.  With ``accelerate`` that
    part is summed in closed form: ``sum_n (f_n / lambda_n) X_n = w``
    solves ``D_x^b w = f`` with Dirichlet data, so

        u = -lam(t) w(x) + sum_n (c_n(t) + lam(t) / lambda_n) f_n X_n(x)

    and only the fast-decaying remainder is truncated.
    """
    lams, wts = _modal_setup(spec, system, n_modes)
    if coeffs is None:
        coeffs = project_source(system, spec.projectable_source, n_modes)
    coeffs = np.asarray(coeffs, dtype=complex)[:n_modes]
    L = spec.lam(grid.times)
    C = _time_tables(spec.alpha, lams, L, grid, accelerate, opts)
    base = 0.0
    if accelerate:
        base = -np.outer(L, stationary_solution(spec.beta, spec.projectable_source, mesh.nodes))
        base[:, [0, -1]] = 0.0
        base[0] = 0.0
    X = _space_table(spec.beta, lams, mesh, opts)
    terms = (wts * coeffs)[:, None] * C
    U = base + np.real(terms.T @ X)

    band = tail_band or max(1, n_modes // 10)
    tail = np.real(terms[-band:].T @ X[-band:])
    norm = float(np.linalg.norm(U))
    tail_frac = float(np.linalg.norm(tail)) / norm if norm > 0 else 0.0
    if tail_frac > 1e-6:
        warnings.warn(f"last {band} modes carry {tail_frac:.2e} of the field norm",
                      TruncationWarning, stacklevel=2)
    real = system.real_mask[:n_modes]
    imag = np.imag(terms[real].T @ X[real]) if real.any() else np.zeros_like(U)
    imag_frac = float(np.linalg.norm(imag)) / norm if norm > 0 else 0.0
    meta = {"n_modes": n_modes, "coeffs": coeffs, "tail_fraction": tail_frac,
            "imag_residual": imag_frac, "accelerated": accelerate}
    return ForwardSolution(U, "spectral", mesh, grid, meta)


def observe_flux_spectral(spec: ProblemSpec, system: EigenSystem, modal_coeffs, grid: TimeGrid,
                          accelerate: bool = False, opts=None) -> ObservationTrace:
    """``phi(t) = sum_n c_n(t) f_n E_{b,b-1}(lambda_n)`` over the given modes.

    ``accelerate`` splits off ``-lam(t) w'(1)`` as in ``solve_spectral``;
    it needs ``spec.source`` to match ``modal_coeffs``.
    """
    coeffs = np.asarray(modal_coeffs, dtype=complex)
    lams, wts = _modal_setup(spec, system, coeffs.size)
    d = system.derivs[: coeffs.size]
    L = spec.lam(grid.times)
    C = _time_tables(spec.alpha, lams, L, grid, accelerate, opts)
    base = 0.0
    if accelerate:
        _, dw1 = stationary_solution(spec.beta, spec.projectable_source, np.array([]), True)
        base = -L * dw1
        base[0] = 0.0
    phi = base + np.real((wts * coeffs * d) @ C)
    return ObservationTrace(phi, grid)


# ---------------------------------------------------------------------------
# finite elements

_GAUSS_ORDER = 8


def assemble_fractional_stiffness(beta: float, mesh: SpatialMesh):
    """Stiffness ``S`` and mass ``M`` for interior hat functions.

    ``S_ij = -int (I^{2-b} phi_j')(x) phi_i'(x) dx``.  For hats whose
    supports are close, the double integral is a mixed difference of
    ``H(y) = y_+**(3-b) / Gamma(4-b)`` over cell corners (exact).  For
    well separated supports that difference cancels badly, so after two
    integrations by parts ``S_ij = int int phi_i(x) phi_j(y) k''(x - y)``
    with ``k''(s) = s**(-1-b) / Gamma(-b)`` is integrated by tensor Gauss
    rules instead.  ``S_ij = 0`` when ``phi_i`` lies left of ``phi_j``.

    Returns
    -------
    S, M : ndarray
        Dense ``(N-1, N-1)`` matrices.
    """
    if not 1.0 < beta <= 2.0:
        raise ValueError(f"beta must lie in (1, 2], got {beta}")
    x = mesh.nodes
    h = mesh.widths
    N = mesh.n_cells

    # cell-pair integrals of k(x - y), x in cell P, y in cell Q
    with np.errstate(invalid="ignore"):
        d = x[:, None] - x[None, :]
        H = np.where(d > 0, d, 0.0) ** (3 - beta) / math.gamma(4 - beta)
    C = H[1:, :-1] - H[:-1, :-1] - H[1:, 1:] + H[:-1, 1:]
    # hat derivative on cell P for interior node i: +1/h on cell i-1, -1/h on cell i
    CD = C[:, :-1] / h[:-1] - C[:, 1:] / h[1:]
    S = -(CD[:-1, :] / h[:-1, None] - CD[1:, :] / h[1:, None])

    lo, hi = x[:-2], x[2:]
    width = hi - lo
    gap = lo[:, None] - hi[None, :]
    far = gap >= np.maximum(width[:, None], width[None, :])
    if far.any():
        S[far] = _far_stiffness(beta, x, h, N)[far]

    M = np.diag((h[:-1] + h[1:]) / 3) + np.diag(h[1:-1] / 6, 1) + np.diag(h[1:-1] / 6, -1)
    return S, M


def _far_stiffness(beta, x, h, N, block=64):
    """``int int phi_i(x) phi_j(y) k''(x - y)`` for all interior pairs; valid only when separated."""
    c2 = special.rgamma(-beta)
    g, gw = np.polynomial.legendre.leggauss(_GAUSS_ORDER)
    r = (g + 1) / 2
    gw = gw / 2
    pts = x[:-1, None] + h[:, None] * r[None, :]                 # (N, m)
    # weights times local shape functions (falling, rising)
    shape = np.stack([1 - r, r])                                  # (2, m)
    W = h[:, None, None] * (gw[None, None, :] * shape[None])      # (N, 2, m)
    ypts = pts.ravel()
    G = np.zeros((2, 2, N, N))
    for start in range(0, N, block):
        sl = slice(start, min(N, start + block))
        s = pts[sl].ravel()[:, None] - ypts[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            k = np.where(s > 0, s, np.inf) ** (-1 - beta) * c2
        k = k.reshape(sl.stop - sl.start, _GAUSS_ORDER, N, _GAUSS_ORDER)
        G[:, :, sl, :] = np.einsum("Pap,PpQq,Qbq->abPQ", W[sl], k, W, optimize=True)
    # node i gets the rising piece of cell i-1 and the falling piece of cell i
    S = G[1, 1, :-1, :-1] + G[1, 0, :-1, 1:] + G[0, 1, 1:, :-1] + G[0, 0, 1:, 1:]
    return S


def gl_weights(alpha: float, n: int) -> np.ndarray:
    """Grunwald-Letnikov weights ``(-1)**j binom(alpha, j)``, ``j = 0..n``."""
    w = np.empty(n + 1)
    w[0] = 1.0
    for j in range(1, n + 1):
        w[j] = w[j - 1] * (1 - (alpha + 1) / j)
    return w


class _Marcher:
    """Factorised ``w_0 tau**-a M - S`` shared by forward and adjoint sweeps."""

    def __init__(self, S, M, alpha, grid):
        self.M = np.asarray(M, dtype=float)
        self.c = grid.tau ** (-alpha)
        self.w = gl_weights(alpha, grid.n_steps)
        self.K = grid.n_steps
        A = self.w[0] * self.c * self.M - np.asarray(S, dtype=float)
        with warnings.catch_warnings():
            warnings.simplefilter("error", linalg.LinAlgWarning)
            try:
                self.lu = linalg.lu_factor(A, check_finite=True)
            except (linalg.LinAlgError, linalg.LinAlgWarning, ValueError) as exc:
                raise SingularSystem(f"time-step matrix is singular: {exc}") from exc
        piv = np.abs(np.diag(self.lu[0]))
        if not np.all(np.isfinite(piv)) or piv.min() <= np.finfo(float).eps * piv.max():
            raise SingularSystem("time-step matrix is numerically singular")

    def march(self, loads, trans=0):
        """``U[k]`` for ``k = 0..K`` given ``loads[k]`` (row 0 ignored, ``U[0] = 0``)."""
        loads = np.asarray(loads, dtype=float)
        shape = loads.shape[1:]
        U = np.zeros((loads.shape[0], int(np.prod(shape))))
        wr = self.w[::-1].copy()
        K = self.K
        for k in range(1, K + 1):
            # sum_{j=1}^{k} w_j U[k-j] with U[0..k-1] in natural order
            hist = (wr[K - k : K] @ U[:k]).reshape(shape)
            rhs = loads[k] - self.c * (self.M @ hist)
            # the mass matrix is symmetric, so the adjoint sweep uses it unchanged
            U[k] = linalg.lu_solve(self.lu, rhs, trans=trans).ravel()
        return U.reshape(loads.shape)


def time_march_discrete(spec: ProblemSpec, S, M, mesh: SpatialMesh, grid: TimeGrid,
                        f_nodal=None) -> ForwardSolution:
    """Convolution-quadrature time stepping of the semi-discrete system.

    Solves ``(w_0 tau**-a M - S) u^k = lam(t_k) M f - tau**-a M sum_{j>=1} w_j u^{k-j}``.
    ``f_nodal`` defaults to the source at interior nodes and may carry
    several sources as columns.
    """
    if f_nodal is None:
        f_nodal = spec.f(mesh.interior)
    f_nodal = np.asarray(f_nodal, dtype=float)
    if f_nodal.shape[0] != mesh.n_cells - 1:
        raise ValueError("f_nodal must hold one value per interior node")
    lam = spec.lam(grid.times)
    Mf = M @ f_nodal
    loads = lam.reshape((-1,) + (1,) * Mf.ndim) * Mf[None]
    U = _Marcher(S, M, spec.alpha, grid).march(loads)
    full = np.zeros((grid.n_steps + 1, mesh.n_cells + 1) + f_nodal.shape[1:])
    full[:, 1:-1] = U
    return ForwardSolution(full, "discrete", mesh, grid, {"f_nodal": f_nodal})


def solve_discrete(spec: ProblemSpec, mesh: SpatialMesh, grid: TimeGrid, f_nodal=None,
                   matrices=None) -> ForwardSolution:
    S, M = matrices if matrices is not None else assemble_fractional_stiffness(spec.beta, mesh)
    return time_march_discrete(spec, S, M, mesh, grid, f_nodal)


def observe_flux_discrete(sol: ForwardSolution, mesh: SpatialMesh | None = None) -> ObservationTrace:
    """Derivative of the finite-element solution on the last cell."""
    mesh = mesh or sol.mesh
    x = mesh.nodes
    u = sol.values
    phi = (u[:, -1] - u[:, -2]) / (x[-1] - x[-2])
    return ObservationTrace(phi, sol.grid)
