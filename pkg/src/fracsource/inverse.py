"""Source reconstruction from the flux ``u_x(1, t)``.

Two methods:

* Tikhonov regularisation of the discrete observation operator ``A``,
  ``f = (A^T A + nu I)^{-1} A^T z``, with ``nu`` fixed or chosen by the
  discrepancy principle (L-curve when the noise level is zero);
* for ``alpha = beta`` the bi-orthogonal modal formula: deconvolve the
  intensity, then ``f_n = <K^{-1} phi, Y_n> / (<X_n, Y_n> E_{b,b-1}(lambda_n))``.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import linalg

from .csvio import write_csv
from .errors import IllConditioned, OrderMismatch, SelectionFailed, SingularIntensity
from .forward import (
    ObservationTrace,
    ProblemSpec,
    SpatialMesh,
    TimeGrid,
    _Marcher,
    assemble_fractional_stiffness,
)
from .spectral import EigenSystem, _linear_product, _xfun, synthesize

__all__ = [
    "ForwardMap",
    "TikhonovConfig",
    "ReconstructionResult",
    "TimeConvolutionOperator",
    "build_forward_matrix",
    "add_noise",
    "tikhonov_solve",
    "choose_nu",
    "build_time_convolution",
    "reconstruct_modes",
    "nodal_l2_error",
]


@dataclass(frozen=True)
class ForwardMap:
    """``A[k, j]``: flux at ``t_k`` caused by the ``j``-th interior hat source."""

    matrix: np.ndarray
    mesh: SpatialMesh
    grid: TimeGrid
    spec: ProblemSpec
    key: str = ""

    @property
    def shape(self):
        return self.matrix.shape


def _map_key(spec, mesh, grid) -> str:
    h = hashlib.sha256()
    h.update(repr((spec.alpha, spec.beta, mesh.n_cells, mesh.grading_exponent,
                   grid.n_steps, grid.tau)).encode())
    h.update(np.ascontiguousarray(spec.lam(grid.times)).tobytes())
    return h.hexdigest()[:20]


def build_forward_matrix(spec: ProblemSpec, mesh: SpatialMesh, grid: TimeGrid,
                         cache_dir=None) -> ForwardMap:
    """Observation operator of the discrete scheme.

    The scheme is linear and time invariant, so ``phi_k = sum_l lam_l v_{k-l}^T M f``
    where ``v_q`` is the impulse response of the flux functional, obtained
    by one adjoint sweep.  Every column equals the flux of a full forward
    solve with that hat as source.
    """
    key = _map_key(spec, mesh, grid)
    path = Path(cache_dir) / f"forward_map_{key}.npy" if cache_dir is not None else None
    if path is not None and path.exists():
        return ForwardMap(np.load(path), mesh, grid, spec, key)

    S, M = assemble_fractional_stiffness(spec.beta, mesh)
    x = mesh.nodes
    m = mesh.n_cells - 1
    K = grid.n_steps
    ell = np.zeros(m)
    ell[-1] = -1.0 / (x[-1] - x[-2])  # flux = (u_N - u_{N-1}) / h_N with u_N = 0
    loads = np.zeros((K + 1, m))
    loads[1] = ell
    V = _Marcher(S, M, spec.alpha, grid).march(loads, trans=1)   # V[q + 1] = v_q
    W = V @ M
    lam = spec.lam(grid.times).copy()
    lam[0] = 0.0  # the load at t_0 never enters
    # A[k] = sum_{j=1}^{k} lam_{k+1-j} W[j]
    A = np.empty((K + 1, m))
    for i in range(m):
        A[:, i] = np.convolve(W[:, i], lam)[1 : K + 2]
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.save(path, A)
    return ForwardMap(A, mesh, grid, spec, key)


def add_noise(trace: ObservationTrace, delta: float, seed: int,
              mode: str = "relative") -> ObservationTrace:
    """``z (1 + eta)`` with ``eta ~ U[-delta, delta]`` per sample.

    ``mode="absolute"`` adds ``eta * max|z|`` instead.
    """
    if delta < 0:
        raise ValueError("delta must be non-negative")
    if mode not in ("relative", "absolute"):
        raise ValueError(f"unknown noise mode {mode!r}")
    z = trace.samples
    if delta == 0:
        return ObservationTrace(z.copy(), trace.grid, "noisy", 0.0, seed)
    eta = np.random.default_rng(seed).uniform(-delta, delta, z.size)
    if mode == "relative":
        noisy = z * (1 + eta)
    else:
        noisy = z + eta * np.max(np.abs(z))
        noisy[0] = 0.0
    return ObservationTrace(noisy, trace.grid, "noisy", float(delta), seed)


@dataclass(frozen=True)
class TikhonovConfig:
    """Fixed ``nu`` or ``"auto"`` with a geometric sweep ``nu_min..nu_max``."""

    nu: float | str = "auto"
    nu_min: float = 1e-12
    nu_max: float = 1e-2
    nu_count: int = 40
    delta_estimate: float = 0.0
    margin: float = 1.01
    noise_mode: str = "relative"

    def __post_init__(self):
        if self.nu != "auto" and not (isinstance(self.nu, (int, float)) and self.nu > 0):
            raise ValueError("nu must be positive or 'auto'")
        if not 0 < self.nu_min < self.nu_max:
            raise ValueError("need 0 < nu_min < nu_max")
        if self.nu_count < 3:
            raise ValueError("nu_count must be at least 3")
        if self.delta_estimate < 0:
            raise ValueError("delta_estimate must be non-negative")
        if self.noise_mode not in ("relative", "absolute"):
            raise ValueError(f"unknown noise mode {self.noise_mode!r}")

    @property
    def grid(self) -> np.ndarray:
        return np.geomspace(self.nu_min, self.nu_max, self.nu_count)

    def noise_floor(self, z) -> float:
        """Expected ``||z_delta - z||`` for uniform noise of level ``delta_estimate``.

        A uniform variable on ``[-d, d]`` has RMS ``d / sqrt(3)``.
        """
        z = np.asarray(z, dtype=float)
        d = self.delta_estimate / math.sqrt(3.0)
        if self.noise_mode == "relative":
            return d * float(np.linalg.norm(z))
        return d * float(np.max(np.abs(z))) * math.sqrt(max(z.size - 1, 0))


@dataclass
class ReconstructionResult:
    """Reconstructed source on the mesh nodes.

    ``f_hat`` holds values at all mesh nodes ``x`` (boundary values zero).
    ``modal`` carries the coefficients for the spectral method.
    """

    x: np.ndarray
    f_hat: np.ndarray
    method: str
    nu_used: float | None = None
    residual_norm: float = 0.0
    error_vs_truth: float | None = None
    modal: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.residual_norm < 0:
            raise ValueError("residual norm is non-negative")

    def to_csv(self, path, f_true=None) -> None:
        cols, head = [self.x], ["x"]
        if f_true is not None:
            cols.append(f_true)
            head.append("f_true")
        cols.append(self.f_hat)
        head.append("f_hat")
        write_csv(path, head, cols)


def nodal_l2_error(f_hat, f_true, mesh: SpatialMesh) -> float:
    """Relative L2 error on interior nodes, weighted by the hat masses."""
    w = (mesh.nodes[2:] - mesh.nodes[:-2]) / 2
    a = np.asarray(f_hat, dtype=float)[1:-1]
    b = np.asarray(f_true, dtype=float)[1:-1]
    return math.sqrt(np.sum(w * (a - b) ** 2) / np.sum(w * b**2))


def _as_matrix(fmap):
    return fmap.matrix if isinstance(fmap, ForwardMap) else np.asarray(fmap, dtype=float)


def _as_data(z):
    return z.samples if isinstance(z, ObservationTrace) else np.asarray(z, dtype=float)


def _sweep(A, z, nus):
    """Residual and solution norms of the Tikhonov family over ``nus`` via one SVD."""
    U, s, Vt = linalg.svd(A, full_matrices=False)
    beta = U.T @ z
    perp = max(float(z @ z - beta @ beta), 0.0)
    res = np.empty(nus.size)
    sol = np.empty(nus.size)
    for i, nu in enumerate(nus):
        res[i] = math.sqrt(float(np.sum((nu / (s**2 + nu) * beta) ** 2)) + perp)
        sol[i] = math.sqrt(float(np.sum((s / (s**2 + nu) * beta) ** 2)))
    return res, sol


def _lcurve_corner(res, sol, nus):
    r, e, t = np.log(res), np.log(sol), np.log(nus)
    dr, de = np.gradient(r, t), np.gradient(e, t)
    ddr, dde = np.gradient(dr, t), np.gradient(de, t)
    kappa = (dr * dde - ddr * de) / np.maximum((dr**2 + de**2) ** 1.5, 1e-300)
    kappa[[0, -1]] = -np.inf
    if not np.isfinite(kappa).any():
        raise SelectionFailed("L-curve has no finite curvature on the grid")
    return int(np.nanargmax(np.where(np.isfinite(kappa), kappa, -np.inf)))


def choose_nu(fmap, z, config: TikhonovConfig) -> float:
    """Largest grid ``nu`` with ``||A f_nu - z|| <= margin * noise_floor``.

    When the smallest residual on the grid already exceeds the declared
    floor, that residual takes its place.

    With ``delta_estimate = 0``: the smallest grid value when the data are
    already fitted to ``1e-6 ||z||`` there, otherwise the L-curve corner.
    """
    A = _as_matrix(fmap)
    zz = _as_data(z)
    nus = config.grid
    res, sol = _sweep(A, zz, nus)
    if not np.all(np.isfinite(res)):
        raise SelectionFailed("non-finite residuals in the nu sweep")
    if np.all(np.diff(res) < -1e-12 * res[:-1]):
        raise SelectionFailed("residual decreases with nu over the whole grid")
    if config.delta_estimate > 0:
        floor = config.noise_floor(zz)
        if res.min() > floor:
            # data noisier than declared (model error adds to it): use the attained floor
            warnings.warn("residual never reaches the declared noise level; using the attained floor",
                          UserWarning, stacklevel=2)
            floor = float(res.min())
        ok = np.nonzero(res <= config.margin * floor)[0]
        return float(nus[ok[-1]])
    if res[0] <= 1e-6 * np.linalg.norm(zz):
        return float(nus[0])
    return float(nus[_lcurve_corner(res, sol, nus)])


def tikhonov_solve(fmap, z, config: TikhonovConfig | None = None, f_true=None,
                   mesh: SpatialMesh | None = None) -> ReconstructionResult:
    """``f = (A^T A + nu I)^{-1} A^T z`` by Cholesky.

    ``f_true`` (values at all mesh nodes) enables the error record.
    """
    config = config or TikhonovConfig()
    A = _as_matrix(fmap)
    zz = _as_data(z)
    if A.shape[0] != zz.size:
        raise ValueError(f"A has {A.shape[0]} rows, data has {zz.size} samples")
    nu = choose_nu(A, zz, config) if config.nu == "auto" else float(config.nu)
    B = A.T @ A + nu * np.eye(A.shape[1])
    cond = np.linalg.cond(B)
    if not cond < 1 / np.finfo(float).eps:
        raise IllConditioned(f"condition number {cond:.2e} of the normal matrix; raise nu")
    f = linalg.cho_solve(linalg.cho_factor(B), A.T @ zz)
    residual = float(np.linalg.norm(A @ f - zz))
    mesh = mesh or (fmap.mesh if isinstance(fmap, ForwardMap) else None)
    if mesh is not None and f.size == mesh.n_cells - 1:
        x = mesh.nodes
        full = np.concatenate([[0.0], f, [0.0]])
    else:
        x = np.arange(f.size, dtype=float)
        full = f
    err = None
    if f_true is not None and mesh is not None:
        err = nodal_l2_error(full, f_true, mesh)
    return ReconstructionResult(x, full, "tikhonov", nu, residual, err,
                                meta={"condition": float(cond)})


@dataclass(frozen=True)
class TimeConvolutionOperator:
    """Trapezoid discretisation of ``(K phi)(t) = int_0^t lam(t - s) phi(s) ds``.

    The operator is Toeplitz apart from the end weights, so only the
    samples ``lam(t_k)`` are stored; ``matrix`` is built on request.
    """

    grid: TimeGrid
    lam_samples: np.ndarray

    @cached_property
    def matrix(self) -> np.ndarray:
        lam, tau = self.lam_samples, self.grid.tau
        n = lam.size
        k, j = np.indices((n, n))
        K = np.where(j <= k, lam[np.clip(k - j, 0, None)], 0.0) * tau
        K[:, 0] *= 0.5
        K[np.arange(n), np.arange(n)] *= 0.5
        K[0, 0] = 0.0
        return K

    def apply(self, phi) -> np.ndarray:
        phi = np.asarray(phi, dtype=float)
        lam, tau = self.lam_samples, self.grid.tau
        full = np.convolve(lam, phi)[: lam.size]
        # trapezoid: halve both end points of every partial sum
        out = tau * (full - 0.5 * lam * phi[0] - 0.5 * lam[0] * phi)
        out[0] = 0.0
        return out

    def solve(self, rhs) -> np.ndarray:
        """Solution with ``phi(0) = 0`` of ``K phi = rhs`` at ``t_1..t_M`` (forward substitution)."""
        rhs = np.asarray(rhs)
        lam, tau = self.lam_samples, self.grid.tau
        n = lam.size
        if rhs.shape[0] != n:
            raise ValueError(f"expected {n} samples, got {rhs.shape[0]}")
        out = np.zeros(rhs.shape, dtype=np.result_type(rhs, float))
        rev = lam[::-1]
        d = 0.5 * tau * lam[0]
        for k in range(1, n):
            # sum_{j=1}^{k-1} lam_{k-j} out_j
            acc = rev[n - k : n - 1] @ out[1:k] if k > 1 else 0.0
            out[k] = (rhs[k] - tau * acc) / d
        return out


def build_time_convolution(intensity, grid: TimeGrid) -> TimeConvolutionOperator:
    """Trapezoid weights ``K[k, j] = w_kj tau lam(t_k - t_j)``, lower triangular.

    ``intensity`` is a callable or a :class:`ProblemSpec`.
    """
    lam_fn = intensity.lam if isinstance(intensity, ProblemSpec) else intensity
    lam = np.asarray(lam_fn(grid.times), dtype=float)
    if abs(lam[0]) <= 1e-12 * max(np.max(np.abs(lam)), 1e-300):
        raise SingularIntensity("lam(0) = 0: the deconvolution is singular")
    lam.setflags(write=False)
    return TimeConvolutionOperator(grid, lam)


def reconstruct_modes(phi: ObservationTrace, system: EigenSystem, K: TimeConvolutionOperator,
                      n_modes: int, alpha: float, delta: float = 0.0, mesh: SpatialMesh | None = None,
                      f_true=None) -> ReconstructionResult:
    """Modal reconstruction from the flux for ``alpha = beta``.

    With ``psi = K^{-1} phi`` on [0, 1], ``psi(t) = sum_m f_m E_{b,b-1}(lambda_m) X_m(t)``
    because the Duhamel kernel equals ``X_m`` when the orders coincide.
    Pairing with ``Y_n(t) = conj X_n(1 - t)`` isolates mode ``n``.  The
    piecewise-linear ``psi`` is paired exactly with the kernel primitives.

    Modes are kept while the denominator ``|<X_n, Y_n> E_{b,b-1}(lambda_n)|``
    stays above ``delta ||phi||_{L2(0,1)}``; the rest are set to zero.
    ``residual_norm`` is the L2(0, 1) misfit of the kept modes against ``phi``.
    """
    if abs(alpha - system.beta) > 1e-12:
        raise OrderMismatch(f"modal reconstruction needs alpha = beta (got {alpha}, {system.beta})")
    if n_modes > len(system):
        raise ValueError(f"system holds only {len(system)} modes")
    g = phi.grid
    if g.T < 1 - 1e-12:
        raise ValueError("the observation must cover [0, 1]")
    M = round(1.0 / g.tau)
    if K.grid.n_steps != M or abs(K.grid.tau - g.tau) > 1e-15:
        raise ValueError("convolution operator must live on the data grid over [0, 1]")
    t = g.times[: M + 1]
    psi = K.solve(phi.samples[: M + 1])
    beta = system.beta
    denom = system.pairings[:n_modes] * system.derivs[:n_modes]
    wq = np.full(M + 1, g.tau)
    wq[[0, -1]] *= 0.5
    phi_norm = math.sqrt(float(np.sum(wq * phi.samples[: M + 1] ** 2)))
    # contiguous cut: stop at the first denominator under the noise floor
    keep = np.logical_and.accumulate(np.abs(denom) >= delta * phi_norm)
    coeffs = np.zeros(n_modes, dtype=complex)
    for i in np.nonzero(keep)[0]:
        coeffs[i] = _linear_product(beta, system.lambdas[i], t, psi) / denom[i]
    real = system.real_mask[:n_modes]
    scale = max(float(np.linalg.norm(coeffs)), np.finfo(float).tiny)
    imag_res = float(np.max(np.abs(coeffs[real].imag), initial=0.0)) / scale
    # data misfit of the kept modes
    w = system.mode_weights(n_modes)
    psi_hat = np.zeros(t.size)
    for i in np.nonzero(keep)[0]:
        psi_hat += w[i] * np.real(coeffs[i] * system.derivs[i] * _xfun(beta, system.lambdas[i], t, None))
    misfit = K.apply(psi_hat) - phi.samples[: M + 1]
    residual = math.sqrt(float(np.sum(wq * misfit**2)))
    if mesh is not None:
        x = mesh.nodes
    else:
        x = np.linspace(0.0, 1.0, 201)
    f_hat = synthesize(system, coeffs, x)
    f_hat[[0, -1]] = 0.0
    err = None
    if f_true is not None and mesh is not None:
        err = nodal_l2_error(f_hat, f_true, mesh)
    return ReconstructionResult(x, f_hat, "spectral_modes", None, residual, err, coeffs,
                                meta={"modes_kept": int(keep.sum()), "imag_residual": imag_res})
