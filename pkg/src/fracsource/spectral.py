"""Spectral data of the Riemann-Liouville operator on (0, 1) with Dirichlet conditions.

The eigenvalues are the zeros of ``E_{b,b}``; with ``b`` the spatial order,
``X_n(x) = x**(b-1) E_{b,b}(lam_n x**b)`` and the adjoint functions are
``Y_n(x) = conj(X_n(1 - x))``.  Only representatives with ``Im lam >= 0``
are stored; the mode ``-n`` is the complex conjugate.  A zero on the real
axis is its own conjugate, so it is a single mode.

Zeros are located by

1. a sign-change scan of ``E_{b,b}`` along the negative real axis,
2. Newton iteration from the large-``|z|`` zero asymptotics
   ``w = log(b / Gamma(-b)) - (1 + b) log w + 2 pi i k``, ``z = w**b``,

and the list is certified complete by an argument-principle count over a
half disk slightly extended below the real axis.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, special

from .errors import NonConvergent, ZeroFindingFailed
from .mlf import (
    DEFAULT_OPTIONS,
    EvalOptions,
    MLParams,
    eval_ml,
    eval_ml_derivative,
    kernel_primitives,
    ml_phase,
)
from .quadrature import adaptive_graded

__all__ = [
    "EigenPair",
    "EigenSystem",
    "AdmissibleSourceConfig",
    "WindingCertificate",
    "find_eigenvalues",
    "eval_eigenfunction",
    "mode_pairing",
    "pairing_matrix",
    "project_source",
    "synthesize",
    "winding_number",
]

NEWTON_MAX_ITER = 50


@dataclass(frozen=True)
class EigenPair:
    """One eigenvalue with the data needed for modal expansions.

    Attributes
    ----------
    index : int
        Signed mode index; negative indices denote conjugates.
    lam : complex
        The zero of ``E_{b,b}``.
    pairing : complex
        ``<X_n, Y_n>``.
    deriv_at_lambda : complex
        ``E_{b,b-1}(lam)``.
    residual : float
        ``|E_{b,b}(lam)|``.
    """

    index: int
    lam: complex
    pairing: complex
    deriv_at_lambda: complex
    residual: float

    @property
    def is_real(self) -> bool:
        return self.lam.imag == 0.0

    def conj(self) -> "EigenPair":
        return EigenPair(-self.index, self.lam.conjugate(), self.pairing.conjugate(),
                         self.deriv_at_lambda.conjugate(), self.residual)


@dataclass(frozen=True)
class WindingCertificate:
    """Argument-principle count of zeros inside a closed contour."""

    radius: float
    depth: float
    winding: float
    expected: int
    samples: int

    @property
    def ok(self) -> bool:
        return abs(self.winding - self.expected) < 0.1


@dataclass(frozen=True)
class EigenSystem:
    beta: float
    pairs: tuple
    zero_tol: float = 1e-10
    certificate: WindingCertificate | None = None

    def __post_init__(self):
        if not 1.0 < self.beta <= 2.0:
            raise ValueError(f"beta must lie in (1, 2], got {self.beta}")

    def __len__(self):
        return len(self.pairs)

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([p.lam for p in self.pairs])

    @property
    def pairings(self) -> np.ndarray:
        return np.array([p.pairing for p in self.pairs])

    @property
    def derivs(self) -> np.ndarray:
        return np.array([p.deriv_at_lambda for p in self.pairs])

    @property
    def real_mask(self) -> np.ndarray:
        return np.array([p.is_real for p in self.pairs], dtype=bool)

    def mode_weights(self, n_modes=None) -> np.ndarray:
        """Multiplicity in ``sum_n c_n = sum_{n>0} w_n Re c_n`` for conjugate-symmetric terms."""
        w = np.where(self.real_mask, 1.0, 2.0)
        return w if n_modes is None else w[:n_modes]

    def pair_index(self) -> np.ndarray:
        """Index ``|n|`` in the symmetric labelling ``n = +-1, +-2, ...`` of all zeros.

        A conjugate pair shares one label and so do two consecutive real
        zeros, which makes ``|lam| / index**beta`` tend to a constant.
        """
        return np.cumsum(np.where(self.real_mask, 0.5, 1.0))

    def pair(self, n: int) -> EigenPair:
        if n == 0 or abs(n) > len(self.pairs):
            raise IndexError(f"mode {n} not in system with {len(self.pairs)} modes")
        p = self.pairs[abs(n) - 1]
        return p if n > 0 else p.conj()

    def signed_indices(self, n_modes=None) -> list:
        """All distinct modes ``n, -n`` with ``|n| <= n_modes``; real modes appear once."""
        out = []
        for p in self.pairs[:n_modes]:
            out.append(p.index)
            if not p.is_real:
                out.append(-p.index)
        return out

    def truncated(self, n_modes: int) -> "EigenSystem":
        return EigenSystem(self.beta, self.pairs[:n_modes], self.zero_tol, self.certificate)

    # serialisation
    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "zero_tol": self.zero_tol,
            "pairs": [
                {
                    "n": p.index,
                    "lambda_re": p.lam.real,
                    "lambda_im": p.lam.imag,
                    "pairing_re": p.pairing.real,
                    "pairing_im": p.pairing.imag,
                    "deriv_re": p.deriv_at_lambda.real,
                    "deriv_im": p.deriv_at_lambda.imag,
                    "residual": p.residual,
                }
                for p in self.pairs
            ],
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "EigenSystem":
        pairs = tuple(
            EigenPair(int(q["n"]), complex(q["lambda_re"], q["lambda_im"]),
                      complex(q["pairing_re"], q["pairing_im"]),
                      complex(q["deriv_re"], q["deriv_im"]), float(q["residual"]))
            for q in d["pairs"]
        )
        return cls(float(d["beta"]), pairs, float(d.get("zero_tol", 1e-10)))

    @classmethod
    def from_json(cls, text_or_path) -> "EigenSystem":
        p = Path(str(text_or_path))
        text = p.read_text() if len(str(text_or_path)) < 4096 and p.exists() else text_or_path
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class AdmissibleSourceConfig:
    """Bound ``|f_n| n**decay_exponent <= M`` on modal coefficients."""

    M: float = 1.0
    decay_exponent: float = 0.0

    def __post_init__(self):
        if not self.M > 0:
            raise ValueError("M must be positive")
        if not self.decay_exponent >= 0:
            raise ValueError("decay_exponent must be non-negative")

    def contains(self, coeffs) -> bool:
        c = np.abs(np.asarray(coeffs))
        n = np.arange(1, c.size + 1)
        return bool(np.all(c * n ** self.decay_exponent <= self.M))


# ---------------------------------------------------------------------------
# zero finding

def _newton(beta, z0, opts, tol=4 * np.finfo(float).eps):
    p = MLParams(beta, beta)
    z = complex(z0)
    r0 = 4 * abs(z) + 10
    for _ in range(NEWTON_MAX_ITER):
        if abs(z) > r0:
            return None
        try:
            f = eval_ml(p, z, opts)
            d = eval_ml_derivative(p, z, opts)
        except NonConvergent:
            return None
        if d == 0 or not np.isfinite(d):
            return None
        step = f / d
        z -= step
        if abs(step) <= tol * abs(z):
            return z
    return None


def _real_zeros(beta, xmax, opts, dw=0.05):
    """Zeros of E_{b,b} on [-xmax, 0) from sign changes sampled uniformly in ``|x|**(1/b)``."""
    p = MLParams(beta, beta)
    w = np.arange(dw, xmax ** (1 / beta) + dw, dw)
    x = -(w ** beta)
    v = eval_ml(p, x, opts).real
    out = []
    for i in np.nonzero(np.sign(v[:-1]) * np.sign(v[1:]) < 0)[0]:
        r = optimize.brentq(lambda t: eval_ml(p, t, opts).real, x[i + 1], x[i],
                            xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=200)
        out.append(complex(r, 0.0))
    return out


def _asymptotic_guesses(beta, kmax):
    """Large-|z| approximations of the zeros in the upper half plane."""
    rg = special.rgamma(-beta)
    if rg == 0.0 or not np.isfinite(rg):
        return []
    c = np.log(complex(beta * rg))
    out = []
    for k in range(1, kmax + 1):
        w = c + 2j * np.pi * k
        for _ in range(60):
            w = c - (1 + beta) * np.log(w) + 2j * np.pi * k
        out.append(np.exp(beta * np.log(w)))
    return out


def _dedupe(zs, rtol=1e-9):
    out = []
    for z in sorted(zs, key=lambda z: (abs(z), z.imag)):
        if all(abs(z - y) > rtol * max(abs(z), 1.0) for y in out):
            out.append(z)
    return out


def _contour(radius, depth, n_arc, beta, dw=0.02):
    """Boundary of the half disk ``|z| < radius, Im z > -depth``, counter-clockwise.

    The bottom edge runs just below the negative axis where real zeros sit,
    so it is sampled uniformly in ``|x|**(1/beta)`` at a step finer than the
    real-axis scan; two close real zeros inside one step would cancel.
    """
    d = math.asin(min(depth / radius, 0.5))
    th = np.linspace(-d, math.pi + d, n_arc)
    arc = radius * np.exp(1j * th)
    xb = radius * math.cos(d)
    wneg = np.arange(xb ** (1 / beta), 0.0, -dw)
    neg = -(wneg ** beta)
    pos = np.linspace(0.0, xb, 400)
    seg = np.concatenate([neg, pos]) - 1j * depth
    return np.concatenate([arc, seg[1:]])


def winding_number(func: Callable, path: np.ndarray, max_points=400_000, max_step=np.pi / 4):
    """Total winding of ``func`` around 0 along a closed polygonal ``path``.

    Segments are bisected until the argument changes by less than ``max_step``
    and the modulus by less than a factor ``e`` between neighbouring samples.  Returns ``(winding, n_samples)``.
    """
    z = np.asarray(path, dtype=complex)
    if z[0] != z[-1]:
        z = np.append(z, z[0])
    f = func(z)
    while True:
        ratio = f[1:] / f[:-1]
        # a dip in |f| between samples signals a nearby zero even when the
        # sampled phases happen to line up
        bad = np.nonzero((np.abs(np.angle(ratio)) > max_step) | (np.abs(np.log(np.abs(ratio))) > 1.0))[0]
        if bad.size == 0:
            break
        if z.size + bad.size > max_points:
            raise ZeroFindingFailed("winding count did not resolve; contour too close to a zero")
        mid = (z[bad] + z[bad + 1]) / 2
        fm = func(mid)
        z = np.insert(z, bad + 1, mid)
        f = np.insert(f, bad + 1, fm)
    if np.any(f == 0) or not np.all(np.isfinite(f)):
        raise ZeroFindingFailed("function vanishes or overflows on the contour")
    return float(np.sum(np.angle(f[1:] / f[:-1])) / (2 * np.pi)), int(z.size)


def _certify(beta, zeros, n_modes, opts):
    mods = np.abs(zeros)
    radius = (mods[n_modes - 1] + mods[n_modes]) / 2
    cplx = [z.imag for z in zeros if z.imag > 0]
    reals = sorted(z.real for z in zeros if z.imag == 0)
    depth = 0.5
    if cplx:
        depth = min(depth, 0.5 * min(cplx))
    gaps = [abs(mods[n_modes] - mods[n_modes - 1]) / 2]
    if len(reals) > 1:
        gaps.append(float(np.min(np.diff(reals))) / 2)
    depth = min(depth, 0.5 * min(gaps))
    # the phase only needs a few digits
    popts = replace(opts, rel_tol=max(opts.rel_tol, 1e-6))
    w = radius ** (1 / beta)
    path = _contour(radius, depth, int(max(400, 32 * w)), beta)
    wind, ns = winding_number(lambda z: ml_phase(beta, beta, z, popts), path)
    return WindingCertificate(float(radius), float(depth), wind, n_modes, ns)


def find_eigenvalues(beta: float, n_modes: int, zero_tol: float = 1e-10,
                     opts: EvalOptions | None = None, certify: bool = True) -> EigenSystem:
    """First ``n_modes`` zeros of ``E_{beta,beta}`` in the closed upper half plane.

    Parameters
    ----------
    beta : float
        Spatial order in (1, 2].
    n_modes : int
        Number of upper-half-plane representatives, ordered by modulus.
    zero_tol : float
        Bound on ``|E_{beta,beta}(lam)|`` at accepted zeros.
    certify : bool
        Run the argument-principle count (the default).

    Raises
    ------
    ZeroFindingFailed
        If Newton fails, a zero violates the sector condition, or the winding
        count disagrees with the list.
    """
    if n_modes < 1:
        raise ValueError("n_modes must be >= 1")
    opts = opts or DEFAULT_OPTIONS
    beta = float(beta)
    p = MLParams(beta, beta)

    # grow the search radius until it holds n_modes + 1 zeros
    radius = (math.pi * (n_modes + 1)) ** beta
    kmax = n_modes + 4
    polished: dict = {}
    for attempt in range(8):
        cands = _real_zeros(beta, radius, opts)
        guesses = _asymptotic_guesses(beta, kmax)
        for k, g in enumerate(guesses):
            if abs(g) > 1.2 * radius:
                break
            if k not in polished:
                polished[k] = _newton(beta, g, opts)
            z = polished[k]
            if z is None:
                continue
            if abs(z.imag) <= 1e-10 * abs(z):
                # collapsed onto the axis; the real scan owns these
                continue
            cands.append(complex(z.real, abs(z.imag)))
        # beyond the scanned real range the list may have gaps
        zeros = [z for z in _dedupe(cands) if abs(z) <= radius]
        if len(zeros) > n_modes:
            break
        radius *= 1.6
        kmax = int(kmax * 1.6) + 2
    else:
        raise ZeroFindingFailed(f"could not locate {n_modes + 1} zeros of E_{{{beta},{beta}}}")

    cert = None
    if certify:
        cert = _certify(beta, zeros, n_modes, opts)
        if not cert.ok:
            raise ZeroFindingFailed(
                f"winding count {cert.winding:.3f} inside |z| < {cert.radius:.4g} "
                f"but {n_modes} zeros were found")

    lams = np.array(zeros[:n_modes])
    res = np.abs(eval_ml(p, lams, opts))
    dv = eval_ml(MLParams(beta, beta - 1), lams, opts)
    pairs = []
    for i, (lam, r, d) in enumerate(zip(lams, res, dv), start=1):
        lam = complex(lam)
        if r > zero_tol:
            raise ZeroFindingFailed(f"residual {r:.2e} at lambda_{i} = {lam} exceeds {zero_tol}")
        # at beta = 2 the zeros sit on the boundary ray arg = pi
        if not (abs(np.angle(lam)) > beta * math.pi / 2 or (beta == 2.0 and lam.imag == 0)):
            raise ZeroFindingFailed(f"lambda_{i} = {lam} lies outside the sector |arg z| > beta pi / 2")
        if not abs(d) > zero_tol:
            raise ZeroFindingFailed(f"E_{{beta,beta-1}} nearly vanishes at lambda_{i}")
        pairs.append(EigenPair(i, lam, complex(d / (beta * lam)), complex(d), float(r)))
    return EigenSystem(beta, tuple(pairs), zero_tol, cert)


# ---------------------------------------------------------------------------
# eigenfunctions and pairings

def _xfun(beta, lam, x, opts):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        pre = np.where(x > 0, x ** (beta - 1), 0.0)
    return pre * eval_ml(MLParams(beta, beta), lam * x ** beta, opts)


def eval_eigenfunction(system: EigenSystem, n: int, kind: str, x, opts=None):
    """``X_n(x)`` (``kind="primal"``) or ``Y_n(x)`` (``kind="adjoint"``)."""
    lam = system.pair(n).lam
    x = np.asarray(x, dtype=float)
    if kind == "primal":
        out = _xfun(system.beta, lam, x, opts)
    elif kind == "adjoint":
        out = _xfun(system.beta, lam.conjugate(), 1.0 - x, opts)
    else:
        raise ValueError(f"kind must be 'primal' or 'adjoint', not {kind!r}")
    return complex(out) if out.ndim == 0 else out


def pairing_matrix(system: EigenSystem, rows: Sequence[int], cols: Sequence[int],
                   abs_tol=1e-10, rel_tol=1e-10, opts=None) -> np.ndarray:
    """``<X_n, Y_m> = int X_n(x) X_m(1-x) dx`` for ``n`` in rows, ``m`` in cols, by quadrature."""
    beta = system.beta
    lr = np.array([system.pair(n).lam for n in rows])
    lc = np.array([system.pair(m).lam for m in cols])

    def integrand(x):
        A = np.array([_xfun(beta, l, x, opts) for l in lr])
        B = np.array([_xfun(beta, l, 1 - x, opts) for l in lc])
        return A[:, None, :] * B[None, :, :]

    return adaptive_graded(integrand, left_power=beta - 1, right_power=beta - 1,
                           abs_tol=abs_tol, rel_tol=rel_tol)


def mode_pairing(system: EigenSystem, n: int, method: str = "closed_form", opts=None) -> complex:
    """``<X_n, Y_n>``, either ``E_{b,b-1}(lam)/(b lam)`` or by quadrature."""
    if method == "closed_form":
        return system.pair(n).pairing
    if method == "quadrature":
        return complex(pairing_matrix(system, [n], [n], opts=opts)[0, 0])
    raise ValueError(f"unknown method {method!r}")


def project_source(system: EigenSystem, f, n_modes: int | None = None,
                   abs_tol=1e-12, rel_tol=1e-10, opts=None) -> np.ndarray:
    """Modal coefficients ``f_n = <f, Y_n> / <X_n, Y_n>`` for ``n = 1..n_modes``.

    ``f`` is a callable (adaptive graded quadrature) or a pair
    ``(x_nodes, values)`` whose piecewise-linear interpolant is integrated
    exactly against the adjoint functions.
    Coefficients of the conjugate modes are ``f_{-n} = conj(f_n)``.
    """
    n_modes = len(system) if n_modes is None else n_modes
    if n_modes > len(system):
        raise ValueError(f"system holds only {len(system)} modes")
    beta = system.beta
    lams = system.lambdas[:n_modes]
    if not callable(f):
        ip = np.array([_linear_product(beta, l, *f, opts) for l in lams])
        return ip / system.pairings[:n_modes]

    def integrand(x):
        fx = np.asarray(f(x), dtype=float)
        # conj(Y_n(x)) = X_n(1 - x)
        return np.array([_xfun(beta, l, 1 - x, opts) for l in lams]) * fx

    ip = adaptive_graded(integrand, right_power=beta - 1, abs_tol=abs_tol, rel_tol=rel_tol)
    return ip / system.pairings[:n_modes]


def _linear_product(beta, lam, xs, vs, opts=None):
    """``int_0^1 f(x) X(1 - x) dx`` for the piecewise-linear interpolant of ``(xs, vs)``.

    Exact up to evaluation error: with ``s = 1 - x`` each cell contributes
    ``f_j dP0 + slope_j (dP1 - s_j dP0)`` in terms of the kernel primitives.
    """
    xs = np.asarray(xs, dtype=float)
    vs = np.asarray(vs, dtype=float)
    if xs[0] > 0 or xs[-1] < 1 or np.any(np.diff(xs) <= 0):
        raise ValueError("nodal samples must cover [0, 1] on increasing nodes")
    s = (1.0 - xs)[::-1]
    fv = vs[::-1]
    P0, P1 = kernel_primitives(beta, lam, s, opts)
    d0 = np.diff(P0)
    d1 = np.diff(P1)
    slope = np.diff(fv) / np.diff(s)
    return complex(np.sum(fv[:-1] * d0 + slope * (d1 - s[:-1] * d0)))


def synthesize(system: EigenSystem, coeffs, x, opts=None) -> np.ndarray:
    """Real partial sum ``sum_{|n| <= N} f_n X_n(x)`` from upper-mode coefficients."""
    coeffs = np.asarray(coeffs)
    x = np.asarray(x, dtype=float)
    w = system.mode_weights(coeffs.size)
    out = np.zeros(x.shape)
    for c, wt, p in zip(coeffs, w, system.pairs):
        out += wt * np.real(c * _xfun(system.beta, p.lam, x, opts))
    return out
