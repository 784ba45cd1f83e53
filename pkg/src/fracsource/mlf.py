"""Two-parameter Mittag-Leffler function for complex arguments.

Three evaluation routes are combined:

* the Taylor series ``sum z**k / Gamma(a*k + b)`` in double precision,
* the same series in extended precision (MPFR through gmpy2) when the double pass
  loses too many digits to cancellation,
* the large-``|z|`` expansion: the residues ``(1/a) s**(1-b) exp(s)`` at the
  roots ``s**a = z`` inside the Hankel contour, followed by the algebraic
  tail ``-sum z**-k / Gamma(b - a*k)``.

Every value returned has passed an a-posteriori error estimate against
``EvalOptions.rel_tol``; otherwise :class:`NonConvergent` is raised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import gmpy2
import numpy as np
from scipy import special

from .errors import NonConvergent

__all__ = [
    "MLParams",
    "EvalOptions",
    "reciprocal_gamma",
    "eval_ml",
    "eval_ml_derivative",
    "ml",
    "ml_phase",
    "kernel_primitives",
]

_EPS = np.finfo(float).eps
# beyond |z|**(1/a) = 60 the series needs hundreds of terms at high precision
_SERIES_REACH = 60.0


@dataclass(frozen=True)
class MLParams:
    """Indices ``(a, b)`` of ``E_{a,b}``."""

    a: float
    b: float

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"Mittag-Leffler index a must be positive, got {self.a}")


@dataclass(frozen=True)
class EvalOptions:
    rel_tol: float = 1e-12
    max_series_terms: int = 2000
    asymptotic_terms: int = 10
    crossover_radius: float = 12.0

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.max_series_terms < 1:
            raise ValueError("max_series_terms must be >= 1")
        if self.asymptotic_terms < 1:
            raise ValueError("asymptotic_terms must be >= 1")
        if not self.crossover_radius > 0:
            raise ValueError("crossover_radius must be positive")


DEFAULT_OPTIONS = EvalOptions()


def reciprocal_gamma(x):
    """``1/Gamma(x)`` for real or complex ``x``; exactly zero at the poles."""
    return special.rgamma(x)


# ---------------------------------------------------------------------------
# coefficients


def _series_coeff_logs(a, b, kmax, shift):
    """log-magnitude, sign and zero mask of ``(k+shift choose 1)/Gamma(a(k+shift)+b)``.

    ``shift=0`` gives the coefficients of ``E_{a,b}``; ``shift=1`` those of its
    derivative, ``(k+1)/Gamma(a(k+1)+b)``.
    """
    k = np.arange(kmax + 1, dtype=float)
    x = a * (k + shift) + b
    pole = (x <= 0) & (x == np.round(x))
    with np.errstate(all="ignore"):
        logc = -special.gammaln(np.where(pole, 1.0, x))
        sign = np.where(pole, 0.0, special.gammasgn(np.where(pole, 1.0, x)))
    if shift:
        logc = logc + np.log(k + shift)
    return logc, sign


@lru_cache(maxsize=64)
def _coeff_table(a, b, shift, kmax):
    logc, sign = _series_coeff_logs(a, b, kmax, shift)
    with np.errstate(divide="ignore"):
        # poles of Gamma give vanishing coefficients
        logc = np.where(sign != 0, logc, -np.inf)
    logc.flags.writeable = False
    sign.flags.writeable = False
    return logc, sign


def _series_double(a, b, z, shift, opts):
    """Double precision series; returns (value, error estimate, abs sum).

    Terms are summed up to the point where they drop 46 e-folds below the
    largest one.  The error estimate covers rounding in the powers, in the
    Gamma arguments and in the sum.
    """
    z = np.asarray(z, dtype=complex).ravel()
    K = opts.max_series_terms
    logc, sign = _coeff_table(a, b, shift, K)
    k = np.arange(K + 1)
    out = np.zeros(z.shape, dtype=complex)
    err = np.full(z.shape, np.inf)
    absum = np.zeros(z.shape)
    r = np.abs(z)
    zero = r == 0
    out[zero] = sign[0] * math.exp(logc[0]) if sign[0] != 0 else 0.0
    err[zero] = 0.0
    absum[zero] = abs(out[zero][0]) if zero.any() else 0.0
    idx = np.nonzero(~zero)[0]
    for c0 in range(0, idx.size, 128):
        sel = idx[c0:c0 + 128]
        L = k[None, :] * np.log(r[sel])[:, None] + logc[None, :]
        peak = L.max(axis=1)
        keep = L >= (peak - 46.0)[:, None]
        last = K - np.argmax(keep[:, ::-1], axis=1)
        n = int(last.max()) + 1
        Lk = np.where(keep[:, :n], L[:, :n], -np.inf)
        mag = np.exp(Lk)
        T = sign[None, :n] * mag * np.exp(1j * np.outer(np.angle(z[sel]), k[:n]))
        out[sel] = T.sum(axis=1)
        absum[sel] = mag.sum(axis=1)
        # rounding of a*k + b perturbs 1/Gamma by ~ x log(x) eps
        x = a * (k[:n] + shift) + b
        sens = k[:n] + 2 + np.abs(x * np.log(np.maximum(np.abs(x), 1e-300)))
        e = 4 * _EPS * (mag * sens[None, :]).sum(axis=1)
        # the last kept term must be past the peak and not at the cap
        ok = last < K
        err[sel] = np.where(ok, e, np.inf)
    return out, err, absum


_COEFF_CACHE: dict = {}


def _mp_coeffs(a, b, shift, prec, kmax):
    """Series coefficients as MPFR numbers of at least ``prec`` bits.

    Coefficients computed at a higher precision are reused as they are;
    arithmetic in a lower-precision context rounds them on use.
    """
    key = (a, b, shift)
    hit = _COEFF_CACHE.get(key)
    if hit is not None and hit[0] >= prec and len(hit[1]) > kmax:
        return hit[1]
    if hit is not None and hit[0] >= prec:
        prec, start, cs = hit[0], len(hit[1]), list(hit[1])
    else:
        # round up generously so that neighbouring requests share one table
        prec = max(prec, 128) if hit is None else max(prec, 2 * hit[0])
        start, cs = 0, []
    with gmpy2.context(gmpy2.get_context(), precision=prec):
        am, bm = gmpy2.mpfr(a), gmpy2.mpfr(b)
        for k in range(start, max(kmax + 1, 2 * start, 64)):
            x = am * (k + shift) + bm
            if x <= 0 and gmpy2.is_integer(x):
                c = gmpy2.mpfr(0)
            else:
                c = 1 / gmpy2.gamma(x)
            if shift:
                c = c * (k + shift)
            cs.append(c)
    _COEFF_CACHE[key] = (prec, cs)
    return cs


def _terms_needed(a, b, r, shift, log_floor, kcap):
    """Smallest K past the peak such that all later terms are below exp(log_floor)."""
    logc, _ = _coeff_table(a, b, shift, kcap)
    logt = np.arange(kcap + 1) * math.log(max(r, 1e-300)) + logc
    above = np.nonzero(logt >= log_floor)[0]
    if above.size == 0:
        return 3
    K = int(above[-1]) + 3
    if K >= kcap:
        return None
    return K


def _series_mp(a, b, z, shift, absum, opts):
    """Extended precision (MPFR) Horner evaluation at the points ``z``.

    ``absum`` estimates ``sum |t_k|``; the working precision is chosen so
    that cancellation down to the returned value still leaves ``rel_tol``.
    """
    z = np.asarray(z, dtype=complex)
    out = np.empty(z.shape, dtype=complex)
    tol_bits = math.ceil(-math.log2(opts.rel_tol))
    mag = np.maximum(absum, 1e-300)
    # first guess assumes |E| is not far below 2**-40 * sum|t_k|
    prec = np.ceil(np.maximum(np.log2(mag), 0) + tol_bits + 40).astype(int)
    pending = np.arange(z.size)
    for _ in range(5):
        if pending.size == 0:
            break
        prec[pending] = 32 * np.ceil(prec[pending] / 32).astype(int)
        retry = []
        for p in np.unique(prec[pending]):
            grp = pending[prec[pending] == p]
            Ks = []
            for i in grp:
                K = _terms_needed(a, b, abs(z[i]), shift,
                                  math.log(mag[i]) - p * math.log(2) - 5,
                                  opts.max_series_terms)
                if K is None:
                    raise NonConvergent(
                        f"series for E_{{{a},{b}}}({z[i]}) needs more than "
                        f"{opts.max_series_terms} terms")
                Ks.append(K)
            K = max(Ks)
            cs = _mp_coeffs(a, b, shift, int(p), K)
            with gmpy2.context(gmpy2.get_context(), precision=int(p)):
                zz = np.empty(grp.size, dtype=object)
                for j, i in enumerate(grp):
                    zz[j] = gmpy2.mpc(complex(z[i]))
                acc = np.full(grp.size, cs[K], dtype=object)
                for k in range(K - 1, -1, -1):
                    acc = acc * zz + cs[k]
                vals = np.array([complex(v) for v in acc])
            out[grp] = vals
            lost = np.log2(mag[grp]) - np.log2(np.maximum(np.abs(vals), 1e-300))
            bad = lost + tol_bits + 8 > p
            for i, lb in zip(grp[bad], lost[bad]):
                # past the cap the value is a numerical zero; keep the absolute accuracy
                cap = math.log2(mag[i]) + tol_bits + 100
                if p < cap:
                    prec[i] = int(min(lb + tol_bits + 40, cap))
                    retry.append(i)
        pending = np.array(retry, dtype=int)
    return out


def _asymptotic(a, b, z, opts, log_shift=None, with_parts=False):
    """Large-|z| expansion; returns (value, error estimate).

    ``log_shift`` (array) multiplies the result by ``exp(-log_shift)``; used to
    keep exponentially large values finite when only the phase matters.
    """
    z = np.asarray(z, dtype=complex)
    r = np.abs(z)
    theta = np.angle(z)
    w = np.power(r, 1.0 / a)
    if log_shift is None:
        log_shift = np.zeros(z.shape)
    expo = np.zeros(z.shape, dtype=complex)
    mmax = int(math.ceil(a / 2)) + 1
    for m in range(-mmax, mmax + 1):
        phi = (theta + 2 * math.pi * m) / a
        inside = (phi > -math.pi) & (phi <= math.pi)
        if not inside.any():
            continue
        logs = np.log(np.where(w > 0, w, 1.0)) + 1j * phi
        s = w * np.exp(1j * phi)
        with np.errstate(over="ignore", invalid="ignore"):
            term = np.exp((1 - b) * logs + s - log_shift) / a
        expo += np.where(inside, term, 0)
    # algebraic tail with truncation estimate from the following nonzero terms
    alg = np.zeros(z.shape, dtype=complex)
    N = opts.asymptotic_terms
    logz = np.log(np.where(r > 0, z, 1.0))
    scale = np.exp(-log_shift)
    err = np.zeros(z.shape)
    prev = np.full(z.shape, np.inf)
    stopped = np.zeros(z.shape, dtype=bool)
    for k in range(1, N + 3):
        c = float(special.rgamma(b - a * k))
        t = np.exp(-k * logz) * c * scale
        at = np.abs(t)
        if k <= N:
            # stop summing once terms grow (optimal truncation)
            grow = (at > prev) & (c != 0.0)
            newly = grow & ~stopped
            err = np.where(newly, np.maximum(err, at), err)
            stopped |= grow
            alg -= np.where(stopped, 0, t)
            if c != 0.0:
                prev = np.where(stopped, prev, at)
        else:
            err = np.where(stopped, err, np.maximum(err, at))
    val = expo + alg
    # the first omitted term under-reads the remainder by up to ~3x
    trunc = 4 * err
    err = trunc + 8 * _EPS * (np.abs(expo) * (1 + w) + np.abs(alg))
    if with_parts:
        return val, err, trunc, np.abs(alg)
    return val, err


def _as_array(z):
    za = np.asarray(z, dtype=complex)
    return za, za.ndim == 0


def _evaluate(a, b, z, shift, opts, route="auto"):
    """Route-selecting evaluation of E_{a,b} (shift=0) or its series derivative (shift=1)."""
    za, scalar = _as_array(z)
    flat = za.ravel()
    out = np.empty(flat.shape, dtype=complex)
    todo = np.ones(flat.shape, dtype=bool)
    r = np.abs(flat)

    if route == "asymptotic":
        if shift:
            raise ValueError("no asymptotic route for the series derivative")
        val, err = _asymptotic(a, b, flat, opts)
        bad = ~(err <= opts.rel_tol * np.abs(val))
        if bad.any():
            raise NonConvergent(
                f"asymptotic expansion of E_{{{a},{b}}} misses rel_tol at "
                f"{flat[bad][:3]} (estimated error {err[bad][:3]})")
        val = val.reshape(za.shape)
        return complex(val) if scalar else val
    if route not in ("auto", "series"):
        raise ValueError(f"unknown route {route!r}")

    if shift == 0 and route == "auto":
        big = r >= opts.crossover_radius
        if big.any():
            idx = np.nonzero(big)[0]
            val, err, trunc, alg = _asymptotic(a, b, flat[idx], opts, with_parts=True)
            good = np.isfinite(val) & (err <= opts.rel_tol * np.abs(val))
            # Near a zero the value is a cancellation of the residue and
            # algebraic parts.  Where the series is out of reach anyway, the
            # expansion is accepted when its truncation is negligible.
            far = np.power(r[idx], 1.0 / a) >= _SERIES_REACH
            good |= far & np.isfinite(val) & (trunc <= opts.rel_tol * (np.abs(val) + alg))
            out[idx[good]] = val[good]
            todo[idx[good]] = False

    idx = np.nonzero(todo)[0]
    if idx.size:
        # the double pass is only worth trying where exp(|z|**(1/a)) is representable
        w = np.power(r[idx], 1.0 / a)
        trial = idx[w < 600]
        if trial.size:
            val, err, absum = _series_double(a, b, flat[trial], shift, opts)
            good = err <= opts.rel_tol * np.abs(val)
            out[trial[good]] = val[good]
            todo[trial[good]] = False
            absums = dict(zip(trial[~good].tolist(), absum[~good].tolist()))
        else:
            absums = {}
        rest = np.nonzero(todo)[0]
        if rest.size:
            mag = np.array([absums.get(i, np.nan) for i in rest.tolist()])
            # sum |t_k| ~ E_{a,b}(|z|) ~ exp(|z|**(1/a)) / a
            guess = np.exp(np.minimum(np.power(r[rest], 1.0 / a), 7e2))
            mag = np.where(np.isfinite(mag), mag, guess)
            out[rest] = _series_mp(a, b, flat[rest], shift, mag, opts)
    out = out.reshape(za.shape)
    return complex(out) if scalar else out


def _check(p):
    if isinstance(p, tuple):
        p = MLParams(*p)
    if not p.a > 0:
        raise ValueError("a must be positive")
    return p


def eval_ml(p, z, opts=None, route="auto"):
    """Evaluate ``E_{a,b}(z)``; ``z`` may be a scalar or an array.

    ``route`` forces one branch (``"series"`` or ``"asymptotic"``); the default
    tries the expansion for ``|z| >= crossover_radius`` and falls back to the
    series wherever the expansion's own error estimate misses ``rel_tol``.
    """
    p = _check(p)
    opts = opts or DEFAULT_OPTIONS
    return _evaluate(float(p.a), float(p.b), z, 0, opts, route)


def ml(a, b, z, opts=None):
    """Shorthand for ``eval_ml(MLParams(a, b), z)``."""
    return eval_ml(MLParams(a, b), z, opts)


def eval_ml_derivative(p, z, opts=None, method="auto"):
    """``d/dz E_{a,b}(z)``.

    ``method="series"`` sums ``k z**(k-1) / Gamma(a k + b)`` directly,
    ``method="identity"`` uses ``(E_{a,b-1}(z) - (b-1) E_{a,b}(z)) / (a z)``,
    ``"auto"`` takes the series inside ``crossover_radius`` and the identity
    outside it.
    """
    p = _check(p)
    opts = opts or DEFAULT_OPTIONS
    a, b = float(p.a), float(p.b)
    za, scalar = _as_array(z)
    if method == "series":
        return _evaluate(a, b, z, 1, opts)
    if method == "identity":
        if np.any(za == 0):
            raise ValueError("identity route is singular at z = 0")
        val = (_evaluate(a, b - 1, za, 0, opts) - (b - 1) * _evaluate(a, b, za, 0, opts)) / (a * za)
        return complex(val) if scalar else val
    if method != "auto":
        raise ValueError(f"unknown method {method!r}")
    flat = za.ravel()
    out = np.empty(flat.shape, dtype=complex)
    near = np.abs(flat) < opts.crossover_radius
    if near.any():
        out[near] = _evaluate(a, b, flat[near], 1, opts)
    if (~near).any():
        zf = flat[~near]
        out[~near] = (_evaluate(a, b - 1, zf, 0, opts) - (b - 1) * _evaluate(a, b, zf, 0, opts)) / (a * zf)
    out = out.reshape(za.shape)
    return complex(out) if scalar else out


def ml_phase(a, b, z, opts=None):
    """``E_{a,b}(z)`` up to a positive factor, finite even where the value overflows.

    Only the argument of the result is meaningful; used for winding counts
    on large contours.
    """
    opts = opts or DEFAULT_OPTIONS
    za = np.asarray(z, dtype=complex)
    w = np.power(np.abs(za), 1.0 / a)
    shift = np.maximum(w * np.cos(np.angle(za) / a) - 300.0, 0.0)
    out = np.empty(za.shape, dtype=complex)
    huge = shift > 0
    if huge.any():
        val, _ = _asymptotic(a, b, za[huge], opts, log_shift=shift[huge])
        out[huge] = val
    if (~huge).any():
        out[~huge] = eval_ml(MLParams(a, b), za[~huge], opts)
    return out


def kernel_primitives(a, lam, s, opts=None):
    """Primitives of the kernel ``g(s) = s**(a-1) E_{a,a}(lam s**a)``.

    Returns ``(P0, P1)`` with ``P0(s) = int_0^s g`` and
    ``P1(s) = int_0^s sigma g(sigma) d sigma``, evaluated term-wise:
    ``P0 = s**a E_{a,a+1}(lam s**a)`` and
    ``P1 = s**(a+1) (E_{a,a+1} - E_{a,a+2})(lam s**a)``.
    These integrate ``g`` exactly against piecewise-linear weights.
    """
    s = np.asarray(s, dtype=float)
    sa = s**a
    z = lam * sa
    e1 = eval_ml(MLParams(a, a + 1), z, opts)
    e2 = eval_ml(MLParams(a, a + 2), z, opts)
    return sa * e1, sa * s * (e1 - e2)
