"""Composite Gauss rules graded toward the ends of [0, 1].

Cells touching an end where the integrand behaves like ``x**p`` (or
``(1-x)**p``) use Gauss-Jacobi nodes for that weight, so the returned
weights integrate the *full* integrand, singular factor included.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .errors import QuadratureFailure


@lru_cache(maxsize=32)
def _legendre(order):
    t, w = roots_legendre(order)
    return (t + 1) / 2, w / 2


@lru_cache(maxsize=32)
def _jacobi_left(order, p):
    # weight s**p on [0, 1]
    t, w = roots_jacobi(order, 0.0, p)
    return (t + 1) / 2, w / 2 ** (p + 1)


def graded_breakpoints(cells_per_half, grading=3.0):
    """Breakpoints on [0, 1] clustered toward both ends like ``(i/m)**grading``."""
    s = (np.arange(cells_per_half + 1) / cells_per_half) ** grading / 2
    return np.concatenate([s, 1 - s[-2::-1]])


def graded_rule(cells_per_half, order=16, grading=3.0, left_power=0.0, right_power=0.0):
    """Nodes and weights on [0, 1] for integrands ~ ``x**left_power`` at 0 and
    ``(1-x)**right_power`` at 1."""
    br = graded_breakpoints(cells_per_half, grading)
    xs, ws = [], []
    s, w = _legendre(order)
    ncell = br.size - 1
    for i in range(ncell):
        a, b = br[i], br[i + 1]
        h = b - a
        if i == 0 and left_power != 0.0:
            sj, wj = _jacobi_left(order, float(left_power))
            x = a + h * sj
            xs.append(x)
            ws.append(wj * h ** (left_power + 1) / x ** left_power)
        elif i == ncell - 1 and right_power != 0.0:
            sj, wj = _jacobi_left(order, float(right_power))
            x = b - h * sj
            xs.append(x[::-1])
            ws.append((wj * h ** (right_power + 1) / (b - x) ** right_power)[::-1])
        else:
            xs.append(a + h * s)
            ws.append(h * w)
    return np.concatenate(xs), np.concatenate(ws)


def adaptive_graded(integrand, *, order=16, grading=3.0, left_power=0.0, right_power=0.0,
                    start_cells=8, max_cells=1024, abs_tol=1e-10, rel_tol=1e-10):
    """Integrate a vector-valued ``integrand(x) -> array (..., x.size)`` over [0, 1].

    Cells are doubled until two successive estimates differ by less than
    ``min(abs_tol, rel_tol * |I|)`` componentwise; entries below ``abs_tol``
    in size only need the absolute test.
    """
    m = start_cells
    prev = None
    last = float("nan")
    while m <= max_cells:
        x, w = graded_rule(m, order, grading, left_power, right_power)
        val = integrand(x) @ w
        if prev is not None:
            diff = np.abs(val - prev)
            last = float(np.max(diff))
            tol = np.minimum(abs_tol, rel_tol * np.abs(val)) + 1e-300
            # entries that are zero up to abs_tol only need the absolute test
            tol = np.where(np.abs(val) < abs_tol, abs_tol, tol)
            if np.all(diff <= tol):
                return val
        prev = val
        m *= 2
    raise QuadratureFailure(
        f"graded quadrature did not settle with {max_cells} cells per half "
        f"(last change {last:.3e})")
