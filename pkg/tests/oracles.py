"""Reference computations that share no code with the package."""

import mpmath
import numpy as np


def mp_ml(a, b, z, dps=30):
    """Mittag-Leffler series summed at a precision covering the peak term."""
    z = complex(z)
    r = abs(z)
    w = r ** (1 / a) if r > 0 else 0.0
    K = int(3 * w / a + 60)
    with mpmath.workdps(int(w / 2.3) + dps):
        A, B = mpmath.mpf(a), mpmath.mpf(b)
        zz = mpmath.mpc(z.real, z.imag)
        return complex(mpmath.fsum(zz**k * mpmath.rgamma(A * k + B) for k in range(K)))


def _rect_winding(f, x0, x1, y0, y1, n=None):
    if n is None:
        # tiny rectangles see an almost linear function
        n = 48 if max(x1 - x0, y1 - y0) > 1e-2 else 6
    corners = [complex(x0, y0), complex(x1, y0), complex(x1, y1), complex(x0, y1), complex(x0, y0)]
    pts = []
    for c0, c1 in zip(corners[:-1], corners[1:]):
        pts.extend(c0 + (c1 - c0) * t for t in np.linspace(0, 1, n, endpoint=False))
    pts.append(corners[0])
    vals = [f(p) for p in pts]
    total = 0.0
    for v0, v1 in zip(vals[:-1], vals[1:]):
        total += np.angle(v1 / v0)
    return round(total / (2 * np.pi))


def winding_bisection(f, x0, x1, y0, y1, tol=1e-10):
    """Shrink a rectangle holding exactly one zero of ``f`` until its sides are below ``tol``.

    The rectangle is halved along its longer side; the half with winding
    number one is kept.  Returns the centre of the final rectangle.
    """
    if _rect_winding(f, x0, x1, y0, y1) != 1:
        raise ValueError("start rectangle must hold exactly one zero")
    while max(x1 - x0, y1 - y0) > tol:
        if x1 - x0 >= y1 - y0:
            xm = (x0 + x1) / 2
            # offset the cut slightly so it cannot pass through the zero exactly
            xm += 1e-3 * (x1 - x0)
            if _rect_winding(f, x0, xm, y0, y1) == 1:
                x1 = xm
            else:
                x0 = xm
        else:
            ym = (y0 + y1) / 2 + 1e-3 * (y1 - y0)
            if _rect_winding(f, x0, x1, y0, ym) == 1:
                y1 = ym
            else:
                y0 = ym
    return complex((x0 + x1) / 2, (y0 + y1) / 2)


def leapfrog_wave(f, lam, T, nx=2000, cfl=0.5):
    """Explicit leapfrog for ``u_tt = u_xx + lam(t) f(x)`` with zero data on a uniform grid.

    Returns ``(x, t, u)`` with ``u[k, i]``.
    """
    dx = 1.0 / nx
    dt = cfl * dx
    nt = int(round(T / dt))
    x = np.linspace(0.0, 1.0, nx + 1)
    fx = f(x)
    fx[[0, -1]] = 0.0
    u = np.zeros((nt + 1, nx + 1))
    # Taylor start: u(dt) = dt^2/2 u_tt(0) + dt^3/6 u_ttt(0)
    lam_dot = (lam(dt) - lam(0.0)) / dt
    u[1] = (dt**2 / 2 * lam(0.0) + dt**3 / 6 * lam_dot) * fx
    r = (dt / dx) ** 2
    for k in range(1, nt):
        lap = np.zeros(nx + 1)
        lap[1:-1] = u[k, 2:] - 2 * u[k, 1:-1] + u[k, :-2]
        u[k + 1] = 2 * u[k] - u[k - 1] + r * lap + dt**2 * lam(k * dt) * fx
        u[k + 1, [0, -1]] = 0.0
    return x, np.arange(nt + 1) * dt, u
