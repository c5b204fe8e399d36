"""Per-particle step kernels: numba when available, pure numpy otherwise.

Set ``DROPSOAK_NO_NUMBA=1`` to force the numpy path. Both paths consume the
same counter-based random keys; they agree to floating-point rounding of the
transcendental functions.

Status codes written per particle: 0 alive, 1 consumed at the surface,
2 wall reflection failed to converge.
"""
from __future__ import annotations

import math
import os

import numpy as np

from . import rng as _rng

ALIVE, CONSUMED, STUCK = 0, 1, 2
MAX_REFLECTIONS = 64

_DISABLED = os.environ.get("DROPSOAK_NO_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError("numba disabled by DROPSOAK_NO_NUMBA")
    import numba
    from numba import njit, prange
    HAVE_NUMBA = True
    if "NUMBA_THREADING_LAYER_PRIORITY" not in os.environ:
        # Skip probing an outdated system TBB, which only emits a warning.
        numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
except ImportError:
    numba = None
    HAVE_NUMBA = False

DEFAULT_BACKEND = "numba" if HAVE_NUMBA else "numpy"


def resolve_backend(name=None):
    name = name or DEFAULT_BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is unavailable")
    return name


def set_workers(n):
    """Thread count for the numba backend; returns the count actually used."""
    if not HAVE_NUMBA:
        return 1
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


def max_workers():
    return numba.config.NUMBA_NUM_THREADS if HAVE_NUMBA else 1


# --------------------------------------------------------------------------
# numpy path


def _polar_np(ikeys, counters):
    """Marsaglia polar pairs; ``counters`` (uint64) advance past used draws."""
    n = len(ikeys)
    g1 = np.empty(n)
    g2 = np.empty(n)
    todo = np.arange(n)
    while todo.size:
        c = counters[todo]
        a = 2.0 * _rng.uniforms_from_item_keys(ikeys[todo], c) - 1.0
        b = 2.0 * _rng.uniforms_from_item_keys(ikeys[todo], c + np.uint64(1)) - 1.0
        counters[todo] = c + np.uint64(2)
        s = a * a + b * b
        ok = (s > 0.0) & (s < 1.0)
        f = np.sqrt(-2.0 * np.log(s[ok]) / s[ok])
        g1[todo[ok]] = a[ok] * f
        g2[todo[ok]] = b[ok] * f
        todo = todo[~ok]
    return g1, g2


def _gaussians_np(ikeys, step, sigma):
    base = step << _rng.STEP_SHIFT
    ua = _rng.uniforms_from_item_keys(ikeys, base)
    counters = np.full(len(ikeys), base + 1, dtype=np.uint64)
    g1, g2 = _polar_np(ikeys, counters)
    g3, _ = _polar_np(ikeys, counters)
    return sigma * g1, sigma * g2, sigma * g3, ua


def advance_np(x0, y0, z0, dx, dy, dz, u, p_absorb, rp, za):
    x = x0 + dx
    y = y0 + dy
    z = z0 + dz
    status = np.zeros(len(x), dtype=np.int8)
    cx = np.zeros(len(x))
    cy = np.zeros(len(x))

    eaten = (z < 0.0) & (u < p_absorb)
    if eaten.any():
        denom = z0[eaten] - z[eaten]
        f = np.where(denom > 0.0, z0[eaten] / np.where(denom > 0.0, denom, 1.0), 0.0)
        ex = x0[eaten] + f * dx[eaten]
        ey = y0[eaten] + f * dy[eaten]
        r = np.hypot(ex, ey)
        s = np.where(r > rp, rp / np.where(r > 0, r, 1.0), 1.0)
        cx[eaten] = ex * s
        cy[eaten] = ey * s
        status[eaten] = CONSUMED

    todo = np.flatnonzero(~eaten)
    for _ in range(MAX_REFLECTIONS):
        if todo.size == 0:
            break
        xt, yt, zt = x[todo], y[todo], z[todo]
        moved = zt < 0.0
        zt = np.where(moved, -zt, zt)
        over = zt > za
        zt = np.where(over, 2.0 * za - zt, zt)
        moved |= over
        r2 = xt * xt + yt * yt
        out = r2 > rp * rp
        if out.any():
            r = np.sqrt(r2[out])
            s = (2.0 * rp - r) / r
            xt[out] *= s
            yt[out] *= s
        moved |= out
        x[todo], y[todo], z[todo] = xt, yt, zt
        todo = todo[moved]
    if todo.size:
        status[todo] = STUCK
    return x, y, z, status, cx, cy


def step_np(x, y, z, ids, key, step, sigma, p_absorb, rp, za):
    ikeys = _rng.item_keys(key, ids)
    dx, dy, dz, ua = _gaussians_np(ikeys, step, sigma)
    return advance_np(x, y, z, dx, dy, dz, ua, p_absorb, rp, za)


# --------------------------------------------------------------------------
# numba path

if HAVE_NUMBA:
    _M1 = np.uint64(_rng.MIX1)
    _M2 = np.uint64(_rng.MIX2)
    _IM = np.uint64(_rng.ITEM_MUL)
    _CM = np.uint64(_rng.COUNTER_MUL)
    _S30 = np.uint64(30)
    _S27 = np.uint64(27)
    _S31 = np.uint64(31)
    _S11 = np.uint64(11)
    _ONE = np.uint64(1)

    @njit(cache=True, inline="always")
    def _mix_nb(z):
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
        return z ^ (z >> _S31)

    @njit(cache=True, inline="always")
    def _unit_nb(ikey, counter):
        h = _mix_nb(ikey + (counter + _ONE) * _CM)
        return np.float64(h >> _S11) * _rng.TO_UNIT

    @njit(cache=True)
    def _advance_one(x0, y0, z0, dx, dy, dz, u, p_absorb, rp, za):
        x = x0 + dx
        y = y0 + dy
        z = z0 + dz
        if z < 0.0 and u < p_absorb:
            denom = z0 - z
            f = z0 / denom if denom > 0.0 else 0.0
            cx = x0 + f * dx
            cy = y0 + f * dy
            r = math.sqrt(cx * cx + cy * cy)
            if r > rp:
                cx *= rp / r
                cy *= rp / r
            return x, y, z, CONSUMED, cx, cy
        for _ in range(MAX_REFLECTIONS):
            inside = True
            if z < 0.0:
                z = -z
                inside = False
            if z > za:
                z = 2.0 * za - z
                inside = False
            r2 = x * x + y * y
            if r2 > rp * rp:
                r = math.sqrt(r2)
                s = (2.0 * rp - r) / r
                x *= s
                y *= s
                inside = False
            if inside:
                return x, y, z, ALIVE, 0.0, 0.0
        return x, y, z, STUCK, 0.0, 0.0

    @njit(cache=True, inline="always")
    def _polar_nb(ik, c):
        while True:
            a = 2.0 * _unit_nb(ik, c) - 1.0
            b = 2.0 * _unit_nb(ik, c + _ONE) - 1.0
            c += np.uint64(2)
            s = a * a + b * b
            if 0.0 < s < 1.0:
                f = math.sqrt(-2.0 * math.log(s) / s)
                return a * f, b * f, c

    @njit(cache=True, parallel=True)
    def _step_nb(x, y, z, ids, key, step, sigma, p_absorb, rp, za,
                 ox, oy, oz, status, cx, cy):
        n = x.shape[0]
        base = np.uint64(step) << np.uint64(_rng.STEP_SHIFT)
        for i in prange(n):
            ik = _mix_nb(key + (np.uint64(ids[i]) + _ONE) * _IM)
            ua = _unit_nb(ik, base)
            g1, g2, c = _polar_nb(ik, base + _ONE)
            g3, _, c = _polar_nb(ik, c)
            xi, yi, zi, st, ci, di = _advance_one(
                x[i], y[i], z[i], sigma * g1, sigma * g2, sigma * g3,
                ua, p_absorb, rp, za)
            ox[i] = xi
            oy[i] = yi
            oz[i] = zi
            status[i] = st
            cx[i] = ci
            cy[i] = di

    @njit(cache=True, parallel=True)
    def _advance_nb(x0, y0, z0, dx, dy, dz, u, p_absorb, rp, za,
                    ox, oy, oz, status, cx, cy):
        for i in prange(x0.shape[0]):
            xi, yi, zi, st, ci, di = _advance_one(
                x0[i], y0[i], z0[i], dx[i], dy[i], dz[i], u[i], p_absorb, rp, za)
            ox[i] = xi
            oy[i] = yi
            oz[i] = zi
            status[i] = st
            cx[i] = ci
            cy[i] = di


def _outputs(n):
    return (np.empty(n), np.empty(n), np.empty(n), np.empty(n, dtype=np.int8),
            np.empty(n), np.empty(n))


def step_particles(x, y, z, ids, key, step, sigma, p_absorb, rp, za, backend=None):
    """Move every particle one Brownian step and apply boundary rules.

    Returns ``(x, y, z, status, cross_x, cross_y)``; the crossing point is
    only meaningful where ``status == CONSUMED``.
    """
    if resolve_backend(backend) == "numpy":
        return step_np(x, y, z, ids, key, step, sigma, p_absorb, rp, za)
    out = _outputs(len(x))
    _step_nb(x, y, z, ids, np.uint64(key), step, float(sigma), float(p_absorb),
             float(rp), float(za), *out)
    return out


def advance(x0, y0, z0, dx, dy, dz, u, p_absorb, rp, za, backend=None):
    """Apply given displacements and absorption draws (no randomness)."""
    arrs = [np.ascontiguousarray(a, dtype=np.float64) for a in (x0, y0, z0, dx, dy, dz, u)]
    if resolve_backend(backend) == "numpy":
        return advance_np(*arrs, p_absorb, rp, za)
    out = _outputs(len(arrs[0]))
    _advance_nb(*arrs, float(p_absorb), float(rp), float(za), *out)
    return out
