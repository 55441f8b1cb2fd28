"""Exact Bochner norms of piecewise-linear and piecewise-constant trajectories.

A trajectory is given by strictly increasing node times ``t`` of shape
``(K+1,)`` and nodal values of shape ``(K+1, ...)``, interpreted as the
continuous piecewise-linear interpolant.  Values must already be expressed
in coordinates in which the spatial norm is Euclidean (see the ``*_coords``
methods of :class:`quasiplast.model.DiscreteModel`).  Piecewise-constant
functions (the plastic multiplier) are given by cell values of shape
``(K, ...)`` on the cells ``[t_{i-1}, t_i)``.

Every norm is evaluated in closed form cell by cell; nothing is sampled.
"""

import numpy as np

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


def _flat(values):
    values = np.asarray(values, dtype=float)
    return values.reshape(len(values), -1)


def _check(times, values):
    times = np.asarray(times, dtype=float)
    values = _flat(values)
    if times.ndim != 1 or len(times) != len(values):
        raise ValueError("times and values disagree in length")
    if len(times) > 1 and np.any(np.diff(times) <= 0):
        raise ValueError("node times must be strictly increasing")
    return times, values


def linf(values):
    """Supremum norm; attained at a node for piecewise-linear functions."""
    v = _flat(values)
    return float(np.sqrt(np.max(np.sum(v * v, axis=1))))


def l2(times, values):
    t, v = _check(times, values)
    h = np.diff(t)
    a, b = v[:-1], v[1:]
    cell = h / 3.0 * (np.sum(a * a, 1) + np.sum(a * b, 1) + np.sum(b * b, 1))
    return float(np.sqrt(max(cell.sum(), 0.0)))


def _primitive(s, k):
    r = np.sqrt(s * s + k * k)
    with np.errstate(divide="ignore", invalid="ignore"):
        tail = np.where(k > 0, k * k * np.arcsinh(s / np.where(k > 0, k, 1.0)), 0.0)
    return 0.5 * (s * r + tail)


def _cell_abs_integrals(a, b):
    """``int_0^1 |a + theta (b - a)| d theta`` row by row."""
    d = b - a
    dd = np.sum(d * d, 1)
    pp = np.sum(a * a, 1)
    pd = np.sum(a * d, 1)
    out = np.sqrt(pp)
    moving = dd > 0
    if not moving.any():
        return out
    ddm = dd[moving]
    ts = -pd[moving] / ddm
    k = np.sqrt(np.maximum(pp[moving] / ddm - ts * ts, 0.0))
    closed = _primitive(1.0 - ts, k) - _primitive(-ts, k)
    closed = np.sqrt(ddm) * closed
    # far from the closest approach the integrand is analytic on a wide
    # neighbourhood of the cell and Gauss-Legendre avoids cancellation
    am, dm = a[moving], d[moving]
    pts = am[:, None, :] + _GL_X[None, :, None] * dm[:, None, :]
    gauss = np.sqrt(np.sum(pts * pts, axis=2)) @ _GL_W
    out[moving] = np.where((ts >= -2.0) & (ts <= 3.0), closed, gauss)
    return out


def l1(times, values):
    t, v = _check(times, values)
    return float(np.sum(np.diff(t) * _cell_abs_integrals(v[:-1], v[1:])))


def lp(times, values, p):
    if p == 1:
        return l1(times, values)
    if p == 2:
        return l2(times, values)
    if p == np.inf:
        return linf(values)
    raise ValueError(f"only p in {{1, 2, inf}} is supported, got {p}")


def derivative_lq(times, values, q):
    """``L^q`` norm of the (piecewise-constant) time derivative."""
    t, v = _check(times, values)
    h = np.diff(t)
    jumps = np.sqrt(np.sum(np.diff(v, axis=0) ** 2, axis=1))
    if q == 1:
        return float(jumps.sum())
    if q == 2:
        return float(np.sqrt(np.sum(jumps**2 / h)))
    if q == np.inf:
        return float(np.max(jumps / h)) if len(h) else 0.0
    raise ValueError(f"only q in {{1, 2, inf}} is supported, got {q}")


def h1(times, values):
    """``(|f(0)|^2 + |f'|_{L^2}^2)^{1/2}``."""
    v = _flat(values)
    return float(np.sqrt(np.sum(v[0] ** 2) + derivative_lq(times, v, 2) ** 2))


def w11(times, values):
    """``|f(0)| + |f'|_{L^1}``."""
    v = _flat(values)
    return float(np.sqrt(np.sum(v[0] ** 2)) + derivative_lq(times, v, 1))


def dual_exponent(p):
    if p == 1:
        return np.inf
    if p == np.inf:
        return 1
    return p / (p - 1)


def union_grid(ta, tb, rtol=1e-12):
    ta = np.asarray(ta, dtype=float)
    tb = np.asarray(tb, dtype=float)
    if not np.isclose(ta[0], tb[0], rtol=rtol, atol=rtol) or not np.isclose(
        ta[-1], tb[-1], rtol=rtol, atol=rtol
    ):
        raise ValueError("trajectories live on different time intervals")
    merged = np.sort(np.concatenate([ta, tb]))
    scale = max(abs(merged[-1]), 1.0)
    keep = np.concatenate([[True], np.diff(merged) > rtol * scale])
    return merged[keep]


def resample(times, values, new_times):
    """Evaluate the piecewise-linear interpolant at ``new_times``."""
    t, v = _check(times, values)
    shape = np.asarray(values).shape[1:]
    new_times = np.asarray(new_times, dtype=float)
    idx = np.clip(np.searchsorted(t, new_times, side="right") - 1, 0, len(t) - 2)
    theta = (new_times - t[idx]) / (t[idx + 1] - t[idx])
    theta = np.clip(theta, 0.0, 1.0)
    out = (1.0 - theta)[:, None] * v[idx] + theta[:, None] * v[idx + 1]
    exact = np.isclose(new_times[:, None], t[None, :], rtol=0, atol=1e-14 * max(1.0, abs(t[-1])))
    hit = exact.any(axis=1)
    out[hit] = v[exact[hit].argmax(axis=1)]
    return out.reshape((len(new_times),) + shape)


def resample_cells(times, cell_values, new_times):
    """Cell values of a piecewise-constant function on the refined cells of ``new_times``."""
    t = np.asarray(times, dtype=float)
    cv = np.asarray(cell_values, dtype=float)
    new_times = np.asarray(new_times, dtype=float)
    mids = 0.5 * (new_times[:-1] + new_times[1:])
    idx = np.clip(np.searchsorted(t, mids, side="right") - 1, 0, len(t) - 2)
    return cv[idx]


def difference(ta, va, tb, vb):
    """Difference of two piecewise-linear interpolants on their union grid."""
    t = union_grid(ta, tb)
    return t, resample(ta, va, t) - resample(tb, vb, t)


def cell_difference(ta, ca, tb, cb):
    """Difference of two piecewise-constant functions on their union grid."""
    t = union_grid(ta, tb)
    return t, resample_cells(ta, ca, t) - resample_cells(tb, cb, t)


def pc_l2(times, cell_values):
    t = np.asarray(times, dtype=float)
    c = np.asarray(cell_values, dtype=float).reshape(len(t) - 1, -1)
    return float(np.sqrt(np.sum(np.diff(t) * np.sum(c * c, axis=1))))


def integral(times, values):
    """Exact integral of a piecewise-linear (vector) function (trapezoid rule)."""
    t, v = _check(times, values)
    return np.sum(0.5 * np.diff(t)[:, None] * (v[:-1] + v[1:]), axis=0)
