"""Compiled inner loops for the classical ring flow.

Phase-space vectors are stored as ``y = [q_1..q_n, p_1..p_n]``; when tangent
dynamics is enabled the deviation vector is appended, giving length ``4n``.
The stepper is Dormand-Prince 8(5,3) with the standard embedded error
estimate; the Butcher tableau is taken from SciPy.
"""

import numpy as np
import numba as nb
from scipy.integrate._ivp import dop853_coefficients as _dop

_NS = _dop.N_STAGES
_A = np.ascontiguousarray(_dop.A[:_NS, :_NS])
_B = np.ascontiguousarray(_dop.B)
_C = np.ascontiguousarray(_dop.C[:_NS])
_E3 = np.ascontiguousarray(_dop.E3)
_E5 = np.ascontiguousarray(_dop.E5)

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
ERR_EXP = -1.0 / 8.0

# status codes returned by the drivers
OK = 0
STEP_UNDERFLOW = 1
MAX_STEPS = 2
NON_FINITE = 3


@nb.njit(cache=True)
def rhs(y, J, U, n, tangent, out):
    for i in range(n):
        ip = (i + 1) % n
        im = (i - 1) % n
        q = y[i]
        p = y[n + i]
        r2 = q * q + p * p
        out[i] = -J * (y[n + ip] + y[n + im]) + U * p * r2
        out[n + i] = J * (y[ip] + y[im]) - U * q * r2
    if tangent:
        o = 2 * n
        for i in range(n):
            ip = (i + 1) % n
            im = (i - 1) % n
            q = y[i]
            p = y[n + i]
            r2 = q * q + p * p
            dq = y[o + i]
            dp = y[o + n + i]
            dr2 = 2.0 * (q * dq + p * dp)
            out[o + i] = -J * (y[o + n + ip] + y[o + n + im]) + U * (dp * r2 + p * dr2)
            out[o + n + i] = J * (y[o + ip] + y[o + im]) - U * (dq * r2 + q * dr2)


@nb.njit(cache=True)
def _step(y, f, h, J, U, n, tangent, K, ytmp, ynew):
    m = y.size
    for j in range(m):
        K[0, j] = f[j]
    for s in range(1, _NS):
        for j in range(m):
            acc = 0.0
            for r in range(s):
                acc += _A[s, r] * K[r, j]
            ytmp[j] = y[j] + h * acc
        rhs(ytmp, J, U, n, tangent, K[s])
    for j in range(m):
        acc = 0.0
        for r in range(_NS):
            acc += _B[r] * K[r, j]
        ynew[j] = y[j] + h * acc
    rhs(ynew, J, U, n, tangent, K[_NS])


@nb.njit(cache=True)
def _error_norm(y, ynew, K, h, rtol, atol):
    m = y.size
    e5 = 0.0
    e3 = 0.0
    for j in range(m):
        sc = atol + rtol * max(abs(y[j]), abs(ynew[j]))
        a5 = 0.0
        a3 = 0.0
        for r in range(_NS + 1):
            a5 += _E5[r] * K[r, j]
            a3 += _E3[r] * K[r, j]
        e5 += (a5 / sc) ** 2
        e3 += (a3 / sc) ** 2
    if e5 == 0.0 and e3 == 0.0:
        return 0.0
    return abs(h) * e5 / np.sqrt((e5 + 0.01 * e3) * m)


@nb.njit(cache=True)
def _initial_step(y, f, J, U, n, tangent, rtol, atol):
    # Hairer-Norsett-Wanner starting step heuristic
    m = y.size
    d0 = 0.0
    d1 = 0.0
    for j in range(m):
        sc = atol + rtol * abs(y[j])
        d0 += (y[j] / sc) ** 2
        d1 += (f[j] / sc) ** 2
    d0 = np.sqrt(d0 / m)
    d1 = np.sqrt(d1 / m)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    y1 = y + h0 * f
    f1 = np.empty(m)
    rhs(y1, J, U, n, tangent, f1)
    d2 = 0.0
    for j in range(m):
        sc = atol + rtol * abs(y[j])
        d2 += ((f1[j] - f[j]) / sc) ** 2
    d2 = np.sqrt(d2 / m) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 8.0)
    return min(100.0 * h0, h1)


@nb.njit(cache=True)
def _advance(y, f, t, t_target, h, J, U, n, tangent, rtol, atol, K, ytmp, ynew, max_steps):
    """Step from ``t`` to exactly ``t_target``.

    Returns ``(t, h_next, steps, status)``; ``y`` and ``f`` are updated in place.
    """
    steps = 0
    m = y.size
    while t < t_target:
        if steps >= max_steps:
            return t, h, steps, MAX_STEPS
        h_min = 10.0 * abs(np.nextafter(t, np.inf) - t)
        if h < h_min:
            return t, h, steps, STEP_UNDERFLOW
        clipped = False
        h_use = h
        if t + h_use >= t_target:
            h_use = t_target - t
            clipped = True
        _step(y, f, h_use, J, U, n, tangent, K, ytmp, ynew)
        err = _error_norm(y, ynew, K, h_use, rtol, atol)
        steps += 1
        if not np.isfinite(err):
            return t, h, steps, NON_FINITE
        if err <= 1.0:
            if err == 0.0:
                factor = MAX_FACTOR
            else:
                factor = min(MAX_FACTOR, SAFETY * err ** ERR_EXP)
            if clipped:
                t = t_target
                # keep the unclipped proposal so output grids do not throttle the step
                h = max(h, h_use * factor)
            else:
                t = t + h_use
                h = h_use * factor
            for j in range(m):
                y[j] = ynew[j]
                f[j] = K[_NS, j]
        else:
            h = h_use * max(MIN_FACTOR, SAFETY * err ** ERR_EXP)
    return t, h, steps, OK


@nb.njit(cache=True)
def integrate_grid(y0, t_out, J, U, n, rtol, atol, max_steps):
    """Integrate the flow from ``t = 0`` and sample at the increasing times ``t_out``."""
    m = y0.size
    tangent = m == 4 * n
    y = y0.copy()
    f = np.empty(m)
    rhs(y, J, U, n, tangent, f)
    K = np.empty((_NS + 1, m))
    ytmp = np.empty(m)
    ynew = np.empty(m)
    out = np.empty((t_out.size, m))
    h = _initial_step(y, f, J, U, n, tangent, rtol, atol)
    t = 0.0
    total = 0
    for k in range(t_out.size):
        t, h, steps, status = _advance(
            y, f, t, t_out[k], h, J, U, n, tangent, rtol, atol, K, ytmp, ynew, max_steps - total
        )
        total += steps
        if status != OK:
            return out[:k], t, total, status
        for j in range(m):
            out[k, j] = y[j]
    return out, t, total, OK


@nb.njit(cache=True)
def lyapunov_run(y0, d0, t_max, dt, J, U, n, rtol, atol, max_steps):
    """Tangent-dynamics run with renormalization every ``dt``.

    Returns the per-interval log growth factors, the final base point, the
    number of completed intervals, total steps and a status code.
    """
    m = 4 * n
    y = np.empty(m)
    y[: 2 * n] = y0
    nrm = np.sqrt(np.sum(d0 * d0))
    y[2 * n :] = d0 / nrm
    f = np.empty(m)
    rhs(y, J, U, n, True, f)
    K = np.empty((_NS + 1, m))
    ytmp = np.empty(m)
    ynew = np.empty(m)
    n_int = int(np.floor(t_max / dt + 1e-9))
    logs = np.zeros(n_int)
    h = _initial_step(y, f, J, U, n, True, rtol, atol)
    t = 0.0
    total = 0
    for k in range(n_int):
        t, h, steps, status = _advance(
            y, f, t, (k + 1) * dt, h, J, U, n, True, rtol, atol, K, ytmp, ynew, max_steps - total
        )
        total += steps
        if status != OK:
            return logs[:k], y[: 2 * n].copy(), k, total, status
        g = 0.0
        for j in range(2 * n, m):
            g += y[j] * y[j]
        g = np.sqrt(g)
        logs[k] = np.log(g)
        for j in range(2 * n, m):
            y[j] /= g
        # the deviation changed, so the cached derivative must be refreshed
        rhs(y, J, U, n, True, f)
    return logs, y[: 2 * n].copy(), n_int, total, OK
