"""Velocity-Verlet kernels for two Coulomb-coupled ions in a quartic potential.

Two interchangeable backends with the same signature:

* ``integrate_batch_numba``: one scalar loop per trajectory, compiled with
  numba (trajectories spread over threads with ``prange``).
* ``integrate_batch_numpy``: the step loop in Python, vectorized across the
  trajectory batch.

``EXCHCOOL_NUMBA=0`` (or numba missing) selects the numpy path for
``integrate_batch``.

Coefficient table rows are [E, alpha, gamma, beta] of
V(z) = -E z + alpha z^2 + gamma z^3 + beta z^4, sampled every ``frame_dt``
and linearly interpolated; times past the last row hold the last row.
Status per trajectory is -1 on success, otherwise the failing step index.
"""
from __future__ import annotations

import os

import numpy as np

_WANT_NUMBA = os.environ.get("EXCHCOOL_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")

try:
    import numba
    from numba import njit, prange
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False


def _coeffs_at_numpy(table, frame_dt, t):
    n = table.shape[0]
    x = t / frame_dt
    i = int(x)
    if i >= n - 1:
        return table[n - 1]
    f = x - i
    return table[i] * (1.0 - f) + table[i + 1] * f


def _accel_numpy(c, z1, z2, q, m1, m2, kc):
    E, a, g, b = c
    g1 = -E + z1 * (2 * a + z1 * (3 * g + z1 * 4 * b))
    g2 = -E + z2 * (2 * a + z2 * (3 * g + z2 * 4 * b))
    d = z2 - z1
    fc = kc / (d * d)
    return (-q * g1 - fc) / m1, (-q * g2 + fc) / m2


def integrate_batch_numpy(table, frame_dt, t0, z, v, dt, n_steps, q, m1, m2, kc,
                          rec_every=0, rec_z=None, rec_v=None):
    """Advance every row of ``z``/``v`` (shape (n, 2)) in place by ``n_steps``."""
    table = np.ascontiguousarray(table, dtype=np.float64)
    z1, z2 = z[:, 0].copy(), z[:, 1].copy()
    v1, v2 = v[:, 0].copy(), v[:, 1].copy()
    status = np.full(len(z), -1, dtype=np.int64)
    alive = np.ones(len(z), dtype=bool)
    a1, a2 = _accel_numpy(_coeffs_at_numpy(table, frame_dt, t0), z1, z2, q, m1, m2, kc)
    h = 0.5 * dt
    if rec_every > 0:
        rec_z[:, 0] = z
        rec_v[:, 0] = v
    for s in range(1, n_steps + 1):
        v1 += h * a1
        v2 += h * a2
        z1 += dt * v1
        z2 += dt * v2
        a1, a2 = _accel_numpy(_coeffs_at_numpy(table, frame_dt, t0 + s * dt), z1, z2,
                              q, m1, m2, kc)
        v1 += h * a1
        v2 += h * a2
        bad = alive & ~((z2 > z1) & np.isfinite(v1) & np.isfinite(v2))
        if bad.any():
            status[bad] = s
            alive &= ~bad
            z1[~alive], z2[~alive] = z[~alive, 0], z[~alive, 1]
            v1[~alive] = v2[~alive] = 0.0
            a1[~alive] = a2[~alive] = 0.0
        if rec_every > 0 and s % rec_every == 0:
            k = s // rec_every
            rec_z[:, k] = np.stack([z1, z2], axis=1)
            rec_v[:, k] = np.stack([v1, v2], axis=1)
    ok = alive
    z[ok, 0], z[ok, 1] = z1[ok], z2[ok]
    v[ok, 0], v[ok, 1] = v1[ok], v2[ok]
    return status


if HAVE_NUMBA:

    @njit(cache=True, fastmath=False)
    def _accel_nb(table, frame_dt, t, z1, z2, q, m1, m2, kc):
        n = table.shape[0]
        x = t / frame_dt
        i = int(x)
        if i >= n - 1:
            E = table[n - 1, 0]
            a = table[n - 1, 1]
            g = table[n - 1, 2]
            b = table[n - 1, 3]
        else:
            f = x - i
            e = 1.0 - f
            E = table[i, 0] * e + table[i + 1, 0] * f
            a = table[i, 1] * e + table[i + 1, 1] * f
            g = table[i, 2] * e + table[i + 1, 2] * f
            b = table[i, 3] * e + table[i + 1, 3] * f
        g1 = -E + z1 * (2.0 * a + z1 * (3.0 * g + z1 * 4.0 * b))
        g2 = -E + z2 * (2.0 * a + z2 * (3.0 * g + z2 * 4.0 * b))
        d = z2 - z1
        fc = kc / (d * d)
        return (-q * g1 - fc) / m1, (-q * g2 + fc) / m2

    @njit(cache=True, parallel=True)
    def _integrate_nb(table, frame_dt, t0, z, v, dt, n_steps, q, m1, m2, kc,
                      rec_every, rec_z, rec_v, status):
        h = 0.5 * dt
        for k in prange(z.shape[0]):
            z1 = z[k, 0]
            z2 = z[k, 1]
            v1 = v[k, 0]
            v2 = v[k, 1]
            a1, a2 = _accel_nb(table, frame_dt, t0, z1, z2, q, m1, m2, kc)
            status[k] = -1
            if rec_every > 0:
                rec_z[k, 0, 0] = z1
                rec_z[k, 0, 1] = z2
                rec_v[k, 0, 0] = v1
                rec_v[k, 0, 1] = v2
            for s in range(1, n_steps + 1):
                v1 += h * a1
                v2 += h * a2
                z1 += dt * v1
                z2 += dt * v2
                a1, a2 = _accel_nb(table, frame_dt, t0 + s * dt, z1, z2, q, m1, m2, kc)
                v1 += h * a1
                v2 += h * a2
                if not (z2 > z1) or not (np.isfinite(v1) and np.isfinite(v2)):
                    status[k] = s
                    break
                if rec_every > 0 and s % rec_every == 0:
                    r = s // rec_every
                    rec_z[k, r, 0] = z1
                    rec_z[k, r, 1] = z2
                    rec_v[k, r, 0] = v1
                    rec_v[k, r, 1] = v2
            if status[k] == -1:
                z[k, 0] = z1
                z[k, 1] = z2
                v[k, 0] = v1
                v[k, 1] = v2

    def integrate_batch_numba(table, frame_dt, t0, z, v, dt, n_steps, q, m1, m2, kc,
                              rec_every=0, rec_z=None, rec_v=None):
        table = np.ascontiguousarray(table, dtype=np.float64)
        if rec_every <= 0:
            rec_z = np.zeros((1, 1, 2))
            rec_v = np.zeros((1, 1, 2))
            rec_every = 0
        status = np.empty(len(z), dtype=np.int64)
        _integrate_nb(table, float(frame_dt), float(t0), z, v, float(dt), int(n_steps),
                      float(q), float(m1), float(m2), float(kc), int(rec_every),
                      rec_z, rec_v, status)
        return status

else:  # pragma: no cover
    integrate_batch_numba = None


if HAVE_NUMBA and _WANT_NUMBA:
    integrate_batch = integrate_batch_numba
    BACKEND = "numba"
else:
    integrate_batch = integrate_batch_numpy
    BACKEND = "numpy"
