"""Compiled right-hand side and Dormand-Prince integrator for the moment system.

State layout (complex128): for each mode q the 14 ordered moments
``<P^n X^m>`` with ``1 <= n + m <= 4`` in ``PAIRS`` order, then ``<sigma^->``
and ``<sigma_z>``.
"""
import numba as nb
import numpy as np

PAIRS = [(n, o - n) for o in range(1, 5) for n in range(o + 1)]
N_MOM = len(PAIRS)
IDX = -np.ones((7, 7), dtype=np.int64)
for _i, (_n, _m) in enumerate(PAIRS):
    IDX[_n, _m] = _i
PN = np.array([p[0] for p in PAIRS], dtype=np.int64)
PM = np.array([p[1] for p in PAIRS], dtype=np.int64)

# integrator status codes
OK = 0
UNPHYSICAL = 1
STEP_UNDERFLOW = 2
NON_FINITE = 3


@nb.njit(cache=True)
def _get(M, q, n, m, IDX):
    if n < 0 or m < 0:
        return 0j
    if n == 0 and m == 0:
        return 1.0 + 0j
    return M[q, IDX[n, m]]


@nb.njit(cache=True)
def rhs(y, w, k, nth, g, delta, gam, IDX, PN, PM, out):
    nq = w.shape[0]
    nm = PN.shape[0]
    M = y[: nq * nm].reshape(nq, nm)
    sm = y[nq * nm]
    sz = y[nq * nm + 1]
    sp = np.conj(sm)
    D = out[: nq * nm].reshape(nq, nm)
    dsm = (1j * delta - 0.5 * gam) * sm
    dsz = 0j
    for q in range(nq):
        X = M[q, IDX[0, 1]]
        P = M[q, IDX[1, 0]]
        dsm += 0.5j * g[q] * sz * (X - 1j * P)
        term = sp * (X - 1j * P)
        dsz += -1j * g[q] * (term - np.conj(term))
        drive_p = -g[q] * (sm + sp)
        drive_x = 1j * g[q] * (sm - sp)
        diff = 0.5 * k[q] * (2 * nth[q] + 1)
        for j in range(nm):
            n = PN[j]
            m = PM[j]
            # free rotation, reordered so P stays to the left of X
            v = -w[q] * n * (_get(M, q, n - 1, m + 1, IDX) + 1j * (n - 1) * _get(M, q, n - 2, m, IDX))
            v += w[q] * m * (_get(M, q, n + 1, m - 1, IDX) + 1j * (m - 1) * _get(M, q, n, m - 2, IDX))
            # damping and thermal diffusion
            v += -0.5 * k[q] * (n + m) * M[q, j]
            v += diff * (n * (n - 1) * _get(M, q, n - 2, m, IDX) + m * (m - 1) * _get(M, q, n, m - 2, IDX))
            v += -1j * k[q] * n * m * _get(M, q, n - 1, m - 1, IDX)
            # mean-field atomic drive
            v += n * drive_p * _get(M, q, n - 1, m, IDX) + m * drive_x * _get(M, q, n, m - 1, IDX)
            D[q, j] = v
    out[nq * nm] = dsm
    out[nq * nm + 1] = -gam * (sz + 1) + dsz


_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
_B1, _B3, _B4, _B5, _B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
_E1, _E3, _E4, _E5, _E6, _E7 = 71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40


@nb.njit(cache=True)
def _physical(y, nq, nm, IDX, tol):
    for q in range(nq):
        X = y[q * nm + IDX[0, 1]].real
        P = y[q * nm + IDX[1, 0]].real
        vx = y[q * nm + IDX[0, 2]].real - X * X
        vp = y[q * nm + IDX[2, 0]].real - P * P
        scale = 1.0 + abs(X * X) + abs(P * P)
        if vx < -tol * scale or vp < -tol * scale:
            return False
    sz = y[nq * nm + 1].real
    sm = y[nq * nm]
    if abs(sz) > 1.0 + tol or abs(sm) > 1.0 + tol:
        return False
    return True


@nb.njit(cache=True)
def integrate(y0, w, k, nth, g, delta, gam, IDX, PN, PM, t_max, dt_s, rtol, atol, phys_tol):
    """Adaptive DP5(4) with steps clipped to the sampling grid.

    Returns (final state, samples, function evaluations, status, t_stop).
    Sample columns: for each mode Re<X>, Re<P>, Re<X^2>, Re<P^2>; then
    Re<sigma_z>, |<sigma^->|.
    """
    nsamp = int(round(t_max / dt_s)) + 1
    nq = w.shape[0]
    nm = PN.shape[0]
    rec = np.full((nsamp, nq * 4 + 2), np.nan)
    y = y0.copy()
    t = 0.0
    h = 1e-3
    L = y.shape[0]
    k1 = np.empty(L, np.complex128)
    k2 = np.empty_like(k1)
    k3 = np.empty_like(k1)
    k4 = np.empty_like(k1)
    k5 = np.empty_like(k1)
    k6 = np.empty_like(k1)
    k7 = np.empty_like(k1)
    rhs(y, w, k, nth, g, delta, gam, IDX, PN, PM, k1)
    nfev = 1
    status = OK
    for s in range(nsamp):
        ts = s * dt_s
        # same relative tolerance for "arrived" and "step too small", so float
        # round-off near a sample time cannot read as an underflow
        tol = 1e-12 * max(1.0, ts)
        while t < ts - tol:
            hh = min(h, ts - t)
            clipped = hh < h
            if hh < tol:
                status = STEP_UNDERFLOW
                break
            rhs(y + hh * _A21 * k1, w, k, nth, g, delta, gam, IDX, PN, PM, k2)
            rhs(y + hh * (_A31 * k1 + _A32 * k2), w, k, nth, g, delta, gam, IDX, PN, PM, k3)
            rhs(y + hh * (_A41 * k1 + _A42 * k2 + _A43 * k3), w, k, nth, g, delta, gam, IDX, PN, PM, k4)
            rhs(y + hh * (_A51 * k1 + _A52 * k2 + _A53 * k3 + _A54 * k4), w, k, nth, g, delta, gam,
                IDX, PN, PM, k5)
            rhs(y + hh * (_A61 * k1 + _A62 * k2 + _A63 * k3 + _A64 * k4 + _A65 * k5), w, k, nth, g, delta,
                gam, IDX, PN, PM, k6)
            yn = y + hh * (_B1 * k1 + _B3 * k3 + _B4 * k4 + _B5 * k5 + _B6 * k6)
            rhs(yn, w, k, nth, g, delta, gam, IDX, PN, PM, k7)
            nfev += 6
            err = hh * (_E1 * k1 + _E3 * k3 + _E4 * k4 + _E5 * k5 + _E6 * k6 + _E7 * k7)
            sc = atol + rtol * np.maximum(np.abs(y), np.abs(yn))
            en = np.sqrt(np.mean(np.abs(err / sc) ** 2))
            if not np.isfinite(en):
                status = NON_FINITE
                break
            fac = 0.9 * en ** -0.2 if en > 0 else 5.0
            if en <= 1.0:
                t = ts if clipped else t + hh
                y = yn
                k1[:] = k7
                # a step shortened to hit a sample time must not shrink h
                if hh == h:
                    h = hh * min(5.0, max(0.2, fac))
                else:
                    h = max(h, hh * min(5.0, max(0.2, fac)))
            else:
                h = hh * max(0.2, fac)
        if status != OK:
            break
        for q in range(nq):
            base = q * nm
            rec[s, 4 * q] = y[base + IDX[0, 1]].real
            rec[s, 4 * q + 1] = y[base + IDX[1, 0]].real
            rec[s, 4 * q + 2] = y[base + IDX[0, 2]].real
            rec[s, 4 * q + 3] = y[base + IDX[2, 0]].real
        rec[s, 4 * nq] = y[nq * nm + 1].real
        rec[s, 4 * nq + 1] = abs(y[nq * nm])
        if not _physical(y, nq, nm, IDX, phys_tol):
            status = UNPHYSICAL
            break
    return y, rec, nfev, status, t
