"""numba implementations of the hot loops.

Every public function here has a twin with the same signature in
``_kernels_np``; ``kernels`` picks one at import time.  Built-in ODE systems
are addressed by an integer kind (0 = Lorenz, 1 = Rossler).
"""
import numpy as np
from numba import njit

# Dormand-Prince 5(4) tableau
_C2, _C3, _C4, _C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
_A21 = 1.0 / 5.0
_A31, _A32 = 3.0 / 40.0, 9.0 / 40.0
_A41, _A42, _A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
_A51, _A52, _A53, _A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
_A61, _A62, _A63, _A64, _A65 = (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0,
                                49.0 / 176.0, -5103.0 / 18656.0)
_B1, _B3, _B4, _B5, _B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
_E1, _E3, _E4, _E5, _E6, _E7 = (71.0 / 57600.0, -71.0 / 16695.0, 71.0 / 1920.0,
                                -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0)


@njit(cache=True, nogil=True)
def ode_rhs(kind, p, x, out):
    if kind == 0:
        out[0] = -p[0] * (x[0] - x[1])
        out[1] = p[1] * x[0] - x[1] - x[0] * x[2]
        out[2] = -p[2] * x[2] + x[0] * x[1]
    else:
        out[0] = -x[1] - x[2]
        out[1] = x[0] + p[0] * x[1]
        out[2] = p[1] + x[2] * (x[0] - p[2])


@njit(cache=True, nogil=True)
def ode_jac(kind, p, x, J):
    if kind == 0:
        J[0, 0] = -p[0]
        J[0, 1] = p[0]
        J[0, 2] = 0.0
        J[1, 0] = p[1] - x[2]
        J[1, 1] = -1.0
        J[1, 2] = -x[0]
        J[2, 0] = x[1]
        J[2, 1] = x[0]
        J[2, 2] = -p[2]
    else:
        J[0, 0] = 0.0
        J[0, 1] = -1.0
        J[0, 2] = -1.0
        J[1, 0] = 1.0
        J[1, 1] = p[0]
        J[1, 2] = 0.0
        J[2, 0] = x[2]
        J[2, 1] = 0.0
        J[2, 2] = x[0] - p[2]


@njit(cache=True, nogil=True)
def _bad(x, limit):
    for i in range(x.shape[0]):
        v = x[i]
        if not np.isfinite(v) or abs(v) > limit:
            return True
    return False


@njit(cache=True, nogil=True)
def _rk4_inplace(kind, p, x, h, k1, k2, k3, k4, tmp):
    n = x.shape[0]
    ode_rhs(kind, p, x, k1)
    for i in range(n):
        tmp[i] = x[i] + 0.5 * h * k1[i]
    ode_rhs(kind, p, tmp, k2)
    for i in range(n):
        tmp[i] = x[i] + 0.5 * h * k2[i]
    ode_rhs(kind, p, tmp, k3)
    for i in range(n):
        tmp[i] = x[i] + h * k3[i]
    ode_rhs(kind, p, tmp, k4)
    for i in range(n):
        x[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


@njit(cache=True, nogil=True)
def rk4_trajectory(kind, p, x0, dt, steps, substeps, limit):
    """Returns (traj, fail) where fail is the first bad sample index or -1."""
    n = x0.shape[0]
    traj = np.empty((steps + 1, n))
    traj[0] = x0
    x = x0.copy()
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    h = dt / substeps
    for s in range(steps):
        for _ in range(substeps):
            _rk4_inplace(kind, p, x, h, k1, k2, k3, k4, tmp)
        if _bad(x, limit):
            return traj, s + 1
        traj[s + 1] = x
    return traj, -1


@njit(cache=True, nogil=True)
def dopri_trajectory(kind, p, x0, dt, steps, atol, rtol, limit):
    """Adaptive DP5(4) that lands exactly on every multiple of dt."""
    n = x0.shape[0]
    traj = np.empty((steps + 1, n))
    traj[0] = x0
    y = x0.copy()
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    k5 = np.empty(n)
    k6 = np.empty(n)
    k7 = np.empty(n)
    tmp = np.empty(n)
    ynew = np.empty(n)
    h = dt
    hmin = 1e-12 * dt
    ode_rhs(kind, p, y, k1)
    for s in range(steps):
        remaining = dt
        while remaining > 0.0:
            last = h >= remaining
            hh = remaining if last else h
            for i in range(n):
                tmp[i] = y[i] + hh * _A21 * k1[i]
            ode_rhs(kind, p, tmp, k2)
            for i in range(n):
                tmp[i] = y[i] + hh * (_A31 * k1[i] + _A32 * k2[i])
            ode_rhs(kind, p, tmp, k3)
            for i in range(n):
                tmp[i] = y[i] + hh * (_A41 * k1[i] + _A42 * k2[i] + _A43 * k3[i])
            ode_rhs(kind, p, tmp, k4)
            for i in range(n):
                tmp[i] = y[i] + hh * (_A51 * k1[i] + _A52 * k2[i] + _A53 * k3[i] + _A54 * k4[i])
            ode_rhs(kind, p, tmp, k5)
            for i in range(n):
                tmp[i] = y[i] + hh * (_A61 * k1[i] + _A62 * k2[i] + _A63 * k3[i]
                                      + _A64 * k4[i] + _A65 * k5[i])
            ode_rhs(kind, p, tmp, k6)
            for i in range(n):
                ynew[i] = y[i] + hh * (_B1 * k1[i] + _B3 * k3[i] + _B4 * k4[i]
                                       + _B5 * k5[i] + _B6 * k6[i])
            ode_rhs(kind, p, ynew, k7)
            err = 0.0
            for i in range(n):
                e = hh * (_E1 * k1[i] + _E3 * k3[i] + _E4 * k4[i] + _E5 * k5[i]
                          + _E6 * k6[i] + _E7 * k7[i])
                sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
                err += (e / sc) ** 2
            err = np.sqrt(err / n)
            if not np.isfinite(err):
                return traj, s + 1
            if err <= 1.0:
                for i in range(n):
                    y[i] = ynew[i]
                    k1[i] = k7[i]
                if last:
                    remaining = 0.0
                else:
                    remaining -= hh
                fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
                if hh == h or fac < 1.0:
                    h = hh * fac
            else:
                h = hh * max(0.2, 0.9 * err ** -0.2)
                if h < hmin:
                    return traj, s + 1
        if _bad(y, limit):
            return traj, s + 1
        traj[s + 1] = y
    return traj, -1


@njit(cache=True, nogil=True)
def _orthonormalize(V, logs):
    """Twice-iterated modified Gram-Schmidt; adds log R_jj to logs."""
    n, k = V.shape
    for j in range(k):
        for _ in range(2):
            for i in range(j):
                r = 0.0
                for m in range(n):
                    r += V[m, i] * V[m, j]
                for m in range(n):
                    V[m, j] -= r * V[m, i]
        nrm = 0.0
        for m in range(n):
            nrm += V[m, j] * V[m, j]
        nrm = np.sqrt(nrm)
        if not (nrm > 0.0) or not np.isfinite(nrm):
            return False
        logs[j] += np.log(nrm)
        for m in range(n):
            V[m, j] /= nrm
    return True


@njit(cache=True, nogil=True)
def flow_tangent_qr(kind, p, x0, dt, steps, renorm, transient, V0):
    """RK4 one-step map with exact variational propagation of a k-frame.

    Returns (log_sums, x_end, ok).
    """
    n = x0.shape[0]
    k = V0.shape[1]
    x = x0.copy()
    V = V0.copy()
    logs = np.zeros(k)
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    junk = np.zeros(k)
    J = np.empty((n, n))
    K1 = np.empty((n, k))
    K2 = np.empty((n, k))
    K3 = np.empty((n, k))
    K4 = np.empty((n, k))
    Vt = np.empty((n, k))
    h = dt
    for it in range(transient + steps):
        s = it - transient
        ode_rhs(kind, p, x, k1)
        ode_jac(kind, p, x, J)
        K1[:, :] = J @ V
        for i in range(n):
            tmp[i] = x[i] + 0.5 * h * k1[i]
        Vt[:, :] = V + 0.5 * h * K1
        ode_rhs(kind, p, tmp, k2)
        ode_jac(kind, p, tmp, J)
        K2[:, :] = J @ Vt
        for i in range(n):
            tmp[i] = x[i] + 0.5 * h * k2[i]
        Vt[:, :] = V + 0.5 * h * K2
        ode_rhs(kind, p, tmp, k3)
        ode_jac(kind, p, tmp, J)
        K3[:, :] = J @ Vt
        for i in range(n):
            tmp[i] = x[i] + h * k3[i]
        Vt[:, :] = V + h * K3
        ode_rhs(kind, p, tmp, k4)
        ode_jac(kind, p, tmp, J)
        K4[:, :] = J @ Vt
        for i in range(n):
            x[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        V[:, :] = V + h / 6.0 * (K1 + 2.0 * K2 + 2.0 * K3 + K4)
        if s < 0:
            if not _orthonormalize(V, junk):
                return logs, x, False
        elif (s + 1) % renorm == 0 or s + 1 == steps:
            if not _orthonormalize(V, logs):
                return logs, x, False
    return logs, x, True


# -- echo state network ------------------------------------------------------

@njit(cache=True, nogil=True)
def _esn_step(indptr, indices, data, C, gamma, zeta, x, y, out):
    L = x.shape[0]
    d = y.shape[0]
    for i in range(L):
        s = 0.0
        for q in range(indptr[i], indptr[i + 1]):
            s += data[q] * x[indices[q]]
        cz = 0.0
        for j in range(d):
            cz += C[i, j] * y[j]
        out[i] = np.tanh(s + gamma * cz + zeta[i])


@njit(cache=True, nogil=True)
def _readout(W, a, x, out):
    d, L = W.shape
    for k in range(d):
        s = a[k]
        for j in range(L):
            s += W[k, j] * x[j]
        out[k] = s


@njit(cache=True, nogil=True)
def esn_drive(indptr, indices, data, C, gamma, zeta, x0, Y):
    T = Y.shape[0]
    L = x0.shape[0]
    X = np.empty((T, L))
    x = x0.copy()
    out = np.empty(L)
    for t in range(T):
        _esn_step(indptr, indices, data, C, gamma, zeta, x, Y[t], out)
        x[:] = out
        X[t] = x
    return X


@njit(cache=True, nogil=True)
def esn_closed_loop(indptr, indices, data, C, gamma, zeta, W, a, x0, y0, horizon):
    L = x0.shape[0]
    d = W.shape[0]
    X = np.empty((horizon, L))
    Yp = np.empty((horizon, d))
    x = np.empty(L)
    y = np.empty(d)
    _esn_step(indptr, indices, data, C, gamma, zeta, x0, y0, x)
    _readout(W, a, x, y)
    X[0] = x
    Yp[0] = y
    out = np.empty(L)
    for t in range(1, horizon):
        _esn_step(indptr, indices, data, C, gamma, zeta, x, y, out)
        x[:] = out
        _readout(W, a, x, y)
        X[t] = x
        Yp[t] = y
    return X, Yp


@njit(cache=True, nogil=True)
def esn_phi(indptr, indices, data, C, gamma, zeta, W, a, x):
    y = np.empty(W.shape[0])
    _readout(W, a, x, y)
    out = np.empty(x.shape[0])
    _esn_step(indptr, indices, data, C, gamma, zeta, x, y, out)
    return out


@njit(cache=True, nogil=True)
def esn_tangent_qr(indptr, indices, data, C, gamma, zeta, W, a, x0, V0, steps, renorm, transient):
    L = x0.shape[0]
    d = W.shape[0]
    k = V0.shape[1]
    x = x0.copy()
    y = np.empty(d)
    out = np.empty(L)
    V = V0.copy()
    logs = np.zeros(k)
    junk = np.zeros(k)
    AV = np.empty((L, k))
    CW = C @ W
    for it in range(transient + steps):
        s = it - transient
        _readout(W, a, x, y)
        _esn_step(indptr, indices, data, C, gamma, zeta, x, y, out)
        for i in range(L):
            for j in range(k):
                AV[i, j] = 0.0
            for q in range(indptr[i], indptr[i + 1]):
                col = indices[q]
                v = data[q]
                for j in range(k):
                    AV[i, j] += v * V[col, j]
        B = AV + gamma * (CW @ V)
        for i in range(L):
            g = 1.0 - out[i] * out[i]
            for j in range(k):
                V[i, j] = g * B[i, j]
        x[:] = out
        if s < 0:
            if not _orthonormalize(V, junk):
                return logs, x, False
        elif (s + 1) % renorm == 0 or s + 1 == steps:
            if not _orthonormalize(V, logs):
                return logs, x, False
    return logs, x, True
