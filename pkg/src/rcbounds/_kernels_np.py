"""Pure-numpy implementations mirroring ``_kernels_nb``.

The ``*_fn`` variants take Python callables and back custom ODE systems,
which the numba path cannot compile.
"""
import numpy as np

_A = (
    (),
    (1.0 / 5.0,),
    (3.0 / 40.0, 9.0 / 40.0),
    (44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0),
    (19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0),
    (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0),
)
_B = (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0)
_E = (71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0,
      22.0 / 525.0, -1.0 / 40.0)


def _lorenz(p):
    s, r, b = float(p[0]), float(p[1]), float(p[2])

    def f(x):
        return np.array([-s * (x[0] - x[1]), r * x[0] - x[1] - x[0] * x[2], -b * x[2] + x[0] * x[1]])

    def jac(x):
        return np.array([[-s, s, 0.0], [r - x[2], -1.0, -x[0]], [x[1], x[0], -b]])

    return f, jac


def _rossler(p):
    a, b, c = float(p[0]), float(p[1]), float(p[2])

    def f(x):
        return np.array([-x[1] - x[2], x[0] + a * x[1], b + x[2] * (x[0] - c)])

    def jac(x):
        return np.array([[0.0, -1.0, -1.0], [1.0, a, 0.0], [x[2], 0.0, x[0] - c]])

    return f, jac


def builtin_functions(kind, p):
    return _lorenz(p) if kind == 0 else _rossler(p)


def ode_rhs(kind, p, x, out):
    out[:] = builtin_functions(kind, p)[0](x)


def ode_jac(kind, p, x, J):
    J[:, :] = builtin_functions(kind, p)[1](x)


def _bad(x, limit):
    return not np.all(np.isfinite(x)) or np.max(np.abs(x)) > limit


def _rk4(f, x, h):
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_trajectory_fn(f, x0, dt, steps, substeps, limit):
    x = np.array(x0, dtype=float)
    traj = np.empty((steps + 1, x.size))
    traj[0] = x
    h = dt / substeps
    for s in range(steps):
        for _ in range(substeps):
            x = _rk4(f, x, h)
        if _bad(x, limit):
            return traj, s + 1
        traj[s + 1] = x
    return traj, -1


def rk4_trajectory(kind, p, x0, dt, steps, substeps, limit):
    return rk4_trajectory_fn(builtin_functions(kind, p)[0], x0, dt, steps, substeps, limit)


def dopri_trajectory_fn(f, x0, dt, steps, atol, rtol, limit):
    y = np.array(x0, dtype=float)
    n = y.size
    traj = np.empty((steps + 1, n))
    traj[0] = y
    h = dt
    hmin = 1e-12 * dt
    k = [None] * 7
    k[0] = f(y)
    for s in range(steps):
        remaining = dt
        while remaining > 0.0:
            last = h >= remaining
            hh = remaining if last else h
            for i in range(1, 6):
                incr = sum(a * kj for a, kj in zip(_A[i], k[:i]))
                k[i] = f(y + hh * incr)
            ynew = y + hh * sum(b * kj for b, kj in zip(_B, k[:6]))
            k[6] = f(ynew)
            e = hh * sum(c * kj for c, kj in zip(_E, k))
            sc = atol + rtol * np.maximum(np.abs(y), np.abs(ynew))
            err = float(np.sqrt(np.mean((e / sc) ** 2)))
            if not np.isfinite(err):
                return traj, s + 1
            if err <= 1.0:
                y = ynew
                k[0] = k[6]
                remaining = 0.0 if last else remaining - hh
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


def dopri_trajectory(kind, p, x0, dt, steps, atol, rtol, limit):
    return dopri_trajectory_fn(builtin_functions(kind, p)[0], x0, dt, steps, atol, rtol, limit)


def qr_renormalize(V, logs):
    Q, R = np.linalg.qr(V)
    diag = np.abs(np.diag(R))
    if not np.all(np.isfinite(diag)) or np.any(diag == 0.0):
        return V, False
    logs += np.log(diag)
    # fix column signs so the frame evolves continuously
    Q = Q * np.sign(np.diag(R))
    return Q, True


def flow_tangent_qr_fn(f, jac, x0, dt, steps, renorm, transient, V0):
    x = np.array(x0, dtype=float)
    V = np.array(V0, dtype=float)
    logs = np.zeros(V.shape[1])
    h = dt
    for it in range(transient + steps):
        s = it - transient
        k1 = f(x)
        K1 = jac(x) @ V
        x2 = x + 0.5 * h * k1
        k2 = f(x2)
        K2 = jac(x2) @ (V + 0.5 * h * K1)
        x3 = x + 0.5 * h * k2
        k3 = f(x3)
        K3 = jac(x3) @ (V + 0.5 * h * K2)
        x4 = x + h * k3
        k4 = f(x4)
        K4 = jac(x4) @ (V + h * K3)
        x = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        V = V + h / 6.0 * (K1 + 2.0 * K2 + 2.0 * K3 + K4)
        if s < 0:
            V, ok = qr_renormalize(V, np.zeros(V.shape[1]))
            if not ok:
                return logs, x, False
        elif (s + 1) % renorm == 0 or s + 1 == steps:
            V, ok = qr_renormalize(V, logs)
            if not ok:
                return logs, x, False
    return logs, x, True


def flow_tangent_qr(kind, p, x0, dt, steps, renorm, transient, V0):
    f, jac = builtin_functions(kind, p)
    return flow_tangent_qr_fn(f, jac, x0, dt, steps, renorm, transient, V0)


# -- echo state network ------------------------------------------------------

def _dense(indptr, indices, data, L):
    A = np.zeros((L, L))
    rows = np.repeat(np.arange(L), np.diff(indptr))
    A[rows, indices] = data
    return A


def esn_drive(indptr, indices, data, C, gamma, zeta, x0, Y):
    L = x0.shape[0]
    A = _dense(indptr, indices, data, L)
    X = np.empty((Y.shape[0], L))
    x = x0
    for t in range(Y.shape[0]):
        x = np.tanh(A @ x + gamma * (C @ Y[t]) + zeta)
        X[t] = x
    return X


def esn_closed_loop(indptr, indices, data, C, gamma, zeta, W, a, x0, y0, horizon):
    L = x0.shape[0]
    A = _dense(indptr, indices, data, L)
    X = np.empty((horizon, L))
    Yp = np.empty((horizon, W.shape[0]))
    x = np.tanh(A @ x0 + gamma * (C @ y0) + zeta)
    y = W @ x + a
    X[0] = x
    Yp[0] = y
    for t in range(1, horizon):
        x = np.tanh(A @ x + gamma * (C @ y) + zeta)
        y = W @ x + a
        X[t] = x
        Yp[t] = y
    return X, Yp


def esn_phi(indptr, indices, data, C, gamma, zeta, W, a, x):
    A = _dense(indptr, indices, data, x.shape[0])
    y = W @ x + a
    return np.tanh(A @ x + gamma * (C @ y) + zeta)


def esn_tangent_qr(indptr, indices, data, C, gamma, zeta, W, a, x0, V0, steps, renorm, transient):
    L = x0.shape[0]
    A = _dense(indptr, indices, data, L)
    M = A + gamma * (C @ W)
    x = x0
    V = np.array(V0, dtype=float)
    logs = np.zeros(V.shape[1])
    for it in range(transient + steps):
        s = it - transient
        x = np.tanh(A @ x + gamma * (C @ (W @ x + a)) + zeta)
        V = (1.0 - x * x)[:, None] * (M @ V)
        if s < 0:
            V, ok = qr_renormalize(V, np.zeros(V.shape[1]))
            if not ok:
                return logs, x, False
        elif (s + 1) % renorm == 0 or s + 1 == steps:
            V, ok = qr_renormalize(V, logs)
            if not ok:
                return logs, x, False
    return logs, x, True
