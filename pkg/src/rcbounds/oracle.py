"""Numerical checks of the error analysis: the linearized error sequence,
the first-order Taylor decomposition of the state error, and the angle
inequality for sums of linearly independent vectors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import kernels
from .dynsys import Trajectory
from .errors import UsageError
from .lyapunov import EsnMap
from .reservoir import Readout, TrainedEsn

TRAJECTORY_TOL = 1e-10
PRESATURATION_FRACTION = 0.01
ANGLE_SLACK = 1e-12
RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class LinearizedRun:
    a_seq: np.ndarray
    c_seq: np.ndarray
    base_traj: np.ndarray


def _base_rows(base):
    return np.atleast_2d(base.data if isinstance(base, Trajectory) else np.asarray(base, float))


def check_trajectory(fmap, base, tol=TRAJECTORY_TOL):
    """Largest ||x_t - Phi(x_{t-1})|| / max(1, ||x_t||) along ``base``."""
    X = _base_rows(base)
    dev = 0.0
    for t in range(1, X.shape[0]):
        dev = max(dev, np.linalg.norm(X[t] - fmap(X[t - 1])) / max(1.0, np.linalg.norm(X[t])))
    if dev > tol:
        raise UsageError(f"base is not a trajectory of the map: max deviation {dev:.3g}")
    return dev


def linearized_sequence(fmap, base, c_seq, check=True):
    """a_0 = 0, a_t = C_t + DPhi(x~_{t-1}) a_{t-1}.

    ``base`` holds x~_0 .. x~_{T-1} and ``c_seq`` holds C_0 .. C_{T-1}
    (C_0 is not used since a_0 = 0)."""
    X = _base_rows(base)
    C = np.atleast_2d(np.asarray(c_seq, dtype=float))
    if C.shape != X.shape:
        raise UsageError(f"c_seq has shape {C.shape}, base has {X.shape}")
    if check:
        check_trajectory(fmap, X)
    a = np.zeros_like(C)
    for t in range(1, C.shape[0]):
        a[t] = C[t] + fmap.jvp(X[t - 1], a[t - 1][:, None])[:, 0]
    return LinearizedRun(a, C, X)


def expanded_sequence(fmap, base, c_seq):
    """a_t = C_t + sum_{s=1}^{t-1} DPhi^{t-s}(x~_s) C_s with explicit
    Jacobian products; quadratic in T and meant as a test oracle."""
    X = _base_rows(base)
    C = np.atleast_2d(np.asarray(c_seq, dtype=float))
    J = [fmap.jacobian(x) for x in X]
    a = np.zeros_like(C)
    for t in range(1, C.shape[0]):
        acc = C[t].copy()
        for s in range(1, t):
            P = np.eye(X.shape[1])
            for u in range(s, t):
                P = J[u] @ P
            acc += P @ C[s]
        a[t] = acc
    return a


# -- Taylor decomposition -----------------------------------------------------------

def _phi_rows(te, X):
    p, r = te.params, te.readout
    return np.array([kernels.esn_phi(*p.csr(), p.C, p.gamma, p.zeta, r.W, r.a, x) for x in X])


def _drive_rows(te, X, Y):
    p = te.params
    return np.array([kernels.esn_drive(*p.csr(), p.C, p.gamma, p.zeta, x, y[None, :])[0]
                     for x, y in zip(X, Y)])


def decompose(te, x_true, x_pred, y_true):
    """Split the state error into its linear part a_t and the remainder.

    ``x_true``/``x_pred`` are states for steps 0..H and ``y_true`` the
    observations for steps 0..H-1.  Because the first closed-loop step is
    fed the true y_0, x~_1 = x_1; the recursion is therefore run from step 1,
    where dx = 0, so that dx at step 2 equals C_2 exactly.

    Returns a dict of arrays indexed by step t = 1..H (entry 0 is step 1).
    """
    x_true = np.asarray(x_true, dtype=float)
    x_pred = np.asarray(x_pred, dtype=float)
    y_true = np.atleast_2d(np.asarray(y_true, dtype=float))
    H = x_true.shape[0] - 1
    if x_pred.shape != x_true.shape or y_true.shape[0] < H:
        raise UsageError("state and observation sequences are not aligned")
    base = x_pred[1:]                       # x~_1 .. x~_H
    dx = x_true[1:] - base
    # C_{t+1} = F(x_t, y_t) - F(x_t, h(x_t)), for t = 1 .. H-1
    Xs, Ys = x_true[1:H], y_true[1:H]
    c = np.zeros_like(base)
    if H > 1:
        c[1:] = _drive_rows(te, Xs, Ys) - _phi_rows(te, Xs)
    run = linearized_sequence(EsnMap(te), base, c, check=False)
    return {"dx": dx, "a": run.a_seq, "c": c, "residual": dx - run.a_seq}


def taylor_decomposition_check(te, run, saturation=None, eps=None):
    """JSON-ready report on dx_t - a_t along a stored forecast run.

    The pre-saturation window is the set of steps with ||dx|| below 1% of
    ``saturation`` (default: the largest ||dx|| seen).  Over it the
    residual at step t+1 is compared with max_{s<=t} ||dx_s||^2; the report
    gives the smallest constant c making that a bound.
    """
    if run.x_true is None or run.x_pred is None:
        raise UsageError("forecast run has no stored states (evaluate with keep_states=True)")
    y_true = np.vstack([run.y0[None, :], run.truth.data])
    parts = decompose(te, run.x_true, run.x_pred, y_true)
    dxn = np.linalg.norm(parts["dx"], axis=1)
    an = np.linalg.norm(parts["a"], axis=1)
    cn = np.linalg.norm(parts["c"], axis=1)
    rn = np.linalg.norm(parts["residual"], axis=1)
    sat = float(dxn.max()) if saturation is None else float(saturation)
    window = np.flatnonzero(dxn < PRESATURATION_FRACTION * sat)
    # window must be an initial segment to make the running max meaningful
    stop = len(dxn)
    for k in range(len(dxn)):
        if not dxn[k] < PRESATURATION_FRACTION * sat:
            stop = k
            break
    runmax = np.maximum.accumulate(dxn ** 2)
    ratios = [rn[k + 1] / runmax[k] for k in range(stop - 1) if runmax[k] > 0]
    c_fit = max(ratios) if ratios else 0.0
    report = {
        "steps": list(range(1, len(dxn) + 1)),
        "dx_norm": dxn, "a_norm": an, "c_norm": cn, "residual_norm": rn,
        "base_case_residual": float(rn[1]) if len(rn) > 1 else 0.0,
        "presaturation_steps": int(stop),
        "presaturation_count": int(window.size),
        "second_order_constant": float(c_fit),
        "second_order_ok": bool(np.isfinite(c_fit)),
    }
    if eps is not None:
        bound = te.lipschitz.L_z * float(eps)
        report["c_bound"] = bound
        report["c_bound_ok"] = bool(np.all(cn <= bound * (1 + 1e-12)))
    return report


def perturbed_readout(te, shift):
    """Same reservoir, readout bias moved by ``shift``."""
    r = te.readout
    return TrainedEsn(te.params, Readout(r.W, r.a + np.asarray(shift, dtype=float)), te.lipschitz)


def perturbation_residuals(te, x0, shift, steps):
    """Residual norms ||dx_t - a_t|| for t = 1..steps+1 when the truth is the
    same reservoir with readout bias moved by ``shift``.

    Truth and prediction start from the same state and observation, so the
    readout error is the only source of error."""
    truth = perturbed_readout(te, shift)
    p = te.params
    x0 = np.ascontiguousarray(x0, dtype=float)
    y0 = truth.readout(x0)
    n = int(steps) + 2
    r = truth.readout
    Xt, Yt = kernels.esn_closed_loop(*p.csr(), p.C, p.gamma, p.zeta, r.W, r.a, x0, y0, n)
    r = te.readout
    Xp, _ = kernels.esn_closed_loop(*p.csr(), p.C, p.gamma, p.zeta, r.W, r.a, x0, y0, n)
    x_true = np.vstack([x0, Xt])
    x_pred = np.vstack([x0, Xp])
    y_true = np.vstack([y0, Yt])
    parts = decompose(te, x_true, x_pred, y_true)
    return np.linalg.norm(parts["residual"], axis=1)


def perturbation_scaling(te, x0, shift, steps=5):
    """Ratio residual(shift) / residual(shift / 2) over the first ``steps``
    steps with a nonzero residual (step 1 is zero by construction)."""
    full = perturbation_residuals(te, x0, shift, steps)
    half = perturbation_residuals(te, x0, 0.5 * np.asarray(shift, dtype=float), steps)
    return full[2:steps + 2] / half[2:steps + 2]


# -- angle lemma ----------------------------------------------------------------------

@dataclass(frozen=True)
class AngleCheck:
    lhs: float
    rhs: float
    holds: bool
    angles: tuple


def angle_lemma_check(vectors):
    """Check ||sum v_i|| >= 2^{-(r-1)} prod sin(theta_i) sum ||v_i||.

    theta_i is the smallest principal angle between span(v_{i+1}..v_r) and
    span(v_1..v_i)."""
    V = np.atleast_2d(np.asarray(vectors, dtype=float))
    r = V.shape[0]
    if not 2 <= r <= 8:
        raise UsageError("need between 2 and 8 vectors")
    if r > V.shape[1]:
        raise UsageError(f"{r} vectors in dimension {V.shape[1]} cannot be independent")
    sv = np.linalg.svd(V, compute_uv=False)
    if not sv[-1] > RANK_TOL:
        raise UsageError(f"vectors are numerically dependent (sigma_min = {sv[-1]:.3g})")
    angles = []
    for i in range(1, r):
        angles.append(float(np.min(scipy.linalg.subspace_angles(V[i:].T, V[:i].T))))
    lhs = float(np.linalg.norm(V.sum(axis=0)))
    rhs = float(np.prod(np.sin(angles)) * np.linalg.norm(V, axis=1).sum() / 2.0 ** (r - 1))
    return AngleCheck(lhs, rhs, lhs >= rhs - ANGLE_SLACK, tuple(angles))
