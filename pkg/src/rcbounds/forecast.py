"""Iterated multistep (closed-loop) forecasting and per-step errors."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .dynsys import Trajectory
from .errors import UsageError
from .jsonio import write_csv
from .training import teacher_states


@dataclass(frozen=True, eq=False)
class ForecastRun:
    """Truth vs prediction for steps 1..H.

    ``x_true`` and ``x_pred`` hold the reservoir states for steps 0..H
    (teacher-forced along the truth, and closed-loop respectively); ``y0``
    is the last warmup observation, shared by both.
    """
    truth: Trajectory
    predicted: Trajectory
    err_norms: np.ndarray
    dt: float
    state_err_norms: Optional[np.ndarray] = None
    x_true: Optional[np.ndarray] = None
    x_pred: Optional[np.ndarray] = None
    y0: Optional[np.ndarray] = None

    @property
    def horizon(self):
        return len(self.err_norms)

    def to_csv(self, path, lambda1=None, extra=None):
        """``step,t_model,t_lyap,truth...,pred...,err_norm`` plus optional tag columns."""
        d = self.truth.n
        extra = dict(extra or {})
        header = (["step", "t_model", "t_lyap"] + [f"truth{i}" for i in range(d)]
                  + [f"pred{i}" for i in range(d)] + ["err_norm"] + list(extra))
        lam = float("nan") if lambda1 is None else float(lambda1)

        def rows():
            for k in range(self.horizon):
                step = k + 1
                t = step * self.dt
                yield ([step, t, t * lam, *self.truth.data[k], *self.predicted.data[k],
                        self.err_norms[k]] + list(extra.values()))

        write_csv(path, header, rows())


def _warmup_rows(te, warmup):
    Y = np.atleast_2d(warmup.data if isinstance(warmup, Trajectory) else warmup).astype(float)
    if Y.shape[0] < 1:
        raise UsageError("warmup must have at least one row")
    if Y.shape[1] != te.params.d:
        raise UsageError(f"warmup has {Y.shape[1]} columns, model expects {te.params.d}")
    return Y


def initial_condition(te, warmup):
    """(x0~, y0~): the state after all but the last warmup row, and that last row."""
    Y = _warmup_rows(te, warmup)
    return teacher_states(te.params, Y)[-1], Y[-1].copy()


def closed_loop(te, x0, y0, horizon):
    """States x~_1..H and outputs y~_1..H of the closed loop started at (x0, y0)."""
    if horizon < 1:
        raise UsageError("horizon must be >= 1")
    p, r = te.params, te.readout
    return kernels.esn_closed_loop(*p.csr(), p.C, p.gamma, p.zeta, r.W, r.a,
                                   np.ascontiguousarray(x0, dtype=float),
                                   np.ascontiguousarray(y0, dtype=float), int(horizon))


def forecast(te, warmup, horizon):
    """Teacher-force the warmup from x = 0, then feed predictions back.

    The first closed-loop input is the last warmup observation."""
    x0, y0 = initial_condition(te, warmup)
    _, Yp = closed_loop(te, x0, y0, horizon)
    dt = warmup.dt if isinstance(warmup, Trajectory) else 1.0
    t0 = warmup.t0 + len(warmup) * dt if isinstance(warmup, Trajectory) else 0.0
    return Trajectory(Yp, dt, t0)


def evaluate(te, warmup, truth_future, keep_states=True):
    """Forecast over ``len(truth_future)`` steps and compare.

    With ``keep_states=False`` only the state error norms are kept, which
    matters for long horizons (two H x L arrays per run otherwise)."""
    if not isinstance(truth_future, Trajectory):
        raise UsageError("truth_future must be a Trajectory")
    dt = truth_future.dt
    if isinstance(warmup, Trajectory) and not np.isclose(warmup.dt, dt, rtol=1e-12, atol=0):
        raise UsageError(f"warmup dt {warmup.dt} differs from truth dt {dt}")
    Yw = _warmup_rows(te, warmup)
    if truth_future.n != Yw.shape[1]:
        raise UsageError("truth and warmup dimensions differ")
    H = len(truth_future)
    Yall = np.vstack([Yw, truth_future.data])
    Xall = teacher_states(te.params, Yall)
    n = Yw.shape[0]
    x_true = Xall[n - 1:]                      # x_0 .. x_{H}
    Xp, Yp = closed_loop(te, x_true[0], Yw[-1], H)
    x_pred = np.vstack([x_true[:1], Xp])
    pred = Trajectory(Yp, dt, truth_future.t0)
    return ForecastRun(
        truth=truth_future, predicted=pred,
        err_norms=np.linalg.norm(truth_future.data - Yp, axis=1), dt=dt,
        state_err_norms=np.linalg.norm(x_true[1:] - Xp, axis=1),
        x_true=x_true if keep_states else None, x_pred=x_pred if keep_states else None,
        y0=Yw[-1].copy())
