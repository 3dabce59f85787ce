"""Ridge readout training and the one-step error epsilon."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import kernels
from .dynsys import Trajectory
from .errors import NumericalError, UsageError
from .reservoir import Readout, TrainedEsn

ALPHA_WARN = 1e-16


@dataclass(frozen=True)
class TrainSpec:
    washout: int
    alpha: float
    target_shift: int = 1

    def __post_init__(self):
        if self.washout < 0:
            raise UsageError("washout must be >= 0")
        if not (self.alpha >= 0 and np.isfinite(self.alpha)):
            raise UsageError("alpha must be finite and >= 0")
        if self.target_shift != 1:
            raise UsageError("only one-step-ahead targets (target_shift=1) are supported")


def _rows(a):
    return np.atleast_2d(a.data if isinstance(a, Trajectory) else np.asarray(a, dtype=float))


class RidgeAccumulator:
    """Centered Gram statistics that can be fed in blocks.

    Blocks are merged with the pairwise mean/comoment update, so pooling
    several trajectories gives the same solve as stacking their rows, and
    the result depends only on the order of ``add`` calls.
    """

    def __init__(self, n_features, n_targets):
        self.n = 0
        self.mx = np.zeros(n_features)
        self.my = np.zeros(n_targets)
        self.Sxx = np.zeros((n_features, n_features))
        self.Sxy = np.zeros((n_features, n_targets))

    def add(self, X, Y):
        X, Y = _rows(X), _rows(Y)
        if X.shape[0] != Y.shape[0]:
            raise UsageError("states and targets are not row-aligned")
        nb = X.shape[0]
        if nb == 0:
            return self
        mxb, myb = X.mean(axis=0), Y.mean(axis=0)
        Xc, Yc = X - mxb, Y - myb
        n = self.n + nb
        dx, dy = mxb - self.mx, myb - self.my
        w = self.n * nb / n
        self.Sxx += Xc.T @ Xc + w * np.outer(dx, dx)
        self.Sxy += Xc.T @ Yc + w * np.outer(dx, dy)
        self.mx += dx * (nb / n)
        self.my += dy * (nb / n)
        self.n = n
        return self

    def solve(self, alpha, fit_intercept=True):
        if self.n == 0:
            raise UsageError("no training rows")
        if fit_intercept:
            G, B = self.Sxx, self.Sxy
        else:
            # undo the centering: raw second moments
            G = self.Sxx + self.n * np.outer(self.mx, self.mx)
            B = self.Sxy + self.n * np.outer(self.mx, self.my)
        M = G + alpha * np.eye(G.shape[0])
        if alpha == 0:
            ev = np.linalg.eigvalsh(M)
            if ev[0] <= ev[-1] * M.shape[0] * np.finfo(float).eps:
                raise NumericalError("normal matrix is singular with alpha = 0; use alpha > 0")
        try:
            WT = scipy.linalg.cho_solve(scipy.linalg.cho_factor(M, lower=True), B)
        except np.linalg.LinAlgError:
            if alpha == 0:
                raise NumericalError("normal matrix is singular with alpha = 0; use alpha > 0")
            # positive definite in exact arithmetic but not to working precision
            ev, U = np.linalg.eigh(M)
            ev = np.maximum(ev, alpha)
            WT = U @ ((U.T @ B) / ev[:, None])
        W = WT.T
        a = self.my - W @ self.mx if fit_intercept else np.zeros(W.shape[0])
        return Readout(W, a)


def _check_fit_size(n_rows, n_features, alpha):
    if alpha < ALPHA_WARN:
        warnings.warn(f"alpha={alpha:g} is below {ALPHA_WARN:g}; the normal equations may be "
                      "badly conditioned", RuntimeWarning, stacklevel=3)
    if n_rows < n_features + 1:
        warnings.warn(f"{n_rows} training rows for {n_features} features; the fit is "
                      "underdetermined without regularization", RuntimeWarning, stacklevel=3)


def fit_readout(states, targets, spec, fit_intercept=True):
    """Minimize sum ||W x_t + a - y_t||^2 + alpha ||W||_F^2 over rows past the washout.

    The bias is unregularized: the problem is solved on centered data.
    """
    X, Y = _rows(states), _rows(targets)
    if X.shape[0] != Y.shape[0]:
        raise UsageError(f"{X.shape[0]} state rows vs {Y.shape[0]} target rows")
    if spec.washout >= X.shape[0]:
        raise UsageError("washout leaves no training rows")
    X, Y = X[spec.washout:], Y[spec.washout:]
    _check_fit_size(X.shape[0], X.shape[1], spec.alpha)
    return RidgeAccumulator(X.shape[1], Y.shape[1]).add(X, Y).solve(spec.alpha, fit_intercept)


def teacher_states(params, observations):
    """Row t is the reservoir state after inputs y_0 .. y_{t-1}, starting from 0.

    So row t pairs with observation y_t under the readout."""
    Y = np.ascontiguousarray(_rows(observations))
    if Y.shape[1] != params.d:
        raise UsageError(f"observations have {Y.shape[1]} columns, reservoir expects {params.d}")
    X = np.zeros((Y.shape[0], params.L))
    if Y.shape[0] > 1:
        X[1:] = kernels.esn_drive(*params.csr(), params.C, params.gamma, params.zeta,
                                  np.zeros(params.L), Y[:-1])
    return X


def _as_list(observations):
    if isinstance(observations, (list, tuple)):
        return list(observations)
    return [observations]


def _check_length(obs, washout):
    if len(_rows(obs)) < washout + 3:
        raise UsageError(f"{len(_rows(obs))} observation rows; need at least washout + 3 = "
                         f"{washout + 3}")


def train_pipeline(esn, observations, spec):
    """Drive from zero, drop the washout, regress state x_t on y_t.

    ``observations`` may be one trajectory or a list; several trajectories
    are pooled into one regression."""
    obs = _as_list(observations)
    acc = RidgeAccumulator(esn.L, esn.d)
    for o in obs:
        _check_length(o, spec.washout)
        X = teacher_states(esn, o)
        acc.add(X[spec.washout:], _rows(o)[spec.washout:])
    _check_fit_size(acc.n, esn.L, spec.alpha)
    return TrainedEsn.build(esn, acc.solve(spec.alpha))


def one_step_errors(te, observations, washout):
    """||y_t - h(x_t)|| for t >= washout along teacher-forced states."""
    Y = _rows(observations)
    X = teacher_states(te.params, Y)
    return np.linalg.norm(Y[washout:] - te.readout(X[washout:]), axis=1)


def estimate_epsilon(te, observations, washout):
    """Largest one-step-ahead training error (over all given trajectories)."""
    obs = _as_list(observations)
    for o in obs:
        if washout >= len(_rows(o)):
            raise UsageError("washout leaves no rows")
    return float(max(one_step_errors(te, o, washout).max() for o in obs))


def training_rmse(te, observations, washout):
    """Per-coordinate root mean square one-step error."""
    sq = []
    for o in _as_list(observations):
        Y = _rows(o)
        X = teacher_states(te.params, Y)
        sq.append((Y[washout:] - te.readout(X[washout:])) ** 2)
    return np.sqrt(np.concatenate(sq).mean(axis=0))
