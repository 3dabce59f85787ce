"""Causal-embedding forecasting: a delay-coordinate proxy system driving an
ESN whose consecutive state pairs are mapped back to proxy states.

Index convention: with scalar observations y_0 .. y_{N-1}, proxy row k is
P[k] = (y_k, y_{k-1}, ..., y_{k-depth+1}) (zeros before the series starts)
and inner state S[k] is the ESN state after consuming P[0] .. P[k].  The
readout h' maps (S[k-1], S[k]) to P[k+1].
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import kernels
from .dynsys import Trajectory
from .errors import UsageError
from .lyapunov import DiscreteMap
from .reservoir import EsnParams, Readout, generate, top_singular_value
from .training import RidgeAccumulator, TrainSpec, _check_fit_size


@dataclass(frozen=True)
class DelayStateMap:
    """Linear state map F(x, z) = A x + C z with A the lower shift matrix."""
    depth: int
    d: int = 1

    def __post_init__(self):
        if self.depth < 1 or self.d != 1:
            raise UsageError("delay map needs depth >= 1 and scalar observations (d = 1)")

    @property
    def A(self):
        return np.eye(self.depth, k=-1)

    @property
    def C(self):
        C = np.zeros((self.depth, 1))
        C[0, 0] = 1.0
        return C

    def step(self, x, z):
        x = np.asarray(x, dtype=float)
        out = np.empty(self.depth)
        out[0] = np.asarray(z, dtype=float).reshape(-1)[0]
        out[1:] = x[:-1]
        return out

    def drive(self, y, x0=None):
        """Row k is the state after consuming y_0 .. y_k."""
        y = np.asarray(y, dtype=float).reshape(-1)
        x = np.zeros(self.depth) if x0 is None else np.asarray(x0, dtype=float)
        out = np.empty((y.size, self.depth))
        for k, v in enumerate(y):
            x = self.step(x, v)
            out[k] = x
        return out


def delay_rows(y, depth):
    """P[k] = (y_k, ..., y_{k-depth+1}) by direct indexing (zero padded)."""
    y = np.asarray(y, dtype=float).reshape(-1)
    P = np.zeros((y.size, depth))
    for j in range(depth):
        P[j:, j] = y[:y.size - j]
    return P


@dataclass(frozen=True, eq=False)
class StackedSystem:
    proxy: DelayStateMap
    inner: EsnParams
    readout: Optional[Readout] = None   # h': R^{2L'} -> R^{depth}
    eps_prime: Optional[float] = None
    L_h: Optional[float] = None
    L_z: Optional[float] = None

    def __post_init__(self):
        if self.inner.d != self.proxy.depth:
            raise UsageError("inner ESN input dimension must equal the delay depth")
        if self.readout is not None and self.readout.W.shape != (self.proxy.depth,
                                                                 2 * self.inner.L):
            raise UsageError("h' must map paired states (2 L') to proxy states")

    @property
    def trained(self):
        return self.readout is not None


def generate_stacked(seed, depth, L_prime, gamma, spectral_radius, density=0.01):
    if depth < 3 or depth % 2 == 0:
        raise UsageError("depth must be odd and >= 3")
    if L_prime < depth:
        raise UsageError("L' must be >= depth")
    inner = generate(seed, L_prime, depth, spectral_radius, gamma, density)
    return StackedSystem(DelayStateMap(depth), inner)


@dataclass(frozen=True)
class SiCheck:
    invertible: bool
    sigma_min: float
    condition: float


def check_si_invertibility(inner):
    """Full column rank of gamma C makes z -> tanh(A x + gamma C z) injective."""
    M = inner.gamma * np.asarray(inner.C)
    s = np.linalg.svd(M, compute_uv=False)
    tol = max(M.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    smin = float(s[-1]) if M.shape[0] >= M.shape[1] else 0.0
    ok = M.shape[0] >= M.shape[1] and smin > tol
    return SiCheck(bool(ok), smin, float(s[0] / smin) if smin > 0 else float("inf"))


def _scalar(obs):
    y = np.asarray(obs.data if isinstance(obs, Trajectory) else obs, dtype=float)
    if y.ndim == 2:
        if y.shape[1] != 1:
            raise UsageError("causal embedding takes scalar observations")
        y = y[:, 0]
    return y


def _inner_states(inner, P):
    return kernels.esn_drive(*inner.csr(), inner.C, inner.gamma, inner.zeta,
                             np.zeros(inner.L), np.ascontiguousarray(P))


def train_stacked(sys, observations, spec):
    """Fit h' by ridge regression from (S[k-1], S[k]) to P[k+1] for k past the washout."""
    obs = observations if isinstance(observations, (list, tuple)) else [observations]
    D, L = sys.proxy.depth, sys.inner.L
    acc = RidgeAccumulator(2 * L, D)
    parts = []
    for o in obs:
        y = _scalar(o)
        if y.size < spec.washout + D + 3:
            raise UsageError(f"{y.size} observations; need at least washout + depth + 3 = "
                             f"{spec.washout + D + 3}")
        P = sys.proxy.drive(y)
        S = _inner_states(sys.inner, P)
        k = np.arange(max(spec.washout, 1), y.size - 1)
        Z = np.hstack([S[k - 1], S[k]])
        acc.add(Z, P[k + 1])
        parts.append((Z, P[k + 1]))
    _check_fit_size(acc.n, 2 * L, spec.alpha)
    ro = acc.solve(spec.alpha)
    eps = max(float(np.linalg.norm(T - ro(Z), axis=1).max()) for Z, T in parts)
    return replace(sys, readout=ro, eps_prime=eps, L_h=top_singular_value(ro.W),
                   L_z=abs(sys.inner.gamma) * top_singular_value(sys.inner.C))


def _require_trained(sys):
    if not sys.trained:
        raise UsageError("stacked system has no readout; call train_stacked first")


def initial_condition_stacked(sys, warmup):
    """(S[N-2], P[N-1]) from a warmup of N >= 2 scalar observations."""
    y = _scalar(warmup)
    if y.size < 2:
        raise UsageError("warmup needs at least two observations")
    P = sys.proxy.drive(y)
    S = _inner_states(sys.inner, P[:-1])
    return S[-1], P[-1]


def closed_loop_stacked(sys, x0, p0, horizon):
    """x~_t = F'(x~_{t-1}, y'~_{t-1}), y'~_t = h'(x~_{t-1}, x~_t), for t = 1..H.

    Returns (states, proxies), each with H rows."""
    _require_trained(sys)
    if horizon < 1:
        raise UsageError("horizon must be >= 1")
    inner, ro = sys.inner, sys.readout
    args = (*inner.csr(), inner.C, inner.gamma, inner.zeta)
    x_prev = np.ascontiguousarray(x0, dtype=float)
    p = np.ascontiguousarray(p0, dtype=float)
    X = np.empty((horizon, inner.L))
    Pp = np.empty((horizon, sys.proxy.depth))
    for t in range(horizon):
        x = kernels.esn_drive(*args, x_prev, p[None, :])[0]
        p = ro(np.concatenate([x_prev, x]))
        X[t], Pp[t] = x, p
        x_prev = x
    return X, Pp


def forecast_stacked(sys, warmup, horizon):
    """Predicted observations y~_1..H, read off as the newest delay coordinate."""
    x0, p0 = initial_condition_stacked(sys, warmup)
    _, Pp = closed_loop_stacked(sys, x0, p0, horizon)
    dt = warmup.dt if isinstance(warmup, Trajectory) else 1.0
    t0 = warmup.t0 + len(warmup) * dt if isinstance(warmup, Trajectory) else 0.0
    return Trajectory(Pp[:, :1], dt, t0)


class StackedMap(DiscreteMap):
    """The enlarged map (x_{-1}, x_0) -> (x_0, F'(x_0, h'(x_{-1}, x_0)))."""

    def __init__(self, sys):
        _require_trained(sys)
        self.sys = sys
        self.L = sys.inner.L
        self.dim = 2 * self.L
        inner = sys.inner
        self._A = inner.A.toarray()
        W = sys.readout.W
        self._CW1 = inner.gamma * (inner.C @ W[:, :self.L])
        self._CW2 = inner.gamma * (inner.C @ W[:, self.L:])

    def _pre(self, z):
        inner, ro = self.sys.inner, self.sys.readout
        x0 = z[self.L:]
        return self._A @ x0 + inner.gamma * (inner.C @ ro(z)) + inner.zeta

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        return np.concatenate([z[self.L:], np.tanh(self._pre(z))])

    def jvp(self, z, V):
        z = np.asarray(z, dtype=float)
        g = 1.0 - np.tanh(self._pre(z)) ** 2
        top, bot = V[:self.L], V[self.L:]
        lower = g[:, None] * (self._CW1 @ top + (self._A + self._CW2) @ bot)
        return np.vstack([bot, lower])

    def jacobian(self, z):
        return self.jvp(z, np.eye(self.dim))
