"""Lyapunov exponents of discrete maps by Benettin / QR tangent propagation.

A map handle exposes ``__call__`` (one iteration), ``jacobian`` and
``tangent_qr``; the last one is the hot loop and is overridden by the ESN
and flow handles to run on the compiled kernels.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels_np, kernels
from .errors import NumericalError, UsageError
from .jsonio import write_csv

FD_STEP = 1e-7
MIN_STEPS = 1000


class DiscreteMap:
    dim: int

    def __call__(self, x):
        raise NotImplementedError

    def jacobian(self, x):
        raise NotImplementedError

    def jvp(self, x, V):
        return self.jacobian(x) @ V

    def tangent_qr(self, x0, V0, steps, renorm, transient):
        """Returns (sum of log R_ii, final state, ok).

        The frame is carried through the transient too (renormalized every
        step, logs discarded) so it starts the measured run aligned."""
        x = np.array(x0, dtype=float)
        V = np.array(V0, dtype=float)
        logs = np.zeros(V.shape[1])
        for it in range(transient + steps):
            s = it - transient
            V = self.jvp(x, V)
            x = self(x)
            if s < 0:
                V, ok = _kernels_np.qr_renormalize(V, np.zeros(V.shape[1]))
                if not ok:
                    return logs, x, False
            elif (s + 1) % renorm == 0 or s + 1 == steps:
                V, ok = _kernels_np.qr_renormalize(V, logs)
                if not ok:
                    return logs, x, False
        return logs, x, True


class LinearMap(DiscreteMap):
    def __init__(self, M):
        self.M = np.atleast_2d(np.asarray(M, dtype=float))
        self.dim = self.M.shape[0]

    def __call__(self, x):
        return self.M @ x

    def jacobian(self, x):
        return self.M

    def tangent_qr(self, x0, V0, steps, renorm, transient):
        # the Jacobian is constant, so the state never needs iterating
        V = np.array(V0, dtype=float)
        logs = np.zeros(V.shape[1])
        for it in range(transient + steps):
            s = it - transient
            V = self.M @ V
            if s < 0 or (s + 1) % renorm == 0 or s + 1 == steps:
                V, ok = _kernels_np.qr_renormalize(V, np.zeros_like(logs) if s < 0 else logs)
                if not ok:
                    return logs, np.asarray(x0, dtype=float), False
        return logs, np.asarray(x0, dtype=float), True


class CallableMap(DiscreteMap):
    """Wraps ``f``; without ``jac`` the Jacobian is forward differences."""

    def __init__(self, f, dim, jac=None, fd_step=FD_STEP):
        self.f, self.jac, self.dim, self.fd_step = f, jac, int(dim), fd_step

    def __call__(self, x):
        return np.asarray(self.f(x), dtype=float)

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        if self.jac is not None:
            return np.atleast_2d(np.asarray(self.jac(x), dtype=float))
        f0 = self(x)
        J = np.empty((f0.size, x.size))
        for i in range(x.size):
            xp = x.copy()
            h = self.fd_step * max(1.0, abs(x[i]))
            xp[i] += h
            J[:, i] = (self(xp) - f0) / h
        return J


class FlowMap(DiscreteMap):
    """One RK4 step of length ``dt`` of an ODE system.

    Tangent vectors go through the exact variational RK4 stages using the
    system's analytic Jacobian (forward differences if it has none)."""

    def __init__(self, system, dt):
        if not dt > 0:
            raise UsageError("dt must be positive")
        self.system, self.dt, self.dim = system, float(dt), system.dim
        f, jac = system.functions()
        if jac is None:
            fd = CallableMap(f, system.dim)
            jac = fd.jacobian
        self._f, self._jac = f, jac

    def __call__(self, x):
        return _kernels_np._rk4(self._f, np.asarray(x, dtype=float), self.dt)

    def jvp(self, x, V):
        f, jac, h = self._f, self._jac, self.dt
        k1 = f(x)
        K1 = jac(x) @ V
        x2 = x + 0.5 * h * k1
        k2 = f(x2)
        K2 = jac(x2) @ (V + 0.5 * h * K1)
        x3 = x + 0.5 * h * k2
        K3 = jac(x3) @ (V + 0.5 * h * K2)
        x4 = x + h * f(x3)
        K4 = jac(x4) @ (V + h * K3)
        return V + h / 6.0 * (K1 + 2.0 * K2 + 2.0 * K3 + K4)

    def jacobian(self, x):
        return self.jvp(np.asarray(x, dtype=float), np.eye(self.dim))

    def tangent_qr(self, x0, V0, steps, renorm, transient):
        x0 = np.ascontiguousarray(x0, dtype=float)
        V0 = np.ascontiguousarray(V0, dtype=float)
        if self.system.kind >= 0:
            return kernels.flow_tangent_qr(self.system.kind, self.system.param_vector, x0,
                                           self.dt, steps, renorm, transient, V0)
        return _kernels_np.flow_tangent_qr_fn(self._f, self._jac, x0, self.dt, steps, renorm,
                                              transient, V0)


class EsnMap(DiscreteMap):
    """The closed-loop map Phi of a trained ESN."""

    def __init__(self, te):
        self.te, self.dim = te, te.params.L

    def _args(self):
        p, r = self.te.params, self.te.readout
        return (*p.csr(), p.C, p.gamma, p.zeta, r.W, r.a)

    def __call__(self, x):
        return kernels.esn_phi(*self._args(), np.ascontiguousarray(x, dtype=float))

    def jacobian(self, x):
        from .reservoir import jacobian_phi
        return jacobian_phi(self.te, x)

    def tangent_qr(self, x0, V0, steps, renorm, transient):
        return kernels.esn_tangent_qr(*self._args(), np.ascontiguousarray(x0, dtype=float),
                                      np.ascontiguousarray(V0, dtype=float), steps, renorm,
                                      transient)


@dataclass(frozen=True)
class LyapunovEstimate:
    exponents: np.ndarray
    per_step: np.ndarray
    steps_used: int
    renorm_interval: int
    dt: float

    @property
    def lambda1(self):
        return float(self.exponents[0])

    def to_csv(self, path):
        rows = ([i, e, s] for i, (e, s) in enumerate(zip(self.exponents, self.per_step), 1))
        write_csv(path, ["index", "exponent_per_time", "exponent_per_step"], rows)


def _initial_frame(dim, k):
    # a fixed generic frame; coordinate axes can sit in invariant subspaces
    rng = np.random.default_rng(12345)
    Q, _ = np.linalg.qr(rng.standard_normal((dim, k)))
    return np.ascontiguousarray(Q)


def spectrum_qr(fmap, x0, k, steps, renorm=1, dt=1.0, transient=1000):
    """Top ``k`` exponents by QR re-orthonormalization of a k-frame."""
    x0 = np.asarray(x0, dtype=float)
    dim = x0.size
    if not 1 <= k <= dim:
        raise UsageError(f"k must be in [1, {dim}]")
    if not steps >= renorm >= 1:
        raise UsageError("need steps >= renorm >= 1")
    if not dt > 0:
        raise UsageError("dt must be positive")
    if transient < 0:
        raise UsageError("transient must be >= 0")
    if steps < MIN_STEPS:
        warnings.warn(f"only {steps} steps; Lyapunov estimates below {MIN_STEPS} steps are "
                      "unreliable", RuntimeWarning, stacklevel=2)
    logs, _, ok = fmap.tangent_qr(x0, _initial_frame(dim, k), int(steps), int(renorm),
                                  int(transient))
    if not ok or not np.all(np.isfinite(logs)):
        raise NumericalError("tangent frame collapsed (zero or non-finite growth factor)")
    per_step = np.sort(np.asarray(logs) / steps)[::-1]
    return LyapunovEstimate(per_step / dt, per_step, int(steps), int(renorm), float(dt))


def top_lyapunov(fmap, x0, steps, renorm=1, dt=1.0, transient=1000):
    """Benettin's method: one tangent vector, renormalized every ``renorm`` steps."""
    return spectrum_qr(fmap, x0, 1, steps, renorm, dt, transient)
