"""Benchmark ODE systems, sample-aligned integrators and observation maps."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _kernels_np, kernels
from .errors import IntegrationError, UsageError
from .jsonio import read_csv, write_csv

BLOWUP_LIMIT = 1e8
RK45_ATOL = 1e-10
RK45_RTOL = 1e-10

_KINDS = {"Lorenz": 0, "Rossler": 1}


@dataclass(frozen=True, eq=False)
class OdeSystem:
    """An autonomous ODE ``dx/dt = f(x)``.

    Built-ins are addressed by name and run on the compiled kernels; custom
    systems carry their own ``rhs`` (and optionally ``jac``) callables.
    """
    name: str
    params: dict
    dim: int
    rhs: Optional[Callable] = field(default=None, repr=False)
    jac: Optional[Callable] = field(default=None, repr=False)

    def __post_init__(self):
        if self.dim < 1:
            raise UsageError("dim must be >= 1")
        if self.name not in _KINDS and self.rhs is None:
            raise UsageError(f"custom system {self.name!r} needs an rhs callable")
        for k, v in self.params.items():
            if not np.isfinite(v):
                raise UsageError(f"parameter {k} is not finite")

    @property
    def kind(self):
        return _KINDS.get(self.name, -1)

    @property
    def param_vector(self):
        if self.name == "Lorenz":
            keys = ("sigma", "rho", "beta")
        elif self.name == "Rossler":
            keys = ("a", "b", "c")
        else:
            keys = tuple(self.params)
        return np.array([float(self.params[k]) for k in keys])

    def functions(self):
        """(f, jac) as plain numpy callables."""
        if self.kind >= 0:
            return _kernels_np.builtin_functions(self.kind, self.param_vector)
        return self.rhs, self.jac


def lorenz(sigma=10.0, rho=28.0, beta=8.0 / 3.0):
    return OdeSystem("Lorenz", {"sigma": sigma, "rho": rho, "beta": beta}, 3)


def rossler(a=0.1, b=0.1, c=14.0):
    return OdeSystem("Rossler", {"a": a, "b": b, "c": c}, 3)


def custom_system(name, rhs, dim, params=None, jac=None):
    return OdeSystem(name, dict(params or {}), dim, rhs=rhs, jac=jac)


def system_from_config(name, params=None):
    params = dict(params or {})
    if name == "Lorenz":
        return lorenz(**params)
    if name == "Rossler":
        return rossler(**params)
    raise UsageError(f"unknown system {name!r}; custom systems are registered in code")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Uniformly sampled series; row ``t`` is time ``t0 + t*dt``."""
    data: np.ndarray
    dt: float
    t0: float = 0.0

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2 or data.shape[0] < 1:
            raise UsageError("trajectory data must be a non-empty T x n matrix")
        if not np.all(np.isfinite(data)):
            raise UsageError("trajectory contains non-finite entries")
        if not self.dt > 0:
            raise UsageError("dt must be positive")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    def __len__(self):
        return self.data.shape[0]

    @property
    def n(self):
        return self.data.shape[1]

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(len(self))

    def slice(self, start, stop=None):
        start = int(start)
        stop = len(self) if stop is None else int(stop)
        return Trajectory(self.data[start:stop], self.dt, self.t0 + start * self.dt)

    def head(self, n):
        return self.slice(0, n)

    def to_csv(self, path):
        header = ["t"] + [f"x{i}" for i in range(self.n)]
        rows = (np.concatenate(([t], row)) for t, row in zip(self.times, self.data))
        write_csv(path, header, rows)

    @classmethod
    def from_csv(cls, path):
        header, arr = read_csv(path)
        if header[0] != "t":
            raise UsageError(f"{path}: first column must be 't'")
        t = arr[:, 0]
        dt = float(t[1] - t[0]) if len(t) > 1 else 1.0
        return cls(arr[:, 1:], dt, float(t[0]))


def derivative(system, state):
    x = np.asarray(state, dtype=float)
    if x.shape != (system.dim,):
        raise UsageError(f"state has shape {x.shape}, system dim is {system.dim}")
    f, _ = system.functions()
    return np.asarray(f(x), dtype=float)


def integrate(system, x0, dt, steps, method="RK45", substeps=1):
    """Integrate from ``x0`` and return ``steps + 1`` samples spaced ``dt``.

    RK45 is Dormand-Prince 5(4) at atol = rtol = 1e-10 with step clipping so
    that every sample time is hit exactly; RK4 uses ``dt / substeps`` as its
    fixed internal step.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (system.dim,):
        raise UsageError(f"x0 has shape {x0.shape}, system dim is {system.dim}")
    if not np.all(np.isfinite(x0)):
        raise UsageError("x0 must be finite")
    if not dt > 0:
        raise UsageError("dt must be positive")
    steps = int(steps)
    if steps < 1:
        raise UsageError("steps must be >= 1")
    if method not in ("RK4", "RK45"):
        raise UsageError(f"unknown method {method!r}")
    if substeps < 1:
        raise UsageError("substeps must be >= 1")

    if system.kind >= 0:
        p = system.param_vector
        if method == "RK4":
            traj, fail = kernels.rk4_trajectory(system.kind, p, x0, float(dt), steps, int(substeps),
                                                BLOWUP_LIMIT)
        else:
            traj, fail = kernels.dopri_trajectory(system.kind, p, x0, float(dt), steps, RK45_ATOL,
                                                  RK45_RTOL, BLOWUP_LIMIT)
    else:
        f, _ = system.functions()
        if method == "RK4":
            traj, fail = _kernels_np.rk4_trajectory_fn(f, x0, dt, steps, substeps, BLOWUP_LIMIT)
        else:
            traj, fail = _kernels_np.dopri_trajectory_fn(f, x0, dt, steps, RK45_ATOL, RK45_RTOL,
                                                         BLOWUP_LIMIT)
    if fail >= 0:
        raise IntegrationError(f"{system.name}: state left the finite/1e8 box", int(fail))
    return Trajectory(traj, dt)


@dataclass(frozen=True)
class ObservationMap:
    kind: str = "identity"           # identity | coordinate | custom
    index: Optional[int] = None
    out_dim: Optional[int] = None
    fn: Optional[Callable] = field(default=None, compare=False, repr=False)

    @classmethod
    def identity(cls):
        return cls("identity")

    @classmethod
    def coordinate(cls, index):
        return cls("coordinate", index=int(index), out_dim=1)

    @classmethod
    def custom(cls, fn, out_dim):
        return cls("custom", out_dim=int(out_dim), fn=fn)


def observe(traj, obs_map):
    if obs_map.kind == "identity":
        return traj
    if obs_map.kind == "coordinate":
        if not 0 <= obs_map.index < traj.n:
            raise UsageError(f"coordinate {obs_map.index} out of range for {traj.n}-dim trajectory")
        return Trajectory(traj.data[:, obs_map.index:obs_map.index + 1], traj.dt, traj.t0)
    if obs_map.kind == "custom":
        out = np.asarray([np.atleast_1d(obs_map.fn(row)) for row in traj.data], dtype=float)
        if out.shape[1] != obs_map.out_dim:
            raise UsageError(f"custom observation returned {out.shape[1]} columns, "
                             f"declared {obs_map.out_dim}")
        return Trajectory(out, traj.dt, traj.t0)
    raise UsageError(f"unknown observation kind {obs_map.kind!r}")
