"""Error-bound curves, the constant R, saturation, valid horizon and T."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import SaturationError, UsageError
from .forecast import closed_loop, initial_condition
from .jsonio import write_csv

SATURATION_TOL = 0.05
HORIZON_ZERO = 0


@dataclass(frozen=True)
class BoundParams:
    """Constants of the exponential error envelope.

    ``lambda1`` is per model-time unit unless ``units="step"`` is passed to
    the curve functions, in which case it is per iteration and ``dt`` is
    ignored.
    """
    eps: float
    delta: float
    lambda1: float
    R: float
    L_h: float
    L_z: float
    dt: float = 1.0

    def __post_init__(self):
        vals = (self.eps, self.delta, self.lambda1, self.R, self.L_h, self.L_z, self.dt)
        if not all(math.isfinite(v) for v in vals):
            raise UsageError("bound parameters must be finite")
        if self.eps < 0 or self.R < 0 or self.L_h < 0 or self.L_z < 0:
            raise UsageError("eps, R, L_h, L_z must be >= 0")
        if not self.delta > 0:
            raise UsageError("delta must be > 0")
        if not self.dt > 0:
            raise UsageError("dt must be > 0")

    @property
    def lambda_pos(self):
        return max(self.lambda1, 0.0)

    def rate(self, units="time"):
        """Exponent growth per step."""
        if units == "time":
            return self.dt * (self.lambda_pos + self.delta)
        if units == "step":
            return self.lambda_pos + self.delta
        raise UsageError(f"units must be 'time' or 'step', got {units!r}")


def _steps(t, lo):
    t = np.asarray(t)
    if np.any(t < lo):
        raise UsageError(f"t must be >= {lo}")
    return t


def bound_x(bp, t, units="time"):
    """2 eps L_z R exp(t (lambda1+ + delta))."""
    t = _steps(t, 0)
    out = 2.0 * bp.eps * bp.L_z * bp.R * np.exp(t * bp.rate(units))
    return float(out) if out.ndim == 0 else out


def bound_y(bp, t, units="time"):
    """eps (1 + 2 L_h L_z R exp(t (lambda1+ + delta)))."""
    t = _steps(t, 1)
    out = bp.eps * (1.0 + 2.0 * bp.L_h * bp.L_z * bp.R * np.exp(t * bp.rate(units)))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class RFit:
    R: float
    trivial: bool          # every error <= eps; the bound holds with R = 0
    argmax: Optional[int]  # step (1-based) where the fitted bound is tight


def fit_R(err_norms, eps, delta, lambda1, L_h, L_z, dt=1.0, units="time"):
    """Smallest R with bound_y >= err at every step; ``err_norms[k]`` is step k+1."""
    e = np.asarray(err_norms, dtype=float)
    if e.ndim != 1 or e.size == 0:
        raise UsageError("err_norms must be a nonempty vector")
    if not np.all(np.isfinite(e)):
        raise UsageError("err_norms must be finite")
    if not eps > 0:
        raise UsageError("eps must be > 0")
    bp = BoundParams(eps, delta, lambda1, 0.0, L_h, L_z, dt)
    excess = np.maximum(0.0, e / eps - 1.0)
    if not np.any(excess > 0):
        return RFit(0.0, True, None)
    if L_h * L_z == 0:
        raise UsageError("errors exceed eps but L_h L_z = 0: no finite R exists")
    t = np.arange(1, e.size + 1)
    ratio = excess / (2.0 * L_h * L_z * np.exp(t * bp.rate(units)))
    k = int(np.argmax(ratio))
    return RFit(float(ratio[k]), False, k + 1)


def lipschitz_bound(eps, L_x, L_h, L_z, t):
    """eps (1 + L_h L_z sum_{j=0}^{t-2} (L_x + L_h L_z)^j)."""
    t = _steps(t, 1).astype(float)
    r = L_x + L_h * L_z
    n = t - 1.0
    if r == 1.0:
        s = n
    else:
        s = np.expm1(n * math.log(r)) / (r - 1.0) if r > 0 else (n > 0).astype(float)
    out = eps * (1.0 + L_h * L_z * s)
    return float(out) if np.ndim(out) == 0 else out


def lipschitz_uniform_limit(eps, L_x, L_h, L_z):
    """t -> infinity limit eps (1 - L_x) / (1 - (L_x + L_h L_z)), or None if it diverges."""
    r = L_x + L_h * L_z
    if r >= 1.0:
        return None
    return eps * (1.0 - L_x) / (1.0 - r)


@dataclass(frozen=True)
class SaturationEstimate:
    value: float
    settle_step: int
    window: int
    separation: np.ndarray


def estimate_saturation(te, warmup, perturbation, horizon, window):
    """Plateau of the distance between two forecasts started a small
    perturbation apart (the perturbation is added to the last warmup row).

    Consecutive non-overlapping windows of the separation are averaged; the
    first window whose mean is within 5% of the previous one is accepted.
    ``settle_step`` is the 0-based offset of that window.
    """
    if window < 10:
        raise UsageError("window must be >= 10")
    if horizon < window:
        raise UsageError("horizon must be >= window")
    x0, y0 = initial_condition(te, warmup)
    pert = np.asarray(perturbation, dtype=float)
    if pert.shape != y0.shape:
        raise UsageError(f"perturbation has shape {pert.shape}, expected {y0.shape}")
    _, Ya = closed_loop(te, x0, y0, horizon)
    _, Yb = closed_loop(te, x0, y0 + pert, horizon)
    sep = np.linalg.norm(Ya - Yb, axis=1)
    n = horizon // window
    means = sep[:n * window].reshape(n, window).mean(axis=1)
    for k in range(1, n):
        prev, cur = means[k - 1], means[k]
        if abs(cur - prev) <= SATURATION_TOL * prev or (prev == 0.0 and cur == 0.0):
            return SaturationEstimate(float(cur), k * window, int(window), sep)
    raise SaturationError(f"separation did not stabilize within {horizon} steps",
                          float(means[-1]))


def valid_horizon(bp, saturation, units="time"):
    """Smallest step t >= 1 with bound_y(t) >= saturation; None if never."""
    if not saturation > bp.eps:
        raise UsageError("saturation must exceed eps")
    k = 2.0 * bp.L_h * bp.L_z * bp.R
    rate = bp.rate(units)
    if bound_y(bp, 1, units) >= saturation:
        return 1
    if k == 0.0 or rate == 0.0:
        return None
    q = (saturation / bp.eps - 1.0) / k
    t = max(1, math.ceil(math.log(q) / rate))
    # the closed form can be one step off after rounding; settle on the curve itself
    while t > 1 and bound_y(bp, t - 1, units) >= saturation:
        t -= 1
    while bound_y(bp, t, units) < saturation:
        t += 1
    return int(t)


def horizon_T(eps, L_z, L_phi, K, R, lambda1, delta):
    """floor(ln((e^c - 1) / (4 eps L_z L_phi K R e^{8 delta})) / c) + 1, c = lambda1+ + 5 delta.

    Exponents are per iteration.  Returns HORIZON_ZERO when the log argument
    is not positive, and at least 1 otherwise."""
    for name, v in (("eps", eps), ("L_z", L_z), ("L_phi", L_phi), ("K", K), ("R", R)):
        if not (v > 0 and math.isfinite(v)):
            raise UsageError(f"{name} must be positive and finite")
    if not delta >= 0:
        raise UsageError("delta must be >= 0")
    c = max(lambda1, 0.0) + 5.0 * delta
    arg = math.expm1(c) / (4.0 * eps * L_z * L_phi * K * R * math.exp(8.0 * delta))
    if not arg > 0:
        return HORIZON_ZERO
    v = math.log(arg) / c
    # absorb roundoff when v lands on an integer (e.g. arg = e^c exactly)
    T = math.floor(v + 1e-12 * max(1.0, abs(v))) + 1
    return max(1, T)


def write_bound_csv(path, err_norms, bp, units="time"):
    """``step,t_model,err_norm,bound_y,log10_err,log10_bound``."""
    e = np.asarray(err_norms, dtype=float)
    t = np.arange(1, e.size + 1)
    b = np.atleast_1d(bound_y(bp, t, units))
    with np.errstate(divide="ignore"):
        le, lb = np.log10(e), np.log10(b)
    rows = ([int(s), s * bp.dt, ei, bi, lei, lbi] for s, ei, bi, lei, lbi in zip(t, e, b, le, lb))
    write_csv(path, ["step", "t_model", "err_norm", "bound_y", "log10_err", "log10_bound"], rows)
