"""Experiment configuration, pipelines, grid search and plotting.

Every run is a pure function of its config: the initial-condition cloud
and the reservoir draw come from the config seeds, tasks run in a thread
pool and their results are reduced in index order.
"""
from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import bounds, causal_embed, dynsys, forecast, lyapunov, reservoir, training
from .errors import ConfigError, NumericalError, RcBoundsError, UsageError
from .jsonio import read_csv, read_json, write_csv, write_json

SUMMARY_FIELDS = ("lambda1", "epsilon", "L_x", "L_z", "L_h", "R_max", "R_mean", "R_sd",
                  "saturation", "valid_horizon")


class StageError(RcBoundsError):
    """Wraps a failure with the pipeline stage (and trajectory) it came from."""

    def __init__(self, stage, cause, index=None):
        where = stage if index is None else f"{stage}[trajectory {index}]"
        super().__init__(f"{where}: {cause}")
        self.stage, self.cause, self.index = stage, cause, index


# -- configuration ---------------------------------------------------------------------

@dataclass(frozen=True)
class EsnConfig:
    L: int = 300
    spectral_radius: float = 0.9
    gamma: float = 0.05
    density: float = 0.01
    seed: int = 1


@dataclass(frozen=True)
class LyapunovConfig:
    steps: int = 100_000
    renorm: int = 1
    transient: int = 1000


@dataclass(frozen=True)
class SaturationConfig:
    perturbation: float = 1e-8
    horizon: int = 20_000
    window: int = 500


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    system: str = "Lorenz"
    system_params: dict = field(default_factory=dict)
    observation: str = "identity"          # identity | coordinate
    observation_index: int = 0
    dt: float = 0.02
    integrator: str = "RK45"
    substeps: int = 1
    train_steps: int = 5000
    washout: int = 1000
    horizon: int = 2500
    esn: EsnConfig = field(default_factory=EsnConfig)
    alpha: float = 1e-10
    delta: float = 1e-3
    n_trajectories: int = 100
    init_mean: tuple = (0.0, 1.0, 1.05)
    init_sd: float = 1e-10
    init_seed: int = 0
    training: str = "pooled"               # pooled | single
    scheme: str = "esn"                    # esn | stacked
    depth: int = 7
    lyapunov: LyapunovConfig = field(default_factory=LyapunovConfig)
    saturation: SaturationConfig = field(default_factory=SaturationConfig)
    slope_window: tuple = (0.01, 0.1)
    r_mode: str = "test"                   # test | validation
    validation_fraction: float = 0.2
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "init_mean", tuple(float(v) for v in self.init_mean))
        object.__setattr__(self, "slope_window", tuple(float(v) for v in self.slope_window))
        self.validate()

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)
        need(self.system in ("Lorenz", "Rossler"), f"unknown system {self.system!r}")
        need(self.observation in ("identity", "coordinate"),
             f"unknown observation {self.observation!r}")
        need(self.dt > 0, "dt must be positive")
        need(self.integrator in ("RK45", "RK4"), f"unknown integrator {self.integrator!r}")
        for name in ("substeps", "train_steps", "horizon", "n_trajectories", "workers", "depth"):
            need(int(getattr(self, name)) >= 1, f"{name} must be a positive count")
        need(0 <= self.washout, "washout must be >= 0")
        need(self.washout + 3 <= self.train_steps, "washout must leave at least 3 training rows")
        need(self.esn.L >= 1 and self.esn.spectral_radius > 0 and 0 < self.esn.density <= 1,
             "invalid esn section")
        need(self.alpha >= 0, "alpha must be >= 0")
        need(self.delta > 0, "delta must be > 0")
        need(self.init_sd >= 0, "init_sd must be >= 0")
        need(len(self.init_mean) == 3, "init_mean must have 3 entries")
        need(self.training in ("pooled", "single"), "training must be 'pooled' or 'single'")
        need(self.scheme in ("esn", "stacked"), "scheme must be 'esn' or 'stacked'")
        need(self.r_mode in ("test", "validation"), "r_mode must be 'test' or 'validation'")
        need(0 < self.validation_fraction < 1, "validation_fraction must be in (0, 1)")
        lo, hi = self.slope_window
        need(0 < lo < hi <= 1, "slope_window must satisfy 0 < lo < hi <= 1")
        need(self.lyapunov.steps >= self.lyapunov.renorm >= 1, "invalid lyapunov section")
        need(self.saturation.window >= 10 and self.saturation.horizon >= self.saturation.window,
             "invalid saturation section")
        if self.scheme == "stacked":
            need(self.observation == "coordinate", "the stacked scheme needs scalar observations")
            need(self.depth >= 3 and self.depth % 2 == 1, "depth must be odd and >= 3")

    @property
    def obs_dim(self):
        return 3 if self.observation == "identity" else 1

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known - {"grid"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        doc.pop("grid", None)
        try:
            for key, sub in (("esn", EsnConfig), ("lyapunov", LyapunovConfig),
                             ("saturation", SaturationConfig)):
                if key in doc:
                    doc[key] = sub(**doc[key])
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path):
        return cls.from_dict(read_json(path))


@dataclass(frozen=True)
class GridSpec:
    alpha_grid: tuple
    gamma_grid: tuple
    rho_grid: tuple
    split: float = 0.2
    n_trajectories: int = 5
    max_validation_steps: Optional[int] = None

    def __post_init__(self):
        for name in ("alpha_grid", "gamma_grid", "rho_grid"):
            vals = tuple(sorted(set(float(v) for v in getattr(self, name))))
            if not vals:
                raise ConfigError(f"{name} must be nonempty")
            object.__setattr__(self, name, vals)
        if not 0 < self.split < 1:
            raise ConfigError("split must be in (0, 1)")
        if self.n_trajectories < 1:
            raise ConfigError("n_trajectories must be >= 1")
        if min(self.alpha_grid) < 0 or min(self.gamma_grid) <= 0 or min(self.rho_grid) <= 0:
            raise ConfigError("grid values must be positive (alpha may be 0)")

    @classmethod
    def from_dict(cls, doc):
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def points(self):
        """Candidates in tie-break order: alpha, then gamma, then rho."""
        return list(itertools.product(self.alpha_grid, self.gamma_grid, self.rho_grid))


# -- helpers ---------------------------------------------------------------------------

def _map_ordered(fn, items, workers):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(i, x) for i, x in enumerate(items)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, i, x) for i, x in enumerate(items)]
        return [f.result() for f in futures]


def _stage(name, fn, *args, index=None):
    try:
        return fn(*args)
    except StageError:
        raise
    except RcBoundsError as exc:
        raise StageError(name, exc, index) from exc


def initial_conditions(cfg):
    rng = np.random.default_rng(cfg.init_seed)
    mean = np.asarray(cfg.init_mean)
    return [mean + cfg.init_sd * rng.standard_normal(3) for _ in range(cfg.n_trajectories)]


def generate_data(cfg, total_steps=None, workers=None):
    """Observed trajectories with ``total_steps`` (default train + horizon) rows."""
    system = dynsys.system_from_config(cfg.system, cfg.system_params)
    obs = (dynsys.ObservationMap.identity() if cfg.observation == "identity"
           else dynsys.ObservationMap.coordinate(cfg.observation_index))
    n = (cfg.train_steps + cfg.horizon) if total_steps is None else int(total_steps)

    def one(i, x0):
        traj = _stage("integrate", dynsys.integrate, system, x0, cfg.dt, n - 1, cfg.integrator,
                      cfg.substeps, index=i)
        return _stage("observe", dynsys.observe, traj, obs, index=i)

    return _map_ordered(one, initial_conditions(cfg), workers or cfg.workers)


def mean_log_slope(err_matrix, dt, window=(0.01, 0.1), tail=0.1):
    """Least-squares slope of the mean log-error against model time.

    The plateau is the mean log-error over the last ``tail`` of the horizon;
    the fit runs from the first step where the curve reaches
    ``window[0] * plateau`` to the first step where it reaches
    ``window[1] * plateau``.  Returns (slope, start, stop) with 0-based
    step offsets, or (nan, start, stop) if the window has fewer than 3 points.
    """
    E = np.atleast_2d(np.asarray(err_matrix, dtype=float))
    with np.errstate(divide="ignore"):
        ml = np.log(E).mean(axis=0)
    H = ml.size
    k = max(1, int(round(tail * H)))
    plateau = ml[-k:].mean()
    lo, hi = plateau + math.log(window[0]), plateau + math.log(window[1])
    above_lo = np.flatnonzero(ml >= lo)
    above_hi = np.flatnonzero(ml >= hi)
    start = int(above_lo[0]) if above_lo.size else H
    stop = int(above_hi[0]) if above_hi.size else H
    if stop - start < 3 or not np.all(np.isfinite(ml[start:stop])):
        return float("nan"), start, stop
    t = (np.arange(start, stop) + 1) * dt
    return float(np.polyfit(t, ml[start:stop], 1)[0]), start, stop


def _band_rows(E, dt, lambda1):
    with np.errstate(divide="ignore"):
        L10 = np.log10(E)
    mean = L10.mean(axis=0)
    lo, hi = np.percentile(L10, [2.5, 97.5], axis=0)
    for k in range(E.shape[1]):
        t = (k + 1) * dt
        yield [k + 1, t, t * lambda1, mean[k], lo[k], hi[k]]


@dataclass
class ExperimentResult:
    summary: dict
    R: np.ndarray
    err_matrix: np.ndarray
    files: list


def _summary_stats(R):
    R = np.asarray(R, dtype=float)
    sd = float(np.std(R, ddof=1)) if R.size > 1 else 0.0
    return float(R.max()), float(R.mean()), sd


def _write_bundle(out, cfg, summary, R_fits, E, lyap, bp_mean, first_run, scheme):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    files = []

    def path(name):
        files.append(name)
        return out / name

    write_json(path("summary.json"), summary)
    write_json(path("config.json"), cfg.to_dict())
    write_csv(path("per_trajectory.csv"), ["trajectory", "R", "trivial", "argmax_step",
                                           "max_err", "final_err"],
              ([i, f.R, int(f.trivial), -1 if f.argmax is None else f.argmax,
                E[i].max(), E[i, -1]] for i, f in enumerate(R_fits)))
    with np.errstate(divide="ignore"):
        geo = np.exp(np.log(E).mean(axis=0))
    bounds.write_bound_csv(path("errors.csv"), geo, bp_mean)
    write_csv(path("band.csv"), ["step", "t_model", "t_lyap", "mean_log10", "p2_5_log10",
                                 "p97_5_log10"], _band_rows(E, cfg.dt, summary["lambda1"]))
    lyap.to_csv(path("lyapunov.csv"))
    first_run.to_csv(path("forecast_000.csv"), lambda1=summary["lambda1"],
                     extra={"scheme": scheme} if scheme != "esn" else None)
    emit_plot(out / "errors.csv", out / "errors.svg", lambda1=summary["lambda1"],
              band_csv=out / "band.csv", title=cfg.name)
    files.append("errors.svg")
    return files


def _fit_all(E, eps, delta, lam, L_h, L_z, dt):
    return [bounds.fit_R(e, eps, delta, lam, L_h, L_z, dt) for e in E]


# -- the ESN pipeline ------------------------------------------------------------------

def train_from_config(cfg, data, esn=None):
    """Pooled (or first-trajectory) readout on the training segments."""
    if esn is None:
        esn = _stage("generate", reservoir.generate, cfg.esn.seed, cfg.esn.L, cfg.obs_dim,
                     cfg.esn.spectral_radius, cfg.esn.gamma, cfg.esn.density)
    train = [d.head(cfg.train_steps) for d in data]
    used = train if cfg.training == "pooled" else train[:1]
    spec = training.TrainSpec(cfg.washout, cfg.alpha)
    te = _stage("train", training.train_pipeline, esn, used, spec)
    return te, train


def _validation_R(cfg, te, train, eps, lam):
    """R fitted on forecasts made inside the training segments."""
    n_val = max(3, int(round(cfg.validation_fraction * cfg.train_steps)))
    cut = cfg.train_steps - n_val
    if cut < cfg.washout + 2:
        raise StageError("validation", UsageError("validation split leaves no warmup"))
    fits = []
    for i, tr in enumerate(train):
        run = forecast.evaluate(te, tr.head(cut), tr.slice(cut), keep_states=False)
        fits.append(bounds.fit_R(run.err_norms, eps, cfg.delta, lam, te.lipschitz.L_h,
                                 te.lipschitz.L_z, cfg.dt))
    return float(np.mean([f.R for f in fits]))


def run_experiment(cfg, out_dir=None, data=None):
    """Full pipeline: data, training, forecasts, exponent, bounds, bundle."""
    if cfg.scheme == "stacked":
        return run_stacked_experiment(cfg, out_dir, data)
    if data is None:
        data = generate_data(cfg)
    te, train = train_from_config(cfg, data)
    eps = _stage("epsilon", training.estimate_epsilon, te, train, cfg.washout)

    def one(i, d):
        return _stage("forecast", forecast.evaluate, te, d.head(cfg.train_steps),
                      d.slice(cfg.train_steps, cfg.train_steps + cfg.horizon), False, index=i)

    runs = _map_ordered(one, data, cfg.workers)
    E = np.array([r.err_norms for r in runs])
    # the first forecast step is itself a one-step prediction from a teacher-forced state
    eps = max(eps, float(E[:, 0].max()))

    x0 = forecast.initial_condition(te, train[0])[0]
    lc = cfg.lyapunov
    lyap = _stage("lyapunov", lyapunov.top_lyapunov, lyapunov.EsnMap(te), x0, lc.steps,
                  lc.renorm, cfg.dt, lc.transient)
    lam = lyap.lambda1
    lip = te.lipschitz
    fits = _stage("fit_R", _fit_all, E, eps, cfg.delta, lam, lip.L_h, lip.L_z, cfg.dt)
    R = np.array([f.R for f in fits])
    R_max, R_mean, R_sd = _summary_stats(R)

    sc = cfg.saturation
    pert = np.full(cfg.obs_dim, sc.perturbation / math.sqrt(cfg.obs_dim))
    sat = _stage("saturation", bounds.estimate_saturation, te, train[0], pert, sc.horizon,
                 sc.window)
    R_bound = R_mean
    if cfg.r_mode == "validation":
        R_bound = _stage("validation", _validation_R, cfg, te, train, eps, lam)
    bp = bounds.BoundParams(eps, cfg.delta, lam, R_bound, lip.L_h, lip.L_z, cfg.dt)
    vh = bounds.valid_horizon(bp, sat.value) if sat.value > eps else None
    slope, w0, w1 = mean_log_slope(E, cfg.dt, cfg.slope_window)

    summary = {
        "lambda1": lam, "lambda1_per_step": float(lyap.per_step[0]), "epsilon": eps,
        "L_x": lip.L_x, "L_z": lip.L_z, "L_h": lip.L_h,
        "R_max": R_max, "R_mean": R_mean, "R_sd": R_sd, "R_bound": R_bound,
        "r_mode": cfg.r_mode, "saturation": sat.value, "saturation_settle_step": sat.settle_step,
        "valid_horizon": vh, "slope": slope, "slope_window": [w0 + 1, w1 + 1],
        "slope_ratio": slope / lam if lam != 0 else float("nan"),
        "spectral_inequality": bool(math.exp(lyap.per_step[0]) <= lip.L_x + lip.L_h * lip.L_z),
        "envelope_valid": bool(all(np.all(bounds.bound_y(replace(bp, R=f.R), np.arange(
            1, cfg.horizon + 1)) >= E[i] * (1 - 1e-12)) for i, f in enumerate(fits))),
        "n_trajectories": cfg.n_trajectories, "horizon": cfg.horizon, "dt": cfg.dt,
        "training_rmse": training.training_rmse(te, train if cfg.training == "pooled"
                                                else train[:1], cfg.washout),
        "scheme": "esn",
    }
    if cfg.r_mode == "validation":
        summary["validation_coverage"] = float(np.mean(
            [np.all(bounds.bound_y(bp, np.arange(1, cfg.horizon + 1)) >= e) for e in E]))
    files = []
    if out_dir is not None:
        files = _write_bundle(out_dir, cfg, summary, fits, E, lyap, bp,
                              _first_run(te, data[0], cfg), "esn")
        reservoir.save_model(te, Path(out_dir) / "model.json")
        files.append("model.json")
    return ExperimentResult(summary, R, E, files)


def _first_run(te, d, cfg):
    return forecast.evaluate(te, d.head(cfg.train_steps),
                             d.slice(cfg.train_steps, cfg.train_steps + cfg.horizon),
                             keep_states=False)


# -- the stacked pipeline ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class _StackedRun:
    """Minimal ForecastRun stand-in for the CSV writer."""
    truth: dynsys.Trajectory
    predicted: dynsys.Trajectory
    err_norms: np.ndarray
    dt: float

    horizon = property(lambda self: len(self.err_norms))
    to_csv = forecast.ForecastRun.to_csv


def run_stacked_experiment(cfg, out_dir=None, data=None):
    if cfg.scheme != "stacked":
        cfg = replace(cfg, scheme="stacked")
    if data is None:
        data = generate_data(cfg)
    sysu = _stage("generate", causal_embed.generate_stacked, cfg.esn.seed, cfg.depth,
                  cfg.esn.L, cfg.esn.gamma, cfg.esn.spectral_radius, cfg.esn.density)
    si = causal_embed.check_si_invertibility(sysu.inner)
    train = [d.head(cfg.train_steps) for d in data]
    used = train if cfg.training == "pooled" else train[:1]
    sy = _stage("train", causal_embed.train_stacked, sysu,
                used, training.TrainSpec(cfg.washout, cfg.alpha))

    def one(i, d):
        def go():
            pred = causal_embed.forecast_stacked(sy, d.head(cfg.train_steps), cfg.horizon)
            truth = d.slice(cfg.train_steps, cfg.train_steps + cfg.horizon)
            full = d.data[:, 0]
            consistent = bool(np.array_equal(causal_embed.delay_rows(full, cfg.depth),
                                             sy.proxy.drive(full)))
            return _StackedRun(truth, pred, np.abs(truth.data[:, 0] - pred.data[:, 0]),
                               cfg.dt), consistent
        try:
            return go()
        except RcBoundsError as exc:
            raise StageError("forecast", exc, i) from exc

    out = _map_ordered(one, data, cfg.workers)
    runs = [r for r, _ in out]
    E = np.array([r.err_norms for r in runs])
    consistent = all(c for _, c in out)

    P = causal_embed.delay_rows(train[0].data[:, 0], cfg.depth)
    S = causal_embed._inner_states(sy.inner, P)
    z0 = np.concatenate([S[-2], S[-1]])
    lc = cfg.lyapunov
    lyap = _stage("lyapunov", lyapunov.top_lyapunov, causal_embed.StackedMap(sy), z0, lc.steps,
                  lc.renorm, cfg.dt, lc.transient)
    lam = lyap.lambda1
    eps = sy.eps_prime
    fits = _stage("fit_R", _fit_all, E, eps, cfg.delta, lam, sy.L_h, sy.L_z, cfg.dt)
    R = np.array([f.R for f in fits])
    R_max, R_mean, R_sd = _summary_stats(R)
    bp = bounds.BoundParams(eps, cfg.delta, lam, R_mean, sy.L_h, sy.L_z, cfg.dt)
    plateau = float(E[:, -max(1, cfg.horizon // 10):].mean())
    vh = bounds.valid_horizon(bp, plateau) if plateau > eps else None
    slope, w0, w1 = mean_log_slope(E, cfg.dt, cfg.slope_window)
    t = np.arange(1, cfg.horizon + 1)
    tight = []
    for i, f in enumerate(fits):
        if f.trivial:
            tight.append(True)
            continue
        b = bounds.bound_y(replace(bp, R=f.R), t)
        tight.append(bool(abs(b[f.argmax - 1] - E[i, f.argmax - 1]) <= 1e-9 * E[i, f.argmax - 1]))
    summary = {
        "lambda1": lam, "lambda1_per_step": float(lyap.per_step[0]), "epsilon": eps,
        "L_x": reservoir.top_singular_value(sy.inner.A), "L_z": sy.L_z, "L_h": sy.L_h,
        "L_f_inv": 1.0, "R_max": R_max, "R_mean": R_mean, "R_sd": R_sd, "R_bound": R_mean,
        "r_mode": "test", "saturation": plateau, "valid_horizon": vh,
        "slope": slope, "slope_window": [w0 + 1, w1 + 1],
        "slope_ratio": slope / lam if lam != 0 else float("nan"),
        "envelope_valid": bool(all(np.all(bounds.bound_y(replace(bp, R=f.R), t)
                                          >= E[i] * (1 - 1e-12)) for i, f in enumerate(fits))),
        "envelope_tight": bool(all(tight)),
        "proxy_consistent": consistent, "si_invertible": si.invertible,
        "si_sigma_min": si.sigma_min, "depth": cfg.depth,
        "n_trajectories": cfg.n_trajectories, "horizon": cfg.horizon, "dt": cfg.dt,
        "scheme": "stacked",
    }
    files = []
    if out_dir is not None:
        files = _write_bundle(out_dir, cfg, summary, fits, E, lyap, bp, runs[0], "stacked")
    return ExperimentResult(summary, R, E, files)


# -- grid search -----------------------------------------------------------------------

def grid_search(cfg, grid, out_dir=None, data=None):
    """Mean squared validation error for every (alpha, gamma, rho).

    Each trajectory's training segment is split: the first ``1 - split``
    trains (pooled), the rest is forecast and scored.  Returns
    (best_point, table) where table rows are (alpha, gamma, rho, score, status).
    """
    n = min(grid.n_trajectories, cfg.n_trajectories)
    if data is None:
        data = generate_data(replace(cfg, n_trajectories=n), total_steps=cfg.train_steps)
    data = [d.head(cfg.train_steps) for d in data[:n]]
    n_val = max(1, int(round(grid.split * cfg.train_steps)))
    if grid.max_validation_steps is not None:
        n_val = min(n_val, int(grid.max_validation_steps))
    cut = cfg.train_steps - n_val
    if cut < cfg.washout + 3:
        raise ConfigError("validation split leaves too few training rows")
    base = _stage("generate", reservoir.generate, cfg.esn.seed, cfg.esn.L, cfg.obs_dim,
                  cfg.esn.spectral_radius, cfg.esn.gamma, cfg.esn.density)

    def score(i, point):
        alpha, gamma, rho = point
        esn = base.with_scaling(gamma=gamma, spectral_radius=rho)
        try:
            te = training.train_pipeline(esn, [d.head(cut) for d in data],
                                         training.TrainSpec(cfg.washout, alpha))
            errs = []
            for d in data:
                pred = forecast.forecast(te, d.head(cut), n_val)
                errs.append(np.mean((pred.data - d.data[cut:cut + n_val]) ** 2))
            s = float(np.mean(errs))
            return (alpha, gamma, rho, s, "ok") if math.isfinite(s) else \
                (alpha, gamma, rho, float("inf"), "nonfinite")
        except (NumericalError, FloatingPointError) as exc:
            return (alpha, gamma, rho, float("inf"), f"failed: {exc}")

    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        table = _map_ordered(score, grid.points(), cfg.workers)
    finite = [row for row in table if math.isfinite(row[3])]
    if not finite:
        raise NumericalError("every grid point failed to train or forecast")
    best = min(finite, key=lambda row: row[3])   # first minimum = tie-break order
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "grid.csv", ["alpha", "gamma", "rho", "score", "status"], table)
        write_json(out / "best.json", {"alpha": best[0], "gamma": best[1], "rho": best[2],
                                       "score": best[3], "validation_steps": n_val})
    return best[:3], table


# -- plotting --------------------------------------------------------------------------

def emit_plot(error_csv, out_path, lambda1=None, band_csv=None, title=None):
    """SVG of log10 error and log10 bound against Lyapunov time (model time
    if no positive exponent is given), with the 95% band when available."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    header, data = read_csv(error_csv, required=["step", "t_model", "err_norm", "bound_y",
                                                 "log10_err", "log10_bound"])
    col = {h: i for i, h in enumerate(header)}
    scale = lambda1 if lambda1 is not None and lambda1 > 0 else 1.0
    xlabel = "Lyapunov time" if scale != 1.0 or lambda1 == 1.0 else "model time"
    x = data[:, col["t_model"]] * scale
    with matplotlib.rc_context({"svg.hashsalt": "rcbounds", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        if band_csv is not None and Path(band_csv).exists():
            bh, band = read_csv(band_csv, required=["t_model", "p2_5_log10", "p97_5_log10"])
            bc = {h: i for i, h in enumerate(bh)}
            ax.fill_between(band[:, bc["t_model"]] * scale, band[:, bc["p2_5_log10"]],
                            band[:, bc["p97_5_log10"]], color="0.8", lw=0, label="95% band")
        ax.plot(x, data[:, col["log10_err"]], lw=1.2, label="log10 error")
        ax.plot(x, data[:, col["log10_bound"]], lw=1.2, ls="--", label="log10 bound")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("log10 norm")
        if title:
            ax.set_title(title)
        ax.legend(loc="lower right")
        fig.tight_layout()
        fig.savefig(out_path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return Path(out_path)


def default_workers():
    return max(1, min(8, os.cpu_count() or 1))
