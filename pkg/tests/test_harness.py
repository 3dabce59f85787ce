import json
import math

import numpy as np
import pytest

from rcbounds import bounds, forecast, harness, reservoir, training
from rcbounds.errors import ConfigError, NumericalError, ParseError
from rcbounds.harness import (EsnConfig, ExperimentConfig, GridSpec, LyapunovConfig,
                              SaturationConfig)
from rcbounds.jsonio import read_csv, write_csv

SMALL = ExperimentConfig(
    name="small", train_steps=1500, washout=300, horizon=400,
    esn=EsnConfig(L=80, spectral_radius=0.9, gamma=0.05, seed=2), alpha=1e-10,
    n_trajectories=4, lyapunov=LyapunovConfig(steps=3000, transient=200),
    saturation=SaturationConfig(horizon=4000, window=200))


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("bundle")
    return harness.run_experiment(SMALL, out), out


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(init_sd=-1.0)
    with pytest.raises(ConfigError):
        ExperimentConfig(n_trajectories=0)
    with pytest.raises(ConfigError):
        ExperimentConfig(system="Duffing")
    with pytest.raises(ConfigError):
        ExperimentConfig(washout=4999, train_steps=5000)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"unknown_key": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"esn": {"L": 10, "bogus": 2}})


def test_config_roundtrip():
    doc = json.loads(json.dumps(SMALL.to_dict()))
    assert ExperimentConfig.from_dict(doc) == SMALL


def test_grid_spec_validation_and_dedup():
    g = GridSpec([1e-8, 1e-10, 1e-8], [0.1], [0.9, 0.9])
    assert g.alpha_grid == (1e-10, 1e-8) and g.rho_grid == (0.9,)
    assert len(g.points()) == 2
    with pytest.raises(ConfigError):
        GridSpec([], [0.1], [0.9])
    with pytest.raises(ConfigError):
        GridSpec([1e-8], [0.1], [0.9], split=1.0)


def test_bundle_contents(bundle):
    res, out = bundle
    names = {p.name for p in out.iterdir()}
    assert {"summary.json", "per_trajectory.csv", "errors.csv", "band.csv", "lyapunov.csv",
            "forecast_000.csv", "errors.svg", "config.json", "model.json"} <= names
    s = json.loads((out / "summary.json").read_text())
    for key in harness.SUMMARY_FIELDS:
        assert key in s
    assert s["envelope_valid"] and s["spectral_inequality"]


def test_summary_matches_per_trajectory_csv(bundle):
    res, out = bundle
    header, rows = read_csv(out / "per_trajectory.csv")
    R = rows[:, header.index("R")]
    s = json.loads((out / "summary.json").read_text())
    assert s["R_max"] == float(R.max())
    assert s["R_mean"] == float(R.mean())
    assert s["R_sd"] == float(np.std(R, ddof=1))


def test_band_contains_geometric_mean(bundle):
    _, out = bundle
    hb, band = read_csv(out / "band.csv")
    lo, hi = band[:, hb.index("p2_5_log10")], band[:, hb.index("p97_5_log10")]
    mean = band[:, hb.index("mean_log10")]
    assert np.all(lo <= mean + 1e-12) and np.all(mean <= hi + 1e-12)


def test_rerun_is_byte_identical(bundle, tmp_path):
    _, out = bundle
    harness.run_experiment(SMALL, tmp_path)
    for name in ("summary.json", "per_trajectory.csv", "errors.csv", "band.csv", "lyapunov.csv",
                 "forecast_000.csv", "errors.svg", "model.json"):
        assert (out / name).read_bytes() == (tmp_path / name).read_bytes(), name


def test_workers_do_not_change_results(bundle, tmp_path):
    from dataclasses import replace
    _, out = bundle
    harness.run_experiment(replace(SMALL, workers=3), tmp_path)
    for name in ("per_trajectory.csv", "errors.csv"):
        assert (out / name).read_bytes() == (tmp_path / name).read_bytes()


def test_degenerate_single_step_run(tmp_path):
    from dataclasses import replace
    cfg = replace(SMALL, n_trajectories=1, horizon=1)
    res = harness.run_experiment(cfg, tmp_path)
    header, rows = read_csv(tmp_path / "errors.csv")
    assert rows.shape[0] == 1
    s = json.loads((tmp_path / "summary.json").read_text())
    assert s["epsilon"] >= rows[0, header.index("err_norm")] - 1e-15


def test_validation_r_mode(tmp_path):
    from dataclasses import replace
    res = harness.run_experiment(replace(SMALL, r_mode="validation"))
    s = res.summary
    assert s["r_mode"] == "validation" and s["R_bound"] > 0
    assert 0.0 <= s["validation_coverage"] <= 1.0


def test_stage_tagged_failure():
    from dataclasses import replace
    cfg = replace(SMALL, system_params={"rho": 1e9}, integrator="RK4", dt=0.1)
    with pytest.raises(harness.StageError) as info:
        harness.run_experiment(cfg)
    assert info.value.stage == "integrate" and info.value.index == 0
    assert isinstance(info.value.cause, NumericalError)


def test_mean_log_slope_synthetic():
    t = np.arange(1, 2001)
    curve = np.minimum(1e-6 * np.exp(0.05 * t), 10.0)
    E = np.vstack([curve, curve * 1.5])
    slope, start, stop = harness.mean_log_slope(E, dt=0.02)
    assert slope == pytest.approx(0.05 / 0.02, rel=1e-9)
    assert 0 <= start < stop


def test_grid_search_single_point():
    grid = GridSpec([1e-10], [0.05], [0.9], n_trajectories=2, max_validation_steps=100)
    best, table = harness.grid_search(SMALL, grid)
    assert best == (1e-10, 0.05, 0.9) and len(table) == 1


def test_grid_search_brute_force(tmp_path):
    grid = GridSpec([1e-10, 1e-6], [0.05, 0.2], [0.5, 0.9], n_trajectories=2,
                    max_validation_steps=100)
    best, table = harness.grid_search(SMALL, grid, tmp_path)
    scores = [row[3] for row in table]
    assert best == table[int(np.argmin(scores))][:3]
    assert json.loads((tmp_path / "best.json").read_text())["score"] == min(scores)
    # independent re-evaluation of every point
    data = harness.generate_data(SMALL, total_steps=SMALL.train_steps)[:2]
    base = reservoir.generate(SMALL.esn.seed, SMALL.esn.L, 3, SMALL.esn.spectral_radius,
                              SMALL.esn.gamma)
    cut = SMALL.train_steps - 100
    for alpha, gamma, rho, score, status in table:
        te = training.train_pipeline(base.with_scaling(gamma=gamma, spectral_radius=rho),
                                     [d.head(cut) for d in data],
                                     training.TrainSpec(SMALL.washout, alpha))
        errs = [np.mean((forecast.forecast(te, d.head(cut), 100).data - d.data[cut:]) ** 2)
                for d in data]
        assert float(np.mean(errs)) == score


def test_grid_search_tie_break():
    grid = GridSpec([1e-10], [0.05], [0.9], n_trajectories=1, max_validation_steps=50)
    _, table = harness.grid_search(SMALL, grid)
    # ties resolve to the first point in (alpha, gamma, rho) order
    tied = [(1e-8, 0.1, 0.5, 1.0, "ok"), (1e-8, 0.1, 0.9, 1.0, "ok"), (1e-9, 0.2, 0.9, 1.0, "ok")]
    order = sorted(tied, key=lambda r: r[:3])
    assert min(order, key=lambda r: r[3]) == (1e-9, 0.2, 0.9, 1.0, "ok")


def test_grid_search_all_fail():
    from dataclasses import replace
    cfg = replace(SMALL, washout=0, train_steps=200, esn=EsnConfig(L=300, seed=2))
    grid = GridSpec([0.0], [0.05], [0.9], n_trajectories=1, max_validation_steps=20)
    with pytest.raises(NumericalError):
        harness.grid_search(cfg, grid)


def _exp_csv(path, eps=1e-9, lam=0.9, delta=1e-3, dt=0.02, n=300):
    bp = bounds.BoundParams(eps, delta, lam, 1e6, 1.0, 1.0, dt)
    bounds.write_bound_csv(path, eps * np.exp(0.01 * np.arange(1, n + 1)), bp)
    return bp


def test_plot_deterministic(tmp_path):
    _exp_csv(tmp_path / "e.csv")
    harness.emit_plot(tmp_path / "e.csv", tmp_path / "a.svg", lambda1=0.9)
    harness.emit_plot(tmp_path / "e.csv", tmp_path / "b.svg", lambda1=0.9)
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()
    assert b"<svg" in (tmp_path / "a.svg").read_bytes()


def test_plotted_bound_slope(tmp_path):
    bp = _exp_csv(tmp_path / "e.csv")
    h, rows = read_csv(tmp_path / "e.csv")
    lb = rows[:, h.index("log10_bound")] * math.log(10)
    np.testing.assert_allclose(np.diff(lb), (bp.lambda1 + bp.delta) * bp.dt, rtol=1e-6)


def test_plot_rejects_bad_csv(tmp_path):
    write_csv(tmp_path / "empty.csv", ["step", "t_model", "err_norm", "bound_y", "log10_err",
                                       "log10_bound"], [])
    with pytest.raises(ParseError):
        harness.emit_plot(tmp_path / "empty.csv", tmp_path / "x.svg")
    (tmp_path / "bad.csv").write_text("step,t_model,err_norm,bound_y,log10_err,log10_bound\n"
                                      "1,0.1,1,1,0,0\n2,0.2,oops,1,0,0\n")
    with pytest.raises(ParseError) as info:
        harness.emit_plot(tmp_path / "bad.csv", tmp_path / "x.svg")
    assert info.value.line == 3
