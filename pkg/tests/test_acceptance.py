"""Acceptance criteria 1-13.  Each test prints one PASS/FAIL line; the
collected lines are repeated at the end of the session."""
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from rcbounds import (bounds, cli, dynsys, forecast, harness, kernels, lyapunov, oracle,
                      reservoir, training)
from rcbounds.harness import EsnConfig, ExperimentConfig, LyapunovConfig, SaturationConfig
from rcbounds.jsonio import write_json
from rcbounds.lyapunov import EsnMap, LinearMap
from rcbounds.training import TrainSpec

RESULTS = {}
TRAINED = []      # (label, lambda1 per step, L_x, L_h, L_z) for the spectral inequality


@pytest.fixture(scope="module")
def report(request):
    tr = request.config.pluginmanager.get_plugin("terminalreporter")

    def emit(n, ok, detail):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        RESULTS[n] = line
        print(line)
        if tr is not None:
            tr.write_line("\n" + line)
        return ok

    yield emit
    if tr is not None and RESULTS:
        tr.write_line("\nacceptance summary")
        for n in sorted(RESULTS):
            tr.write_line(RESULTS[n])


def _fit_checks(E, summary, dt):
    """Fit R per trajectory and confirm the envelope is valid and touches the curve."""
    valid = tight = True
    for row in E:
        f = bounds.fit_R(row, summary["epsilon"], summary["delta"], summary["lambda1"],
                         summary["L_h"], summary["L_z"], dt)
        bp = bounds.BoundParams(summary["epsilon"], summary["delta"], summary["lambda1"], f.R,
                                summary["L_h"], summary["L_z"], dt)
        b = bounds.bound_y(bp, np.arange(1, row.size + 1))
        valid &= bool(np.all(b >= row * (1 - 1e-12))) and math.isfinite(f.R)
        if not f.trivial:
            k = f.argmax - 1
            tight &= bool(abs(b[k] - row[k]) <= 1e-9 * row[k])
    return valid, tight


def _desk(preset):
    cfg = ExperimentConfig.from_dict(cli.resolve_json(preset))
    t0 = time.perf_counter()
    res = harness.run_experiment(cfg)
    return cfg, res, time.perf_counter() - t0


# -- 1 -------------------------------------------------------------------------------------

def test_c01_lorenz_flow_exponent(report):
    t0 = time.perf_counter()
    est = lyapunov.top_lyapunov(lyapunov.FlowMap(dynsys.lorenz(), 0.01), [0.0, 1.0, 1.05],
                                1_000_000, 1, 0.01, 1000)
    elapsed = time.perf_counter() - t0
    ok = abs(est.lambda1 - 0.9057) <= 0.02 and elapsed < 60
    assert report(1, ok, f"lambda1={est.lambda1:.4f} (0.9057 +- 0.02), {elapsed:.1f}s (<60s, "
                         f"{kernels.backend_name()} backend)")


# -- 2, 3 ------------------------------------------------------------------------------------

def _desk_criterion(n, preset, lo, hi, limit, report):
    cfg, res, elapsed = _desk(preset)
    s = dict(res.summary, delta=cfg.delta)
    lam = s["lambda1"]
    TRAINED.append((preset, s["lambda1_per_step"], s["L_x"], s["L_h"], s["L_z"]))
    valid, tight = _fit_checks(res.err_matrix, s, cfg.dt)
    ratio = s["slope"] / lam
    ok = (lo <= lam <= hi and abs(ratio - 1) <= 0.3 and valid and tight
          and (limit is None or elapsed < limit))
    detail = (f"lambda1={lam:.4f} in [{lo}, {hi}], slope/lambda1={ratio:.3f} (+-30%), "
              f"envelope valid={valid} tight={tight}, {elapsed:.0f}s")
    assert report(n, ok, detail)


@pytest.mark.slow
def test_c02_lorenz_desk(report):
    _desk_criterion(2, "lorenz_desk", 0.6, 1.1, 600, report)


@pytest.mark.slow
def test_c03_rossler_desk(report):
    _desk_criterion(3, "rossler_desk", 0.03, 0.12, None, report)


# -- 5 (also feeds 4) ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def random_trained():
    data = dynsys.integrate(dynsys.lorenz(), [0.0, 1.0, 1.05], 0.02, 2499)
    out = []
    for seed in range(11, 16):
        p = reservoir.generate(seed, 100, 3, spectral_radius=0.9, gamma=0.05, density=0.05)
        te = training.train_pipeline(p, data, TrainSpec(300, 1e-8))
        out.append((seed, te, data))
    return out


def _fd_jacobian(te, x, h=1e-6):
    J = np.empty((x.size, x.size))
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        J[:, j] = (reservoir.closed_loop_step(te, x + e) - reservoir.closed_loop_step(te, x - e)) / (2 * h)
    return J


def test_c05_jacobian_finite_differences(report, random_trained):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _, te, _ in random_trained:
        for _ in range(10):
            x = rng.uniform(-0.8, 0.8, te.params.L)
            J = reservoir.jacobian_phi(te, x)
            worst = max(worst, np.linalg.norm(J - _fd_jacobian(te, x)) / np.linalg.norm(J))
    assert report(5, worst < 1e-5, f"max relative Frobenius error {worst:.2e} (<1e-5), 5 ESNs x 10 states")


# -- 4 --------------------------------------------------------------------------------------

def test_c04_spectral_inequality(report, random_trained):
    rows = list(TRAINED)
    for seed, te, data in random_trained:
        x0 = forecast.initial_condition(te, data)[0]
        est = lyapunov.top_lyapunov(EsnMap(te), x0, 20000, 1, 1.0, 1000)
        lip = te.lipschitz
        rows.append((f"seed{seed}", est.lambda1, lip.L_x, lip.L_h, lip.L_z))
    bad = [r[0] for r in rows if not math.exp(r[1]) <= r[2] + r[3] * r[4]]
    worst = max(math.exp(r[1]) / (r[2] + r[3] * r[4]) for r in rows)
    assert report(4, not bad, f"{len(rows)} trained ESNs, max e^(lambda1 dt)/(L_x+L_h L_z)="
                              f"{worst:.3g}, violations={bad}")


# -- 6 --------------------------------------------------------------------------------------

@pytest.mark.filterwarnings("ignore:alpha=0:RuntimeWarning")
def test_c06_ridge_oracle(report):
    worst = 0.0
    for seed in range(20):
        r = np.random.default_rng(100 + seed)
        X = r.standard_normal((200, 15))
        Y = r.standard_normal((200, 2))
        ro = training.fit_readout(X, Y, TrainSpec(0, 0.0))
        Xa = np.hstack([X, np.ones((200, 1))])
        Q, R = np.linalg.qr(Xa)
        B = np.linalg.solve(R, Q.T @ Y)
        worst = max(worst, np.linalg.norm(ro.W - B[:-1].T) / np.linalg.norm(B[:-1]),
                    np.linalg.norm(ro.a - B[-1]) / max(1.0, np.linalg.norm(B[-1])))
    r = np.random.default_rng(7)
    X = r.standard_normal((150, 25))
    Y = X @ r.standard_normal((25, 2)) + 0.1 * r.standard_normal((150, 2))
    norms = [np.linalg.norm(training.fit_readout(X, Y, TrainSpec(0, a)).W)
             for a in (1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2)]
    mono = all(a >= b for a, b in zip(norms, norms[1:]))
    assert report(6, worst < 1e-8 and mono,
                  f"max relative deviation from QR {worst:.2e} (<1e-8), shrinkage monotone={mono}")


# -- 7 --------------------------------------------------------------------------------------

def test_c07_linearized_oracle(report):
    worst = 0.0
    for seed in range(20):
        r = np.random.default_rng(seed)
        p = reservoir.generate(seed + 1, 12, 2, spectral_radius=0.9, gamma=0.5, density=0.3)
        te = reservoir.TrainedEsn.build(p, reservoir.Readout(0.3 * r.standard_normal((2, 12)),
                                                             0.1 * r.standard_normal(2)))
        fmap = EsnMap(te)
        X = np.empty((25, 12))
        X[0] = r.uniform(-0.5, 0.5, 12)
        for t in range(1, 25):
            X[t] = fmap(X[t - 1])
        C = 1e-3 * r.standard_normal((25, 12))
        a = oracle.linearized_sequence(fmap, X, C).a_seq
        e = oracle.expanded_sequence(fmap, X, C)
        worst = max(worst, np.abs(a - e).max() / max(1.0, np.abs(e).max()))
    lin = oracle.linearized_sequence(LinearMap([[2.0]]), np.zeros((40, 1)), np.ones((40, 1)))
    exact = bool(np.array_equal(lin.a_seq[:, 0], 2.0 ** np.arange(40) - 1))
    assert report(7, worst <= 1e-10 and exact,
                  f"recursion vs expansion {worst:.2e} (<=1e-10), a_t = 2^t - 1 exact={exact}")


# -- 8 --------------------------------------------------------------------------------------

def test_c08_taylor_second_order(report, random_trained):
    ratios = []
    for _, te, data in random_trained:
        x0 = forecast.initial_condition(te, data)[0]
        ratios.extend(oracle.perturbation_scaling(te, x0, np.array([1e-4, -2e-4, 1e-4]), steps=5))
    ratios = np.array(ratios)
    ok = bool(np.all((ratios >= 3) & (ratios <= 5)))
    assert report(8, ok, f"residual ratio under halving in [{ratios.min():.3f}, {ratios.max():.3f}]"
                         f" (need [3, 5]), first 5 steps, 5 ESNs")


# -- 9 --------------------------------------------------------------------------------------

def test_c09_angle_lemma(report):
    rng = np.random.default_rng(9)
    violations = 0
    for _ in range(1000):
        r = int(rng.integers(2, 7))
        n = int(rng.integers(r, r + 5))
        V = rng.standard_normal((r, n)) * rng.uniform(0.1, 10, (r, 1))
        violations += not oracle.angle_lemma_check(V).holds
    assert report(9, violations == 0, f"1000 random sets, r in 2..6, violations={violations}")


# -- 10 -------------------------------------------------------------------------------------

def test_c10_input_forgetting(report):
    rng = np.random.default_rng(10)
    worst = -np.inf
    for case in range(10):
        p = reservoir.generate(case + 10, 80, 2, spectral_radius=0.5, density=0.05)
        Lx = reservoir.top_singular_value(p.A.toarray())
        if Lx >= 1:
            p = p.with_scaling(spectral_radius=0.5 * 0.9 / Lx)
            Lx = reservoir.top_singular_value(p.A.toarray())
        y = rng.standard_normal((60, 2))
        x0, x1 = rng.uniform(-1, 1, 80), rng.uniform(-1, 1, 80)
        d = np.linalg.norm(reservoir.drive(p, x0, y) - reservoir.drive(p, x1, y), axis=1)
        env = Lx ** np.arange(1, 61) * np.linalg.norm(x0 - x1)
        worst = max(worst, float(np.max(d - env)))
    assert report(10, worst <= 1e-12, f"10 cases, max(separation - L_x^t d0) = {worst:.2e} (<=1e-12)")


# -- 11 -------------------------------------------------------------------------------------

def test_c11_valid_horizon_scan(report):
    rng = np.random.default_rng(11)
    mismatches = done = 0
    while done < 1000:
        bp = bounds.BoundParams(10 ** rng.uniform(-8, -3), 10 ** rng.uniform(-5, -1),
                                rng.uniform(-0.5, 2), 10 ** rng.uniform(-3, 2),
                                10 ** rng.uniform(-2, 1), 10 ** rng.uniform(-2, 2),
                                10 ** rng.uniform(-3, -1))
        sat = bp.eps * (1 + 10 ** rng.uniform(0, 6))
        t = bounds.valid_horizon(bp, sat)
        if t is None or t > 200_000:
            continue
        curve = bounds.bound_y(bp, np.arange(1, t + 2))
        scan = int(np.argmax(curve >= sat)) + 1
        mismatches += scan != t
        done += 1
    assert report(11, mismatches == 0, f"1000 draws, closed form vs linear scan mismatches={mismatches}")


# -- 12 -------------------------------------------------------------------------------------

@pytest.mark.slow
def test_c12_stacked_scheme(report):
    cfg = ExperimentConfig.from_dict(cli.resolve_json("lorenz_x_stacked"))
    res = harness.run_stacked_experiment(cfg)
    s = dict(res.summary, delta=cfg.delta)
    valid, tight = _fit_checks(res.err_matrix, s, cfg.dt)
    finite = bool(np.all(np.isfinite(res.R)))
    ok = valid and tight and finite and s["proxy_consistent"]
    assert report(12, ok, f"R finite={finite} (max {np.max(res.R):.3g}), envelope valid={valid} "
                          f"tight={tight}, proxy consistent={s['proxy_consistent']}")


# -- 13 -------------------------------------------------------------------------------------

TINY = ExperimentConfig(
    name="tiny", train_steps=1200, washout=200, horizon=300,
    esn=EsnConfig(L=60, spectral_radius=0.9, gamma=0.05, density=0.05, seed=2), alpha=1e-10,
    n_trajectories=2, lyapunov=LyapunovConfig(steps=2000, transient=100),
    saturation=SaturationConfig(horizon=3000, window=150))


def test_c13_cli_reproducibility(report, tmp_path):
    cfg = tmp_path / "tiny.json"
    write_json(cfg, TINY.to_dict())
    stacked = tmp_path / "stacked.json"
    write_json(stacked, replace(TINY, observation="coordinate", dt=0.005, train_steps=3000,
                                washout=300, scheme="stacked", depth=5, training="single",
                                esn=replace(TINY.esn, L=80, spectral_radius=1.0)).to_dict())
    grid = tmp_path / "grid.json"
    write_json(grid, {"alpha_grid": [1e-10, 1e-8], "gamma_grid": [0.05], "rho_grid": [0.9],
                      "n_trajectories": 1, "max_validation_steps": 50})
    assert cli.main(["train", "--config", str(cfg), "--out-dir", str(tmp_path / "m")]) == 0
    model = str(tmp_path / "m" / "model.json")
    commands = {
        "gen-data": [], "train": [], "forecast": ["--model", model],
        "lyapunov": ["--model", model, "--steps", "1500"],
        "saturation": ["--model", model], "experiment": [], "grid-search": ["--grid", str(grid)],
        "stacked-experiment": [], "oracle-checks": ["--model", model, "--steps", "100",
                                                    "--angle-sets", "20"],
    }
    differing = []
    for name, extra in commands.items():
        c = stacked if name == "stacked-experiment" else cfg
        outs = []
        for run in ("a", "b"):
            d = tmp_path / name / run
            assert cli.main([name, "--config", str(c), "--out-dir", str(d), *extra]) == 0
            outs.append({p.name: p.read_bytes() for p in d.iterdir()
                         if p.suffix in (".csv", ".json")})
        if not outs[0] or outs[0] != outs[1]:
            differing.append(name)
    # fit-bound on a stored error series
    e = tmp_path / "experiment" / "a"
    fb = []
    for run in ("a", "b"):
        d = tmp_path / "fit-bound" / run
        assert cli.main(["fit-bound", "--config", str(cfg), "--out-dir", str(d), "--errors",
                         str(e / "forecast_000.csv"), "--summary", str(e / "summary.json")]) == 0
        fb.append({p.name: p.read_bytes() for p in d.iterdir()})
    if fb[0] != fb[1]:
        differing.append("fit-bound")
    assert report(13, not differing, f"{len(commands) + 1} subcommands run twice, "
                                     f"differing outputs={differing}")
