"""Command line interface.  Exit codes: 0 success, 1 usage or config error,
2 numerical failure."""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import bounds, dynsys, forecast, harness, lyapunov, oracle, reservoir, training
from .errors import NumericalError, RcBoundsError, UsageError
from .jsonio import read_csv, read_json, write_json

DEFAULT_PRESET = "lorenz_desk"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def preset_names():
    root = resources.files("rcbounds") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def resolve_json(name_or_path):
    """A file path, or the name of a packaged preset."""
    p = Path(name_or_path)
    if p.exists():
        return read_json(p)
    if name_or_path in preset_names():
        return read_json(resources.files("rcbounds") / "presets" / f"{name_or_path}.json")
    raise UsageError(f"no such config file or preset: {name_or_path!r} "
                     f"(presets: {', '.join(preset_names())})")


def load_config(args):
    cfg = harness.ExperimentConfig.from_dict(resolve_json(args.config or DEFAULT_PRESET))
    if args.seed is not None:
        cfg = replace(cfg, esn=replace(cfg.esn, seed=int(args.seed)))
    if getattr(args, "trajectories", None) is not None:
        cfg = replace(cfg, n_trajectories=args.trajectories)
    if getattr(args, "horizon", None) is not None:
        cfg = replace(cfg, horizon=args.horizon)
    return cfg


def _out(args):
    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _data(args, cfg):
    if getattr(args, "data", None):
        return [dynsys.Trajectory.from_csv(p) for p in args.data]
    return harness.generate_data(cfg)


def _model(args, cfg, data=None):
    if getattr(args, "model", None):
        return reservoir.load_model(args.model)
    te, _ = harness.train_from_config(cfg, data if data is not None else _data(args, cfg))
    return te


def _warmup_data(args, cfg):
    """Training data when a model must be trained, else one trajectory for the warmup."""
    if getattr(args, "model", None):
        return harness.generate_data(replace(cfg, n_trajectories=1), total_steps=cfg.train_steps)
    return harness.generate_data(cfg, total_steps=cfg.train_steps)


def _done(paths):
    for p in paths:
        print(p)
    return 0


# -- subcommands -------------------------------------------------------------------------

def cmd_gen_data(args):
    cfg = load_config(args)
    out = _out(args)
    paths = []
    for i, traj in enumerate(harness.generate_data(cfg)):
        paths.append(out / f"data_{i:03d}.csv")
        traj.to_csv(paths[-1])
    return _done(paths)


def cmd_train(args):
    cfg = load_config(args)
    out = _out(args)
    data = _data(args, cfg)
    te, train = harness.train_from_config(cfg, data)
    used = train if cfg.training == "pooled" else train[:1]
    reservoir.save_model(te, out / "model.json")
    lip = te.lipschitz
    write_json(out / "train.json", {
        "epsilon": training.estimate_epsilon(te, used, cfg.washout),
        "training_rmse": training.training_rmse(te, used, cfg.washout),
        "L_x": lip.L_x, "L_z": lip.L_z, "L_h": lip.L_h,
        "trajectories": len(used), "rows_per_trajectory": cfg.train_steps,
        "washout": cfg.washout, "alpha": cfg.alpha})
    return _done([out / "model.json", out / "train.json"])


def cmd_forecast(args):
    cfg = load_config(args)
    out = _out(args)
    data = _data(args, cfg)
    te = _model(args, cfg, data)
    d = data[0]
    if len(d) <= cfg.train_steps:
        raise UsageError(f"data has {len(d)} rows; need more than train_steps = {cfg.train_steps}")
    H = min(cfg.horizon, len(d) - cfg.train_steps)
    run = forecast.evaluate(te, d.head(cfg.train_steps), d.slice(cfg.train_steps,
                                                                 cfg.train_steps + H),
                            keep_states=False)
    run.to_csv(out / "forecast.csv")
    return _done([out / "forecast.csv"])


def cmd_lyapunov(args):
    cfg = load_config(args)
    out = _out(args)
    lc = cfg.lyapunov
    steps = args.steps or lc.steps
    if args.flow:
        system = dynsys.system_from_config(cfg.system, cfg.system_params)
        fmap = lyapunov.FlowMap(system, cfg.dt)
        x0 = np.asarray(cfg.init_mean)
    else:
        data = _warmup_data(args, cfg)
        te = _model(args, cfg, data)
        fmap = lyapunov.EsnMap(te)
        x0 = forecast.initial_condition(te, data[0].head(cfg.train_steps))[0]
    est = lyapunov.spectrum_qr(fmap, x0, args.k, steps, lc.renorm, cfg.dt, lc.transient)
    est.to_csv(out / "lyapunov.csv")
    write_json(out / "lyapunov.json", {"lambda1": est.lambda1, "steps": est.steps_used,
                                       "renorm": est.renorm_interval, "dt": est.dt,
                                       "target": "flow" if args.flow else "esn"})
    return _done([out / "lyapunov.csv", out / "lyapunov.json"])


def cmd_fit_bound(args):
    cfg = load_config(args)
    out = _out(args)
    header, arr = read_csv(args.errors, required=["err_norm"])
    err = arr[:, header.index("err_norm")]
    consts = dict(read_json(args.summary)) if args.summary else {}
    for key in ("epsilon", "lambda1", "L_h", "L_z"):
        v = getattr(args, key)
        if v is not None:
            consts[key] = v
    missing = [k for k in ("epsilon", "lambda1", "L_h", "L_z") if consts.get(k) is None]
    if missing:
        raise UsageError(f"missing bound constants {missing}; pass --summary or the flags")
    fit = bounds.fit_R(err, consts["epsilon"], cfg.delta, consts["lambda1"], consts["L_h"],
                       consts["L_z"], cfg.dt)
    bp = bounds.BoundParams(consts["epsilon"], cfg.delta, consts["lambda1"], fit.R,
                            consts["L_h"], consts["L_z"], cfg.dt)
    bounds.write_bound_csv(out / "bound.csv", err, bp)
    write_json(out / "fit.json", {"R": fit.R, "trivial": fit.trivial, "argmax_step": fit.argmax,
                                  "epsilon": bp.eps, "lambda1": bp.lambda1, "delta": bp.delta,
                                  "L_h": bp.L_h, "L_z": bp.L_z, "dt": bp.dt})
    return _done([out / "bound.csv", out / "fit.json"])


def cmd_saturation(args):
    cfg = load_config(args)
    out = _out(args)
    data = _warmup_data(args, cfg)
    te = _model(args, cfg, data)
    sc = cfg.saturation
    pert = np.full(cfg.obs_dim, sc.perturbation / np.sqrt(cfg.obs_dim))
    est = bounds.estimate_saturation(te, data[0], pert, sc.horizon, sc.window)
    write_json(out / "saturation.json", {"saturation": est.value, "settle_step": est.settle_step,
                                         "window": est.window, "perturbation": sc.perturbation})
    return _done([out / "saturation.json"])


def cmd_experiment(args):
    cfg = load_config(args)
    if args.r_mode:
        cfg = replace(cfg, r_mode=args.r_mode)
    out = _out(args)
    res = harness.run_experiment(cfg, out)
    return _done(out / f for f in res.files)


def cmd_stacked(args):
    cfg = load_config(args)
    if cfg.scheme != "stacked":
        cfg = replace(cfg, scheme="stacked")
    out = _out(args)
    res = harness.run_stacked_experiment(cfg, out)
    return _done(out / f for f in res.files)


def cmd_grid_search(args):
    cfg = load_config(args)
    out = _out(args)
    grid = harness.GridSpec.from_dict(resolve_json(args.grid))
    harness.grid_search(cfg, grid, out)
    return _done([out / "grid.csv", out / "best.json"])


def cmd_oracle_checks(args):
    """Oracle and property checks on a trained model and on synthetic inputs."""
    cfg = load_config(args)
    out = _out(args)
    cfg1 = replace(cfg, n_trajectories=1, horizon=min(cfg.horizon, args.steps))
    data = harness.generate_data(cfg1)
    te = _model(args, cfg1, data)
    d = data[0]
    run = forecast.evaluate(te, d.head(cfg1.train_steps), d.slice(cfg1.train_steps))
    eps = max(training.estimate_epsilon(te, d, cfg1.washout), float(run.err_norms.max()))
    rng = np.random.default_rng(cfg.init_seed)

    taylor = oracle.taylor_decomposition_check(te, run, eps=eps)
    x0 = run.x_true[0]
    shift = 1e-6 * rng.standard_normal(te.params.d)
    scaling = oracle.perturbation_scaling(te, x0, shift, steps=5)

    lin = oracle.linearized_sequence(lyapunov.LinearMap([[2.0]]), np.zeros((20, 1)),
                                     np.ones((20, 1)))
    closed_form = bool(np.array_equal(lin.a_seq[1:, 0], 2.0 ** np.arange(1, 20) - 1))

    violations = 0
    for _ in range(args.angle_sets):
        r = int(rng.integers(2, 7))
        violations += not oracle.angle_lemma_check(rng.standard_normal((r, r + 2))).holds

    jac_err = 0.0
    for _ in range(3):
        x = np.tanh(rng.standard_normal(te.params.L))
        J = reservoir.jacobian_phi(te, x)
        h = 1e-6
        fd = np.empty_like(J)
        for j in range(x.size):
            e = np.zeros_like(x)
            e[j] = h
            fd[:, j] = (reservoir.closed_loop_step(te, x + e)
                        - reservoir.closed_loop_step(te, x - e)) / (2 * h)
        jac_err = max(jac_err, float(np.linalg.norm(J - fd) / np.linalg.norm(J)))

    report = {
        "taylor": {k: taylor[k] for k in ("base_case_residual", "presaturation_steps",
                                          "second_order_constant", "second_order_ok",
                                          "c_bound", "c_bound_ok")},
        "taylor_scaling": scaling,
        "taylor_scaling_ok": bool(np.all((scaling >= 3) & (scaling <= 5))),
        "linearized_closed_form": closed_form,
        "angle_sets": args.angle_sets, "angle_violations": violations,
        "jacobian_rel_error": jac_err,
    }
    write_json(out / "oracle.json", report)
    return _done([out / "oracle.json"])


# -- parser ----------------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help=f"JSON config file or preset name (default {DEFAULT_PRESET})")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="override the reservoir seed")
    common.add_argument("--out-dir", default=argparse.SUPPRESS, help="output directory")

    p = _Parser(prog="rcbounds", description=__doc__, parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=fn)
        return sp

    sp = add("gen-data", cmd_gen_data, "integrate and observe the initial-condition cloud")
    sp.add_argument("--trajectories", type=int)

    sp = add("train", cmd_train, "train a readout and write model.json")
    sp.add_argument("--data", nargs="+", help="trajectory CSVs (default: generate)")
    sp.add_argument("--trajectories", type=int)

    sp = add("forecast", cmd_forecast, "closed-loop forecast of the first trajectory")
    sp.add_argument("--model")
    sp.add_argument("--data", nargs="+")
    sp.add_argument("--horizon", type=int)
    sp.add_argument("--trajectories", type=int)

    sp = add("lyapunov", cmd_lyapunov, "Benettin/QR exponents of the trained ESN or the flow")
    sp.add_argument("--model")
    sp.add_argument("--flow", action="store_true", help="use the true system instead")
    sp.add_argument("--steps", type=int)
    sp.add_argument("-k", type=int, default=1, help="number of exponents")
    sp.add_argument("--trajectories", type=int)

    sp = add("fit-bound", cmd_fit_bound, "fit R to an error series and write the bound curve")
    sp.add_argument("--errors", required=True, help="CSV with an err_norm column")
    sp.add_argument("--summary", help="JSON with epsilon, lambda1, L_h, L_z")
    sp.add_argument("--epsilon", type=float)
    sp.add_argument("--lambda1", type=float)
    sp.add_argument("--L-h", dest="L_h", type=float)
    sp.add_argument("--L-z", dest="L_z", type=float)

    sp = add("saturation", cmd_saturation, "estimate the saturation error level")
    sp.add_argument("--model")
    sp.add_argument("--trajectories", type=int)

    sp = add("experiment", cmd_experiment, "full pipeline and artifact bundle")
    sp.add_argument("--trajectories", type=int)
    sp.add_argument("--horizon", type=int)
    sp.add_argument("--r-mode", choices=("test", "validation"))

    sp = add("grid-search", cmd_grid_search, "cross-validate alpha, gamma and rho")
    sp.add_argument("--grid", required=True, help="JSON grid file or preset name")

    sp = add("stacked-experiment", cmd_stacked, "causal-embedding pipeline and bundle")
    sp.add_argument("--trajectories", type=int)
    sp.add_argument("--horizon", type=int)

    sp = add("oracle-checks", cmd_oracle_checks, "run the numerical oracles on a trained model")
    sp.add_argument("--model")
    sp.add_argument("--steps", type=int, default=300, help="forecast steps for the Taylor check")
    sp.add_argument("--angle-sets", type=int, default=200)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("config", "seed", "out_dir"):
        if not hasattr(args, name):
            setattr(args, name, None)
    try:
        return args.func(args)
    except (NumericalError, FloatingPointError) as exc:
        print(f"rcbounds: numerical failure: {exc}", file=sys.stderr)
        return 2
    except harness.StageError as exc:
        code = 2 if isinstance(exc.cause, NumericalError) else 1
        print(f"rcbounds: {exc}", file=sys.stderr)
        return code
    except (RcBoundsError, ValueError, OSError) as exc:
        print(f"rcbounds: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
