"""Time the hot loops under the numba and numpy backends.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]

Each backend runs in its own interpreter because the backend is fixed at
import time (RCBOUNDS_DISABLE_NUMBA=1 selects numpy).  Numba timings
exclude the first, compiling call.
"""
import argparse
import json
import os
import subprocess
import sys
import time

CASES = ("lorenz_rk4_20k", "lorenz_dopri_5k", "lorenz_benettin_20k", "esn_drive_5k",
         "esn_closed_loop_5k", "esn_benettin_2k")


def _cases():
    import numpy as np

    from rcbounds import dynsys, forecast, lyapunov, reservoir, training
    from rcbounds.training import TrainSpec

    lor = dynsys.lorenz()
    x0 = [0.0, 1.0, 1.05]
    data = dynsys.integrate(lor, x0, 0.02, 2999)
    p = reservoir.generate(3, 300, 3, spectral_radius=0.9, gamma=0.05)
    te = training.train_pipeline(p, data, TrainSpec(500, 1e-10))
    xs = forecast.initial_condition(te, data)[0]
    Y = np.ascontiguousarray(np.tile(data.data, (2, 1))[:5000])
    return {
        "lorenz_rk4_20k": lambda: dynsys.integrate(lor, x0, 0.01, 20000, method="RK4"),
        "lorenz_dopri_5k": lambda: dynsys.integrate(lor, x0, 0.01, 5000),
        "lorenz_benettin_20k": lambda: lyapunov.top_lyapunov(
            lyapunov.FlowMap(lor, 0.01), x0, 20000, 1, 0.01, 100),
        "esn_drive_5k": lambda: reservoir.drive(p, np.zeros(300), Y),
        "esn_closed_loop_5k": lambda: forecast.closed_loop(te, xs, data.data[-1], 5000),
        "esn_benettin_2k": lambda: lyapunov.top_lyapunov(lyapunov.EsnMap(te), xs, 2000, 1, 0.02, 100),
    }


def worker(repeat):
    from rcbounds import kernels
    out = {"backend": kernels.backend_name(), "times": {}}
    for name, fn in _cases().items():
        fn()                            # warm up (jit compile for numba)
        best = float("inf")
        for _ in range(repeat):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        out["times"][name] = best
    print(json.dumps(out))


def run_backend(disable, repeat):
    env = dict(os.environ)
    if disable:
        env["RCBOUNDS_DISABLE_NUMBA"] = "1"
    else:
        env.pop("RCBOUNDS_DISABLE_NUMBA", None)
    proc = subprocess.run([sys.executable, __file__, "--worker", "--repeat", str(repeat)],
                          env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", help="write raw timings here")
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.worker:
        worker(args.repeat)
        return
    fast = run_backend(False, args.repeat)
    slow = run_backend(True, args.repeat)
    print(f"{'case':<22}{fast['backend']:>12}{slow['backend']:>12}{'speedup':>10}")
    for name in CASES:
        a, b = fast["times"][name], slow["times"][name]
        print(f"{name:<22}{a:>11.4f}s{b:>11.4f}s{b / a:>9.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"fast": fast, "slow": slow}, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
