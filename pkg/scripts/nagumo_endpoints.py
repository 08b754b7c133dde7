"""Final control errors of the 200-iteration Nagumo runs.

Runs the R = 1 row of the SDC strong-scaling preset and the IMEX-Euler
baseline and prints J and the relative control error of each.
"""

import argparse
import time

from pintopt.gradient import STATE_THEN_ADJOINT, ReducedObjective
from pintopt.harness import build_problem, get_preset
from pintopt.harness.baseline import control_error, run_imex_euler_baseline
from pintopt.harness.experiments import optimizer_config, solver_settings
from pintopt.optimizer import optimize


def sdc_endpoint():
    cfg = get_preset("nagumo-scaling-cold").configs(1)[0]
    prob = build_problem(cfg)
    ev = ReducedObjective(prob, STATE_THEN_ADJOINT, solver_settings(cfg))
    u, hist = optimize(ev.control(), ev, optimizer_config(cfg))
    exact = ev.control(prob.exact_control)
    return hist.J[-1], (u - exact).norm() / exact.norm()


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--skip-baseline", action="store_true")
    args = ap.parse_args()
    t0 = time.perf_counter()
    J, err = sdc_endpoint()
    print(f"sdc       J={J:.4e} control error={err:.4f} ({time.perf_counter() - t0:.0f} s)")
    if not args.skip_baseline:
        t0 = time.perf_counter()
        cfg = get_preset("imex-euler-baseline").configs()[0]
        prob = build_problem(cfg)
        u, hist, model = run_imex_euler_baseline(prob, cfg.run.baseline_dt, optimizer_config(cfg))
        J, err = hist.J[-1], control_error(u, model.exact_control)
        print(f"imex-euler J={J:.4e} control error={err:.4f} ({time.perf_counter() - t0:.0f} s)")


if __name__ == "__main__":
    main()
