"""Command line entry point: ``run``, ``study`` and ``preset-list``.

Exit codes: 0 success, 2 configuration error, 3 solver non-convergence.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..pfasst import NonConvergenceError
from ..pfasst.comm import WorkerFailure
from .baseline import NonFiniteStateError
from .config import ConfigError, ExperimentConfig, parse_lines
from .experiments import build_problem, convergence_study, run_experiment, solver_settings, write_summary_table
from .presets import PRESETS, get_preset

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pintopt", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "run one configuration or every row of a preset"),
                        ("study", "temporal order study of single state steps")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--preset", help="named preset (see preset-list)")
        p.add_argument("--nproc", type=int, help="number of time workers R")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one key")
        if name == "study":
            p.add_argument("--dt0", type=float, default=None, help="largest step size")
            p.add_argument("--count", type=int, default=None, help="number of halvings")
    sub.add_parser("preset-list", help="list presets")
    return ap


def _overrides(args) -> dict:
    items = {}
    if args.config:
        try:
            items.update(parse_lines(Path(args.config).read_text()))
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    for kv in args.set:
        key, sep, value = kv.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {kv!r}")
        items[key.strip()] = value.strip()
    return items


def _configs(args) -> list[ExperimentConfig]:
    items = _overrides(args)
    if args.preset:
        rows = [c.with_overrides(items) for c in get_preset(args.preset).configs(args.nproc)]
    else:
        if args.nproc is not None:
            items["solver.nproc"] = args.nproc
        rows = [ExperimentConfig.from_flat(items)]
    for c in rows:
        c.validate()
    return rows


def cmd_run(args) -> int:
    configs = _configs(args)
    out = Path(args.out or Path("runs") / (args.preset or "run"))
    results = []
    for i, cfg in enumerate(configs):
        sub = out if len(configs) == 1 else out / f"row{i:02d}"
        res = run_experiment(cfg, sub)
        results.append(res)
        s = res.summary
        print(f"[{i + 1}/{len(configs)}] {cfg.problem.name} R={cfg.solver.nproc} {s['status']} "
              f"J={s['final_J']} err={s['control_error']} sweeps={s['total_state_sweeps']}/"
              f"{s['total_adjoint_sweeps']} converged={s['converged']} -> {res.out_dir}", flush=True)
    write_summary_table(out / "summary_table.csv", results)
    return EXIT_OK


def cmd_study(args) -> int:
    preset = get_preset(args.preset or "heat-order")
    cfg = preset.configs(args.nproc)[0].with_overrides(_overrides(args)).validate()
    dt0 = args.dt0 or preset.study.get("dt0", 0.08)
    count = args.count or preset.study.get("count", 6)
    prob = build_problem(cfg)
    res = convergence_study(prob, [dt0 / 2 ** k for k in range(count)], solver_settings(cfg).tol)
    out = Path(args.out or Path("runs") / "study")
    out.mkdir(parents=True, exist_ok=True)
    res.to_csv(out / "study.csv", cfg)
    for r in res.rows:
        print(f"dt={r.dt:.5g} error={r.error:.3e} order={r.order:.2f}{' (floor)' if r.floor else ''}")
    print(f"fitted order {res.fitted_order:.2f}")
    return EXIT_OK


def cmd_presets(_args) -> int:
    for name, p in PRESETS.items():
        print(f"{name:26s} {len(p.variants):3d} row(s)  {p.description}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handler = {"run": cmd_run, "study": cmd_study, "preset-list": cmd_presets}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonConvergenceError, NonFiniteStateError) as exc:
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except WorkerFailure as exc:
        if "NonConvergenceError" in str(exc):
            print(f"solver did not converge: {exc}", file=sys.stderr)
            return EXIT_NONCONVERGED
        raise


if __name__ == "__main__":
    sys.exit(main())
