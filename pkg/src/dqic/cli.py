"""Command line entry point: dqic {anneal,sweep,oracle,theory,fit}."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import sys
from pathlib import Path

from .errors import ConfigError, ConvergenceError, DomainError
from .model import AnnealingSchedule, BathSpec, build_kernel_table, build_time_grid
from .runner import (environment_tag, estimate_memory_bytes, format_fit, load_config, read_csv,
                     run_anneal, run_sweep, write_csv)

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_PARTIAL = 0, 2, 3, 4

log = logging.getLogger("dqic")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dqic", description="Dissipative quantum annealing of the Ising chain.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--out", help="output directory (default: config key outputs)")
    common.add_argument("--jobs", type=int, default=1, help="parallel runs in a sweep")
    common.add_argument("--dry-run", action="store_true", help="print resolved config and memory estimate")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("anneal", parents=[common], help="single anneal")
    sub.add_parser("sweep", parents=[common], help="sweep one axis (sweep_axis, sweep_values)")
    sub.add_parser("oracle", parents=[common], help="reference calculations (config key oracle)")
    sub.add_parser("theory", parents=[common], help="freezing-point closed forms")
    fit = sub.add_parser("fit", parents=[common], help="refit a sweep.csv or kl_curve.csv")
    fit.add_argument("csv", help="sweep.csv or kl_curve.csv")
    return p


def _out_dir(args, cfg) -> Path:
    return Path(args.out if args.out else cfg.outputs)


def _print_dry_run(cfg) -> None:
    sys.stdout.write(cfg.snapshot())
    mem = estimate_memory_bytes(cfg)
    sys.stdout.write(f"# estimated peak memory per run: {mem / 2**20:.1f} MiB\n")
    sys.stdout.write(f"# {environment_tag()}\n")


def cmd_anneal(args, cfg) -> int:
    rec = run_anneal(cfg, _out_dir(args, cfg))
    print(f"E_exc={rec.E_exc!r} T_star={rec.T_star!r} wall={rec.wall_time:.1f}s")
    return EXIT_OK


def cmd_sweep(args, cfg) -> int:
    res = run_sweep(cfg, out_dir=_out_dir(args, cfg), jobs=args.jobs)
    for row in res.rows:
        print(",".join("nan" if x is None else repr(x) for x in row))
    if res.fit is not None:
        print(format_fit(res.fit))
    for v, err in res.failures:
        print(f"failed {cfg.sweep_axis}={v!r}: {err}", file=sys.stderr)
    return EXIT_PARTIAL if res.partial else EXIT_OK


def cmd_oracle(args, cfg) -> int:
    from . import oracles

    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    bath = BathSpec(cfg.eta, cfg.omega_c, cfg.T_B)
    sched = AnnealingSchedule(cfg.alpha)
    ts = cfg.oracle_t or (0.1, 0.2, 0.5, 1.0)
    if cfg.oracle == "dephasing":
        rows = [(t, oracles.dephasing_coherence(t, bath)) for t in ts]
        write_csv(out / "dephasing.csv", ["t", "coherence"], rows)
    elif cfg.oracle == "ed":
        grid = build_time_grid(cfg.t_a, cfg.dt, cfg.tau_c)
        every = max(1, grid.M // max(1, cfg.measure_points - 1))
        tr = oracles.ed_trotter_evolve(cfg.ed_sites, sched, grid, cfg.schedule_sampling, every)
        write_csv(out / "trajectory.csv", ["s", "energy", "sx", "zz"], tr.rows())
        rows = tr.rows()
    elif cfg.oracle == "tfic":
        # A, B along the schedule at the requested s values; T = T_B
        rows = []
        for s in ts:
            A, B = (1 - s) ** cfg.alpha, s
            rows.append((s, oracles.tfic_equilibrium_energy(A, B, cfg.T_B)))
        write_csv(out / "tfic.csv", ["s", "energy"], rows)
    elif cfg.oracle == "classical":
        rows = [(T, oracles.classical_chain_energy(1.0, T)) for T in ts]
        write_csv(out / "classical.csv", ["T", "energy"], rows)
    else:  # path_sum
        grid = build_time_grid(cfg.t_a, cfg.dt, cfg.tau_c)
        ps = oracles.SpinBosonPathSum(grid, build_kernel_table(grid, bath), schedule=sched,
                                      sampling=cfg.schedule_sampling)
        rho = oracles.path_sum_rdm(ps)
        rows = [(i, j, rho[i, j].real, rho[i, j].imag) for i in range(2) for j in range(2)]
        write_csv(out / "path_sum.csv", ["i", "j", "re", "im"], rows)
    for r in rows:
        print(",".join(repr(float(x)) for x in r))
    return EXIT_OK


def cmd_theory(args, cfg) -> int:
    from .theory import FreezingModel, effective_temperature, freezing_point, predicted_exponent

    fp = freezing_point(FreezingModel(cfg.alpha, cfg.eta, cfg.t_a, cfg.C))
    print(f"b = {predicted_exponent(cfg.alpha)!r}")
    print(f"s_star = {fp.s_star!r} frozen = {fp.frozen}")
    if fp.frozen and cfg.T_B > 0:
        print(f"T_star = {effective_temperature(fp.s_star, cfg.T_B)!r}")
    return EXIT_OK


def cmd_fit(args, cfg) -> int:
    from .theory import fit_power_law

    try:
        rows, _ = read_csv(args.csv)
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot read {args.csv}: {e}") from e
    if not rows:
        raise ConfigError(f"{args.csv} has no data rows")
    if "D_KL" in rows[0]:
        best = min(rows, key=lambda r: r["D_KL"])
        print(f"T_star = {best['T']!r} D_KL = {best['D_KL']!r}")
        return EXIT_OK
    if "E_exc" not in rows[0]:
        raise ConfigError(f"{args.csv} is neither a sweep.csv nor a kl_curve.csv")
    pts = [(r["axis"], r["E_exc"]) for r in rows if not math.isnan(r["E_exc"])]
    print(format_fit(fit_power_law(pts, (cfg.fit_t_min, cfg.fit_t_max))))
    return EXIT_OK


COMMANDS = {"anneal": cmd_anneal, "sweep": cmd_sweep, "oracle": cmd_oracle,
            "theory": cmd_theory, "fit": cmd_fit}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.override)
        cfg = dataclasses.replace(cfg, mode=args.command)
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        if args.dry_run:
            _print_dry_run(cfg)
            return EXIT_OK
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, DomainError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as e:
        print(f"convergence failure: {e}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
