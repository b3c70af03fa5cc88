"""
Command-line front end: solve -> check -> gains -> simulate.

Each subcommand reads the YAML config plus whatever earlier stages left in
the output directory, and writes its own files there. Nothing else is
shared between stages.
"""

import argparse
import csv
import io
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .archive import ArchiveError, load_nominal, write_solution
from .conditions import check_conditions, delta_curve_csv, emit_delta_curve
from .config import ConfigError, load_config
from .extremal import PropagationError
from .gains_guidance import (
    GainError,
    GainSchedule,
    default_t_s,
    gains_from_riccati,
    gains_from_stm,
    perturb_meoe,
    simulate_guidance,
)
from .nominal_solver import (
    ConvergenceError,
    continue_to_fuel,
    parameter_continuation,
    solve_smoothed,
    target_continuation,
)
from .variational import RegularityError, propagate_variational, terminal_values

log = logging.getLogger("nogtransfer")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NOT_CONVERGED = 2
EXIT_REFUSED = 3
EXIT_FAILED = 4

SWEEP_COLUMNS = ["eps", "run", "status", "phi_norm", "dP_km", "dex", "dey", "dhx", "dhy",
                 "dl_rad", "da_km", "fuel_kg", "switch_events"]


def _history(traj, bp):
    return propagate_variational(traj, terminal_values(bp.constraint, traj.zf))


def _with_thrust(cfg, thrust):
    return replace(cfg, thrust_N=thrust).boundary_problem()


def cmd_solve(cfg):
    bp = cfg.boundary_problem()
    opts = cfg.solve
    # a larger engine makes the energy-optimal start easier; thrust is then lowered
    start = bp if opts.thrust_start_N is None else _with_thrust(cfg, opts.thrust_start_N)
    if opts.guess == "target":
        smooth, res = target_continuation(start, cfg.target_meoe(), lam=0.0, tol=opts.tol,
                                          seed=opts.seed)
    else:
        smooth, res = solve_smoothed(start, 0.0, seed=opts.seed, n_starts=opts.starts,
                                     tol=opts.tol, workers=opts.workers)
    log.info("energy-optimal solution: |r|=%.2e", res.residual_norm)
    p0 = res.p0
    if opts.thrust_start_N is not None:
        p0, _ = parameter_continuation(lambda T: _with_thrust(cfg, T), p0,
                                       opts.thrust_start_N, cfg.thrust_N, tol=opts.tol)
    traj, path = continue_to_fuel(bp, p0, 0.0, step=opts.lambda_step,
                                  min_step=opts.lambda_min_step, tol=opts.tol,
                                  final_tol=opts.final_tol)
    out = write_solution(cfg.output_dir, cfg, traj, bp, path)
    sw = traj.switching
    print(f"converged: {len(traj.burn_arcs())} burn arcs, {len(sw)} switchings, "
          f"fuel {(traj.z0[6] - traj.zf[6]) * cfg.units.mass_unit:.6g} kg, "
          f"residual {path[-1].residual_norm:.3e}")
    print(f"archive written to {out}")
    return EXIT_OK


def cmd_check(cfg):
    traj, bp, _ = load_nominal(cfg.output_dir, cfg)
    t0, tf = traj.t0, traj.tf
    if cfg.check.extended:
        start = t0 - (tf - t0)
        traj = traj.extend_backward(start)
    else:
        start = t0
    hist = _history(traj, bp)
    rep = check_conditions(hist, start, tf)
    hours = cfg.units.time_unit / 3600.0
    head = cfg.header_lines() + [f"horizon_TU=[{start!r}, {tf!r}]"]
    out = Path(cfg.output_dir)
    tag = "extended" if cfg.check.extended else "nominal"
    (out / f"conditions_{tag}.txt").write_text(rep.to_text(head, "t_h", hours))
    rows = emit_delta_curve(hist, cfg.check.kappa, start, tf)
    (out / f"delta_curve_{tag}.csv").write_text(delta_curve_csv(
        rows, head + [f"kappa={cfg.check.kappa!r}; column delta_compressed = "
                      "sgn(det Xq)|det Xq|^(1/kappa)"], hours, "t_h"))
    print(f"JC {'PASS' if rep.jc_pass else 'FAIL'}, TC {'PASS' if rep.tc_pass else 'FAIL'}, "
          f"verdict {'PASS' if rep.verdict else 'FAIL'}")
    for t in rep.conjugate_epochs:
        print(f"conjugate/focal epoch at t = {t * hours:.6f} h")
    return EXIT_OK


def cmd_gains(cfg):
    traj, bp, _ = load_nominal(cfg.output_dir, cfg)
    hist = _history(traj, bp)
    t_s = (cfg.units.hours(cfg.gains.t_s_h) if cfg.gains.t_s_h is not None
           else default_t_s(traj, hist))
    rep = check_conditions(hist, traj.t0, t_s)
    hours = cfg.units.time_unit / 3600.0
    if not rep.verdict:
        first = rep.first_failure
        print(f"refusing to build gains: second-order conditions fail on [t0, t_s] "
              f"(first conjugate epoch t = {first * hours:.6f} h); "
              "neighboring extremals do not cover the state neighborhood there",
              file=sys.stderr)
        return EXIT_REFUSED
    if cfg.gains.route == "stm":
        sched = gains_from_stm(hist, t_s, keep_full=True)
    else:
        sched, _ = gains_from_riccati(traj, hist, t_s)
    head = cfg.header_lines() + [f"route={cfg.gains.route}",
                                 "rows: S2 = velocity-costate rows, S3 = mass-costate row; "
                                 "t [TU]"]
    path = Path(cfg.output_dir) / "gains.txt"
    path.write_text(sched.to_text(head, include_full=cfg.gains.include_full))
    print(f"gain schedule on [{traj.t0 * hours:.6f}, {t_s * hours:.6f}] h written to {path}")
    return EXIT_OK


# --- simulation sweep (worker state is rebuilt from files in each process)

_WORKER = {}


def _worker_init(config_path, output_dir):
    cfg = load_config(config_path, output_dir)
    traj, bp, _ = load_nominal(cfg.output_dir, cfg)
    text = (Path(cfg.output_dir) / "gains.txt").read_text()
    _WORKER.update(cfg=cfg, traj=traj, bp=bp, sched=GainSchedule.from_text(text))


def _run_one(job):
    k, eps, guided = job
    w = _WORKER
    cfg, traj, bp, sched = w["cfg"], w["traj"], w["bp"], w["sched"]
    x0 = perturb_meoe(bp.x0, cfg.simulate.eta, eps, cfg.mu)
    cycle = cfg.simulate.cycle_fraction * (traj.tf - traj.t0)
    try:
        res = simulate_guidance(traj, sched, x0, bp, cycle=cycle, guided=guided,
                                length_unit=cfg.units.length_unit)
    except (PropagationError, GainError, ValueError) as exc:
        return k, guided, None, f"failed: {exc}"
    return k, guided, res, "ok"


def _sweep_rows(cfg, results):
    rows = []
    for (k, guided), (res, status) in sorted(results.items(), key=lambda kv: (kv[0][0],
                                                                             not kv[0][1])):
        eps = cfg.simulate.eps[k]
        run = "guided" if guided else "open"
        if res is None:
            rows.append([repr(eps), run, status] + [""] * (len(SWEEP_COLUMNS) - 3))
            continue
        e = res.meoe_error
        rows.append([repr(eps), run, status, repr(res.phi_norm),
                     repr(float(e[0] * cfg.units.length_unit)),
                     *[repr(float(v)) for v in e[1:6]], repr(float(res.a_error)),
                     repr(float(res.fuel * cfg.units.mass_unit)), len(res.switch_times)])
    return rows


def run_sweep(cfg, workers=None):
    """Guided and open-loop runs for every eps; returns the CSV text."""
    workers = cfg.simulate.workers if workers is None else workers
    jobs = [(k, float(eps), guided) for k, eps in enumerate(cfg.simulate.eps)
            for guided in (True, False)]
    results = {}
    if workers > 1:
        with ProcessPoolExecutor(workers, initializer=_worker_init,
                                 initargs=(str(cfg.path), str(cfg.output_dir))) as ex:
            for k, guided, res, status in ex.map(_run_one, jobs):
                results[(k, guided)] = (res, status)
    else:
        _worker_init(str(cfg.path), str(cfg.output_dir))
        for job in jobs:
            k, guided, res, status = _run_one(job)
            results[(k, guided)] = (res, status)
    buf = io.StringIO()
    for line in cfg.header_lines() + [
            "eta chart: equinoctial (P, ex, ey, hx, hy, l, m) in canonical units",
            f"eta={list(cfg.simulate.eta)}",
            "phi_norm: terminal constraint error (canonical); dP_km, da_km in km; "
            "dl_rad in rad; fuel_kg in kg"]:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    w.writerows(_sweep_rows(cfg, results))
    return buf.getvalue(), results


def sweep_summary(cfg, results):
    lines = ["eps, guided phi, open phi, ratio, guided |da| km, open |da| km"]
    for k, eps in enumerate(cfg.simulate.eps):
        g, _ = results[(k, True)]
        o, _ = results[(k, False)]
        if g is None or o is None:
            lines.append(f"{eps!r}, failed")
            continue
        ratio = g.phi_norm / o.phi_norm if o.phi_norm > 0 else float("nan")
        lines.append(f"{eps!r}, {g.phi_norm:.6e}, {o.phi_norm:.6e}, {ratio:.4f}, "
                     f"{abs(g.a_error):.4f}, {abs(o.a_error):.4f}")
    return "\n".join(lines) + "\n"


def cmd_simulate(cfg, workers=None):
    load_nominal(cfg.output_dir, cfg)
    if not (Path(cfg.output_dir) / "gains.txt").is_file():
        raise ArchiveError("gains.txt not found; run 'gains' first")
    text, results = run_sweep(cfg, workers)
    out = Path(cfg.output_dir)
    (out / "sweep.csv").write_text(text)
    summary = sweep_summary(cfg, results)
    (out / "sweep_summary.txt").write_text(
        "".join(f"# {h}\n" for h in cfg.header_lines()) + summary)
    print(summary, end="")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(
        prog="nogtransfer",
        description="Fuel-optimal low-thrust transfer, second-order checks and "
                    "neighboring optimal guidance.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "solve": "solve the fuel-optimal nominal (energy-optimal start, homotopy to bang-bang)",
        "check": "Jacobi and transversal conditions, determinant curve",
        "gains": "build the feedback gain schedule (refuses if the conditions fail)",
        "simulate": "epsilon sweep of guided versus open-loop runs",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text, description=text)
        sp.add_argument("config", help="YAML run configuration")
        sp.add_argument("-o", "--output-dir", help="override output_dir from the config")
        sp.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                        help="log progress to stderr")
        if name == "check":
            sp.add_argument("--extended", action="store_true",
                            help="scan the backward-extended horizon [t0 - tf, tf]")
        if name == "simulate":
            sp.add_argument("-j", "--workers", type=int, help="parallel worker processes")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.output_dir)
    except ConfigError as exc:
        print(f"config error in {args.config}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "check":
            if args.extended:
                cfg = replace(cfg, check=replace(cfg.check, extended=True))
            return cmd_check(cfg)
        if args.command == "gains":
            return cmd_gains(cfg)
        return cmd_simulate(cfg, args.workers)
    except ConvergenceError as exc:
        print(f"not converged: {exc} (last residual {exc.residual_norm:.3e})", file=sys.stderr)
        if exc.p0 is not None:
            print("last p0: " + " ".join(repr(float(v)) for v in exc.p0), file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except (ArchiveError, PropagationError, RegularityError, GainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
