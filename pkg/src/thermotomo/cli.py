"""Command-line entry points tying the pipeline together.

Subcommands: forward, reconstruct, raytrace, knorm, energy, roundtrip.
Exit codes: 0 success, 2 configuration or file-format error, 3 numerical
failure.  Given one config file and seed, repeated runs produce identical
output bytes.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

from .config import RunConfig
from .errors import ConfigurationError, FormatError, NumericalError
from .formats import emit_pgm, read_trace, write_grid, write_trace
from .grid_field import ScalarField, WaveState
from .rays import check_visibility, sample_directions, sample_positions, trace_branches
from .recon import energy_decay_ratio, estimate_contraction, neumann_series
from .wave_solver import forward

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _load(args):
    cfg = RunConfig.from_file(args.config)
    grid = cfg.build_grid()
    medium = cfg.build_medium(grid)
    omega = cfg.build_omega(grid)
    kset = cfg.build_kset(grid)
    out_dir = args.output_dir or cfg.get("output.dir", "out")
    os.makedirs(out_dir, exist_ok=True)
    return cfg, grid, medium, omega, kset, out_dir


def _progress(args, label):
    if not args.verbose:
        return None
    def on_step(k, total):
        if k % 200 == 0 or k == total:
            print(f"{label}: step {k}/{total}", file=sys.stderr)
    return on_step


def cmd_forward(args) -> int:
    cfg, grid, medium, omega, kset, out = _load(args)
    phantom = cfg.build_phantom(grid, kset)
    scfg = cfg.solver_config(medium)
    trace, final = forward(WaveState(phantom, ScalarField.zeros(grid)), medium, omega,
                           cfg.values["time.T"], scfg, return_final=True,
                           on_step=_progress(args, "forward"))
    write_trace(os.path.join(out, "trace.taws"), trace)
    write_grid(os.path.join(out, "phantom.tawg"), phantom)
    emit_pgm(phantom, os.path.join(out, "phantom.pgm"))
    emit_pgm(final.u, os.path.join(out, "field_T.pgm"))
    print(f"wrote {out}/trace.taws ({trace.values.shape[0]} x {trace.values.shape[1]} samples)")
    return EXIT_OK


def _run_series(args, truth=None):
    cfg, grid, medium, omega, kset, out = _load(args)
    rcfg = cfg.recon_config(omega, kset)
    if truth == "phantom":
        truth_field = cfg.build_phantom(grid, kset)
        scfg = cfg.solver_config(medium)
        trace = forward(WaveState(truth_field, ScalarField.zeros(grid)), medium, omega,
                        rcfg.T, scfg, on_step=_progress(args, "forward"))
        write_trace(os.path.join(out, "trace.taws"), trace)
    else:
        truth_field = None
        trace_path = args.trace or os.path.join(out, "trace.taws")
        trace = read_trace(trace_path)

    pgm_lo_hi = None

    def on_term(stats, f):
        nonlocal pgm_lo_hi
        if args.term_pgms:
            if pgm_lo_hi is None:
                lo, hi = float(f.data.min()), float(f.data.max())
                pgm_lo_hi = (lo, hi) if lo < hi else (lo, lo + 1.0)
            emit_pgm(f, os.path.join(out, f"recon_term_{stats.term:02d}.pgm"), pgm_lo_hi)
        if args.verbose:
            msg = f"term {stats.term}: update {stats.update_norm:.3e}"
            if stats.err_hd is not None:
                msg += f" err_hd {stats.err_hd:.3e}"
            print(msg, file=sys.stderr)

    recon, report = neumann_series(trace, medium, rcfg, truth=truth_field, on_term=on_term)
    report.write_csv(os.path.join(out, "report.csv"))
    write_grid(os.path.join(out, "recon.tawg"), recon)
    emit_pgm(recon, os.path.join(out, "recon.pgm"))
    terms = len(report.iterates)
    line = f"series: {terms} terms, converged={report.converged}"
    if report.mu_hat is not None:
        line += f", update ratio {report.mu_hat:.4f}"
    if truth_field is not None:
        line += f", final relative L2 error {report.iterates[-1].err_l2:.4f}"
    if report.non_contraction_warning:
        line += " [warning: update norms grew for 3 consecutive terms]"
    print(line)
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    return _run_series(args, truth=None)


def cmd_roundtrip(args) -> int:
    return _run_series(args, truth="phantom")


def cmd_raytrace(args) -> int:
    cfg, grid, medium, omega, kset, out = _load(args)
    T = cfg.values["time.T"]
    sampling = cfg.ray_sampling()
    visible, uncovered = check_visibility(kset, medium, omega, T, sampling)
    uncovered_set = set(uncovered)
    positions = sample_positions(kset, sampling["n_pos"])
    directions = sample_directions(sampling["n_dir"])
    with open(os.path.join(out, "visibility.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "dx", "dy", "covered"])
        for x in positions:
            for d in directions:
                covered = (tuple(x), tuple(d)) not in uncovered_set
                w.writerow([f"{x[0]:.12g}", f"{x[1]:.12g}",
                            f"{d[0]:.12g}", f"{d[1]:.12g}", int(covered)])
    n_graphs = min(4, len(positions))
    for k in range(n_graphs):
        g = trace_branches(positions[k], directions[0], medium, omega, T, cfg.ray_caps())
        with open(os.path.join(out, f"branches_{k}.txt"), "w") as fh:
            fh.write(g.to_text())
    total = len(positions) * len(directions)
    print(f"visibility: {'all covered' if visible else 'NOT covered'} "
          f"({total - len(uncovered)}/{total} samples)")
    return EXIT_OK


def cmd_knorm(args) -> int:
    cfg, grid, medium, omega, kset, out = _load(args)
    rcfg = cfg.recon_config(omega, kset)
    mu = estimate_contraction(medium, rcfg, n_power_iters=args.power_iters,
                              seed=cfg.get("seed", 0))
    with open(os.path.join(out, "knorm.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n_power_iters", "mu_hat"])
        w.writerow([args.power_iters, f"{mu:.12e}"])
    print(f"mu_hat = {mu:.6f}")
    return EXIT_OK


def cmd_energy(args) -> int:
    cfg, grid, medium, omega, kset, out = _load(args)
    rcfg = cfg.recon_config(omega, kset)
    phantom = cfg.build_phantom(grid, kset)
    ratio = energy_decay_ratio(phantom, medium, rcfg)
    print(f"energy decay ratio = {ratio:.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="thermotomo",
                                description="time-reversal tomography pipeline")
    p.add_argument("--verbose", action="store_true", help="progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="run configuration file")
        sp.add_argument("--output-dir", default=None, help="override output.dir")

    sp = sub.add_parser("forward", help="phantom -> boundary trace + images")
    common(sp)
    sp.set_defaults(fn=cmd_forward)

    sp = sub.add_parser("reconstruct", help="trace -> series reconstruction")
    common(sp)
    sp.add_argument("--trace", default=None, help="input trace (default <out>/trace.taws)")
    sp.add_argument("--term-pgms", action=argparse.BooleanOptionalAction, default=True,
                    help="write one PGM per series term")
    sp.set_defaults(fn=cmd_reconstruct)

    sp = sub.add_parser("roundtrip", help="forward then reconstruct against the phantom")
    common(sp)
    sp.add_argument("--term-pgms", action=argparse.BooleanOptionalAction, default=True,
                    help="write one PGM per series term")
    sp.set_defaults(fn=cmd_roundtrip)

    sp = sub.add_parser("raytrace", help="branch graphs + visibility report")
    common(sp)
    sp.set_defaults(fn=cmd_raytrace)

    sp = sub.add_parser("knorm", help="power-iteration contraction estimate")
    common(sp)
    sp.add_argument("--power-iters", type=int, default=8)
    sp.set_defaults(fn=cmd_knorm)

    sp = sub.add_parser("energy", help="energy decay ratio of the phantom")
    common(sp)
    sp.set_defaults(fn=cmd_energy)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except (ConfigurationError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
