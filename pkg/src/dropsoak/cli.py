"""Command-line entry points.

Exit codes: 0 ok, 1 comparison threshold exceeded, 2 bad input,
3 runtime failure (e.g. a time step too coarse for the consumption rate).
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, _kernels, calibration, engine, oracle
from . import io as dio
from .config import validate_config
from .growth import TimeStepTooCoarseError

log = logging.getLogger("dropsoak")

EXIT_OK, EXIT_THRESHOLD, EXIT_INPUT, EXIT_RUNTIME = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, code, kind, message, **details):
        super().__init__(message)
        self.code = code
        self.kind = kind
        self.details = details


def _float_or_keyword(text):
    if text.lower() in ("auto", "none"):
        return "auto"
    if text.lower() in ("inf", "infinity", "uncapped"):
        return math.inf
    return float(text)


def _csv_floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _add_run_flags(p):
    p.add_argument("--config", type=Path, help="YAML config file or a previous manifest.json")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--dt", type=float, help="particle time step (s)")
    p.add_argument("--particles-weight", type=float, help="moles per simulated particle")
    p.add_argument("--snapshot-times", type=_csv_floats, help="comma-separated seconds")
    p.add_argument("--end-time", type=float, help="simulated horizon (s)")
    p.add_argument("--kb0", type=float,
                   help="initial bacterial consumption rate (m/s); required unless in the config")
    p.add_argument("--cap", type=_float_or_keyword,
                   help="consumption-rate cap (m/s), 'auto' or 'inf'")
    p.add_argument("--workers", type=int, help="engine threads (default: all cores)")


def build_parser():
    ap = argparse.ArgumentParser(prog="dropsoak", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"dropsoak {__version__}")
    ap.add_argument("-q", "--quiet", action="store_true", help="only print errors")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-q", "--quiet", action="store_true", default=argparse.SUPPRESS)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="run the particle-based simulation")
    _add_run_flags(p)
    p.add_argument("--backend", choices=("numba", "numpy"),
                   help="kernel implementation (default: numba when installed)")

    p = sub.add_parser("oracle", parents=[common], help="solve the continuum model on an (r, z) grid")
    _add_run_flags(p)
    p.add_argument("--grid", default="64x32", help="NRxNZ cells (default 64x32)")
    p.add_argument("--dt-pde", type=float, help="solver time step (s)")
    p.add_argument("--no-auto-shrink", action="store_true",
                   help="fail instead of shrinking an unstable --dt-pde")

    p = sub.add_parser("fit", parents=[common], help="estimate soaking rates from droplet area series")
    p.add_argument("files", nargs="+", type=Path)
    p.add_argument("--volume", type=float, help="droplet volume (m^3); h0 = volume / first area")
    p.add_argument("--h0", type=float, help="droplet height (m), instead of --volume")
    p.add_argument("--radius", action="store_true", help="files hold time_s,radius_m")
    p.add_argument("--out", type=Path, help="fit report path")

    p = sub.add_parser("compare", parents=[common], help="cross-check a particle run against an oracle run")
    p.add_argument("pbs_dir", type=Path)
    p.add_argument("oracle_dir", type=Path)
    p.add_argument("--thresholds", type=Path,
                   help="YAML with l1 and consumed_rel limits (defaults 0.05, 0.10)")
    p.add_argument("--out", type=Path, help="comparison report CSV")
    return ap


# --------------------------------------------------------------------------


def _resolve_config(args):
    overrides = {
        "rng_seed": args.seed,
        "time_step_s": args.dt,
        "particle_weight_mol": args.particles_weight,
        "snapshot_times_s": args.snapshot_times,
        "end_time_s": args.end_time,
        "initial_consumption_rate_m_s": args.kb0,
    }
    if args.cap is not None:
        overrides["max_consumption_rate_m_s"] = args.cap
    try:
        data = dio.read_config_mapping(args.config) if args.config else {}
        cfg = dio.config_from_mapping(data, overrides)
    except (dio.FormatError, OSError, TypeError) as exc:
        raise CliError(EXIT_INPUT, "config_parse", str(exc)) from None
    report = validate_config(cfg)
    if not report.ok:
        msgs = report.messages()
        # P > 1 is well-formed input the engine cannot run, not a malformed config.
        if all("absorption probability" in m for m in msgs):
            raise CliError(EXIT_RUNTIME, "TimeStepTooCoarseError", str(report), violations=msgs)
        raise CliError(EXIT_INPUT, "config_validation", str(report), violations=msgs)
    return cfg


def _workers(args):
    requested = args.workers if args.workers is not None else _kernels.max_workers()
    if requested < 1:
        raise CliError(EXIT_INPUT, "flags", "--workers must be >= 1")
    used = _kernels.set_workers(requested)
    if used != requested:
        log.info("using %d worker thread(s) (%d requested)", used, requested)
    return requested, used


def _snap_name(prefix, i, t):
    return f"{prefix}_{i:02d}_t{t:.0f}s.csv"


def cmd_simulate(args):
    cfg = _resolve_config(args)
    requested, used = _workers(args)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        result = engine.run(cfg, backend=args.backend)
    except (TimeStepTooCoarseError, engine.ReflectionError) as exc:
        raise CliError(EXIT_RUNTIME, type(exc).__name__, str(exc)) from None
    wall = time.perf_counter() - t0

    w = cfg.species.particle_weight_mol
    files = []
    for i, snap in enumerate(result.snapshots):
        name = _snap_name("snapshot", i, snap.time_s)
        dio.write_grid_csv(out / name, snap.time_s, snap.extent, snap.grid,
                           "in_agar_particles", snap.outside)
        cname = _snap_name("consumed", i, snap.time_s)
        dio.write_grid_csv(out / cname, snap.time_s, snap.extent, snap.consumed_grid,
                           "consumed_particles", snap.outside)
        pname = _snap_name("profile", i, snap.time_s)
        dio.write_profile_csv(out / pname, snap.time_s, snap.radial_edges,
                              snap.radial_counts * w, snap.consumed_grid.sum() * w,
                              _released_at(result, snap.time_s) * w, w)
        files += [name, cname, pname]

    t, rel, alive, cons = result.timeseries.as_arrays()
    dio.write_table_csv(out / "timeseries.csv", ["time_s", "released", "in_agar", "consumed"],
                        zip(t, rel, alive, cons))
    dio.write_table_csv(out / "ledger.csv", ["time_s", "x_m", "y_m"], result.ledger)
    files += ["timeseries.csv", "ledger.csv"]
    residual = int(np.max(np.abs(rel - alive - cons))) if len(t) else 0
    dio.write_manifest(
        out, "simulate", cfg, files,
        engine="pbs",
        backend=_kernels.resolve_backend(args.backend),
        workers={"requested": requested, "used": used},
        resolved={"consumption_cap_m_s": result.consumption_cap_m_s,
                  "n_steps": cfg.n_steps,
                  "particles_released": int(result.final_state.released)},
        physics=oracle.physics_signature(cfg),
        max_conservation_residual=residual,
        wall_clock_s=round(wall, 3),
    )
    if not args.quiet:
        print(f"simulate: {cfg.n_steps} steps, released {int(result.final_state.released)}, "
              f"in agar {result.final_state.alive}, consumed {result.final_state.consumed} "
              f"-> {out}")
    return EXIT_OK


def _released_at(result, t):
    times, rel, _, _ = result.timeseries.as_arrays()
    i = int(np.searchsorted(times, t - 1e-9))
    return int(rel[min(i, len(rel) - 1)])


def cmd_oracle(args):
    cfg = _resolve_config(args)
    try:
        grid = oracle.Grid.parse(args.grid, args.dt_pde)
    except ValueError as exc:
        raise CliError(EXIT_INPUT, "flags", str(exc)) from None
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        res = oracle.solve(cfg, grid, auto_shrink=not args.no_auto_shrink)
    except (oracle.StabilityError, oracle.NegativeConcentrationError) as exc:
        raise CliError(EXIT_RUNTIME, type(exc).__name__, str(exc)) from None
    except ValueError as exc:
        raise CliError(EXIT_INPUT, "config_validation", str(exc)) from None
    wall = time.perf_counter() - t0

    w = cfg.species.particle_weight_mol
    rp, za = cfg.geometry.plate_radius_m, cfg.geometry.agar_depth_m
    files = []
    profiles = oracle.ProfileSet.from_oracle(res)
    outside = engine.outside_mask(np.linspace(-rp, rp, cfg.histogram_bins[0] + 1),
                                  np.linspace(-rp, rp, cfg.histogram_bins[1] + 1), rp)
    for i, field in enumerate(res.snapshots):
        name = _snap_name("snapshot", i, field.time_s)
        xy = field.xy_grid(cfg.histogram_bins, rp) / w
        dio.write_grid_csv(out / name, field.time_s, (-rp, rp, -rp, rp), xy,
                           "in_agar_particle_equivalents", outside)
        fname = _snap_name("field", i, field.time_s)
        dio.write_grid_csv(out / fname, field.time_s, (0.0, rp, 0.0, za), field.concentration,
                           "concentration_mol_m3 (rows r, columns z)")
        pname = _snap_name("profile", i, field.time_s)
        dio.write_profile_csv(out / pname, field.time_s, field.r_edges, field.radial_profile(),
                              profiles.consumed_mol[i], profiles.released_mol[i], w)
        files += [name, fname, pname]
    dio.write_table_csv(
        out / "timeseries.csv",
        ["time_s", "released_mol", "in_agar_mol", "consumed_mol", "residual_mol"],
        zip(res.times_s, res.released_mol, res.in_agar_mol, res.consumed_mol, res.residual_mol))
    files.append("timeseries.csv")
    dio.write_manifest(
        out, "oracle", cfg, files,
        engine="oracle",
        grid={"n_r": grid.n_r, "n_z": grid.n_z, "dt_pde_requested": grid.dt_pde,
              "dt_pde_used": res.dt_used},
        resolved={"consumption_cap_m_s": cfg.resolved_cap()},
        physics=oracle.physics_signature(cfg),
        max_conservation_residual=res.max_relative_residual(),
        wall_clock_s=round(wall, 3),
    )
    if not args.quiet:
        print(f"oracle: {len(res.times_s) - 1} steps of <= {res.dt_used:.4g} s, "
              f"released {res.released_mol[-1]:.4g} mol, consumed {res.consumed_mol[-1]:.4g} mol, "
              f"max relative residual {res.max_relative_residual():.2e} -> {out}")
    return EXIT_OK


def cmd_fit(args):
    if args.volume is None and args.h0 is None:
        raise CliError(EXIT_INPUT, "flags", "give --volume or --h0")
    reports = []
    for path in args.files:
        try:
            times, values, is_radius, tag = dio.read_area_series(
                path, radius=True if args.radius else None)
            if is_radius:
                series = calibration.AreaSeries.from_radii(times, values, concentration_tag=tag,
                                                           volume_m3=args.volume)
            else:
                series = calibration.AreaSeries(times, values, concentration_tag=tag,
                                                volume_m3=args.volume)
            h0 = args.h0 if args.h0 is not None else series.h0()
        except (dio.FormatError, ValueError, OSError) as exc:
            row = getattr(exc, "row", None)
            raise CliError(EXIT_INPUT, "table", str(exc), file=str(path), row=row) from None
        fit = calibration.fit_soaking_rate(series, h0)
        first, last = (times[0], values[0]), (times[-1], values[-1])
        k2 = calibration.two_point_estimate(first, last, h0, radius=is_radius)
        reports.append((path, series, fit, k2))
        if not args.quiet:
            print(f"{series.concentration_tag}: K_lsq={fit.soaking_rate_m_s:.6e} m/s "
                  f"K_2pt={k2:.6e} m/s h0={h0:.6e} m R2={fit.r_squared:.6f}"
                  + (f" [{'; '.join(fit.flags)}]" if fit.flags else ""))
    if args.out:
        _write_fit_report(args.out, reports)
    return EXIT_OK


def _write_fit_report(path, reports):
    lines = [f"# dropsoak {__version__} soaking-rate fit report"]
    for src, series, fit, k2 in reports:
        lines += [
            "",
            f"[{series.concentration_tag}]",
            f"source = {src}",
            f"h0_m = {dio.fmt(fit.h0_m)}",
            f"k_least_squares_m_s = {dio.fmt(fit.soaking_rate_m_s)}",
            f"k_two_point_m_s = {dio.fmt(k2)}",
            f"initial_area_m2 = {dio.fmt(fit.initial_area_m2)}",
            f"r_squared = {dio.fmt(fit.r_squared)}",
            f"flags = {', '.join(fit.flags) if fit.flags else 'none'}",
            "residuals:",
            "time_s,area_m2,log_residual",
        ]
        for t, a, r in zip(series.times_s, series.areas_m2, fit.residuals):
            lines.append(f"{dio.fmt(t)},{dio.fmt(a)},{dio.fmt(r)}")
    Path(path).write_text("\n".join(lines) + "\n")


def _load_profiles(run_dir):
    manifest = dio.read_manifest(run_dir)
    names = sorted(Path(run_dir).glob("profile_*.csv"))
    if not names:
        raise dio.FormatError("no profile_*.csv files", run_dir)
    times, profs, cons, rel = [], [], [], []
    edges = None
    for p in names:
        meta, e, amount = dio.read_profile_csv(p)
        edges = e
        times.append(meta["time_s"])
        profs.append(amount)
        cons.append(meta["consumed_mol"])
        rel.append(meta["released_mol"])
    return oracle.ProfileSet(np.array(times), edges, profs, np.array(cons), np.array(rel),
                             float(manifest.get("max_conservation_residual", 0.0)),
                             manifest.get("physics") or {}), manifest


def cmd_compare(args):
    limits = {"l1": 0.05, "consumed_rel": 0.10}
    try:
        if args.thresholds:
            extra = dio.read_config_mapping(args.thresholds)
            unknown = set(extra) - set(limits)
            if unknown:
                raise dio.FormatError("unknown thresholds: " + ", ".join(sorted(unknown)),
                                      args.thresholds)
            limits.update({k: float(v) for k, v in extra.items()})
        cand, _ = _load_profiles(args.pbs_dir)
        ref, _ = _load_profiles(args.oracle_dir)
        if not cand.signature or not ref.signature:
            raise dio.FormatError("manifest lacks the physics signature")
        bad = oracle.signature_mismatches(cand.signature, ref.signature)
        if bad:
            raise CliError(EXIT_INPUT, "manifest_mismatch",
                           "configs differ in: " + ", ".join(bad), fields=bad)
        report = oracle.compare_profiles(cand, ref)
    except (dio.FormatError, OSError, oracle.ConfigMismatchError) as exc:
        raise CliError(EXIT_INPUT, "compare_input", str(exc)) from None

    if args.out:
        dio.write_table_csv(args.out, ["time_s", "l1", "consumed_rel_error"],
                            zip(report.times_s, report.l1, report.consumed_rel_error))
    if not args.quiet:
        for t, l1, ce in zip(report.times_s, report.l1, report.consumed_rel_error):
            print(f"t={t:.0f}s L1={l1:.4f} consumed_rel={ce:.4f}")
        print(f"max L1 {report.max_l1():.4f} (limit {limits['l1']}), "
              f"max consumed error {report.max_consumed_error():.4f} "
              f"(limit {limits['consumed_rel']}); residuals "
              f"{report.candidate_residual:.3g} / {report.reference_residual:.3g}")
    ok = report.passes(limits["l1"], limits["consumed_rel"])
    return EXIT_OK if ok else EXIT_THRESHOLD


COMMANDS = {"simulate": cmd_simulate, "oracle": cmd_oracle, "fit": cmd_fit,
            "compare": cmd_compare}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        out = getattr(args, "out", None)
        out_dir = out if args.command in ("simulate", "oracle") else None
        record = dio.write_error_record(out_dir, exc.code, exc.kind, str(exc), **exc.details)
        print(json.dumps(record), file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
