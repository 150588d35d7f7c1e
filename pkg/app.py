"""
entangle-lab command line: seeded ensemble runs, scaling fits and the gradient oracle suite.

    python app.py sweep --family xxz_hva --out data/hva
    python app.py collapse --table data/hva/entropy_xxz_hva.csv
    python app.py gradcheck --instances 100
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from typing import List, Optional

import numpy as np
import pandas as pd

from core import __version__
from core.config import DATA_DIR, FAMILIES, config_from_dict, ensure_dirs, read_config_dict, save_config
from core.ensembles import run_gradvar, run_mutinfo, run_sweep
from core.errors import ConfigError, FitConvergenceError, LabError, OracleFailure
from core.observables import Observable
from core.oracles import run_gradcheck
from core.presets import get_preset
from core.scaling import (
    bootstrap_nu,
    extrapolate_nu,
    extrapolation_points,
    fit_collapse,
    fit_gradvar_collapse,
    mutual_info_peak,
    rescale,
    steady_state_report,
)
from core.storage import manifest_path
from core.synthetic import synthetic_collapse_table, synthetic_gradvar_table
from core.tables import companion_path, read_table, write_frame, write_table

logger = logging.getLogger("entangle")

COMMAND_KINDS = {"sweep": "entropy", "mutinfo": "mutual_info", "gradvar": "grad_variance"}
OUTPUT_NAMES = {"sweep": "entropy", "mutinfo": "mutinfo", "gradvar": "gradvar"}


def resolve_config(args, command: str):
    """Preset < config file < command-line flags."""
    from_file = read_config_dict(args.config) if args.config else {}
    family = args.family or from_file.get("family", "xxz_hva")
    if family not in FAMILIES:
        raise ConfigError(f"Unknown circuit family '{family}'. Use one of {FAMILIES}.")
    data = get_preset("full" if args.paper_scale else "desk", command, family)
    data.update(from_file)
    data["family"] = family
    data["kind"] = COMMAND_KINDS[command]
    flags = {
        "sizes": args.sizes,
        "p_grid": args.p_grid,
        "samples": args.samples,
        "depth": args.depth,
        "base_seed": args.seed,
        "threads": args.threads,
        "out_dir": args.out,
        "observable": args.observable,
        "param_index": args.param_index,
        "gradient_estimator": args.estimator,
        "r_values": args.r,
        "entropy_base": args.entropy_base,
        "k_boot": args.k_boot,
    }
    data.update({k: v for k, v in flags.items() if v is not None})
    if args.per_layer:
        data["per_layer"] = True
    if args.raw:
        data["raw"] = True
    if args.no_cnot_wrap:
        data["hea_cnot_wrap"] = False
    if command != "mutinfo":
        data.pop("r_values", None)
    elif args.sizes and args.r is None and "r_values" not in from_file:
        # preset distances belong to the preset chain length
        data["r_values"] = ()
    return config_from_dict(data)


def _ensure_out(path: str):
    try:
        ensure_dirs(path)
    except OSError as e:
        raise ConfigError(f"Cannot create output directory {path}: {e}") from e


def cmd_simulate(args) -> int:
    command = args.command
    config = resolve_config(args, command)
    _ensure_out(config.out_dir)
    db_path = manifest_path(config.out_dir)
    logger.info("%s: family=%s sizes=%s p points=%d R=%d threads=%d hash=%s", command, config.family,
                list(config.sizes), len(config.p_grid), config.samples, config.threads,
                config.config_hash()[:12])
    runner = {"sweep": run_sweep, "mutinfo": run_mutinfo, "gradvar": run_gradvar}[command]
    run = runner(config, db_path=db_path, resume=args.resume, quiet=args.quiet)

    path = os.path.join(config.out_dir, f"{OUTPUT_NAMES[command]}_{config.family}.csv")
    table = run.table.in_units(config.entropy_base)
    write_table(table, path, write_raw=config.raw)
    save_config(config, os.path.splitext(path)[0] + "_config.json")
    if run.per_layer is not None:
        per_layer = run.per_layer.copy()
        if config.entropy_base == "2":
            per_layer[["mean", "std", "stderr"]] /= np.log(2.0)
        header = {k: v for k, v in table.metadata.items() if not k.startswith("note_")}
        write_frame(per_layer, companion_path(path, "per_layer"), header)
        report = steady_state_report(per_layer)
        write_frame(report, companion_path(path, "steady_state"), header)
        unsettled = report[~report["plateau"]]
        if len(unsettled):
            logger.warning("%d of %d cells have not reached a steady state", len(unsettled), len(report))
    logger.info("Wrote %s (%d rows)", path, len(table.rows))
    return 0


def _write_report(report: dict, path: str):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")


def _collapse_entropy(args, table, stem: str) -> dict:
    candidates = [args.p_c] if args.p_c is not None else None
    fit = fit_collapse(table, candidates, args.chi2_convention, args.error_column)
    report = {"mode": "entropy", "fit": fit.to_dict()}
    if table.raw is not None and args.k_boot:
        fit.bootstrap_std_nu = bootstrap_nu(table, fit.p_c, args.k_boot, args.seed or 0, args.chi2_convention,
                                            args.error_column, start_fit=fit, threads=args.threads or 1)
        fit.k_boot = args.k_boot
        report["fit"] = fit.to_dict()
    if not args.no_extrapolate:
        points = extrapolation_points(table, fit.p_c, args.k_boot if table.raw is not None else 0,
                                      args.seed or 0, args.chi2_convention, args.error_column,
                                      threads=args.threads or 1)
        if len(points) >= 3:
            extrapolation = extrapolate_nu(points)
            report["extrapolation"] = extrapolation.to_dict()
            report["nu_infinity"] = extrapolation.nu_infinity
            report["nu_error"] = abs(extrapolation.nu_infinity - fit.nu)
        else:
            logger.warning("Only %d sizes between N_max/2 and N_max; skipping extrapolation", len(points))
    rescaled = rescale(table, fit.p_c, fit.nu)
    write_frame(rescaled, f"{stem}_rescaled.csv", {"p_c": fit.p_c, "nu": fit.nu})
    if not fit.converged:
        raise FitConvergenceError(f"Collapse fit did not converge (chi2 {fit.chi2:.6g})", best_fit=fit)
    return report


def _collapse_gradvar(args, table, stem: str) -> dict:
    if args.p_c is None:
        raise ConfigError("Gradient-variance collapse needs --p-c from the entropy collapse.")
    fit = fit_gradvar_collapse(table, args.p_c, per_size_constant=not args.global_constant,
                               chi2_convention=args.chi2_convention)
    rows = table.rows[table.rows["mean"] > 0].sort_values(["N", "p"])
    n = rows["N"].to_numpy(dtype=float)
    dp = rows["p"].to_numpy(dtype=float) - fit.p_c
    plateau = np.array([fit.plateau[int(k)] for k in n])
    rescaled = pd.DataFrame({
        "N": rows["N"].astype(int).to_numpy(),
        "p": rows["p"].to_numpy(dtype=float),
        "x": n ** (1.0 / fit.nu) * dp,
        "ln_variance": np.log(rows["mean"].to_numpy(dtype=float)),
        "ln_model": np.log(plateau + np.exp(-np.abs(dp) * n ** (1.0 / fit.nu))),
    })
    write_frame(rescaled, f"{stem}_rescaled.csv", {"p_c": fit.p_c, "nu": fit.nu})
    if not fit.converged:
        raise FitConvergenceError(f"Gradient-variance fit did not converge (chi2 {fit.chi2:.6g})", best_fit=fit)
    return {"mode": "gradvar", "fit": fit.to_dict()}


def _collapse_mutinfo(args, table) -> dict:
    peaks = []
    for n in table.sizes:
        for r in sorted(int(v) for v in table.rows.loc[table.rows["N"] == n, "r"].unique()):
            peak = mutual_info_peak(table, n, r, smooth=not args.no_smooth)
            peaks.append(asdict(peak))
    return {"mode": "mutinfo", "peaks": peaks}


def cmd_collapse(args) -> int:
    kind = {"entropy": "entropy", "gradvar": "grad_variance", "mutinfo": "mutual_info"}[args.mode]
    table = read_table(args.table, expected_kind=kind)
    out_dir = args.out or os.path.dirname(os.path.abspath(args.table))
    _ensure_out(out_dir)
    stem = os.path.join(out_dir, os.path.splitext(os.path.basename(args.table))[0])
    report_path = f"{stem}_{args.mode}_fit.json"
    try:
        if args.mode == "entropy":
            report = _collapse_entropy(args, table, stem)
        elif args.mode == "gradvar":
            report = _collapse_gradvar(args, table, stem)
        else:
            report = _collapse_mutinfo(args, table)
    except FitConvergenceError as e:
        best = e.best_fit.to_dict() if e.best_fit is not None else None
        _write_report({"mode": args.mode, "fit": best, "converged": False}, report_path)
        raise
    except ValueError as e:
        raise ConfigError(str(e)) from e
    report["table"] = os.path.basename(args.table)
    report["tool_version"] = __version__
    _write_report(report, report_path)
    logger.info("Wrote %s", report_path)
    return 0


def cmd_gradcheck(args) -> int:
    out_dir = args.out or DATA_DIR
    _ensure_out(out_dir)
    try:
        observable = Observable.parse(args.observable or "Z0 Z1")
    except ValueError as e:
        raise ConfigError(str(e)) from e
    report = run_gradcheck(args.instances, seed=args.seed or 0, sign=args.sign, observable=observable,
                           rel_tol=args.rel_tol, abs_tol=args.abs_tol)
    path = os.path.join(out_dir, "gradcheck.json")
    _write_report(report.to_dict(), path)
    logger.info("Wrote %s", path)
    if not report.passed:
        raise OracleFailure(
            f"{len(report.failing_seeds)} of {args.instances} instances failed: seeds {report.failing_seeds}",
            failing_seeds=report.failing_seeds,
        )
    return 0


def cmd_synth(args) -> int:
    out_dir = args.out or DATA_DIR
    _ensure_out(out_dir)
    seed = args.seed or 0
    if args.kind == "collapse":
        table = synthetic_collapse_table(noise=args.noise, seed=seed)
    else:
        table = synthetic_gradvar_table(noise=args.noise, seed=seed)
    path = os.path.join(out_dir, f"synthetic_{args.kind}.csv")
    write_table(table, path, write_raw=table.raw is not None)
    logger.info("Wrote %s", path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config file")
    common.add_argument("--seed", type=int, help="base seed")
    common.add_argument("--threads", type=int, help="worker processes")
    common.add_argument("--out", help="output directory")
    common.add_argument("--resume", action="store_true", help="reuse completed tasks from the manifest")
    common.add_argument("--paper-scale", action="store_true", help="N up to 18 and 3000 realizations")
    common.add_argument("--raw", action="store_true", help="also write per-realization values")
    common.add_argument("-v", "--verbose", action="store_true")
    common.add_argument("-q", "--quiet", action="store_true")

    simulation = argparse.ArgumentParser(add_help=False)
    simulation.add_argument("--family", choices=FAMILIES)
    simulation.add_argument("--sizes", type=int, nargs="+")
    simulation.add_argument("--p-grid", type=float, nargs="+")
    simulation.add_argument("--samples", type=int)
    simulation.add_argument("--depth", type=int)
    simulation.add_argument("--per-layer", action="store_true")
    simulation.add_argument("--r", type=int, nargs="+", help="mutual-information distances")
    simulation.add_argument("--entropy-base", choices=("e", "2"))
    simulation.add_argument("--observable")
    simulation.add_argument("--param-index", type=int)
    simulation.add_argument("--k-boot", type=int)
    simulation.add_argument("--estimator", choices=("mixture", "branch"),
                            help="gradvar: Born-weighted mixed-state term (default) or normalized branch gradient")
    simulation.add_argument("--no-cnot-wrap", action="store_true", help="HEA without the (N-1, 0) CNOT")

    parser = argparse.ArgumentParser(prog="entangle-lab", description=__doc__.splitlines()[1])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, text in (("sweep", "half-chain entropy vs (N, p)"),
                       ("mutinfo", "two-site mutual information vs (p, r)"),
                       ("gradvar", "gradient variance vs (N, p)")):
        cmd = sub.add_parser(name, parents=[common, simulation], help=text)
        cmd.set_defaults(func=cmd_simulate)

    collapse = sub.add_parser("collapse", parents=[common], help="finite-size scaling fits")
    collapse.add_argument("--table", required=True)
    collapse.add_argument("--mode", choices=("entropy", "gradvar", "mutinfo"), default="entropy")
    collapse.add_argument("--p-c", type=float, help="fix the critical point")
    collapse.add_argument("--k-boot", type=int, default=100)
    collapse.add_argument("--chi2-convention", choices=("squared", "linear"), default="squared")
    collapse.add_argument("--error-column", choices=("stderr", "std"), default="stderr")
    collapse.add_argument("--global-constant", action="store_true", help="one plateau constant for all N")
    collapse.add_argument("--no-extrapolate", action="store_true")
    collapse.add_argument("--no-smooth", action="store_true")
    collapse.set_defaults(func=cmd_collapse)

    gradcheck = sub.add_parser("gradcheck", parents=[common], help="gradient oracle suite")
    gradcheck.add_argument("--instances", type=int, default=100)
    gradcheck.add_argument("--sign", choices=("minus", "plus"), default="minus")
    gradcheck.add_argument("--observable")
    gradcheck.add_argument("--rel-tol", type=float, default=1e-6)
    gradcheck.add_argument("--abs-tol", type=float, default=1e-8)
    gradcheck.set_defaults(func=cmd_gradcheck)

    synth = sub.add_parser("synth", parents=[common], help="tables with planted critical points")
    synth.add_argument("--kind", choices=("collapse", "gradvar"), default="collapse")
    synth.add_argument("--noise", type=float, default=0.01)
    synth.set_defaults(func=cmd_synth)
    return parser


def configure_logging(verbose: bool = False, quiet: bool = False):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        return args.func(args)
    except LabError as e:
        logger.error("%s", e)
        return e.exit_status


if __name__ == "__main__":
    sys.exit(main())
