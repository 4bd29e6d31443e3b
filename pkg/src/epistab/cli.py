"""Command-line entry point.

Subcommands mirror the pipeline stages; ``all`` chains them.  Exit codes:
0 success, 2 configuration error, 3 simulation error, 4 metric failure,
1 anything unexpected.
"""

from __future__ import annotations

import argparse
import os
import sys

from .errors import ConfigError, SimulationError, MetricError, EpistabError


def _load_config(args):
    from .experiment import ExperimentConfig

    if getattr(args, "config", None):
        cfg = ExperimentConfig.from_yaml(args.config)
    else:
        cfg = ExperimentConfig()
    if getattr(args, "scenario", None):
        cfg.scenario = args.scenario
        cfg.__post_init__()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "noise", None) is not None:
        cfg.noise_std = args.noise
    for override in getattr(args, "set", None) or []:
        cfg.apply_override(override)
    if getattr(args, "outdir", None):
        cfg.outdir = args.outdir
    return cfg


def _add_common(p):
    p.add_argument("-c", "--config", help="YAML experiment config")
    p.add_argument("-o", "--outdir", help="run output directory")
    p.add_argument("--scenario", help="scenario name override")
    p.add_argument("--seed", type=int, help="RNG seed override")
    p.add_argument("--noise", type=float, help="noise std override")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="dotted config override, e.g. servo.enabled=true")
    p.add_argument("--no-figures", action="store_true",
                   help="skip figure rendering")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="epistab",
        description="Segmented 3D EPI simulation and correction toolkit")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, doc in (("simulate", "synthesize a scan and write raw records"),
                      ("correct", "apply corrections to cached raw data"),
                      ("reconstruct", "reconstruct volumes from corrected data"),
                      ("analyze", "compute tSNR, spectra, and the run report"),
                      ("all", "run the full pipeline")):
        p = sub.add_parser(name, help=doc)
        _add_common(p)
    pc = sub.add_parser("compare", help="tabulate reports across run dirs")
    pc.add_argument("runs", nargs="+", help="run directories")
    pc.add_argument("-o", "--out", default="comparison.csv")
    pc.add_argument("--no-figures", action="store_true")
    return ap


def _cmd_all(args) -> int:
    from .experiment import run_experiment

    cfg = _load_config(args)
    report = run_experiment(cfg, figures=not args.no_figures)
    print(f"scenario={report.scenario} corrections={report.corrections} "
          f"tsnr_aligned={report.tsnr_aligned:.3f} -> {cfg.outdir}")
    return 0


def _cmd_stage(args, stage: str) -> int:
    from . import rawio
    from .experiment import (ExperimentConfig, apply_corrections, analyze,
                             simulate, _write_spectra)
    from .recon import reconstruct_series
    from .equalize import estimates_to_csv
    from .phantom import make_ball_phantom, make_loop_coils, make_uniform_coils

    cfg = _load_config(args)
    outdir = cfg.outdir
    os.makedirs(outdir, exist_ok=True)
    raw_dir = os.path.join(outdir, "raw")

    if stage == "simulate":
        scan = simulate(cfg)
        rawio.save_scan(raw_dir, scan)
        cfg.to_yaml(os.path.join(outdir, "config.yaml"))
        print(f"wrote {len(scan.shots)} shots to {raw_dir}")
        return 0

    # Later stages reload the cached raw data and the saved config.
    cfg_path = os.path.join(outdir, "config.yaml")
    if os.path.exists(cfg_path) and not args.config:
        cfg = ExperimentConfig.from_yaml(cfg_path)
        for override in args.set or []:
            cfg.apply_override(override)
        cfg.outdir = outdir
    timing = cfg.timing_config()
    phantom = make_ball_phantom(**{"shape": (timing.nk, timing.nm, timing.nz),
                                   **cfg.phantom})
    kind = cfg.coils.get("kind", "loop")
    coils = (make_loop_coils(phantom, n_coils=timing.nc) if kind == "loop"
             else make_uniform_coils(phantom, n_coils=timing.nc))
    scan = rawio.load_scan(raw_dir, phantom=phantom, coils=coils)

    shots, artifacts = apply_corrections(scan, cfg)
    if stage == "correct":
        rawio.write_array(os.path.join(outdir, "corrected_samples.bin"),
                          __import__("numpy").stack([s.samples for s in shots]),
                          "a.u.", "corrected shot samples")
        if "equalization" in artifacts:
            estimates_to_csv(artifacts["equalization"],
                             os.path.join(outdir, "equalization.csv"))
        print(f"corrected {len(shots)} shots")
        return 0

    series = reconstruct_series(shots, coils, phantom.voxel_mm)
    if stage == "reconstruct":
        rawio.save_volumes(os.path.join(outdir, "volumes.bin"), series)
        print(f"reconstructed {series.n_volumes} volumes")
        return 0

    report = analyze(scan, series, artifacts, cfg)
    report.to_json(os.path.join(outdir, "report.json"))
    _write_spectra(scan, artifacts, outdir)
    if not args.no_figures:
        from . import figures as figmod
        figmod.render_run(outdir, scan, series, artifacts, report)
    print(f"tsnr_aligned={report.tsnr_aligned:.3f} tsnr_unaligned="
          f"{report.tsnr_unaligned:.3f}")
    return 0


def _cmd_compare(args) -> int:
    from .experiment import compare_runs

    rows = compare_runs(args.runs, out_csv=args.out)
    for row in rows:
        print(",".join(str(v) for v in row))
    if not args.no_figures:
        from .figures import comparison_figure
        comparison_figure(rows, os.path.splitext(args.out)[0] + ".png")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "all":
            return _cmd_all(args)
        if args.command == "compare":
            return _cmd_compare(args)
        return _cmd_stage(args, args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SimulationError as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return 3
    except MetricError as exc:
        print(f"metric failure: {exc}", file=sys.stderr)
        return 4
    except EpistabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
