"""Experiment orchestration: scenarios, correction pipeline, reports.

A run is a staged pipeline (simulate -> correct -> reconstruct -> analyze)
with on-disk handoff between stages, so downstream stages can be re-run on
cached raw data with different correction settings.  Every run writes a
manifest that reproduces its outputs byte-identically (timestamps aside).
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
import json
import os
import time
import numpy as np
import yaml

from . import __version__ as _version
from .errors import ConfigError, MetricError
from .geometry import TimingConfig, ParameterVector
from .phantom import make_ball_phantom, make_loop_coils, make_uniform_coils
from .scripts import (PerturbationScript, drift_component, breathing_component,
                      shot_transient_component, instructed_motion_pose,
                      square_shift_pose, step_rotation_pose,
                      smooth_rotation_pose, combine_poses)
from .simulator import run_scan, ScanRecord
from .servo import ServoController, GroundTruthController, residual_trace
from .navcorr import filter_trace, apply_phase_correction, correct_translations
from .equalize import equalize_scan, estimates_to_csv
from .recon import reconstruct_series, realign_translations, VolumeSeries
from .metrics import tsnr, default_mask, trace_spectrum, voxel_std_summary
from . import rawio

SCENARIOS = ("static", "drift", "comb", "instructed_motion", "shifts",
             "breathing", "composite", "rot_step")

_SCENARIO_DEFAULTS = {
    "static": {},
    "drift": {"rate_hz_per_min": 5.0},
    "comb": {"amplitude_hz": 1.0, "tau_s": 0.020, "buildup": 1.0},
    "instructed_motion": {"step_deg": 1.0, "period_s": 10.0},
    "shifts": {"axis": "phase", "amplitude_mm": 1.0, "period_s": 10.0},
    "breathing": {"freq_hz": 0.32, "amplitude_hz": 1.0},
    "composite": {"amp_deg": 1.0, "f_pitch_hz": 0.043, "f_yaw_hz": 0.031,
                  "rate_hz_per_min": 5.0, "breath_freq_hz": 0.32,
                  "breath_amp_hz": 0.25},
    "rot_step": {"axis": "yaw", "step_deg": 1.0, "t_on_s": None,
                 "rate_hz_per_min": 5.0},
}


@dataclass
class ExperimentConfig:
    """Serializable description of one experiment run."""

    scenario: str = "static"
    scenario_params: dict = field(default_factory=dict)
    noise_std: float = 0.0
    seed: int = 0
    timing: dict = field(default_factory=dict)
    phantom: dict = field(default_factory=dict)
    coils: dict = field(default_factory=dict)
    servo: dict = field(default_factory=dict)
    nav_phase: dict = field(default_factory=dict)
    equalization: dict = field(default_factory=dict)
    correction_order: str = "nav_first"
    realign: bool = True
    outdir: str = "run"

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; "
                              f"choose one of {SCENARIOS}")
        self.scenario_params = {**_SCENARIO_DEFAULTS[self.scenario],
                                **self.scenario_params}
        self.servo = {"enabled": False, "latency_shots": 5,
                      "calibration_step_deg": 1.0, **self.servo}
        self.nav_phase = {"enabled": False, "filter": "median:9",
                          "timing": "relative", **self.nav_phase}
        self.equalization = {"enabled": False, "mode": "epi", "window": None,
                             **self.equalization}
        if self.correction_order not in ("nav_first", "eq_first"):
            raise ConfigError(f"bad correction_order {self.correction_order!r}")
        if self.nav_phase["enabled"] and not self.servo["enabled"]:
            raise ConfigError("navigator phase correction requires servo "
                              "navigation (no navigator traces otherwise)")
        if self.equalization["mode"] not in ("epi", "generic"):
            raise ConfigError("equalization mode must be 'epi' or 'generic'")

    def timing_config(self) -> TimingConfig:
        try:
            return TimingConfig(**{**TimingConfig().to_dict(), **self.timing})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad timing config: {exc}") from exc

    def corrections_label(self) -> str:
        parts = []
        if self.servo["enabled"]:
            parts.append("servo")
        if self.nav_phase["enabled"]:
            parts.append(f"nav({self.nav_phase['timing']},"
                         f"{self.nav_phase['filter']})")
        if self.equalization["enabled"]:
            parts.append(f"eq({self.equalization['mode']})")
        return "+".join(parts) if parts else "none"

    def to_yaml(self, path):
        with open(path, "w") as fh:
            yaml.safe_dump(asdict(self), fh, sort_keys=True)

    @classmethod
    def from_yaml(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"bad config fields: {exc}") from exc

    def apply_override(self, dotted: str):
        """Apply one ``section.key=value`` (or ``key=value``) override."""
        if "=" not in dotted:
            raise ConfigError(f"override must look like key=value: {dotted!r}")
        key, _, raw = dotted.partition("=")
        value = yaml.safe_load(raw)
        parts = key.strip().split(".")
        target = self
        if len(parts) == 1:
            if not hasattr(target, parts[0]):
                raise ConfigError(f"unknown config field {parts[0]!r}")
            setattr(target, parts[0], value)
        else:
            d = getattr(self, parts[0], None)
            if not isinstance(d, dict):
                raise ConfigError(f"unknown config section {parts[0]!r}")
            node = d
            for p in parts[1:-1]:
                node = node.setdefault(p, {})
            node[parts[-1]] = value
        self.__post_init__()


def build_script(config: ExperimentConfig, timing: TimingConfig,
                 t_first_shot_s: float) -> PerturbationScript:
    """Assemble the ground-truth perturbation script for a scenario."""
    p = config.scenario_params
    pose_fns = []
    omega = []
    name = config.scenario
    if name == "drift":
        omega.append(drift_component(p["rate_hz_per_min"]))
    elif name == "comb":
        omega.append(shot_transient_component(
            timing, t_first_shot_s, p["amplitude_hz"], p["tau_s"], p["buildup"]))
    elif name == "instructed_motion":
        pose_fns.append(instructed_motion_pose(p["step_deg"], p["period_s"]))
    elif name == "shifts":
        pose_fns.append(square_shift_pose(p["axis"], p["amplitude_mm"],
                                          p["period_s"]))
    elif name == "breathing":
        omega.append(breathing_component(p["freq_hz"], p["amplitude_hz"]))
    elif name == "composite":
        pose_fns.append(smooth_rotation_pose(p["amp_deg"], p["f_pitch_hz"],
                                             p["f_yaw_hz"]))
        omega.append(drift_component(p["rate_hz_per_min"]))
        omega.append(breathing_component(p["breath_freq_hz"], p["breath_amp_hz"]))
    elif name == "rot_step":
        t_on = p["t_on_s"]
        if t_on is None:
            t_on = t_first_shot_s + timing.nvol * timing.tvol_s / 2.0
        pose_fns.append(step_rotation_pose(p["axis"], p["step_deg"], t_on))
        if p.get("rate_hz_per_min"):
            omega.append(drift_component(p["rate_hz_per_min"]))

    pose_fn = combine_poses(*pose_fns) if pose_fns else None
    kwargs = {"omega_components": tuple(omega), "noise_std": config.noise_std,
              "seed": config.seed, "label": name, "params": dict(p)}
    if pose_fn is not None:
        kwargs["pose_fn"] = pose_fn
    return PerturbationScript(**kwargs)


def build_inputs(config: ExperimentConfig):
    """Phantom, coils, timing, script, and servo controller for a config."""
    timing = config.timing_config()
    phantom = make_ball_phantom(**{"shape": (timing.nk, timing.nm, timing.nz),
                                   **config.phantom})
    ckind = config.coils.get("kind", "loop")
    nc = config.coils.get("n", timing.nc)
    if nc != timing.nc:
        raise ConfigError(f"coils.n={nc} must match timing nc={timing.nc}")
    if ckind == "loop":
        coils = make_loop_coils(phantom, n_coils=nc)
    elif ckind == "uniform":
        coils = make_uniform_coils(phantom, n_coils=nc)
    else:
        raise ConfigError(f"unknown coil kind {ckind!r}")

    servo = None
    t0 = timing.warmup_volumes * timing.tvol_s
    if config.servo["enabled"]:
        if config.servo.get("ground_truth"):
            servo = "ground_truth"  # resolved after the script exists
        else:
            servo = ServoController(
                latency_shots=config.servo["latency_shots"],
                calibration_step_deg=config.servo["calibration_step_deg"])
            t0 += 5 * timing.tr_s
    script = build_script(config, timing, t0)
    if servo == "ground_truth":
        servo = GroundTruthController(script)
    return phantom, coils, timing, script, servo


def simulate(config: ExperimentConfig) -> ScanRecord:
    phantom, coils, timing, script, servo = build_inputs(config)
    return run_scan(phantom, coils, script, timing, servo=servo)


def apply_corrections(scan: ScanRecord, config: ExperimentConfig):
    """Run the configured retrospective corrections on a scan's shots.

    Returns ``(shots, artifacts)`` where artifacts holds the equalization
    estimates and the filtered navigator traces actually applied.
    """
    shots = list(scan.shots)
    artifacts = {}
    timing = scan.timing

    if config.servo["enabled"]:
        applied = scan.traces["applied"]
        shots = [correct_translations(s, applied.poses[i].translation_mm)
                 for i, s in enumerate(shots)]

    def nav_stage(shots):
        est = scan.traces["estimated"]
        dphi = filter_trace(est.values("phase_rad"), config.nav_phase["filter"])
        domega = filter_trace(est.values("freq_rad_s"), config.nav_phase["filter"])
        artifacts["nav_phase_applied"] = (dphi, domega)
        mode = config.nav_phase["timing"]
        return [apply_phase_correction(s, dphi[i], domega[i], mode,
                                       te_s=timing.te_s)
                for i, s in enumerate(shots)]

    def eq_stage(shots):
        corrected, estimates = equalize_scan(
            shots, timing, mode=config.equalization["mode"],
            window=config.equalization["window"])
        artifacts["equalization"] = estimates
        return corrected

    stages = []
    if config.nav_phase["enabled"]:
        stages.append(nav_stage)
    if config.equalization["enabled"]:
        stages.append(eq_stage)
    if config.correction_order == "eq_first":
        stages.reverse()
    for stage in stages:
        shots = stage(shots)
    return shots, artifacts


@dataclass
class ExperimentReport:
    """Summary of one run, sufficient for cross-run comparison tables."""

    scenario: str
    corrections: str
    tsnr_unaligned: float
    tsnr_aligned: float
    voxel_std: float
    mask_voxels: int
    pose_rmse_deg: float | None = None
    shift_rmse_mm: float | None = None
    freq_rmse_hz: float | None = None
    eq_freq_rmse_hz: float | None = None
    runtime_s: float = 0.0
    outdir: str = ""
    timing: dict = field(default_factory=dict)

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, path) -> "ExperimentReport":
        with open(path) as fh:
            return cls(**json.load(fh))


def _trace_rmse(scan: ScanRecord):
    """Servo estimated-trace errors vs ground truth (deg, mm, Hz)."""
    if "estimated" not in scan.traces:
        return None, None, None
    est, truth = scan.traces["estimated"], scan.truth
    ang = np.array([est.values(k) - truth.values(k)
                    for k in ("pitch_deg", "roll_deg", "yaw_deg")])
    sh = np.array([est.values(k) - truth.values(k)
                   for k in ("dx_mm", "dy_mm", "dz_mm")])
    fr = est.values("freq_hz") - truth.values("freq_hz")
    rms = lambda a: float(np.sqrt(np.mean(np.square(a))))
    return rms(ang), rms(sh), rms(fr)


def analyze(scan: ScanRecord, series: VolumeSeries, artifacts: dict,
            config: ExperimentConfig, runtime_s: float = 0.0) -> ExperimentReport:
    mask = default_mask(series)
    t_un = tsnr(series, mask)
    t_al = t_un
    if config.realign and series.n_volumes >= 2:
        aligned, _ = realign_translations(series)
        t_al = tsnr(aligned, mask)
    pose_rmse, shift_rmse, freq_rmse = _trace_rmse(scan)

    eq_rmse = None
    if "equalization" in artifacts:
        est = artifacts["equalization"]
        truth_by_shot = dict(zip(scan.truth.shot_index,
                                 scan.truth.values("freq_hz")))
        diffs = [e.dfreq_hz - truth_by_shot[e.shot_index]
                 for e in est if not e.skipped]
        if diffs:
            eq_rmse = float(np.sqrt(np.mean(np.square(diffs))))

    return ExperimentReport(
        scenario=config.scenario, corrections=config.corrections_label(),
        tsnr_unaligned=t_un.summary, tsnr_aligned=t_al.summary,
        voxel_std=voxel_std_summary(series, mask),
        mask_voxels=int(mask.sum()),
        pose_rmse_deg=pose_rmse, shift_rmse_mm=shift_rmse,
        freq_rmse_hz=freq_rmse, eq_freq_rmse_hz=eq_rmse,
        runtime_s=runtime_s, outdir=config.outdir,
        timing=scan.timing.to_dict())


def run_pipeline(config: ExperimentConfig):
    """In-memory end-to-end run; returns (scan, shots, series, report)."""
    start = time.perf_counter()
    scan = simulate(config)
    shots, artifacts = apply_corrections(scan, config)
    series = reconstruct_series(shots, scan.coils, scan.phantom.voxel_mm)
    report = analyze(scan, series, artifacts, config,
                     runtime_s=time.perf_counter() - start)
    return scan, shots, series, artifacts, report


def run_experiment(config: ExperimentConfig, outdir: str | None = None,
                   figures: bool = True) -> ExperimentReport:
    """Full staged run with on-disk artifacts under ``outdir``."""
    outdir = outdir or config.outdir
    config.outdir = outdir
    os.makedirs(outdir, exist_ok=True)
    start = time.perf_counter()
    manifest = {"version": _version, "config": asdict(config),
                "created_unix": time.time(), "stages": []}

    scan = simulate(config)
    rawio.save_scan(os.path.join(outdir, "raw"), scan)
    if "applied" in scan.traces:
        residual_trace(scan.traces["applied"], scan.truth).to_csv(
            os.path.join(outdir, "raw", "trace_residual.csv"))
    manifest["stages"].append("simulate")

    shots, artifacts = apply_corrections(scan, config)
    if "equalization" in artifacts:
        estimates_to_csv(artifacts["equalization"],
                         os.path.join(outdir, "equalization.csv"))
    manifest["stages"].append("correct")

    series = reconstruct_series(shots, scan.coils, scan.phantom.voxel_mm)
    rawio.save_volumes(os.path.join(outdir, "volumes.bin"), series)
    manifest["stages"].append("reconstruct")

    report = analyze(scan, series, artifacts, config,
                     runtime_s=time.perf_counter() - start)
    report.to_json(os.path.join(outdir, "report.json"))
    _write_spectra(scan, artifacts, outdir)
    manifest["stages"].append("analyze")

    config.to_yaml(os.path.join(outdir, "config.yaml"))
    with open(os.path.join(outdir, "run.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)

    if figures:
        from . import figures as figmod
        figmod.render_run(outdir, scan, series, artifacts, report)
    return report


def _write_spectra(scan: ScanRecord, artifacts: dict, outdir: str):
    timing = scan.timing
    specs = {}
    if "equalization" in artifacts:
        est = [e for e in artifacts["equalization"] if not e.skipped]
        if len(est) >= 4 * timing.nz:
            vals = np.array([e.dfreq_hz for e in est])
            specs["eq_freq"] = trace_spectrum(vals, timing.tr_s, timing.tvol_s)
    if "estimated" in scan.traces:
        vals = scan.traces["estimated"].values("freq_hz")
        if vals.size >= 4 * timing.nz:
            specs["nav_freq"] = trace_spectrum(vals, timing.tr_s, timing.tvol_s)
    for name, spec in specs.items():
        rawio.write_csv_rows(
            os.path.join(outdir, f"spectrum_{name}.csv"),
            ("freq_hz", "power"), zip(spec.freq_hz, spec.power))
        rawio.write_csv_rows(
            os.path.join(outdir, f"spectrum_{name}_peaks.csv"),
            ("harmonic", "freq_hz", "power", "baseline", "db"),
            [(n, f, p, b, d) for (n, f, p, b, d) in spec.harmonics])


COMPARE_COLUMNS = ("run", "scenario", "corrections", "tsnr_unaligned",
                   "tsnr_aligned", "voxel_std", "pose_rmse_deg",
                   "shift_rmse_mm", "freq_rmse_hz", "eq_freq_rmse_hz")


def compare_runs(reports, out_csv: str | None = None):
    """Tabulate reports (objects or run directories) into comparison rows."""
    resolved = []
    for r in reports:
        if isinstance(r, (str, os.PathLike)):
            r = ExperimentReport.from_json(os.path.join(r, "report.json"))
        resolved.append(r)
    base = resolved[0]
    for r in resolved[1:]:
        same = all(r.timing.get(k) == base.timing.get(k)
                   for k in ("tr_s", "tvol_s", "nz", "nm", "nk"))
        if r.timing and base.timing and not same:
            raise MetricError("runs use incompatible timing; refusing to compare")
        if r.mask_voxels and base.mask_voxels and \
                abs(r.mask_voxels - base.mask_voxels) > 0.5 * base.mask_voxels:
            raise MetricError("runs use incompatible masks; refusing to compare")
    rows = []
    for r in resolved:
        rows.append((os.path.basename(r.outdir) or r.corrections, r.scenario,
                     r.corrections, r.tsnr_unaligned, r.tsnr_aligned,
                     r.voxel_std,
                     _opt(r.pose_rmse_deg), _opt(r.shift_rmse_mm),
                     _opt(r.freq_rmse_hz), _opt(r.eq_freq_rmse_hz)))
    if out_csv:
        rawio.write_csv_rows(out_csv, COMPARE_COLUMNS, rows)
    return rows


def _opt(v):
    return "" if v is None else v
