"""Matplotlib renderings of run outputs, saved next to the CSVs."""

from __future__ import annotations

import os
import numpy as np
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

_DPI = 140


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def trace_figure(scan, path):
    """Estimated vs ground-truth parameter traces over the scan."""
    truth = scan.truth
    est = scan.traces.get("estimated")
    fig, axes = plt.subplots(3, 1, figsize=(7, 7), sharex=True)
    t = truth.values("time_s")
    for key in ("pitch_deg", "roll_deg", "yaw_deg"):
        axes[0].plot(t, truth.values(key), lw=1.0, label=f"true {key[:-4]}")
        if est is not None:
            axes[0].plot(est.values("time_s"), est.values(key), "--", lw=0.8)
    axes[0].set_ylabel("rotation [deg]")
    axes[0].legend(fontsize=7, ncol=3)
    for key in ("dx_mm", "dy_mm", "dz_mm"):
        axes[1].plot(t, truth.values(key), lw=1.0, label=f"true {key[:2]}")
        if est is not None:
            axes[1].plot(est.values("time_s"), est.values(key), "--", lw=0.8)
    axes[1].set_ylabel("shift [mm]")
    axes[1].legend(fontsize=7, ncol=3)
    axes[2].plot(t, truth.values("freq_hz"), lw=1.0, label="true")
    if est is not None:
        axes[2].plot(est.values("time_s"), est.values("freq_hz"), "--",
                     lw=0.8, label="navigator")
    axes[2].set_ylabel("frequency [Hz]")
    axes[2].set_xlabel("time [s]")
    axes[2].legend(fontsize=7)
    _save(fig, path)


def equalization_figure(estimates, truth, path):
    est = [e for e in estimates if not e.skipped]
    if not est:
        return
    t = np.array([e.time_s for e in est])
    fig, axes = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    axes[0].plot(t, [e.dfreq_hz for e in est], lw=0.8, label="estimated")
    axes[0].plot(truth.values("time_s"), truth.values("freq_hz"), lw=0.8,
                 alpha=0.7, label="scripted")
    axes[0].set_ylabel("frequency [Hz]")
    axes[0].legend(fontsize=8)
    axes[1].plot(t, [e.dphi_rad for e in est], lw=0.8)
    axes[1].set_ylabel("phase [rad]")
    axes[1].set_xlabel("time [s]")
    _save(fig, path)


def spectrum_figure(spec, path, title=""):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(spec.freq_hz[1:], np.maximum(spec.power[1:], 1e-300), lw=0.8)
    for (n, f, p, b, db) in spec.harmonics:
        ax.axvline(f, color="r", ls=":", lw=0.8)
        ax.annotate(f"{db:.0f} dB", (f, max(p, 1e-300)), fontsize=7,
                    textcoords="offset points", xytext=(2, 4))
    ax.set_xlabel("frequency [Hz]")
    ax.set_ylabel("power")
    if title:
        ax.set_title(title, fontsize=9)
    _save(fig, path)


def tsnr_figure(tsnr_map, path, title="tSNR"):
    vol = np.where(np.isfinite(tsnr_map.map), tsnr_map.map, 0.0)
    nz = vol.shape[2]
    fig, axes = plt.subplots(1, 3, figsize=(9, 3.2))
    vmax = np.percentile(vol[tsnr_map.valid()], 98) if tsnr_map.valid().any() else 1
    for ax, iz in zip(axes, (nz // 4, nz // 2, 3 * nz // 4)):
        im = ax.imshow(vol[:, :, iz].T, origin="lower", vmin=0, vmax=vmax,
                       cmap="viridis")
        ax.set_title(f"slice {iz}", fontsize=8)
        ax.axis("off")
    fig.colorbar(im, ax=axes, shrink=0.8, label=title)
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def comparison_figure(rows, path):
    """Bar chart of mean tSNR per run from compare_runs rows."""
    labels = [f"{r[2]}" for r in rows]
    vals = [float(r[4]) for r in rows]
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(rows)), 3.5))
    ax.bar(np.arange(len(rows)), vals, color="steelblue")
    ax.set_xticks(np.arange(len(rows)))
    ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=7)
    ax.set_ylabel("mean tSNR (aligned)")
    _save(fig, path)


def render_run(outdir, scan, series, artifacts, report):
    """Standard per-run figure set rendered alongside the CSV outputs."""
    from .metrics import tsnr, default_mask, trace_spectrum

    trace_figure(scan, os.path.join(outdir, "traces.png"))
    if "equalization" in artifacts:
        equalization_figure(artifacts["equalization"], scan.truth,
                            os.path.join(outdir, "equalization.png"))
        est = [e for e in artifacts["equalization"] if not e.skipped]
        if len(est) >= 4 * scan.timing.nz:
            spec = trace_spectrum(np.array([e.dfreq_hz for e in est]),
                                  scan.timing.tr_s, scan.timing.tvol_s)
            spectrum_figure(spec, os.path.join(outdir, "spectrum_eq_freq.png"),
                            "shot frequency estimates")
    mask = default_mask(series)
    tsnr_figure(tsnr(series, mask), os.path.join(outdir, "tsnr.png"))
