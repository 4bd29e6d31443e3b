"""Temporal SNR maps and parameter-trace power spectra.

tSNR is the voxel-wise mean over time divided by the voxel-wise standard
deviation over time of the magnitude series (N-1 denominator).  Trace
spectra are detrended windowed periodograms with peak reports at multiples
of the volume repetition frequency f_vol = 1/Tvol.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .errors import MetricError
from .recon import VolumeSeries

# Voxels whose std falls below 1e-12 * mean (e.g. a noise-free constant
# series) receive this sentinel and are excluded from summaries.
TSNR_SENTINEL = np.inf


@dataclass(frozen=True)
class TsnrMap:
    map: np.ndarray
    mask: np.ndarray
    summary: float

    def valid(self) -> np.ndarray:
        return self.mask & np.isfinite(self.map)


def default_mask(series: VolumeSeries, threshold: float = 0.2) -> np.ndarray:
    """Evaluation support: mean magnitude above 20% of its maximum."""
    mean_mag = series.magnitude().mean(axis=0)
    return mean_mag > threshold * mean_mag.max()


def tsnr(series: VolumeSeries, mask: np.ndarray | None = None) -> TsnrMap:
    """Voxel-wise mean/std over time; summary is the mean over the mask."""
    if series.n_volumes < 3:
        raise MetricError("tSNR needs at least 3 volumes")
    if mask is None:
        mask = default_mask(series)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise MetricError("empty evaluation mask")
    mags = series.magnitude()
    mean = mags.mean(axis=0)
    std = mags.std(axis=0, ddof=1)
    tsnr_map = np.full(mean.shape, TSNR_SENTINEL)
    ok = std > 1e-12 * np.abs(mean)
    tsnr_map[ok] = mean[ok] / std[ok]
    valid = mask & ok
    summary = float(tsnr_map[valid].mean()) if valid.any() else TSNR_SENTINEL
    return TsnrMap(map=tsnr_map, mask=mask, summary=summary)


@dataclass(frozen=True)
class SpectrumReport:
    freq_hz: np.ndarray
    power: np.ndarray
    f_vol_hz: float
    harmonics: tuple     # (n, freq_hz, peak_power, baseline, db) per harmonic

    def peak_db(self, n: int) -> float:
        for h in self.harmonics:
            if h[0] == n:
                return h[4]
        raise KeyError(n)


def _window(name: str, n: int) -> np.ndarray:
    if name == "hann":
        return np.hanning(n)
    if name in ("rect", "rectangular", "boxcar"):
        return np.ones(n)
    raise ValueError(f"unknown window {name!r}")


def periodogram(values, dt_s: float, window: str = "hann"):
    """One-sided periodogram normalized so the rectangular-window total
    power equals the variance of the (detrended) series."""
    x = np.asarray(values, dtype=float)
    n = x.size
    t = np.arange(n)
    x = x - np.polyval(np.polyfit(t, x, 1), t)   # linear detrend
    w = _window(window, n)
    spec = np.fft.rfft(x * w)
    power = np.abs(spec)**2
    doubling = np.full(power.shape, 2.0)
    doubling[0] = 1.0
    if n % 2 == 0:
        doubling[-1] = 1.0
    power = doubling * power / (n * np.sum(w**2))
    freq = np.fft.rfftfreq(n, d=dt_s)
    return freq, power


def trace_spectrum(values, tr_s: float, tvol_s: float, window: str = "hann",
                   n_harmonics: int = 3) -> SpectrumReport:
    """Periodogram of a per-shot trace with peaks reported at n * f_vol.

    Peak power is the maximum over the bin nearest each harmonic and its
    two neighbours; the baseline is the median power excluding DC.  The dB
    ratio saturates at +-300 dB to stay finite for noise-free traces.
    """
    values = np.asarray(values, dtype=float)
    shots_per_vol = tvol_s / tr_s
    if values.size < 4 * shots_per_vol:
        raise MetricError("trace shorter than 4 volumes")
    freq, power = periodogram(values, tr_s, window=window)
    f_vol = 1.0 / tvol_s
    baseline = float(np.median(power[1:]))
    floor = max(power.max() * 1e-30, 1e-300)
    harmonics = []
    for n in range(1, n_harmonics + 1):
        idx = int(np.argmin(np.abs(freq - n * f_vol)))
        lo, hi = max(idx - 1, 1), min(idx + 2, power.size)
        peak = float(power[lo:hi].max())
        db = 10.0 * np.log10(max(peak, floor) / max(baseline, floor))
        db = float(np.clip(db, -300.0, 300.0))
        harmonics.append((n, float(freq[idx]), peak, baseline, db))
    return SpectrumReport(freq_hz=freq, power=power, f_vol_hz=f_vol,
                          harmonics=tuple(harmonics))


def voxel_std_summary(series: VolumeSeries, mask: np.ndarray | None = None) -> float:
    """Mean over the mask of the voxel-wise temporal std (magnitude)."""
    if mask is None:
        mask = default_mask(series)
    std = series.magnitude().std(axis=0, ddof=1)
    return float(std[mask].mean())
