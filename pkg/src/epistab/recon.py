"""Cartesian reconstruction and translation-only volume realignment.

Reconstruction scatters every shot's samples onto the nominal Cartesian
grid, inverts the 3D DFT per coil, and combines coils with the matched
filter sum conj(c) x / sum |c|^2.  Realignment estimates per-volume
shifts against volume 0 by cross-correlation with a sub-voxel parabola
refinement and undoes them with Fourier phase ramps.
"""

from __future__ import annotations

from dataclasses import dataclass
import warnings
import numpy as np

from .errors import MetricError
from .phantom import CoilSet


@dataclass(frozen=True)
class VolumeSeries:
    """Reconstructed complex volumes over time."""

    volumes: np.ndarray          # (nvol, nx, ny, nz) complex
    voxel_mm: tuple
    times_s: np.ndarray

    @property
    def n_volumes(self) -> int:
        return self.volumes.shape[0]

    def magnitude(self) -> np.ndarray:
        return np.abs(self.volumes)


def _ifft_centered(grid_k: np.ndarray) -> np.ndarray:
    """Inverse of s[j] = sum_i rho[i] exp(-i (j-c)(i-c) 2 pi / N) per axis."""
    return np.fft.fftshift(np.fft.ifftn(np.fft.ifftshift(grid_k)))


def _fft_centered(vol: np.ndarray) -> np.ndarray:
    return np.fft.fftshift(np.fft.fftn(np.fft.ifftshift(vol)))


def assemble_kspace(shots, shape) -> np.ndarray:
    """Scatter shots onto the (nc, nx, ny, nz) grid; reject incomplete data."""
    nc = shots[0].samples.shape[-1]
    grid = np.zeros((nc,) + tuple(shape), dtype=complex)
    filled = np.zeros(shape, dtype=np.int32)
    for s in shots:
        ix, iy, iz = s.grid_idx[..., 0], s.grid_idx[..., 1], s.grid_idx[..., 2]
        grid[:, ix, iy, iz] = np.moveaxis(s.samples, -1, 0)
        filled[ix, iy, iz] += 1
    if np.any(filled != 1):
        missing = int(np.sum(filled == 0))
        extra = int(np.sum(filled > 1))
        raise MetricError(
            f"k-space incomplete: {missing} samples missing, {extra} duplicated")
    return grid


def reconstruct_volume(shots, coils: CoilSet) -> np.ndarray:
    """Inverse DFT per coil plus matched-filter combination."""
    shape = coils.maps.shape[1:]
    grid = assemble_kspace(shots, shape)
    num = np.zeros(shape, dtype=complex)
    den = np.zeros(shape)
    for c in range(coils.n_coils):
        img = _ifft_centered(grid[c])
        num += np.conj(coils.maps[c]) * img
        den += np.abs(coils.maps[c])**2
    return num / np.maximum(den, 1e-30)


def reconstruct_series(shots, coils: CoilSet, voxel_mm=(1.0, 1.0, 1.0)) -> VolumeSeries:
    by_vol = {}
    for s in shots:
        by_vol.setdefault(s.volume_index, []).append(s)
    vols = []
    times = []
    for d in sorted(by_vol):
        vols.append(reconstruct_volume(by_vol[d], coils))
        times.append(min(s.t_excitation_s for s in by_vol[d]))
    return VolumeSeries(np.stack(vols), voxel_mm=tuple(voxel_mm),
                        times_s=np.asarray(times))


def _parabola_offset(y_minus, y0, y_plus) -> float:
    denom = y_minus - 2 * y0 + y_plus
    if denom >= 0 or abs(denom) < 1e-300:
        return 0.0
    return 0.5 * (y_minus - y_plus) / denom


def estimate_shift_voxels(ref: np.ndarray, mov: np.ndarray) -> np.ndarray:
    """Shift s (voxels) such that mov(x) ~ ref(x - s), sub-voxel refined."""
    f_ref = np.fft.fftn(ref)
    f_mov = np.fft.fftn(mov)
    corr = np.abs(np.fft.ifftn(f_ref * np.conj(f_mov)))
    peak_flat = int(np.argmax(corr))
    peak = np.array(np.unravel_index(peak_flat, corr.shape))
    if corr[tuple(peak)] <= corr.mean() * (1 + 1e-9):
        warnings.warn("degenerate correlation peak; assuming zero shift")
        return np.zeros(3)
    shift = np.zeros(3)
    for ax in range(3):
        n = corr.shape[ax]
        idx_m = peak.copy()
        idx_p = peak.copy()
        idx_m[ax] = (peak[ax] - 1) % n
        idx_p[ax] = (peak[ax] + 1) % n
        frac = _parabola_offset(-corr[tuple(idx_m)], -corr[tuple(peak)],
                                -corr[tuple(idx_p)])
        centered = peak[ax] if peak[ax] <= n // 2 else peak[ax] - n
        shift[ax] = -(centered + frac)
    return shift


def shift_volume(vol: np.ndarray, shift_voxels) -> np.ndarray:
    """Translate a complex volume by a (possibly fractional) voxel shift."""
    f = np.fft.fftn(vol)
    for ax, s in enumerate(shift_voxels):
        freq = np.fft.fftfreq(vol.shape[ax])
        ramp = np.exp(-2j * np.pi * freq * s)
        shape = [1, 1, 1]
        shape[ax] = -1
        f = f * ramp.reshape(shape)
    return np.fft.ifftn(f)


def realign_translations(series: VolumeSeries):
    """Register every volume to volume 0 by translation only.

    Returns the aligned series and per-volume shift estimates in mm
    (positive = the volume had moved by +shift relative to volume 0).
    """
    if series.n_volumes < 2:
        raise MetricError("realignment needs at least 2 volumes")
    mags = series.magnitude()
    voxel = np.asarray(series.voxel_mm)
    aligned = [series.volumes[0]]
    shifts_mm = [np.zeros(3)]
    for d in range(1, series.n_volumes):
        s_vox = estimate_shift_voxels(mags[0], mags[d])
        aligned.append(shift_volume(series.volumes[d], -s_vox))
        shifts_mm.append(s_vox * voxel)
    return (VolumeSeries(np.stack(aligned), series.voxel_mm, series.times_s),
            np.stack(shifts_mm))
