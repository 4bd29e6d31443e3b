"""Self-navigated per-shot phase equalization against first-volume peers.

Each shot of volumes d >= 1 (0-based) is compared with the shot that played
the same trajectory role in volume 0.  Echo-wise scalar products over
readout and coils give a phase-difference vector along the echo train; a
first-order fit of its unwrapped phase yields the shot's frequency (slope)
and phase (intercept at excitation), which are then removed from the data.

The estimator relies on k-space correspondence between a shot and its
peer: rotations of the object break it, which is why run-time motion
correction must come first.  A generic variant collapses the echo and
readout dimensions, mean-filters the complex products along the collapsed
(time-sorted) readout, and fits against the collapsed timing array, which
makes no use of the EPI echo structure.
"""

from __future__ import annotations

from dataclasses import dataclass
import csv
import warnings
import numpy as np

from .errors import TrajectoryOrderError
from .geometry import TimingConfig
from .simulator import ShotData

RELIABLE_REL_THRESHOLD = 1e-9


@dataclass(frozen=True)
class ShotPhaseEstimate:
    """Per-shot equalization result; volume 0 shots carry no estimate."""

    shot_index: int
    time_s: float
    dphi_rad: float
    domega_rad_s: float
    fit_residual_rad: float
    echo_phases: np.ndarray
    n_reliable: int
    skipped: bool = False

    @property
    def dfreq_hz(self) -> float:
        return self.domega_rad_s / (2 * np.pi)


@dataclass
class PeerBank:
    """Reference shots from the first volume, one per segment index."""

    peers: dict

    @classmethod
    def from_first_volume(cls, shots) -> "PeerBank":
        peers = {}
        for s in shots:
            if s.volume_index == 0:
                if s.kz_index in peers:
                    raise TrajectoryOrderError(
                        f"segment {s.kz_index} appears twice in volume 0")
                peers[s.kz_index] = s
        return cls(peers)

    def peer_for(self, shot: ShotData) -> ShotData:
        peer = self.peers.get(shot.kz_index)
        if peer is None or peer.shape != shot.shape:
            raise TrajectoryOrderError(
                f"no matching reference shot for segment {shot.kz_index}")
        return peer


def echo_phase_differences(shot: ShotData, peer: ShotData):
    """Echo-train phase differences between a shot and its peer.

    Returns ``(p, unwrapped, reliable)``: the complex scalar products over
    readout and coils, their phase unwrapped along the echo train (starting
    from the principal value of the first reliable echo), and the
    reliability mask.  Echoes with |p| below 1e-9 of the maximum are
    excluded from unwrapping and fitting.
    """
    if shot.shape != peer.shape:
        raise ValueError("shot and peer dimensions differ")
    p = np.sum(np.conj(peer.samples) * shot.samples, axis=(1, 2))
    mags = np.abs(p)
    reliable = mags >= RELIABLE_REL_THRESHOLD * mags.max() if mags.max() > 0 \
        else np.zeros_like(mags, dtype=bool)
    unwrapped = np.full(p.shape, np.nan)
    if reliable.any():
        unwrapped[reliable] = np.unwrap(np.angle(p[reliable]))
    return p, unwrapped, reliable


def fit_shot_phase(unwrapped, echo_times_s, reliable=None):
    """First-order fit of unwrapped phase over echo time.

    Returns ``(domega_rad_s, dphi_rad, residual_rms_rad)`` with the
    intercept referenced to t = 0 (excitation).  Fewer than two reliable
    echoes yield ``None`` (shot must be skipped).
    """
    unwrapped = np.asarray(unwrapped, dtype=float)
    echo_times_s = np.asarray(echo_times_s, dtype=float)
    if reliable is None:
        reliable = np.isfinite(unwrapped)
    t = echo_times_s[reliable]
    y = unwrapped[reliable]
    if t.size < 2:
        return None
    slope, intercept = np.polyfit(t, y, 1)
    resid = y - (slope * t + intercept)
    return float(slope), float(intercept), float(np.sqrt(np.mean(resid**2)))


def _collapsed_products(shot: ShotData, peer: ShotData, window: int):
    """Coil-summed products over the collapsed readout, mean filtered."""
    q = np.sum(np.conj(peer.samples) * shot.samples, axis=2).ravel()
    if window > 1:
        pad = window // 2
        padded = np.pad(q, pad, mode="edge")
        kernel = np.ones(window) / window
        q = np.convolve(padded, kernel, mode="valid")
    return q


def _estimate_generic(shot: ShotData, peer: ShotData, window: int):
    q = _collapsed_products(shot, peer, window)
    mags = np.abs(q)
    reliable = mags >= RELIABLE_REL_THRESHOLD * mags.max() if mags.max() > 0 \
        else np.zeros_like(mags, dtype=bool)
    unwrapped = np.full(q.shape, np.nan)
    if reliable.any():
        unwrapped[reliable] = np.unwrap(np.angle(q[reliable]))
    fit = fit_shot_phase(unwrapped, shot.times_s.ravel(), reliable)
    return fit, unwrapped, int(reliable.sum())


def _check_ordering(shots, n_segments: int):
    ref = [s.kz_index for s in shots if s.volume_index == 0]
    if len(ref) != n_segments:
        raise TrajectoryOrderError(
            f"volume 0 holds {len(ref)} segments, expected {n_segments}")
    by_vol = {}
    for s in shots:
        by_vol.setdefault(s.volume_index, []).append(s.kz_index)
    for d, seq in by_vol.items():
        if seq != ref:
            raise TrajectoryOrderError(
                f"volume {d} plays segment order {seq}, volume 0 played {ref}")


def equalize_scan(shots, timing: TimingConfig, mode: str = "epi",
                  window: int | None = None):
    """Equalize every post-reference shot to its first-volume peer.

    Returns ``(corrected_shots, estimates)``.  Volume 0 passes through
    untouched and populates the peer bank.  ``mode`` selects the echo-train
    estimator ("epi") or the collapsed-readout variant ("generic"); the
    generic window defaults to one echo's worth of samples.
    """
    if mode not in ("epi", "generic"):
        raise ValueError(f"unknown equalization mode {mode!r}")
    _check_ordering(shots, timing.nz)
    bank = PeerBank.from_first_volume(shots)
    win = timing.nk if window is None else int(window)

    echo_times = timing.echo_times_s()
    corrected, estimates = [], []
    for shot in shots:
        if shot.volume_index == 0:
            corrected.append(shot)
            continue
        peer = bank.peer_for(shot)
        if mode == "epi":
            p, unwrapped, reliable = echo_phase_differences(shot, peer)
            fit = fit_shot_phase(unwrapped, echo_times, reliable)
            n_rel = int(reliable.sum())
            phases = unwrapped
        else:
            fit, phases, n_rel = _estimate_generic(shot, peer, win)
        if fit is None:
            warnings.warn(f"shot {shot.shot_index}: fewer than 2 reliable "
                          "echoes, skipped equalization")
            estimates.append(ShotPhaseEstimate(
                shot.shot_index, shot.t_excitation_s, 0.0, 0.0, np.nan,
                phases, n_rel, skipped=True))
            corrected.append(shot)
            continue
        domega, dphi, resid = fit
        factor = np.exp(-1j * (domega * shot.times_s + dphi))
        corrected.append(shot.with_samples(shot.samples * factor[:, :, None]))
        estimates.append(ShotPhaseEstimate(
            shot.shot_index, shot.t_excitation_s, dphi, domega, resid,
            phases, n_rel))
    return corrected, estimates


ESTIMATE_CSV_COLUMNS = ("shot_index", "time_s", "dphi_rad", "dfreq_hz",
                        "residual_rad")


def estimates_to_csv(estimates, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ESTIMATE_CSV_COLUMNS)
        for e in estimates:
            w.writerow([e.shot_index] + [
                f"{v:.12g}" for v in (e.time_s, e.dphi_rad, e.dfreq_hz,
                                      e.fit_residual_rad)])


def estimates_from_csv(path):
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(ShotPhaseEstimate(
                int(row["shot_index"]), float(row["time_s"]),
                float(row["dphi_rad"]), float(row["dfreq_hz"]) * 2 * np.pi,
                float(row["residual_rad"]), np.array([]), 0))
    return out
