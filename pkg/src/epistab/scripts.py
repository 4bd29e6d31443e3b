"""Scripted perturbations: pose, frequency, and phase as functions of time.

A :class:`PerturbationScript` drives the simulator.  Frequency components
carry exact definite integrals so per-sample phase accrual (integral of
omega from excitation to the sample time) never relies on numerical
quadrature.  All built-in scenarios are deterministic given the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable
import numpy as np

from .geometry import RigidPose, IDENTITY_POSE, TimingConfig

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class FrequencyComponent:
    """One omega(t) term with its exact definite integral.

    ``integral(t0, t1)`` must equal the integral of ``value`` over
    [t0, t1] where t0/t1 are arrays of matching shape.
    """

    value: Callable
    integral: Callable


def _zero_pose(t: float) -> RigidPose:
    return IDENTITY_POSE


@dataclass(frozen=True)
class PerturbationScript:
    """Time-resolved ground truth for a simulated scan.

    The pose is evaluated at shot excitation time and held constant within
    the shot.  Phase accrual at a sample acquired t seconds after the
    excitation at absolute time t_exc is
    ``phase_fn(t_exc) + integral of omega over [t_exc, t_exc + t]``.
    """

    pose_fn: Callable = _zero_pose
    omega_components: tuple = ()
    phase_fn: Callable = lambda t: 0.0
    noise_std: float = 0.0
    seed: int = 0
    label: str = "static"
    params: dict = field(default_factory=dict)

    def pose(self, t: float) -> RigidPose:
        return self.pose_fn(t)

    def omega(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        total = np.zeros_like(t)
        for comp in self.omega_components:
            total = total + comp.value(t)
        return total

    def omega_integral(self, t0, t1) -> np.ndarray:
        t0 = np.asarray(t0, dtype=float)
        t1 = np.asarray(t1, dtype=float)
        total = np.zeros(np.broadcast(t0, t1).shape)
        for comp in self.omega_components:
            total = total + comp.integral(t0, t1)
        return total

    def phase(self, t: float) -> float:
        return float(self.phase_fn(t))

    def is_static(self) -> bool:
        return (self.pose_fn is _zero_pose and not self.omega_components
                and self.phase(0.0) == 0.0)


def drift_component(rate_hz_per_min: float) -> FrequencyComponent:
    """Linear frequency drift omega(t) = 2*pi*rate*t/60."""
    a = TWO_PI * rate_hz_per_min / 60.0

    def value(t):
        return a * np.asarray(t, dtype=float)

    def integral(t0, t1):
        return 0.5 * a * (np.asarray(t1)**2 - np.asarray(t0)**2)

    return FrequencyComponent(value, integral)


def breathing_component(freq_hz: float, amplitude_hz: float) -> FrequencyComponent:
    """Sinusoidal field fluctuation omega(t) = 2*pi*A*sin(2*pi*f*t)."""
    w = TWO_PI * freq_hz
    a = TWO_PI * amplitude_hz

    def value(t):
        return a * np.sin(w * np.asarray(t))

    def integral(t0, t1):
        return -(a / w) * (np.cos(w * np.asarray(t1)) - np.cos(w * np.asarray(t0)))

    return FrequencyComponent(value, integral)


def shot_transient_component(timing: TimingConfig, t_first_shot_s: float,
                             amplitude_hz: float, tau_s: float,
                             buildup: float = 1.0) -> FrequencyComponent:
    """Slice-encode dependent transient restarting at every excitation.

    Within the shot starting at t_s the offset is
    ``A(t_s) * (|kz(l)| / kz_max) * exp(-(t - t_s) / tau)`` where l is the
    shot's slice-encode index under linear ordering and A grows linearly by
    ``buildup`` over the scan (slow thermal evolution), so the pattern is
    almost but not exactly volume-periodic.
    """
    nz = timing.nz
    kz_rel = np.abs(np.arange(nz) - nz // 2) / (nz // 2)
    a0 = TWO_PI * amplitude_hz
    t_scan = timing.nvol * timing.tvol_s

    def shot_info(t):
        t = np.asarray(t, dtype=float)
        j = np.floor((t - t_first_shot_s) / timing.tr_s + 1e-12).astype(int)
        t_start = t_first_shot_s + j * timing.tr_s
        amp = a0 * (1.0 + buildup * np.clip((t_start - t_first_shot_s), 0, None) / t_scan)
        amp = amp * kz_rel[np.mod(j, nz)] * (j >= 0)
        return amp, t_start

    def value(t):
        amp, t_start = shot_info(t)
        return amp * np.exp(-(np.asarray(t) - t_start) / tau_s)

    def integral(t0, t1):
        # Valid only when [t0, t1] stays inside one shot, which holds for
        # per-sample accrual from the shot's own excitation.
        amp, t_start = shot_info(t0)
        return amp * tau_s * (np.exp(-(np.asarray(t0) - t_start) / tau_s)
                              - np.exp(-(np.asarray(t1) - t_start) / tau_s))

    return FrequencyComponent(value, integral)


def instructed_motion_pose(step_deg: float = 1.0, period_s: float = 10.0) -> Callable:
    """Pose schedule cycling rest and +/- pitch, then +/- yaw steps.

    The 8-segment cycle is [0, +step(pitch), 0, -step(pitch),
    0, +step(yaw), 0, -step(yaw)], one segment per ``period_s``.
    """
    sequence = [
        IDENTITY_POSE,
        RigidPose(pitch_deg=step_deg),
        IDENTITY_POSE,
        RigidPose(pitch_deg=-step_deg),
        IDENTITY_POSE,
        RigidPose(yaw_deg=step_deg),
        IDENTITY_POSE,
        RigidPose(yaw_deg=-step_deg),
    ]

    def pose(t):
        k = int(np.floor(max(t, 0.0) / period_s)) % len(sequence)
        return sequence[k]

    return pose


def square_shift_pose(axis: str, amplitude_mm: float, period_s: float = 10.0) -> Callable:
    """Square-wave translation along one axis: in for one period, out the next."""
    idx = {"x": 0, "y": 1, "z": 2, "frequency": 0, "phase": 1, "slice": 2}[axis]

    def pose(t):
        on = int(np.floor(max(t, 0.0) / period_s)) % 2 == 1
        shift = [0.0, 0.0, 0.0]
        if on:
            shift[idx] = amplitude_mm
        return RigidPose(dx_mm=shift[0], dy_mm=shift[1], dz_mm=shift[2])

    return pose


def smooth_rotation_pose(amp_deg: float, f_pitch_hz: float,
                         f_yaw_hz: float) -> Callable:
    """Slow continuous head wobble: sinusoidal pitch and yaw."""

    def pose(t):
        return RigidPose(
            pitch_deg=amp_deg * np.sin(2 * np.pi * f_pitch_hz * t),
            yaw_deg=amp_deg * np.sin(2 * np.pi * f_yaw_hz * t + 0.4))

    return pose


def step_rotation_pose(axis: str, step_deg: float, t_on_s: float) -> Callable:
    """Single persistent rotation step at ``t_on_s``."""
    field_name = {"pitch": "pitch_deg", "roll": "roll_deg", "yaw": "yaw_deg"}[axis]
    stepped = RigidPose(**{field_name: step_deg})

    def pose(t):
        return stepped if t >= t_on_s else IDENTITY_POSE

    return pose


def combine_poses(*fns) -> Callable:
    """Compose several pose schedules (applied right to left)."""
    from .geometry import compose_pose

    def pose(t):
        total = IDENTITY_POSE
        for fn in fns:
            total = compose_pose(total, fn(t))
        return total

    return pose
