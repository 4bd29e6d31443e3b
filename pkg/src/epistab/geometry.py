"""Rigid poses, k-space trajectories, and scan timing shared by all stages.

Conventions, fixed once for the whole package:

* Scanner axes: x = RL (readout), y = AP (phase encode), z = FH (slice).
* Rotations are intrinsic, applied pitch (about x), then roll (about the
  rotated y), then yaw (about the twice-rotated z).  As fixed-frame
  matrices this composes to ``R = Rx(pitch) @ Ry(roll) @ Rz(yaw)``.
* Angles are stored in degrees and translations in mm at the boundary;
  all internal math uses radians and meters.
* A pose maps a point ``x`` (meters, scanner frame) to ``R @ x + t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np
from scipy.spatial.transform import Rotation

from .errors import SimulationError

DEG = np.pi / 180.0
MM = 1e-3

# Intrinsic pitch->roll->yaw about scanner x, y, z.
_EULER_ORDER = "XYZ"


@dataclass(frozen=True)
class RigidPose:
    """Rigid-body pose: three rotation angles (deg) plus translation (mm).

    ``pitch_deg`` nods about RL (x), ``roll_deg`` tilts about AP (y) and
    ``yaw_deg`` shakes about FH (z); translations follow the same axis
    order (RL, AP, FH).
    """

    pitch_deg: float = 0.0
    roll_deg: float = 0.0
    yaw_deg: float = 0.0
    dx_mm: float = 0.0
    dy_mm: float = 0.0
    dz_mm: float = 0.0

    def __post_init__(self):
        vals = (self.pitch_deg, self.roll_deg, self.yaw_deg,
                self.dx_mm, self.dy_mm, self.dz_mm)
        if not all(np.isfinite(vals)):
            raise ValueError(f"non-finite pose fields: {vals}")

    @property
    def angles_deg(self) -> np.ndarray:
        return np.array([self.pitch_deg, self.roll_deg, self.yaw_deg])

    @property
    def translation_mm(self) -> np.ndarray:
        return np.array([self.dx_mm, self.dy_mm, self.dz_mm])

    @property
    def translation_m(self) -> np.ndarray:
        return self.translation_mm * MM

    def matrix(self) -> np.ndarray:
        """3x3 rotation matrix of the pose."""
        return Rotation.from_euler(
            _EULER_ORDER, self.angles_deg, degrees=True).as_matrix()

    def apply(self, points_m: np.ndarray) -> np.ndarray:
        """Map points (N, 3) in meters through ``R @ x + t``."""
        return points_m @ self.matrix().T + self.translation_m

    def is_identity(self, tol: float = 0.0) -> bool:
        vals = np.r_[self.angles_deg, self.translation_mm]
        return bool(np.all(np.abs(vals) <= tol))

    @classmethod
    def from_matrix(cls, rot: np.ndarray, translation_m=(0.0, 0.0, 0.0)) -> "RigidPose":
        ang = Rotation.from_matrix(rot).as_euler(_EULER_ORDER, degrees=True)
        t = np.asarray(translation_m) / MM
        return cls(ang[0], ang[1], ang[2], t[0], t[1], t[2])

    @classmethod
    def from_si(cls, angles_rad, translation_m) -> "RigidPose":
        a = np.asarray(angles_rad) / DEG
        t = np.asarray(translation_m) / MM
        return cls(a[0], a[1], a[2], t[0], t[1], t[2])


IDENTITY_POSE = RigidPose()


def compose_pose(a: RigidPose, b: RigidPose) -> RigidPose:
    """Pose equivalent to applying ``b`` first, then ``a``.

    Rotations compose as matrices; the combined translation is
    ``a.t + a.R @ b.t``.
    """
    ra, rb = a.matrix(), b.matrix()
    t = a.translation_m + ra @ b.translation_m
    return RigidPose.from_matrix(ra @ rb, t)


def invert_pose(p: RigidPose) -> RigidPose:
    """Inverse pose: ``compose_pose(p, invert_pose(p))`` is the identity."""
    r_inv = p.matrix().T
    return RigidPose.from_matrix(r_inv, -(r_inv @ p.translation_m))


def rotation_angle_deg(p: RigidPose) -> float:
    """Total rotation angle (deg) of the pose, axis-independent."""
    return float(Rotation.from_matrix(p.matrix()).magnitude() / DEG)


@dataclass(frozen=True)
class ParameterVector:
    """The eight perturbation parameters: rigid pose, global phase, frequency.

    Internal parameter ordering (used by the navigator model and the
    least-squares estimator) is fixed as
    ``[rot_x, rot_y, rot_z (rad), dx, dy, dz (m), phase (rad), freq (rad/s)]``.
    """

    pose: RigidPose = IDENTITY_POSE
    phase_rad: float = 0.0
    freq_rad_s: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.phase_rad) and np.isfinite(self.freq_rad_s)):
            raise ValueError("non-finite phase/frequency")

    @property
    def freq_hz(self) -> float:
        return self.freq_rad_s / (2 * np.pi)

    def as_array(self) -> np.ndarray:
        """SI-unit 8-vector in the documented column order."""
        return np.r_[self.pose.angles_deg * DEG,
                     self.pose.translation_m,
                     self.phase_rad, self.freq_rad_s]

    @classmethod
    def from_array(cls, x) -> "ParameterVector":
        x = np.asarray(x, dtype=float)
        pose = RigidPose.from_si(x[0:3], x[3:6])
        return cls(pose, float(x[6]), float(x[7]))

    def accumulate(self, rel: "ParameterVector") -> "ParameterVector":
        """Apply a relative update: pose composed, phase/frequency summed."""
        return ParameterVector(compose_pose(self.pose, rel.pose),
                               self.phase_rad + rel.phase_rad,
                               self.freq_rad_s + rel.freq_rad_s)

    def to_dict(self) -> dict:
        return {"pitch_deg": self.pose.pitch_deg, "roll_deg": self.pose.roll_deg,
                "yaw_deg": self.pose.yaw_deg, "dx_mm": self.pose.dx_mm,
                "dy_mm": self.pose.dy_mm, "dz_mm": self.pose.dz_mm,
                "phase_rad": self.phase_rad, "freq_rad_s": self.freq_rad_s}

    @classmethod
    def from_dict(cls, d: dict) -> "ParameterVector":
        pose = RigidPose(d["pitch_deg"], d["roll_deg"], d["yaw_deg"],
                         d["dx_mm"], d["dy_mm"], d["dz_mm"])
        return cls(pose, d["phase_rad"], d["freq_rad_s"])


ZERO_PARAMS = ParameterVector()


@dataclass(frozen=True)
class Trajectory:
    """Sampled k-space path: coordinates in rad/m, times since excitation in s.

    Treated as immutable: the arrays are marked read-only on construction.
    """

    coords: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        coords = np.ascontiguousarray(np.asarray(self.coords, dtype=float))
        times = np.ascontiguousarray(np.asarray(self.times, dtype=float))
        if coords.ndim != 2 or coords.shape[1] != 3:
            raise ValueError(f"coords must be (N, 3), got {coords.shape}")
        if times.shape != (coords.shape[0],):
            raise ValueError("times length must match coords")
        if not np.all(np.isfinite(coords)):
            raise ValueError("non-finite trajectory coordinates")
        if not np.all(np.diff(times) > 0):
            raise ValueError("trajectory times must be strictly increasing")
        coords.setflags(write=False)
        times.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "times", times)

    def __len__(self) -> int:
        return self.coords.shape[0]

    def radii(self) -> np.ndarray:
        return np.linalg.norm(self.coords, axis=1)

    def shifted(self, dt_s: float) -> "Trajectory":
        return Trajectory(self.coords, self.times + dt_s)


def rotate_trajectory(traj: Trajectory, pose: RigidPose) -> Trajectory:
    """Rotate every k-space sample by the pose's rotation; times unchanged."""
    return Trajectory(traj.coords @ pose.matrix().T, traj.times)


@dataclass(frozen=True)
class TimingConfig:
    """Sequence timing and dimensions for one segmented EPI protocol.

    One kz plane is acquired per shot with linear slice ordering, so
    ``tvol_s == tr_s * nz`` must hold exactly.  ``nm`` echoes of ``nk``
    samples span the echo train centered on ``te_s``; a three-orbit
    navigator of duration ``tnav_s`` sits between excitation and readout.
    """

    te_s: float = 0.030
    tr_s: float = 0.064
    tvol_s: float = 1.024
    tnav_s: float = 3.2e-3
    echo_spacing_s: float = 0.5e-3
    nz: int = 16
    nm: int = 32
    nk: int = 32
    nc: int = 4
    nvol: int = 30
    nav_start_s: float = 3.0e-4
    samples_per_orbit: int = 64
    knav_rad_m: float = 400.0
    warmup_volumes: int = 1

    def __post_init__(self):
        if abs(self.tvol_s - self.tr_s * self.nz) > 1e-9 * self.tvol_s:
            raise ValueError(
                f"tvol_s={self.tvol_s} must equal tr_s*nz={self.tr_s * self.nz}")
        span = self.echo_times_s()
        if not (span[0] <= self.te_s <= span[-1]):
            raise ValueError("TE must lie within the echo-train time span")
        if self.nav_start_s + self.tnav_s >= self.sample_times_s().min():
            raise ValueError("navigator overlaps the EPI readout")
        if min(self.nz, self.nm, self.nk, self.nc, self.nvol) < 1:
            raise ValueError("dimensions must be positive")

    @property
    def f_vol_hz(self) -> float:
        """Volume repetition frequency 1/Tvol."""
        return 1.0 / self.tvol_s

    @property
    def shots_per_volume(self) -> int:
        return self.nz

    @property
    def n_shots(self) -> int:
        return self.nz * self.nvol

    def echo_times_s(self) -> np.ndarray:
        """Center time of each echo (s since excitation), length nm."""
        m = np.arange(self.nm)
        return self.te_s + (m - (self.nm - 1) / 2.0) * self.echo_spacing_s

    def sample_times_s(self) -> np.ndarray:
        """Per-sample times (nm, nk) in acquisition order; strictly increasing
        along the flattened echo/readout order."""
        dwell = self.echo_spacing_s / self.nk
        k = (np.arange(self.nk) - (self.nk - 1) / 2.0) * dwell
        return self.echo_times_s()[:, None] + k[None, :]

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "te_s", "tr_s", "tvol_s", "tnav_s", "echo_spacing_s",
            "nz", "nm", "nk", "nc", "nvol", "nav_start_s",
            "samples_per_orbit", "knav_rad_m", "warmup_volumes")}

    @classmethod
    def from_dict(cls, d: dict) -> "TimingConfig":
        return cls(**d)


def check_finite(arr, what: str):
    if not np.all(np.isfinite(arr)):
        raise SimulationError(f"non-finite values in {what}")
