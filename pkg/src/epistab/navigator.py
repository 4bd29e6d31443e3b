"""Orbital navigators: trajectory, self-calibrated linear model, estimation.

The model matrix M relates the eight-parameter perturbation to the change
in navigator signal, s(delta) - s0 = M delta.  Rotation columns are
measured by finite differences from rotated reference acquisitions; the
translation, phase, and frequency columns are analytic derivatives of the
baseline signal.  Estimation solves the real-stacked least-squares problem.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import csv
import numpy as np

from .errors import DegenerateModelError, SimulationError
from .geometry import (RigidPose, IDENTITY_POSE, ParameterVector, Trajectory,
                       compose_pose, DEG)

_CONDITION_CAP = 1e8
_PARAM_NAMES = ("rot_x", "rot_y", "rot_z", "dx", "dy", "dz", "phase", "freq")


@dataclass(frozen=True)
class NavigatorSignal:
    """Complex multi-coil samples of one three-orbit navigator."""

    samples: np.ndarray          # (n_nav, nc)
    trajectory: Trajectory       # played coords, times since excitation
    tnav_s: float
    shot_index: int = -1
    t_excitation_s: float = 0.0

    def flat(self) -> np.ndarray:
        return self.samples.ravel()

    def with_samples(self, samples: np.ndarray) -> "NavigatorSignal":
        return NavigatorSignal(samples, self.trajectory, self.tnav_s,
                               self.shot_index, self.t_excitation_s)


def make_orbital_trajectory(knav_rad_m: float, tnav_s: float,
                            samples_per_orbit: int) -> Trajectory:
    """Three sequential circles about x, y, z at constant radius.

    Samples are uniform in time over ``tnav_s``; stretching the duration
    rescales the times only, never the coordinates.
    """
    if knav_rad_m <= 0 or tnav_s <= 0:
        raise ValueError("knav and tnav must be positive")
    if samples_per_orbit < 8:
        raise ValueError("samples_per_orbit must be at least 8")
    n = samples_per_orbit
    theta = 2 * np.pi * np.arange(n) / n
    c, s = np.cos(theta), np.sin(theta)
    zero = np.zeros(n)
    orbit_x = np.column_stack([zero, c, s])   # plane orthogonal to x
    orbit_y = np.column_stack([s, zero, c])
    orbit_z = np.column_stack([c, s, zero])
    coords = knav_rad_m * np.vstack([orbit_x, orbit_y, orbit_z])
    times = (np.arange(3 * n) + 0.5) * (tnav_s / (3 * n))
    return Trajectory(coords, times)


@dataclass(frozen=True)
class ModelMatrix:
    """Calibrated linear model mapping parameters to navigator signal change.

    Column order matches :class:`ParameterVector.as_array`: three rotations
    (rad), three translations (m), global phase (rad), frequency (rad/s).
    ``s0`` is the separately acquired reference navigator.
    """

    m: np.ndarray                # (n_nav * nc, 8) complex
    s0: np.ndarray               # (n_nav * nc,) complex
    trajectory: Trajectory
    n_coils: int
    condition: float
    _solver: np.ndarray = field(repr=False, default=None)

    @classmethod
    def build(cls, m, s0, trajectory, n_coils) -> "ModelMatrix":
        if not np.all(np.isfinite(m)):
            raise SimulationError("model matrix has non-finite entries")
        stacked = np.vstack([m.real, m.imag])
        u, sv, vt = np.linalg.svd(stacked, full_matrices=False)
        cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
        # Pseudo-inverse of the real-stacked system, precomputed once.
        solver = (vt.T / sv) @ u.T
        return cls(m=m, s0=s0, trajectory=trajectory, n_coils=n_coils,
                   condition=cond, _solver=solver)

    def check_conditioning(self):
        if not np.isfinite(self.condition) or self.condition > _CONDITION_CAP:
            raise DegenerateModelError(
                f"navigator model is rank deficient (condition "
                f"{self.condition:.3g} > {_CONDITION_CAP:.0e})")

    def with_reference(self, s0: np.ndarray) -> "ModelMatrix":
        return ModelMatrix(self.m, np.asarray(s0).ravel(), self.trajectory,
                           self.n_coils, self.condition, self._solver)


def calibrate(acquire, step_deg: float = 1.0,
              separate_reference: bool = True) -> ModelMatrix:
    """Build the model from five on-the-fly reference navigators.

    ``acquire(pose)`` must return a :class:`NavigatorSignal` acquired as if
    the object were at ``pose`` (a run-time implementation realizes the
    rotations by rotating the acquisition geometry instead; the signals are
    equivalent).  One baseline plus three rotated navigators give the three
    rotation columns by finite differences; translation, phase, and
    frequency columns are analytic in the baseline.  A fifth navigator is
    stored as the reference s0 to decorrelate its noise from the columns.
    """
    steps = np.broadcast_to(np.asarray(step_deg, dtype=float), (3,))
    base = acquire(IDENTITY_POSE)
    s_base = base.flat()
    energy = np.linalg.norm(s_base)
    if not np.all(np.isfinite(s_base)) or energy < 1e-12:
        raise SimulationError("calibration navigator is non-finite or empty")

    ncols = []
    axes = ("pitch_deg", "roll_deg", "yaw_deg")
    for i, axis in enumerate(axes):
        rotated = acquire(RigidPose(**{axis: steps[i]})).flat()
        if not np.all(np.isfinite(rotated)):
            raise SimulationError("rotated calibration navigator is non-finite")
        ncols.append((rotated - s_base) / (steps[i] * DEG))

    coords = base.trajectory.coords            # (n_nav, 3), rad/m
    times = base.trajectory.times
    nc = base.samples.shape[1]
    for a in range(3):
        ncols.append((-1j * coords[:, a])[:, None].repeat(nc, 1).ravel() * s_base)
    ncols.append(1j * s_base)
    ncols.append((1j * times)[:, None].repeat(nc, 1).ravel() * s_base)

    m = np.column_stack(ncols)
    if separate_reference:
        s0 = acquire(IDENTITY_POSE).flat()
    else:
        s0 = s_base
    return ModelMatrix.build(m, s0, base.trajectory, nc)


def estimate(model: ModelMatrix, nav: NavigatorSignal) -> ParameterVector:
    """Least-squares perturbation estimate from one navigator.

    Stacks real and imaginary parts so the eight real parameters solve
    min || M delta - (s - s0) || exactly as a real problem.
    """
    model.check_conditioning()
    ds = nav.flat() - model.s0
    if ds.shape != model.s0.shape:
        raise ValueError("navigator size does not match the model")
    rhs = np.concatenate([ds.real, ds.imag])
    x = model._solver @ rhs
    return ParameterVector.from_array(x)


@dataclass
class ParameterTrace:
    """Accumulated per-shot totals: pose, global phase, frequency."""

    shot_index: list = field(default_factory=list)
    time_s: list = field(default_factory=list)
    poses: list = field(default_factory=list)
    phase_rad: list = field(default_factory=list)
    freq_rad_s: list = field(default_factory=list)

    def __len__(self):
        return len(self.shot_index)

    def append(self, j: int, t_s: float, total: ParameterVector):
        self.shot_index.append(int(j))
        self.time_s.append(float(t_s))
        self.poses.append(total.pose)
        self.phase_rad.append(float(total.phase_rad))
        self.freq_rad_s.append(float(total.freq_rad_s))

    def last_total(self) -> ParameterVector:
        if not self.poses:
            return ParameterVector()
        return ParameterVector(self.poses[-1], self.phase_rad[-1],
                               self.freq_rad_s[-1])

    def values(self, name: str) -> np.ndarray:
        """Column as an array; names follow the CSV schema."""
        if name in ("phase_rad",):
            return np.asarray(self.phase_rad)
        if name == "freq_hz":
            return np.asarray(self.freq_rad_s) / (2 * np.pi)
        if name == "freq_rad_s":
            return np.asarray(self.freq_rad_s)
        if name == "time_s":
            return np.asarray(self.time_s)
        idx = {"pitch_deg": 0, "roll_deg": 1, "yaw_deg": 2}.get(name)
        if idx is not None:
            return np.array([p.angles_deg[idx] for p in self.poses])
        idx = {"dx_mm": 0, "dy_mm": 1, "dz_mm": 2}.get(name)
        if idx is not None:
            return np.array([p.translation_mm[idx] for p in self.poses])
        raise KeyError(name)

    CSV_COLUMNS = ("shot_index", "time_s", "pitch_deg", "roll_deg", "yaw_deg",
                   "dx_mm", "dy_mm", "dz_mm", "phase_rad", "freq_hz")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.CSV_COLUMNS)
            for i in range(len(self)):
                p = self.poses[i]
                row = [self.shot_index[i], self.time_s[i],
                       p.pitch_deg, p.roll_deg, p.yaw_deg,
                       p.dx_mm, p.dy_mm, p.dz_mm,
                       self.phase_rad[i], self.freq_rad_s[i] / (2 * np.pi)]
                w.writerow([row[0]] + [f"{v:.12g}" for v in row[1:]])

    @classmethod
    def from_csv(cls, path) -> "ParameterTrace":
        trace = cls()
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                pose = RigidPose(float(row["pitch_deg"]), float(row["roll_deg"]),
                                 float(row["yaw_deg"]), float(row["dx_mm"]),
                                 float(row["dy_mm"]), float(row["dz_mm"]))
                trace.append(int(row["shot_index"]), float(row["time_s"]),
                             ParameterVector(pose, float(row["phase_rad"]),
                                             float(row["freq_hz"]) * 2 * np.pi))
        return trace


def accumulate(trace: ParameterTrace, j: int, t_s: float,
               rel: ParameterVector) -> ParameterTrace:
    """Append the running total after one relative update.

    The pose update is composed (exact; reduces to addition for small
    angles), phase and frequency are summed.  Shot indices must arrive in
    order without gaps.
    """
    if not np.all(np.isfinite(rel.as_array())):
        raise ValueError("non-finite parameter update")
    if len(trace) and j != trace.shot_index[-1] + 1:
        raise ValueError(f"shot index {j} does not follow {trace.shot_index[-1]}")
    trace.append(j, t_s, trace.last_total().accumulate(rel))
    return trace
