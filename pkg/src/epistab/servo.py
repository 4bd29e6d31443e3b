"""Run-time feedback control from navigator estimates.

The controller estimates the perturbation relative to its currently
applied correction (rotations are realized by rotating the acquisition
geometry; translations, phase, and frequency are compensated virtually by
demodulating the navigator before estimation).  Rigid updates mature after
a configurable latency in whole shots; phase and frequency are trace-only
and accumulate immediately, to be consumed by reconstruction-side
corrections.
"""

from __future__ import annotations

import numpy as np

from .geometry import (RigidPose, IDENTITY_POSE, ParameterVector,
                       compose_pose, invert_pose)
from .navigator import (NavigatorSignal, ModelMatrix, ParameterTrace,
                        estimate, accumulate)


class ServoController:
    """Causal servo loop: estimate, enqueue with latency, apply, record.

    Estimates exceeding the outlier guard (rotation or shift beyond
    ``max_step_deg`` / ``max_step_mm`` in a single update) are rejected and
    the previous correction is held.
    """

    needs_calibration = True

    def __init__(self, latency_shots: int = 5, calibration_step_deg: float = 1.0,
                 max_step_deg: float = 10.0, max_step_mm: float = 20.0):
        if latency_shots < 0:
            raise ValueError("latency_shots must be non-negative")
        self.latency_shots = int(latency_shots)
        self.calibration_step_deg = float(calibration_step_deg)
        self.max_step_deg = float(max_step_deg)
        self.max_step_mm = float(max_step_mm)
        self.model: ModelMatrix | None = None
        self._applied = IDENTITY_POSE
        self._phase_total = 0.0
        self._freq_total = 0.0
        self._pending = []        # (apply_at_shot, RigidPose update)
        self._est_trace = ParameterTrace()
        self._applied_trace = ParameterTrace()
        self.outlier_shots = []

    def attach_model(self, model: ModelMatrix):
        model.check_conditioning()
        self.model = model

    # -- scan-loop interface -------------------------------------------------

    def pose_for_shot(self, j: int, t_exc_s: float) -> RigidPose:
        """Matured geometry correction in effect for shot j's navigator."""
        self._mature(j)
        return self._applied

    def on_navigator(self, j: int, nav: NavigatorSignal, t_exc_s: float) -> RigidPose:
        """Consume one navigator; returns the correction for the readout."""
        if self.model is None:
            raise RuntimeError("controller has no calibrated model attached")
        self._mature(j)
        rel = estimate(self.model, self._demodulated(nav))

        ang = rel.pose.angles_deg
        shift = rel.pose.translation_mm
        if (np.linalg.norm(ang) > self.max_step_deg
                or np.linalg.norm(shift) > self.max_step_mm):
            self.outlier_shots.append(j)
            rel = ParameterVector()  # hold the previous correction

        # Record the best current knowledge of the total state.
        est_total = ParameterVector(
            compose_pose(self._applied, rel.pose),
            self._phase_total + rel.phase_rad,
            self._freq_total + rel.freq_rad_s)
        self._est_trace.append(j, t_exc_s, est_total)

        # Phase/frequency are never applied at run time; accumulate now.
        self._phase_total += rel.phase_rad
        self._freq_total += rel.freq_rad_s

        # Subtract updates already in flight so queued corrections compose
        # to the estimated state instead of double counting it.
        pending = IDENTITY_POSE
        for _, upd in self._pending:
            pending = compose_pose(pending, upd)
        new_update = compose_pose(invert_pose(pending), rel.pose)
        self._pending.append((j + self.latency_shots, new_update))

        self._mature(j)
        self._applied_trace.append(j, t_exc_s, ParameterVector(
            self._applied, self._phase_total, self._freq_total))
        return self._applied

    def traces(self) -> dict:
        return {"estimated": self._est_trace, "applied": self._applied_trace}

    # -- internals -----------------------------------------------------------

    def _mature(self, j: int):
        while self._pending and self._pending[0][0] <= j:
            _, upd = self._pending.pop(0)
            self._applied = compose_pose(self._applied, upd)

    def _demodulated(self, nav: NavigatorSignal) -> NavigatorSignal:
        """Remove the currently compensated translation/phase/frequency so
        the estimate is relative to the corrected state."""
        coords = nav.trajectory.coords
        times = nav.trajectory.times  # seconds since excitation
        ramp = np.exp(1j * (coords @ self._applied.translation_m))
        demod = np.exp(-1j * (self._freq_total * times + self._phase_total))
        return nav.with_samples(nav.samples * (ramp * demod)[:, None])


class GroundTruthController:
    """Oracle controller: applies the scripted pose exactly, no latency.

    Used for reference runs that bound what any estimator-based loop can
    achieve.  Phase/frequency traces carry the scripted values at each
    excitation so reconstruction-side corrections can use ground truth.
    """

    needs_calibration = False
    model = None

    def __init__(self, script):
        self.script = script
        self._est_trace = ParameterTrace()
        self._applied_trace = ParameterTrace()

    def pose_for_shot(self, j: int, t_exc_s: float) -> RigidPose:
        return self.script.pose(t_exc_s)

    def on_navigator(self, j: int, nav: NavigatorSignal, t_exc_s: float) -> RigidPose:
        total = ParameterVector(self.script.pose(t_exc_s),
                                self.script.phase(t_exc_s),
                                float(self.script.omega(t_exc_s)))
        self._est_trace.append(j, t_exc_s, total)
        self._applied_trace.append(j, t_exc_s, total)
        return total.pose

    def traces(self) -> dict:
        return {"estimated": self._est_trace, "applied": self._applied_trace}


def residual_trace(applied: ParameterTrace, truth: ParameterTrace) -> ParameterTrace:
    """Per-shot residual (truth relative to applied correction)."""
    out = ParameterTrace()
    for i in range(len(truth)):
        res_pose = compose_pose(invert_pose(applied.poses[i]), truth.poses[i])
        out.append(truth.shot_index[i], truth.time_s[i], ParameterVector(
            res_pose, truth.phase_rad[i] - applied.phase_rad[i],
            truth.freq_rad_s[i] - applied.freq_rad_s[i]))
    return out
