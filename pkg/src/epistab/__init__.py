"""Segmented 3D EPI simulation, servo navigation, and phase equalization."""

__version__ = "0.1.0"

from .geometry import (RigidPose, ParameterVector, Trajectory, TimingConfig,
                       compose_pose, invert_pose, rotate_trajectory,
                       IDENTITY_POSE)
from .phantom import (DigitalPhantom, CoilSet, make_ball_phantom,
                      make_loop_coils, make_uniform_coils)
from .scripts import PerturbationScript
from .simulator import ShotData, ScanRecord, synthesize_samples, run_scan
from .navigator import (NavigatorSignal, ModelMatrix, ParameterTrace,
                        make_orbital_trajectory, calibrate, estimate,
                        accumulate)
from .servo import ServoController, GroundTruthController, residual_trace
from .navcorr import (PhaseCorrectionConfig, filter_trace,
                      apply_phase_correction, correct_translations)
from .equalize import (PeerBank, ShotPhaseEstimate, echo_phase_differences,
                       fit_shot_phase, equalize_scan)
from .recon import (VolumeSeries, reconstruct_volume, reconstruct_series,
                    realign_translations)
from .metrics import TsnrMap, SpectrumReport, tsnr, default_mask, trace_spectrum
from .experiment import (ExperimentConfig, ExperimentReport, run_experiment,
                         run_pipeline, compare_runs)
