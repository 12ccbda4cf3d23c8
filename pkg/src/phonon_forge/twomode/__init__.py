"""Two-mode (COM/BR) competition through a shared driven ion."""
from .dynamics import (ClosureBreakdownError, MomentState, NoOscillationError, TrajectoryRecord, TwoModeParams,
                       dominant_frequency, init_state, integrate, moment_rhs, phonon_stats, run, spectrum)
from .sweeps import PhaseDiagram, moment_onset, phase_diagram, single_mode_consistency, single_mode_threshold

__all__ = ["ClosureBreakdownError", "MomentState", "NoOscillationError", "TrajectoryRecord", "TwoModeParams",
           "dominant_frequency", "init_state", "integrate", "moment_rhs", "phonon_stats", "run", "spectrum",
           "PhaseDiagram", "moment_onset", "phase_diagram", "single_mode_consistency", "single_mode_threshold"]
