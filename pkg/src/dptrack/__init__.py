"""Deformable parts correlation filter tracking toolkit."""
from .springs import (
    SolveReport,
    SolverError,
    SpringSystem,
    energy,
    energy_gradient,
    generate_random_system,
    solve_cgd,
    solve_ida,
)
from .tracker import DeformablePartsTracker, TrackerConfig
from .evaluation import make_synthetic_sequence, overlap, run_no_reset, run_reset_based

__version__ = "0.1.0"
