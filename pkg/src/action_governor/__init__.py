"""Action Governor: safe supervision of nominal controls for linear systems."""
from .errors import *  # noqa: F401,F403
from .governor import (
    GovernorProblem,
    GovernResult,
    GovernStatus,
    Mode,
    export_miqp,
    govern_bisect,
    govern_miqp,
    rg_update,
)
from .optimize import LinConstraintSet, SolveStatus, Status, solve_lp, solve_qp, support
from .polytope import PolyUnion, Polytope, region_diff, set_equal, union_pdiff
from .scenarios import Scenario, acc_scenario, dlqr, load_scenario, robot_scenario, simulate
from .setcalc import OinfSet, UnrecoverableSeq, compute_oinf, compute_unrecoverable
from .system import LinearSystem

__version__ = "0.1.0"

__all__ = [
    "GovernorProblem", "GovernResult", "GovernStatus", "Mode", "export_miqp", "govern_bisect",
    "govern_miqp", "rg_update", "LinConstraintSet", "SolveStatus", "Status", "solve_lp", "solve_qp",
    "support", "PolyUnion", "Polytope", "region_diff", "set_equal", "union_pdiff", "Scenario",
    "acc_scenario", "dlqr", "load_scenario", "robot_scenario", "simulate", "OinfSet",
    "UnrecoverableSeq", "compute_oinf", "compute_unrecoverable", "LinearSystem",
]
