"""Feedback equilibria of constrained discrete-time dynamic games."""
from .active_set import CycleFailure, InequalitySolution, InfeasibleGame, solve_inequality_lq
from .iterlog import IterationLog
from .lq import FeedbackSolution, SingularStageMatrix, solve_equality_lq
from .model import GameSpec, LQGame, ModelError, Stage, TrajectoryIterate, combine_stages, local_lq, validate
from .scenario import ScenarioError, bundled_path, load_scenario
from .sqp import LineSearchFailure, SqpOptions, SqpResult, merit, solve_gfqne
from .verification import check_sufficiency, residual

__all__ = [
    "CycleFailure", "FeedbackSolution", "GameSpec", "InequalitySolution", "InfeasibleGame",
    "IterationLog", "LQGame", "LineSearchFailure", "ModelError", "ScenarioError", "SingularStageMatrix",
    "SqpOptions", "SqpResult", "Stage", "TrajectoryIterate", "bundled_path", "check_sufficiency",
    "combine_stages", "load_scenario", "local_lq", "merit", "residual", "solve_equality_lq",
    "solve_gfqne", "solve_inequality_lq", "validate",
]
