"""Locally differentially private bandit learning on extensive-form game trees."""

from .game_tree import (
    GameTree,
    Kind,
    PlayOutcome,
    TreeProfiles,
    compute_profiles,
    enumerate_environments,
    load_tree,
    parse_tree,
    play,
    reachable_sets,
    terminal_actions,
    validate_tree,
)
from .server import DPServer, Schedule, compute_schedule, init_server
from .user import UserReport, build_report, sample_laplace

__version__ = "0.1.0"
