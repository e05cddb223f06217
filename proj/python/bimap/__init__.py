"""Invertible workspace mappings for teleoperation.

Positions are length-3 arrays, orientations unit quaternions [w, x, y, z].
"""

from ._bimap import (
    Correspondence,
    IoError,
    Mapping,
    NumericalError,
    ParseError,
    TrainingError,
    ValidationError,
    fit_iter,
    load_mapping,
    quat_distance,
    quat_exp,
    quat_log,
    simulate,
    train_flow,
    warp_grid,
)

__all__ = [
    "Correspondence",
    "IoError",
    "Mapping",
    "NumericalError",
    "ParseError",
    "TrainingError",
    "ValidationError",
    "fit_iter",
    "load_mapping",
    "quat_distance",
    "quat_exp",
    "quat_log",
    "simulate",
    "train_flow",
    "warp_grid",
]
