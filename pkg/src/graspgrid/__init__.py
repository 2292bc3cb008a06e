"""Simulated flat-jaw grasp planning.

A learned fully convolutional model scores a dense planar action grid
(position x rotation x stroke) on top-down heightmaps; a deterministic
controller adds two lateral tilt angles from local surface geometry, clipped
against an analytic collision model; a simulated oracle executes grasps and
feeds a self-supervised two-bin collection loop.
"""

__version__ = "0.1.0"

from .collision import (GripperGeometry, check_grasp_collision, free_interval,
                        free_intervals, short_gripper)
from .controller import ControllerConfig, LateralAngles, combine_gamma, lateral_control
from .grasp import AttemptOutcome, GraspAction, compute_z, execute_grasp
from .heightmap import Heightmap, load_heightmap, make_heightmap, project_pointcloud, save_heightmap
from .imaging import Window, augment, extract_window, rotation_stack
from .loop import EvalConfig, TrainLoopConfig, evaluate_grasp_rate, run_training
from .network import ModelSpec, RewardModel
from .policy import RewardMap, infer_grid, plan_grasp, select
from .scene import BinGeometry, RigidObject, Scene, render_heightmap, sample_scene

__all__ = [
    "AttemptOutcome", "BinGeometry", "ControllerConfig", "EvalConfig",
    "GraspAction", "GripperGeometry", "Heightmap", "LateralAngles",
    "ModelSpec", "RewardMap", "RewardModel", "RigidObject", "Scene",
    "TrainLoopConfig", "Window", "augment", "check_grasp_collision",
    "combine_gamma", "compute_z", "evaluate_grasp_rate", "execute_grasp",
    "extract_window", "free_interval", "free_intervals", "infer_grid",
    "lateral_control",
    "load_heightmap", "make_heightmap", "plan_grasp", "project_pointcloud",
    "render_heightmap", "rotation_stack", "run_training", "sample_scene",
    "save_heightmap", "select", "short_gripper",
]
