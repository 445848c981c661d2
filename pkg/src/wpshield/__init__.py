"""Safe exploration with weakest-precondition shields over learned models."""

from .envs import ENV_NAMES, EnvSpec, make_env, rollout
from .geom import Polytope, SafeRegion, check_overlap_property, contains, overlap, region_contains
from .model import DynamicsModel, TransitionDataset, fit
from .project import ActionBox, ProjectionResult, backup_action, project_action
from .shield import ExactModel, Shield, ShieldConfig, wp_shield
from .symdyn import (
    DisjunctiveConstraint,
    LinearDynamics,
    SymbolicConstraint,
    format_constraint,
    init_horizon_constraint,
    wp_horizon,
    wp_step,
)
from .train import Metrics, Policy, TrainConfig, baseline_train, optimize_policy, spice_train

__version__ = "0.1.0"

__all__ = [
    "ENV_NAMES", "EnvSpec", "make_env", "rollout",
    "Polytope", "SafeRegion", "check_overlap_property", "contains", "overlap", "region_contains",
    "DynamicsModel", "TransitionDataset", "fit",
    "ActionBox", "ProjectionResult", "backup_action", "project_action",
    "ExactModel", "Shield", "ShieldConfig", "wp_shield",
    "DisjunctiveConstraint", "LinearDynamics", "SymbolicConstraint", "format_constraint",
    "init_horizon_constraint", "wp_horizon", "wp_step",
    "Metrics", "Policy", "TrainConfig", "baseline_train", "optimize_policy", "spice_train",
]
