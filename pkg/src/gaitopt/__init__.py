"""Trajectory optimization for legged robots with a smooth contact model."""

from .rigidbody import RigidBodyModel, RigidBodySystem  # noqa: F401  (import order matters)
from .contact import ContactParams, GroundPlane  # noqa: F401
from .cost import CostSpec, WaypointTerm  # noqa: F401
from .dynamics import AffineController, IntegratorChoice, LinearSystem, Trajectory  # noqa: F401
from .slq import SolverSettings, solve  # noqa: F401

__all__ = [
    "AffineController", "ContactParams", "CostSpec", "GroundPlane", "IntegratorChoice", "LinearSystem",
    "RigidBodyModel", "RigidBodySystem", "SolverSettings", "Trajectory", "WaypointTerm", "solve",
]
