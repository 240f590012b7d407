"""Tree-structured rigid-body models and their dynamics."""

from .model import Foot, Joint, Link, ModelError, RigidBodyModel
from .system import RigidBodySystem

__all__ = ["Foot", "Joint", "Link", "ModelError", "RigidBodyModel", "RigidBodySystem"]
