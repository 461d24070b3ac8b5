from .shapes import ObjectSpec, make_shape, shape_catalog, polygon_inertia
from .kinematics import HandModel, forward_kinematics, jacobians, ik_finger
from .env import EnvConfig, VecEnv, contact_forces, design_keyframe, SimFault

__all__ = [
    "ObjectSpec", "make_shape", "shape_catalog", "polygon_inertia",
    "HandModel", "forward_kinematics", "jacobians", "ik_finger",
    "EnvConfig", "VecEnv", "contact_forces", "design_keyframe", "SimFault",
]
