"""Planar in-hand reorientation lab.

Stop-signal teacher/student policies on a deterministic penalty-contact
2D hand simulation, plus the geometric peel-path planner and the
evaluation harness.
"""

__version__ = "0.1.0"
