"""Control stack for a two-motor cable-driven drawstring gripper."""

__version__ = "0.1.0"
