"""Parallel-in-time optimal control of parabolic problems with PFASST."""

__version__ = "0.1.0"
