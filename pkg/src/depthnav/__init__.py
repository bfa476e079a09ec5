"""Depth-image waypoint planning for fast drone flight, trained by inverse soft-Q imitation."""

__version__ = "0.1.0"
