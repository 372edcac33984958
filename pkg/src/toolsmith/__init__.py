"""Joint evolutionary search over robot tool geometry and waypoint action plans."""

__version__ = "0.1.0"
