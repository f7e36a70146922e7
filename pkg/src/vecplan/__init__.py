"""Vector floorplan generation with two-level code trees."""

__version__ = "0.1.0"
