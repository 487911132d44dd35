"""magrasp — force-aware aerial grasping with magnetic soft tactile sensing, simulated end to end."""

__version__ = "0.1.0"
__author__ = "magrasp contributors"
