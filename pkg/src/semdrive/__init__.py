"""Deep Q-learning for highway maneuver decisions on a relational-grid state."""

__version__ = "0.1.0"
