"""Two-leader/two-follower LQ Stackelberg game with overlapping information."""

__version__ = "0.1.0"
