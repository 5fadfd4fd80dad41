"""Leader-following adaptive output synchronization over switching networks."""

__version__ = "0.1.0"
