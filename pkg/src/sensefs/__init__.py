"""File-system abstraction for simulated sense-and-respond networks."""

__version__ = "0.1.0"
