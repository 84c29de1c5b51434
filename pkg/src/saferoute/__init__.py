"""Near-term traffic-conflict prediction and road-segment risk mapping."""

__version__ = "0.1.0"
