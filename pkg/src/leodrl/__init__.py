"""LEO downlink simulation and two-time-scale collaborative DRL for beam/RB management."""

__version__ = "0.1.0"
