"""Evacuation EV-charging simulator and mobile charging truck dispatch."""

__version__ = "0.1.0"
