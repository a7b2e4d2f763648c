"""Simulation, protocol model and trace analysis for on-device ML in realm VMs."""

__version__ = "0.1.0"
