"""Spiking-reservoir policy-gradient agent for a simulated air-hockey striker."""

__version__ = "0.1.0"
