"""Satellite-to-ground CV-QKD downlink with a delay-line local-local
oscillator: turbulence, adaptive optics, coherent efficiency, excess-noise
budget and finite-size key rate."""

__version__ = "0.1.0"
