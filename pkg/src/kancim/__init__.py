"""KAN spline quantization, analog compute-in-memory simulation and grid tuning."""

__version__ = "0.1.0"
