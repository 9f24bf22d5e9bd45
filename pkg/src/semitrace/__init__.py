"""Numerical verification of semiclassical trace asymptotics.

The package discretizes magnetic Schrödinger operators on flat tori, computes
traces of smooth compactly supported functions of them, and compares the
results with the analytic expansion coefficients.
"""

__version__ = "0.1.0"
