"""Gaussian-geometry channel estimation.

Learns a delay-beam power prior for a railway corridor from a deformable
3-D Gaussian scene representation, then uses it for sparse-pilot LMMSE
channel estimation and short-horizon prediction.
"""

__version__ = "0.1.0"
