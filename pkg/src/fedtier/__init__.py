"""Deterministic multitier federated-learning simulator.

Simulates split training between ultra-constrained devices (UCDs) and
access points (APs): UCDs train a classifier on top of a frozen encoder
and forward a loss-selected slice of their data to the AP, which trains
the full model; both tiers aggregate by federated averaging. Every
compute, communication, and energy cost is metered per device.
"""
from ._backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
