"""Deadbeat robust MPC for linear and linear parameter-varying systems."""

__version__ = "0.1.0"
