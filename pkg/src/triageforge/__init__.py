"""Simulated patient / AI triage encounter platform."""

__version__ = "0.1.0"
