"""Particle-scale laboratory for superprocesses with dependent spatial motion."""

__version__ = "0.1.0"
