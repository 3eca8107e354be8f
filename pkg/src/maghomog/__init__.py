"""Homogenization toolkit for rigid magnetizable particles suspended in Stokes flow."""
__version__ = "0.1.0"
