"""Spline geometry and lattice topology."""
