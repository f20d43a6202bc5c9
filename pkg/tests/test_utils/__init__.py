"""Test utilities for the lattice solver."""

from .lattices import CLAMPED_LEFT, affine_field, make_bcs, make_cell, make_lattice, run_config
from .logs import preserved_logging

__all__ = ["CLAMPED_LEFT", "affine_field", "make_bcs", "make_cell", "make_lattice", "preserved_logging", "run_config"]
