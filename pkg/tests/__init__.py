"""
Test suite for the lattice solver.
Shared builders live in ``test_utils``; fixtures and markers in ``conftest.py``.
"""
