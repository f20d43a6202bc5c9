"""Constitutive law, quadrature and cell assembly."""
