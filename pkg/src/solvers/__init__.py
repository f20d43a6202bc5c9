"""Linear solvers, reduced basis and the Newton driver."""
