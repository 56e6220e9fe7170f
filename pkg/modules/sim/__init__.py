"""Position-based-dynamics cloth simulation and action primitives."""
