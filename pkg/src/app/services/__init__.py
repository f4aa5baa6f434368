"""Numerical services: kinematics, data, networks, diffusion, training, metrics."""
