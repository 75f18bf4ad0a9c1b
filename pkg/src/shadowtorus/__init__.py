"""Lyapunov-pair shadowing machinery for perturbed hyperbolic torus automorphisms."""

__version__ = "0.1.0"
