"""
spde-lab - Spectral-Galerkin laboratory for the stochastic 3D Navier-Stokes equations
"""

__version__ = "1.0.0"
__author__ = "spde-lab developers"
__description__ = "Galerkin SDE, Kolmogorov Monte Carlo and a priori estimate harnesses on the 3-torus"
