"""Numerical laboratory for radial Heckman-Opdam processes of types A, B, C, D.

Submodules: ``rootsys`` (roots, rho, spherical functions, drift fields),
``sde`` (particle integrators), ``matmodel`` (matrix-model samplers),
``density`` (closed-form chamber densities), ``freeprob`` (free-probability
limits), ``stats`` (empirical moments and KS tests) and ``cli``.
"""

__version__ = "0.1.0"
