"""Numerical laboratory for radial anharmonic Schrödinger operators -Δ + |x|^s.

Submodules:

- ``trapspec``: finite-difference assembly and eigensolve of the radial operator
- ``besselheat``: modified Bessel I_nu, inverse-square heat kernel, trace ratios
- ``specdiag``: Weyl counting, Schatten traces, Green diagonal
- ``gaussfield``: Gaussian field sampling in the eigenbasis, Wick mass
- ``gibbsmc``: Monte Carlo partition function and regime classification
- ``variational``: OU approximate Brownian motion, profiles, trial drifts
- ``semiclassical``: phase-space volumes and Husimi identities
- ``fractional``: fractional Schrödinger operator diagnostics
- ``harness``: command line interface and run records
"""

__version__ = "0.1.0"
