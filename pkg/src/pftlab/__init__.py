"""Lattice toolkit for a parametrized free scalar field on a periodic 1+1 slice.

Subpackages and modules:

- ``grid``: periodic lattice, stencils and analytic spacetime vector fields
- ``expr``: the expression language used for every user-supplied function
- ``geometry``: embeddings, lapse/shift split, pushforward and local temperature
- ``multisym``: pointwise covariant Hamiltonian quantities and their slice pullback
- ``canonical``: constraints, co-momentum functionals and the bracket engine
- ``dynamics``: RK4 integration of the flow generated by H(xi)
- ``gauge``: time-dependent gauge fixing, Dirac bracket and reduced dynamics
- ``ensemble``: covariant Gibbs states, MCMC sampling and thermodynamics
- ``cli``: the ``pftlab`` command line
"""

__version__ = "0.1.0"
