"""Curved-bridge-node multiscale finite elements for heterogeneous linear elasticity.

The main entry points are :func:`cbnfem.cbn.solve_cbn` for the coarse
analysis, :func:`cbnfem.fem.solve_fine` for the fine benchmark and the
``cbnfem`` command line (:mod:`cbnfem.cli`).
"""

__version__ = "0.1.0"
