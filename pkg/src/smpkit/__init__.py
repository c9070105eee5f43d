"""smpkit: numerical potential theory for Schrodinger perturbations of the
Laplacian and the fractional Laplacian by singular measures.

Modules: model (domains, operators, measures), kernels (Green functions,
exit kernels, test bumps), potentials (quadrature potentials, local Green
integrals, Neumann resolvents), paths (killed-path Monte Carlo), feynman_kac
(path-functional estimators), maxprinciple (point classification, fine
limits, dichotomy checks), capacity (Riesz capacity programs), harness
(experiment runner and CLI backend).
"""

__all__ = ["model", "kernels", "potentials", "paths", "feynman_kac",
           "maxprinciple", "capacity", "harness"]

__version__ = "0.1.0"
