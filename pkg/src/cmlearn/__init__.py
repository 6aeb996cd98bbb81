"""Constrained ("sufficiently accurate") model learning for a ball-paddle system.

Modules: ``mlp`` (network, reverse mode, ADAM), ``constrained`` (primal-dual
training), ``sim`` (ball-paddle simulator), ``controller`` (primal-dual action
solver), ``harness`` (experiments), ``config`` / ``cli`` (reproducible runs).
"""
__version__ = "0.1.0"
