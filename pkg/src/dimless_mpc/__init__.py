"""Dimensionless MPC toolkit.

Buckingham pi-group computation, dynamic matching of similar systems,
nondimensionalized MDP/MPC formulations, and closed-loop controller tuning
that transfers across scales.
"""

__version__ = "0.1.0"
