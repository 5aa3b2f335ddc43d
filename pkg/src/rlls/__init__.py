"""Tabular RL under local simulator access: oracles, SimGolf, RVFS and its exogenous variant."""
from .mdp import (LocalSimSession, PolicyTable, ProtocolError, SampleLedger, TabularMDP,
                  Trajectory, UnobservedStateError, make_rng, random_mdp, twochain)

__version__ = "0.1.0"

__all__ = ["LocalSimSession", "PolicyTable", "ProtocolError", "SampleLedger", "TabularMDP",
           "Trajectory", "UnobservedStateError", "make_rng", "random_mdp", "twochain"]
