"""Optimal power flow toolkit: power flow, single- and multi-stage OPF,
distributed OPF (ALADIN, ADMM) and chance-constrained DC OPF."""

__version__ = "0.1.0"
