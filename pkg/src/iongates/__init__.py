"""Programmable multi-qubit XX entangling gate design for trapped-ion crystals."""

from . import analysis, coupling, crystal, lsf, simkit, spectrum, targets, zeropool

__all__ = [
    "analysis",
    "coupling",
    "crystal",
    "lsf",
    "simkit",
    "spectrum",
    "targets",
    "zeropool",
]
