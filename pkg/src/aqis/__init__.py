"""Adiabatic quantum information scrambling in critical collective models.

Exact spectra of the Lipkin-Meshkov-Glick and quantum Rabi models, symmetry
breaking initial states, exact and adiabatic cyclic driving, and scrambling
diagnostics (post-cycle order parameter, Loschmidt echo, OTOC).
"""

__version__ = "0.1.0"

from .models import ModelSpec, hamiltonian, lmg, observable_matrix, qrm  # noqa: E402
from .spectrum import doublet_pairing, spectral_decomposition  # noqa: E402
from .states import expand_in_eigenbasis, microcanonical_sb, qrm_coherent, thermal_sb  # noqa: E402
from .propagation import (  # noqa: E402
    EvolutionControls,
    QuadratureSettings,
    RampProtocol,
    adiabatic_cycle,
    evolve_exact,
    phase_table,
)

__all__ = [
    "ModelSpec",
    "lmg",
    "qrm",
    "hamiltonian",
    "observable_matrix",
    "spectral_decomposition",
    "doublet_pairing",
    "microcanonical_sb",
    "thermal_sb",
    "qrm_coherent",
    "expand_in_eigenbasis",
    "RampProtocol",
    "EvolutionControls",
    "QuadratureSettings",
    "evolve_exact",
    "adiabatic_cycle",
    "phase_table",
]
