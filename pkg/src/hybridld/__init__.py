"""Large-deviation toolkit for one-dimensional stochastic hybrid systems.

Submodules:
    expr      - arithmetic expression language for model files
    model     - hybrid model, generator, invariant measure, averaged field
    perron    - Perron eigenvalue of the tilted generator (the Hamiltonian)
    analytic  - closed-form oracles for the solvable model families
    hamilton  - Hamiltonian flow, zero-energy branch, quasipotential
    ldp       - occupation-measure cost, Lagrangian, path action
    sim       - exact PDMP simulation, piecewise SDE, first-passage stats
    config    - JSON model configs (bundled: binary, sodium_channel)
    cli       - command-line front end
"""

from .config import load_builtin, load_model
from .model import HybridModel
from .perron import SpectralSolution, hamiltonian, hamiltonian_sde, perron_weighted

__all__ = [
    "HybridModel",
    "SpectralSolution",
    "hamiltonian",
    "hamiltonian_sde",
    "perron_weighted",
    "load_model",
    "load_builtin",
]

__version__ = "0.1.0"
