"""Brownian SYK chaos diagnostics via conserved bosonic sectors."""

from .config import Config, DEFAULT_CONFIG
from .fock import (
    DualWeightSpec,
    FockVector,
    SectorBasis,
    SectorKey,
    SectorOperator,
    build_bilinear,
    build_polynomial_state,
    change_frame,
    dual_pair,
    enumerate_full_space,
    enumerate_sector,
    initial_dual,
)
from .frames import ModeFrame, get_frame
from .hamiltonian import (
    EffectiveHamiltonian,
    GeneratorTable,
    build_hamiltonian,
    generator_table,
    verify_polynomial_identity,
)

__version__ = "0.1.0"
