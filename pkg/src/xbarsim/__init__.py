"""Device-to-system simulator for STT-MRAM in-memory-computing crossbars."""

__version__ = "0.1.0"

from .devices import BitcellKind, DeviceParams, MtjState, fet_current, mtj_resistance
from .bitcells import (
    BitcellSolveError,
    BranchCurrents,
    TerminalVoltages,
    solve_bitcell_dc,
    sweep_vread,
)

__all__ = [
    "__version__",
    "BitcellKind",
    "DeviceParams",
    "MtjState",
    "fet_current",
    "mtj_resistance",
    "BitcellSolveError",
    "BranchCurrents",
    "TerminalVoltages",
    "solve_bitcell_dc",
    "sweep_vread",
]
