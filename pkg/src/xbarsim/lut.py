"""Per-bitcell current lookup tables on regular voltage grids.

The array solver replaces every inner bitcell solve with a multilinear
interpolation over tables built once per (kind, stored state, wordline
state).  Branch currents of the cross-coupled cells depend on both bit
line voltages, so their tables are 2-D; the baseline cells have
electrically independent branches and get 1-D tables per branch.

Files use a small self-describing container: a JSON header with the grid
axes, table shapes and generating-parameter hash, followed by raw
little-endian float64 blocks in header order.  Writing the same tables
twice produces byte-identical files.
"""

from __future__ import annotations

import dataclasses
import json
import struct

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .bitcells import TerminalVoltages, solve_bitcell_batch
from .devices import BitcellKind, DeviceParams

_MAGIC = b"XLUT1\n"


@dataclasses.dataclass
class BranchTable:
    """One branch current sampled over a regular grid of terminal voltages."""

    axes: tuple            # axis names, e.g. ("v_bl", "v_blb")
    grids: tuple           # 1-D sample vectors per axis
    values: np.ndarray     # currents, shape = tuple(len(g) for g in grids)

    def __post_init__(self):
        self._interp = None

    def interpolator(self):
        if self._interp is None:
            self._interp = RegularGridInterpolator(
                self.grids, self.values, method="linear",
                bounds_error=False, fill_value=None)
        return self._interp

    def __call__(self, voltages: dict):
        """Interpolate at named voltages; queries clip to the grid hull."""
        cols = []
        scalar = True
        for name, grid in zip(self.axes, self.grids):
            v = np.asarray(voltages[name], dtype=float)
            scalar = scalar and v.ndim == 0
            cols.append(np.clip(v, grid[0], grid[-1]))
        pts = np.stack(np.broadcast_arrays(*cols), axis=-1)
        out = self.interpolator()(pts)
        return float(out[0]) if scalar else out


@dataclasses.dataclass
class BitcellLut:
    """Branch-current tables for one stored state of one bitcell kind."""

    kind: BitcellKind
    state: int             # left-MTJ state (P=0, AP=1)
    wl_on: bool
    i_left: BranchTable
    i_right: BranchTable | None
    params_hash: str

    def currents(self, v_bl, v_blb=None):
        il = self.i_left({"v_bl": v_bl, "v_blb": v_blb})
        if self.i_right is None:
            return il, 0.0 * il
        return il, self.i_right({"v_bl": v_bl, "v_blb": v_blb})


def _grid(lo: float, hi: float, spacing: float) -> np.ndarray:
    n = max(2, int(round((hi - lo) / spacing)) + 1)
    return np.linspace(lo, hi, n)


def build_lut(kind: BitcellKind, state: int, params: DeviceParams,
              v_max: float, wl_on: bool = True, spacing: float = 0.002,
              v_min: float = 0.0) -> BitcellLut:
    """Solve the bitcell over the voltage grid and tabulate branch currents.

    The grid covers [v_min, v_max] per active terminal with both endpoints
    on the grid, so a query at the nominal read voltage is exact.
    Wordline-off tables vary slowly (leakage only) and are sampled at
    5x coarser spacing.
    """
    if not wl_on:
        spacing = spacing * 5.0
    grid = _grid(v_min, v_max, spacing)
    wl = params.v_dd if wl_on else 0.0

    if kind in (BitcellKind.STRIDE_I, BitcellKind.STRIDE_II):
        vb, vbb = np.meshgrid(grid, grid, indexing="ij")
        tv = TerminalVoltages(v_bl=vb.ravel(), v_blb=vbb.ravel(),
                              v_wl=np.full(vb.size, wl))
        il, ir, _ = solve_bitcell_batch(kind, state, tv, params)
        shape = vb.shape
        left = BranchTable(("v_bl", "v_blb"), (grid, grid), il.reshape(shape))
        right = BranchTable(("v_bl", "v_blb"), (grid, grid), ir.reshape(shape))
    elif kind is BitcellKind.TWO_T_TWO_MTJ:
        tv = TerminalVoltages(v_bl=grid, v_blb=grid,
                              v_wl=np.full(grid.size, wl))
        il, ir, _ = solve_bitcell_batch(kind, state, tv, params)
        left = BranchTable(("v_bl",), (grid,), il)
        right = BranchTable(("v_blb",), (grid,), ir)
    else:
        tv = TerminalVoltages(v_bl=grid, v_wl=np.full(grid.size, wl))
        il, _, _ = solve_bitcell_batch(kind, state, tv, params)
        left = BranchTable(("v_bl",), (grid,), il)
        right = None

    return BitcellLut(kind=kind, state=int(state), wl_on=wl_on,
                      i_left=left, i_right=right,
                      params_hash=params.params_hash())


def build_lut_bank(kind: BitcellKind, params: DeviceParams, v_max: float,
                   spacing: float = 0.002) -> dict:
    """Tables for every (stored state, wordline state) the solver can query."""
    bank = {}
    for state in (0, 1):
        for wl_on in (True, False):
            bank[(state, wl_on)] = build_lut(kind, state, params, v_max,
                                             wl_on=wl_on, spacing=spacing)
    return bank


def save_lut(lut: BitcellLut, path) -> None:
    """Write one table set as magic + JSON header + raw float64 blocks."""
    blocks = []
    tables = []
    for name in ("i_left", "i_right"):
        bt = getattr(lut, name)
        if bt is None:
            continue
        entry = {"name": name, "axes": list(bt.axes),
                 "grids": [g.tolist() for g in bt.grids],
                 "shape": list(bt.values.shape)}
        tables.append(entry)
        blocks.append(np.ascontiguousarray(bt.values, dtype="<f8").tobytes())
    header = {
        "format": "bitcell-lut-v1",
        "kind": lut.kind.value,
        "state": lut.state,
        "wl_on": lut.wl_on,
        "params_hash": lut.params_hash,
        "tables": tables,
    }
    hdr = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(hdr)))
        fh.write(hdr)
        for b in blocks:
            fh.write(b)


def load_lut(path, expected_params: DeviceParams | None = None) -> BitcellLut:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path}: not a bitcell LUT file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        parts = {}
        for entry in header["tables"]:
            shape = tuple(entry["shape"])
            n = int(np.prod(shape))
            data = np.frombuffer(fh.read(n * 8), dtype="<f8").reshape(shape)
            grids = tuple(np.asarray(g, dtype=float) for g in entry["grids"])
            parts[entry["name"]] = BranchTable(tuple(entry["axes"]), grids,
                                               data.copy())
    if expected_params is not None:
        if header["params_hash"] != expected_params.params_hash():
            raise ValueError(f"{path}: table was built with different "
                             f"device parameters")
    return BitcellLut(kind=BitcellKind(header["kind"]), state=header["state"],
                      wl_on=header["wl_on"], i_left=parts["i_left"],
                      i_right=parts.get("i_right"),
                      params_hash=header["params_hash"])
