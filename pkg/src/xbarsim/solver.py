"""Non-ideal crossbar arrays and the fixed-point read solver.

An array is N rows by M columns of one bitcell kind.  Each column's bit
line (and bit line bar, for two-branch cells) is fed from a driver with
source resistance ``r_driver`` and runs past the cells with a wire
resistance ``r_wire`` per cell pitch; source lines are held at virtual
ground by the sensing op-amps.  The read solve alternates between fetching
per-cell branch currents from the bitcell lookup tables at the current
voltage estimates and recomputing the distributed IR drop along each line
from those currents, with damped updates, until the largest per-cell
voltage update falls below tolerance.

Wordlines are ideal voltage sources, so columns are electrically
independent and an extra leading batch axis of wordline patterns can be
solved in one call.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .devices import BitcellKind, DeviceParams, MtjState
from .lut import BitcellLut, build_lut_bank

DEFAULT_R_DRIVER = 250.0  # ohm
DEFAULT_R_WIRE = {
    BitcellKind.STRIDE_I: 2.4,       # taller cell, longer per-cell wire
    BitcellKind.STRIDE_II: 2.1,
    BitcellKind.TWO_T_TWO_MTJ: 2.1,
    BitcellKind.ONE_T_ONE_MTJ: 2.1,
}


class ArraySolveError(RuntimeError):
    """Read solve failed to converge; carries the tail of the update trace."""

    def __init__(self, message: str, trace=()):
        super().__init__(message)
        self.trace = tuple(trace)


@dataclasses.dataclass(frozen=True)
class CrossbarConfig:
    """Array geometry, drive and parasitics for one crossbar design."""

    kind: BitcellKind
    n_rows: int
    n_cols: int
    v_read: float
    r_driver: float = DEFAULT_R_DRIVER
    r_wire: float | None = None      # per-cell segment, ohm; None = kind default
    r_sink: float = 0.0              # lumped sense-node resistance, ohm
    v_dd: float = 1.2

    def __post_init__(self):
        if self.r_wire is None:
            object.__setattr__(self, "r_wire", DEFAULT_R_WIRE[self.kind])
        if self.n_rows < 1 or self.n_cols < 1:
            raise ValueError("array needs at least one row and one column")
        for name in ("r_driver", "r_wire", "r_sink"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 < self.v_read <= self.v_dd:
            raise ValueError("v_read must lie in (0, v_dd]")


@dataclasses.dataclass(frozen=True)
class CrossbarInstance:
    """A config plus stored cell states and the lookup tables to read them."""

    config: CrossbarConfig
    params: DeviceParams
    states: np.ndarray               # [N, M] left-MTJ state per cell
    luts: dict                       # {(state, wl_on): BitcellLut}
    gain_left: np.ndarray | None = None    # [N, M] branch-current factors
    gain_right: np.ndarray | None = None

    def with_gains(self, gain_left, gain_right) -> "CrossbarInstance":
        """Return a copy whose fetched branch currents are scaled per cell."""
        for g in (gain_left, gain_right):
            if g is not None and np.asarray(g).shape != self.states.shape:
                raise ValueError("gain shape must match the cell grid")
        return dataclasses.replace(
            self,
            gain_left=None if gain_left is None else np.asarray(gain_left, float),
            gain_right=None if gain_right is None else np.asarray(gain_right, float),
        )


def weight_states(kind: BitcellKind, weights: np.ndarray) -> np.ndarray:
    """Map stored weights onto left-MTJ states.

    Two-branch cells store a signed binary weight: +1 as (P, AP) and -1 as
    (AP, P).  The single-branch cell stores an unsigned bit: 1 as P (high
    read current), 0 as AP.
    """
    w = np.asarray(weights)
    if kind is BitcellKind.ONE_T_ONE_MTJ:
        valid = {0, 1}
        states = np.where(w == 1, int(MtjState.P), int(MtjState.AP))
    else:
        valid = {-1, 1}
        states = np.where(w == 1, int(MtjState.P), int(MtjState.AP))
    bad = set(np.unique(w).tolist()) - valid
    if bad:
        raise ValueError(f"invalid weight values {sorted(bad)} for {kind.value}")
    return states.astype(np.int8)


def build_array(config: CrossbarConfig, weights, params: DeviceParams = None,
                luts: dict = None, spacing: float = 0.002) -> CrossbarInstance:
    """Assemble an instance, building its lookup-table bank if not supplied.

    ``luts`` maps (left-MTJ state, wordline-on flag) to tables whose grids
    must reach the configured read voltage and whose generating-parameter
    hash must match ``params``.
    """
    params = params or DeviceParams()
    w = np.asarray(weights)
    if w.shape != (config.n_rows, config.n_cols):
        raise ValueError(
            f"weights shape {w.shape} != ({config.n_rows}, {config.n_cols})")
    states = weight_states(config.kind, w)
    if luts is None:
        luts = build_lut_bank(config.kind, params, v_max=config.v_read,
                              spacing=spacing)
    for state in np.unique(states):
        for wl_on in (True, False):
            key = (int(state), wl_on)
            if key not in luts:
                raise ValueError(f"missing LUT for state={state} wl_on={wl_on}")
            lut = luts[key]
            if lut.params_hash != params.params_hash():
                raise ValueError("LUT parameter hash does not match params")
            if lut.i_left.grids[0][-1] < config.v_read - 1e-12:
                raise ValueError("LUT grid does not reach v_read")
    return CrossbarInstance(config=config, params=params, states=states,
                            luts=luts)


@dataclasses.dataclass(frozen=True)
class ArraySolution:
    """Converged per-cell operating point and per-column line currents.

    Current arrays have the same leading batch shape as the wordline
    pattern passed to the solver.  Line currents are amps flowing out of
    the drivers (i_bl, i_blb) and into the sense nodes (i_sl, i_slb);
    kinds without a given line report zeros for it.
    """

    v_bl: np.ndarray                 # [..., N, M] effective per-cell volts
    v_blb: np.ndarray
    i_left: np.ndarray               # [..., N, M] branch amps
    i_right: np.ndarray
    i_bl: np.ndarray                 # [..., M] line amps
    i_blb: np.ndarray
    i_sl: np.ndarray
    i_slb: np.ndarray
    iterations: int
    max_update: float
    converged: bool

    def column_rows(self):
        """Yield (I_BL, I_BLB, I_SL, I_SLB) per column; batch must be absent."""
        if self.i_bl.ndim != 1:
            raise ValueError("column_rows needs an unbatched solution")
        for m in range(self.i_bl.shape[0]):
            yield (self.i_bl[m], self.i_blb[m], self.i_sl[m], self.i_slb[m])


def _line_voltages(v_drive, loads, r_driver, r_wire):
    """Node voltages along one driven line with per-cell loads.

    The first cell sits at the driver's output; each later cell adds one
    wire segment.  ``loads`` is [..., N, M]; returns the same shape.
    """
    suffix = np.flip(np.cumsum(np.flip(loads, axis=-2), axis=-2), axis=-2)
    total = suffix[..., :1, :]
    drop = np.cumsum(suffix, axis=-2) - total
    return v_drive - r_driver * total - r_wire * drop


def _fetch_currents(inst: CrossbarInstance, v_bl, v_blb, wl_on):
    """Branch currents for every cell from the (state, wordline) tables."""
    i_l = np.zeros_like(v_bl)
    i_r = np.zeros_like(v_bl)
    single = inst.config.kind is BitcellKind.ONE_T_ONE_MTJ
    for state in (int(MtjState.P), int(MtjState.AP)):
        smask = inst.states == state
        if not smask.any():
            continue
        for on in (True, False):
            mask = smask[None, :, :] & (wl_on == on)[:, :, None]
            idx = np.nonzero(mask)
            if idx[0].size == 0:
                continue
            lut: BitcellLut = inst.luts[(state, on)]
            if single:
                il, ir = lut.currents(v_bl[idx])
            else:
                il, ir = lut.currents(v_bl[idx], v_blb[idx])
            i_l[idx] = il
            i_r[idx] = ir
    if inst.gain_left is not None:
        i_l = i_l * inst.gain_left[None, :, :]
    if inst.gain_right is not None:
        i_r = i_r * inst.gain_right[None, :, :]
    return i_l, i_r


def solve_iterative(inst: CrossbarInstance, wl, tol: float = 1e-5,
                    max_iter: int = 500, damping: float = 0.5) -> ArraySolution:
    """Self-consistent array read under IR drop.

    ``wl`` holds per-row wordline voltages (0 or v_dd), shape [N] or
    [B, N] for a batch of activation patterns.  Updates are damped by 0.5
    and the damping halves when the update norm keeps growing, which tames
    the occasional gain-above-one coupling at extreme parasitics.
    Convergence is the infinity norm of the applied per-cell voltage
    update, default 10 uV.
    """
    cfg = inst.config
    if cfg.r_sink > 0.0:
        raise ValueError("finite sink resistance is only honored by the "
                         "dense reference solver")
    wl_arr = np.asarray(wl, dtype=float)
    batched = wl_arr.ndim == 2
    wl2 = np.atleast_2d(wl_arr)
    if wl2.shape[1] != cfg.n_rows:
        raise ValueError(f"wordline pattern length {wl2.shape[1]} != rows "
                         f"{cfg.n_rows}")
    wl_on = wl2 > 0.5 * cfg.v_dd
    b, n, m = wl2.shape[0], cfg.n_rows, cfg.n_cols

    two_branch = cfg.kind is not BitcellKind.ONE_T_ONE_MTJ
    v_bl = np.full((b, n, m), cfg.v_read)
    v_blb = np.full((b, n, m), cfg.v_read if two_branch else 0.0)
    trace = []
    damp = damping
    delta = np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        i_l, i_r = _fetch_currents(inst, v_bl, v_blb, wl_on)
        bl_t = _line_voltages(cfg.v_read, i_l, cfg.r_driver, cfg.r_wire)
        dv_bl = damp * (bl_t - v_bl)
        v_bl = v_bl + dv_bl
        new_delta = np.abs(dv_bl).max()
        if two_branch:
            blb_t = _line_voltages(cfg.v_read, i_r, cfg.r_driver, cfg.r_wire)
            dv_blb = damp * (blb_t - v_blb)
            v_blb = v_blb + dv_blb
            new_delta = max(new_delta, np.abs(dv_blb).max())
        trace.append(new_delta)
        if new_delta < tol:
            converged = True
            delta = new_delta
            break
        if it % 20 == 0 and sum(trace[-10:]) > 0.95 * sum(trace[-20:-10]):
            damp = max(damp * 0.5, damping / 64.0)
        delta = new_delta
    if not converged:
        raise ArraySolveError(
            f"no convergence after {it} iterations, last update "
            f"{delta:.3e} V", trace[-8:])

    i_l, i_r = _fetch_currents(inst, v_bl, v_blb, wl_on)
    i_bl = i_l.sum(axis=-2)
    i_blb = i_r.sum(axis=-2)
    zeros = np.zeros_like(i_bl)
    if cfg.kind is BitcellKind.STRIDE_II:
        i_sl, i_slb = i_bl.copy(), i_blb.copy()
    else:
        i_sl, i_slb = i_bl + i_blb, zeros
    if not batched:
        (v_bl, v_blb, i_l, i_r, i_bl, i_blb, i_sl, i_slb) = (
            a[0] for a in (v_bl, v_blb, i_l, i_r, i_bl, i_blb, i_sl, i_slb))
    return ArraySolution(v_bl=v_bl, v_blb=v_blb, i_left=i_l, i_right=i_r,
                         i_bl=i_bl, i_blb=i_blb, i_sl=i_sl, i_slb=i_slb,
                         iterations=it, max_update=float(delta),
                         converged=converged)


def worst_case_vread(config: CrossbarConfig, pwa: int, i_h: float) -> float:
    """Lowest effective read voltage across the array, closed form.

    Assumes the ``pwa`` asserted cells sit at the far end of the column,
    each drawing ``i_h``: the shared driver drop plus the wire segments
    common to all of them, plus the staircase of segments between them.
    """
    if not 0 <= pwa <= config.n_rows:
        raise ValueError("pwa must lie in [0, n_rows]")
    shared = config.r_driver + (config.n_rows - pwa - 1) * config.r_wire
    stair = config.r_wire * pwa * (pwa + 1) / 2.0
    return config.v_read - i_h * pwa * shared - i_h * stair
