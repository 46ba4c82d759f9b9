"""Robustness metrics: sense margin and read-disturb margin.

Analog column outputs that should digitize to the same integer spread into
a band under IR drop and variation.  The sense margin between neighboring
output states is half the gap between one state's lowest current and the
next lower state's highest; overlap makes it negative and the array
unreadable at that state.  The worst case over sampled input/weight
combinations reproduces the array-level robustness comparison between
bitcell kinds.

The read-disturb margin measures how far the read current through a cell
stays below the critical switching current of its MTJs.
"""

from __future__ import annotations

import numpy as np

from .devices import BitcellKind, MtjState
from .imc import ImcMode, ImcScheme, pwa_schedule, sense_currents, \
    unit_current
from .solver import CrossbarInstance, solve_iterative


class OutputStateHistogram:
    """Observed analog currents grouped by their ideal integer output."""

    def __init__(self):
        self._bins = {}

    def add(self, states, currents) -> None:
        states = np.atleast_1d(np.asarray(states, dtype=np.int64))
        currents = np.atleast_1d(np.asarray(currents, dtype=float))
        if states.shape != currents.shape:
            raise ValueError("states and currents must align")
        for s in np.unique(states):
            lo, hi = self._bins.get(int(s), (np.inf, -np.inf))
            vals = currents[states == s]
            self._bins[int(s)] = (min(lo, vals.min()), max(hi, vals.max()))

    def merge(self, other: "OutputStateHistogram") -> "OutputStateHistogram":
        for s, (lo, hi) in other._bins.items():
            mlo, mhi = self._bins.get(s, (np.inf, -np.inf))
            self._bins[s] = (min(mlo, lo), max(mhi, hi))
        return self

    def states(self):
        return sorted(self._bins)

    def bounds(self, state: int):
        """(min, max) observed current for one output state."""
        if state not in self._bins:
            raise KeyError(f"no observations for output state {state}")
        return self._bins[state]


def sense_margin(hist: OutputStateHistogram, state: int) -> float:
    """Half the current gap between ``state`` and the state below it."""
    lo_a, _ = hist.bounds(state)
    _, hi_b = hist.bounds(state - 1)
    return 0.5 * (lo_a - hi_b)


def rdm(i_cr: float, i_mtj: float) -> float:
    """Read-disturb margin: percent headroom below the switching current."""
    if i_cr <= 0.0:
        raise ValueError("critical current must be positive")
    return (i_cr - i_mtj) / i_cr * 100.0


def sample_input_bits(n_rows: int, n_inputs: int, seed: int) -> np.ndarray:
    """Seeded uniform wordline bit patterns, shape [n_inputs, n_rows]."""
    rng = np.random.default_rng(seed)
    return rng.integers(0, 2, size=(n_inputs, n_rows), dtype=np.int8)


def sample_weight_columns(mode: ImcMode, n_rows: int, n_cols: int,
                          seed: int) -> np.ndarray:
    """Seeded uniform scheme weights, shape [n_rows, n_cols]."""
    rng = np.random.default_rng(seed)
    if mode is ImcMode.XNOR:
        return rng.choice(np.array([-1, 1], dtype=np.int8),
                          size=(n_rows, n_cols))
    return rng.integers(0, 2, size=(n_rows, n_cols), dtype=np.int8)


def exhaustive_input_bits(n_rows: int) -> np.ndarray:
    """All 2**n_rows wordline bit patterns (row 0 is the LSB)."""
    codes = np.arange(2 ** n_rows, dtype=np.int64)
    return ((codes[:, None] >> np.arange(n_rows)) & 1).astype(np.int8)


def scheme_weights(inst: CrossbarInstance, mode: ImcMode) -> np.ndarray:
    """Recover scheme-domain weights from the stored cell states."""
    high = inst.states == int(MtjState.P)
    if mode is ImcMode.XNOR:
        return np.where(high, 1, -1).astype(np.int8)
    return high.astype(np.int8)


def ideal_partial_outputs(in_bits, weights, groups) -> np.ndarray:
    """Integer per-cycle outputs, shape [batch, cycles, cols].

    For both schemes the cycle output is the group-row sum of
    input-bit * weight: an AND count for {0,1} weights, a signed
    agreement difference for {-1,+1} weights.
    """
    bits = np.atleast_2d(np.asarray(in_bits))
    w = np.asarray(weights)
    out = np.empty((bits.shape[0], len(groups), w.shape[1]), dtype=np.int64)
    for c, rows in enumerate(groups):
        out[:, c, :] = bits[:, rows].astype(np.int64) @ w[rows].astype(np.int64)
    return out


def worst_case_sm(inst: CrossbarInstance, scheme: ImcScheme, pwa: int,
                  input_bits, tol: float = 1e-5, max_iter: int = 500,
                  chunk: int = 32) -> float:
    """Minimum sense margin over sampled inputs, all columns and states.

    Every input pattern runs through the PWA cycles on the non-ideal
    array; per-cycle sensed currents are binned per column by their ideal
    integer output, and the tightest neighboring-state margin over all
    columns is returned.  Input patterns are solved in chunks to bound
    memory.
    """
    cfg = inst.config
    scheme.check_kind(cfg.kind)
    bits = np.atleast_2d(np.asarray(input_bits))
    if bits.shape[1] != cfg.n_rows:
        raise ValueError("input bit length must equal the row count")
    if bits.size == 0:
        raise ValueError("need at least one input pattern")
    groups = pwa_schedule(cfg.n_rows, pwa)
    n_cycles = len(groups)

    weights = scheme_weights(inst, scheme.mode)
    dummy = scheme.dummy_column
    col_keep = np.arange(cfg.n_cols)
    if dummy is not None:
        col_keep = col_keep[col_keep != dummy]
    ideal = ideal_partial_outputs(bits, weights[:, col_keep], groups)

    hists = [OutputStateHistogram() for _ in col_keep]
    for start in range(0, bits.shape[0], chunk):
        take = bits[start:start + chunk]
        wl = np.zeros((take.shape[0], n_cycles, cfg.n_rows))
        for c, rows in enumerate(groups):
            wl[:, c, rows] = np.where(take[:, rows] == 1, cfg.v_dd, 0.0)
        sol = solve_iterative(inst, wl.reshape(-1, cfg.n_rows), tol=tol,
                              max_iter=max_iter)
        i_out = sense_currents(cfg.kind, scheme.mode, sol,
                               scheme.subtractor_gain)
        i_out = i_out.reshape(take.shape[0], n_cycles, cfg.n_cols)
        if dummy is not None:
            i_out = i_out[:, :, col_keep] \
                - scheme.subtractor_gain * i_out[:, :, [dummy]]
        for j in range(col_keep.size):
            hists[j].add(ideal[start:start + chunk, :, j].reshape(-1),
                         i_out[:, :, j].reshape(-1))

    sm_min = np.inf
    for h in hists:
        states = h.states()
        for a, b in zip(states[1:], states[:-1]):
            if a - b == 1:
                sm_min = min(sm_min, sense_margin(h, a))
    if not np.isfinite(sm_min):
        raise ValueError("sampled combinations never produced neighboring "
                         "output states")
    return float(sm_min)


def ideal_unit_margin(inst: CrossbarInstance) -> float:
    """Upper bound on any sense margin: half the single-cell current step."""
    return 0.5 * unit_current(inst.config.kind, inst.config.v_read,
                              inst.params)
