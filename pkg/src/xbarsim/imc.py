"""XNOR and AND in-memory-computing passes over crossbar arrays.

Signed binary (+1/-1) inputs and weights run under the XNOR scheme: inputs
are remapped to {0, 1} wordline levels, weights are stored differentially,
and the sensed current difference counts sign agreements.  The digital
output is recovered from the identity In.W = 2*(In'.W) - sum(W), whose
weight-sum term is precomputed from the stored column.

Unsigned binary inputs and weights run under the AND scheme: a single line
is sensed and each asserted row with a stored 1 adds one unit current.
Multi-bit precision composes AND passes: 4-bit signed weights are stored
as two's-complement bit planes, 4-bit inputs are streamed as binary
wordline cycles, and a shift-add recombines the partial outputs.

Partial wordline activation (PWA) splits the rows into groups asserted on
separate cycles, bounding the accumulated column current; group outputs
add digitally.
"""

from __future__ import annotations

import dataclasses
import enum

import numpy as np

from .bitcells import on_off_currents
from .devices import BitcellKind, DeviceParams, MtjState
from .solver import CrossbarInstance, solve_iterative


class ImcMode(enum.Enum):
    XNOR = "xnor"
    AND = "and"


_COMPATIBLE = {
    ImcMode.XNOR: (BitcellKind.STRIDE_I, BitcellKind.STRIDE_II,
                   BitcellKind.TWO_T_TWO_MTJ),
    ImcMode.AND: (BitcellKind.STRIDE_I, BitcellKind.STRIDE_II,
                  BitcellKind.ONE_T_ONE_MTJ),
}


@dataclasses.dataclass(frozen=True)
class ImcScheme:
    """Sensing and post-processing recipe for one encoding mode.

    ``subtractor_gain`` scales the subtracted line of the analog
    differencer (1.0 = ideal).  ``dummy_column`` names the all-zero-weight
    reference column whose current cancels the low-state background of
    single-branch arrays; required for the 1T-1MTJ kind.
    """

    mode: ImcMode
    subtractor_gain: float = 1.0
    dummy_column: int | None = None

    def check_kind(self, kind: BitcellKind) -> None:
        if kind not in _COMPATIBLE[self.mode]:
            raise ValueError(
                f"{self.mode.value} scheme is not supported on {kind.value}")
        if kind is BitcellKind.ONE_T_ONE_MTJ and self.dummy_column is None:
            raise ValueError("single-branch arrays need a dummy column "
                             "for background subtraction")


def encode_inputs_xnor(inputs) -> np.ndarray:
    """Map signed binary inputs {-1,+1} onto wordline bits {0,1}."""
    x = np.asarray(inputs)
    if not np.isin(x, (-1, 1)).all():
        raise ValueError("inputs must be -1 or +1")
    return ((x + 1) // 2).astype(np.int8)


def storage_weights(mode: ImcMode, kind: BitcellKind, weights) -> np.ndarray:
    """Translate scheme weights into the array's stored-weight domain.

    XNOR keeps its signed weights.  AND weights {0,1} store 1 as the
    high-current pattern: (P, AP) on two-branch cells, P on the
    single-branch cell.
    """
    w = np.asarray(weights)
    if mode is ImcMode.XNOR:
        if not np.isin(w, (-1, 1)).all():
            raise ValueError("weights must be -1 or +1 for the xnor scheme")
        return w.astype(np.int8)
    if not np.isin(w, (0, 1)).all():
        raise ValueError("weights must be 0 or 1 for the and scheme")
    if kind is BitcellKind.ONE_T_ONE_MTJ:
        return w.astype(np.int8)
    return np.where(w == 1, 1, -1).astype(np.int8)


def map_weights(mode: ImcMode, kind: BitcellKind, weights) -> np.ndarray:
    """Left-MTJ state per cell for scheme weights (right stores complement)."""
    if kind not in _COMPATIBLE[mode]:
        raise ValueError(
            f"{mode.value} scheme is not supported on {kind.value}")
    stored = storage_weights(mode, kind, weights)
    high = stored == 1
    return np.where(high, int(MtjState.P), int(MtjState.AP)).astype(np.int8)


def pwa_schedule(n_rows: int, pwa: int):
    """Partition rows into consecutive groups of at most ``pwa``."""
    if not 1 <= pwa <= n_rows:
        raise ValueError("pwa must lie in [1, n_rows]")
    return tuple(np.arange(start, min(start + pwa, n_rows))
                 for start in range(0, n_rows, pwa))


@dataclasses.dataclass(frozen=True)
class ImcOperation:
    """One column pass: encoded inputs, PWA schedule and weight sums."""

    in_prime: np.ndarray          # [N] wordline bits
    pwa: int
    groups: tuple                 # row-index arrays partitioning the rows
    sum_w: np.ndarray | None = None   # [cols] signed weight sums (xnor)

    @classmethod
    def create(cls, in_prime, pwa: int, sum_w=None) -> "ImcOperation":
        bits = np.asarray(in_prime)
        if not np.isin(bits, (0, 1)).all():
            raise ValueError("encoded inputs must be 0 or 1")
        bits = bits.astype(np.int8)
        return cls(in_prime=bits, pwa=int(pwa),
                   groups=pwa_schedule(bits.size, int(pwa)),
                   sum_w=None if sum_w is None else np.asarray(sum_w))


@dataclasses.dataclass(frozen=True)
class ImcResult:
    """Per-cycle sensed currents with their digitized and combined outputs."""

    i_out: np.ndarray             # [cycles, cols] amps
    o_prime: np.ndarray           # [cycles, cols] counts
    o: np.ndarray                 # [cols] combined integer outputs
    i_unit: float                 # amps per count used to digitize


def unit_current(kind: BitcellKind, v_read: float,
                 params: DeviceParams) -> float:
    """Sensed current step between stored 1 and stored 0 for one cell."""
    i_h, i_l = on_off_currents(kind, v_read, params)
    return float(i_h - i_l)


def postprocess_xnor(o_prime, sum_w):
    """Signed dot product from the asserted-row count: 2*O' - sum(W)."""
    return 2 * np.asarray(o_prime) - np.asarray(sum_w)


def dummy_column_correct(i_col, i_dummy):
    """Remove the accumulated low-state background measured on the dummy."""
    return np.asarray(i_col) - np.asarray(i_dummy)


def sense_currents(kind: BitcellKind, mode: ImcMode, solution,
                   subtractor_gain: float = 1.0):
    """Column output currents per the kind's sensing recipe.

    Cross-coupled cells steer the high current onto the complement line,
    so their XNOR difference is complement minus true; the 2T-2MTJ cell
    conducts the high current on the true line.  AND passes sense the
    single line that accumulates stored-1 currents.  The subtracted line
    is scaled by the subtractor gain.
    """
    g = subtractor_gain
    if mode is ImcMode.XNOR:
        if kind is BitcellKind.STRIDE_I:
            return solution.i_blb - g * solution.i_bl
        if kind is BitcellKind.STRIDE_II:
            return solution.i_slb - g * solution.i_sl
        if kind is BitcellKind.TWO_T_TWO_MTJ:
            return solution.i_bl - g * solution.i_blb
    else:
        if kind is BitcellKind.STRIDE_I:
            return solution.i_blb.copy()
        if kind is BitcellKind.STRIDE_II:
            return solution.i_slb.copy()
        if kind is BitcellKind.ONE_T_ONE_MTJ:
            return solution.i_sl.copy()
    raise ValueError(f"{mode.value} sensing undefined for {kind.value}")


def run_imc_column_pass(inst: CrossbarInstance, op: ImcOperation,
                        scheme: ImcScheme, i_unit: float | None = None,
                        tol: float = 1e-5, max_iter: int = 500) -> ImcResult:
    """Execute the PWA cycles of one input vector over all columns.

    Each cycle asserts the wordlines of its group's rows that carry an
    encoded 1, solves the array, senses per scheme, digitizes against
    ``i_unit`` (default: the calibrated single-cell current step) and
    combines cycle outputs: XNOR applies the weight-sum identity, AND
    accumulates counts.  The dummy column, when configured, is subtracted
    from every other column and dropped from the outputs.
    """
    cfg = inst.config
    kind = cfg.kind
    scheme.check_kind(kind)
    if op.in_prime.size != cfg.n_rows:
        raise ValueError(f"input length {op.in_prime.size} != rows "
                         f"{cfg.n_rows}")
    dummy = scheme.dummy_column
    if dummy is not None:
        if not 0 <= dummy < cfg.n_cols:
            raise ValueError("dummy column index out of range")
        if (inst.states[:, dummy] != int(MtjState.AP)).any():
            raise ValueError("dummy column must store all zero weights")
    if i_unit is None:
        i_unit = unit_current(kind, cfg.v_read, inst.params)

    wl = np.zeros((len(op.groups), cfg.n_rows))
    for c, rows in enumerate(op.groups):
        asserted = rows[op.in_prime[rows] == 1]
        wl[c, asserted] = cfg.v_dd
    solution = solve_iterative(inst, wl, tol=tol, max_iter=max_iter)
    i_out = sense_currents(kind, scheme.mode, solution,
                           scheme.subtractor_gain)
    if dummy is not None:
        keep = np.arange(cfg.n_cols) != dummy
        i_out = i_out[:, keep] - scheme.subtractor_gain * i_out[:, [dummy]]

    o_prime = np.rint(i_out / i_unit).astype(np.int64)
    if scheme.mode is ImcMode.XNOR:
        if op.sum_w is None:
            w = np.where(inst.states == int(MtjState.P), 1, -1)
            sum_w = w.sum(axis=0)
        else:
            sum_w = op.sum_w
        o = postprocess_xnor(o_prime.sum(axis=0), sum_w)
    else:
        o = o_prime.sum(axis=0)
    return ImcResult(i_out=i_out, o_prime=o_prime, o=o, i_unit=float(i_unit))


def bit_slice_weights(weights) -> np.ndarray:
    """Two's-complement bit planes of 4-bit signed weights, LSB plane first.

    Returns shape (4,) + weights.shape with values in {0,1}; the last
    plane is the sign plane, weighted -8 on reconstruction.
    """
    w = np.asarray(weights)
    if not np.issubdtype(w.dtype, np.integer):
        raise ValueError("weights must be integers")
    if w.min(initial=0) < -8 or w.max(initial=0) > 7:
        raise ValueError("4-bit signed weights must lie in [-8, 7]")
    twos = np.bitwise_and(w, 0xF)
    return np.stack([np.bitwise_and(np.right_shift(twos, k), 1)
                     for k in range(4)]).astype(np.int8)


def bit_stream_accumulate(outputs, input_scales=(1, 2, 4, 8),
                          weight_scales=(1, 2, 4, -8)):
    """Shift-add recombination of binary partial dot products.

    ``outputs[i, j, ...]`` holds the AND output for input bit-cycle ``i``
    (LSB first) against weight bit-plane ``j`` (LSB first, sign plane
    last).  Returns sum_ij input_scales[i] * weight_scales[j] *
    outputs[i, j].
    """
    o = np.asarray(outputs)
    si = np.asarray(input_scales)
    sj = np.asarray(weight_scales)
    if o.shape[:2] != (si.size, sj.size):
        raise ValueError("outputs must be indexed [input_bit, weight_bit]")
    return np.einsum("i,j,ij...->...", si, sj, o)
