"""Bitcell topologies and their DC operating-point solver.

Four cells are modeled.  The baselines are the standard 1T-1MTJ cell and
the differential 2T-2MTJ cell, both with wordline-gated access devices in
series with their MTJs.  The cross-coupled cells wire each MTJ's internal
node to the gate of the opposite branch's transistor, which lets the
branch with the lower-resistance (P) MTJ charge its node first, switch the
opposite transistor on, and latch the cell so that nearly all read current
flows through the AP-side MTJ while the P side is cut off.

The cross-coupled pair is bistable, so the DC solution is selected the way
the real circuit selects it: internal nodes start discharged at 0 V and a
pseudo-transient relaxation (equal node capacitances) settles into the
physically reached attractor before damped Newton polishes KCL to below
1 pA per node.  Everything is vectorized over a flat batch with an active
set, so large voltage grids solve in bulk while slow knee-region points do
not hold up the rest.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .devices import (
    BitcellKind,
    DeviceParams,
    MtjState,
    fet_terminal_iv,
    mtj_resistance,
)


class BitcellSolveError(RuntimeError):
    """Raised when the operating-point iteration fails to reach tolerance."""


@dataclasses.dataclass(frozen=True)
class TerminalVoltages:
    """External drive on one bitcell.  Fields broadcast; volts."""

    v_bl: float = 0.0
    v_blb: float = 0.0
    v_sl: float = 0.0
    v_slb: float = 0.0
    v_wl: float = 0.0
    v_wwl: float = 0.0

    def validate(self, params: DeviceParams) -> None:
        hi = 2.0 * params.v_dd
        for f in dataclasses.fields(self):
            v = np.asarray(getattr(self, f.name))
            if np.any(v < 0.0) or np.any(v > hi):
                raise ValueError(f"{f.name} outside [0, {hi}] V")


@dataclasses.dataclass(frozen=True)
class BranchCurrents:
    """Solved branch currents (A, into the cell) and internal node voltages."""

    i_left: float
    i_right: float
    v_n1: float
    v_n2: float
    internals: dict = dataclasses.field(default_factory=dict)


_FET_FIELDS = ("v_th", "k_trans", "swing_mv_dec", "dibl_v_per_v",
               "i_leak_floor", "v_dd")


class _FetView:
    """Flat per-element view of the transistor parameters.

    Quacks like DeviceParams for the fet model functions while supporting
    fancy-index subsetting for the active-set iteration.
    """

    def __init__(self, src, idx=None):
        for name in _FET_FIELDS:
            v = getattr(src, name)
            if idx is not None and isinstance(v, np.ndarray) and v.ndim:
                v = v[idx]
            setattr(self, name, v)

    def subthreshold_n(self):
        from .devices import LN10, V_THERMAL
        return (self.swing_mv_dec * 1e-3) / (V_THERMAL * LN10)

    def take(self, idx):
        return _FetView(self, idx)


class _Ctx:
    """Broadcast drive voltages, branch resistances and device params."""

    def __init__(self, tv, r_l, r_r, params, shape):
        self.shape = shape
        n = int(np.prod(shape)) if shape else 1

        def flat(v):
            a = np.asarray(v, dtype=float)
            return np.broadcast_to(a, shape).reshape(n) if shape else a.reshape(1)

        self.v_bl = flat(tv.v_bl)
        self.v_blb = flat(tv.v_blb)
        self.v_sl = flat(tv.v_sl)
        self.v_slb = flat(tv.v_slb)
        self.v_wl = flat(tv.v_wl)
        self.v_wwl = flat(tv.v_wwl)
        self.g_l = 1.0 / flat(r_l)
        self.g_r = 1.0 / flat(r_r) if r_r is not None else None
        fv = _FetView(params)
        for name in _FET_FIELDS:
            v = getattr(fv, name)
            if isinstance(v, np.ndarray) and v.ndim:
                setattr(fv, name, flat(v))
        self.fet = fv
        self.n = n

    def take(self, idx):
        sub = object.__new__(_Ctx)
        sub.shape = (len(idx),)
        for name in ("v_bl", "v_blb", "v_sl", "v_slb", "v_wl", "v_wwl", "g_l"):
            setattr(sub, name, getattr(self, name)[idx])
        sub.g_r = self.g_r[idx] if self.g_r is not None else None
        sub.fet = self.fet.take(idx)
        sub.n = len(idx)
        return sub


def _n_internal(kind: BitcellKind) -> int:
    return {BitcellKind.ONE_T_ONE_MTJ: 1,
            BitcellKind.TWO_T_TWO_MTJ: 2,
            BitcellKind.STRIDE_I: 3,
            BitcellKind.STRIDE_II: 4}[kind]


def _devices(kind, x, ctx):
    """Evaluate every transistor in the cell at node voltages x [B, K]."""
    p = ctx.fet
    if kind is BitcellKind.ONE_T_ONE_MTJ:
        return (fet_terminal_iv(ctx.v_wl, x[:, 0], ctx.v_sl, p),)
    if kind is BitcellKind.TWO_T_TWO_MTJ:
        return (fet_terminal_iv(ctx.v_wl, x[:, 0], ctx.v_sl, p),
                fet_terminal_iv(ctx.v_wl, x[:, 1], ctx.v_sl, p))
    if kind is BitcellKind.STRIDE_I:
        v1, v2, vs = x[:, 0], x[:, 1], x[:, 2]
        # M1: drain n1, source shared, gate n2.  M2 mirrored.  M3 to SL
        # gated by WL; M4 bridges n1-n2 gated by WWL (write path).
        return (fet_terminal_iv(v2, v1, vs, p),
                fet_terminal_iv(v1, v2, vs, p),
                fet_terminal_iv(ctx.v_wl, vs, ctx.v_sl, p),
                fet_terminal_iv(ctx.v_wwl, v1, v2, p))
    # STRIDE_II: per-branch access devices from the cross-coupled pair's
    # sources down to separate SL/SLB sinks, both gated by WL.
    v1, vs1, v2, vs2 = x[:, 0], x[:, 1], x[:, 2], x[:, 3]
    return (fet_terminal_iv(v2, v1, vs1, p),
            fet_terminal_iv(v1, v2, vs2, p),
            fet_terminal_iv(ctx.v_wl, vs1, ctx.v_sl, p),
            fet_terminal_iv(ctx.v_wl, vs2, ctx.v_slb, p))


def _residual(kind, x, ctx, devs=None):
    """Net current into each internal node, shape [B, K]."""
    devs = _devices(kind, x, ctx) if devs is None else devs
    f = np.empty_like(x)
    if kind is BitcellKind.ONE_T_ONE_MTJ:
        (i_t, _, _, _), = devs
        f[:, 0] = (ctx.v_bl - x[:, 0]) * ctx.g_l - i_t
        return f
    if kind is BitcellKind.TWO_T_TWO_MTJ:
        (i1, _, _, _), (i2, _, _, _) = devs
        f[:, 0] = (ctx.v_bl - x[:, 0]) * ctx.g_l - i1
        f[:, 1] = (ctx.v_blb - x[:, 1]) * ctx.g_r - i2
        return f
    if kind is BitcellKind.STRIDE_I:
        (i1, *_), (i2, *_), (i3, *_), (i4, *_) = devs
        f[:, 0] = (ctx.v_bl - x[:, 0]) * ctx.g_l - i1 - i4
        f[:, 1] = (ctx.v_blb - x[:, 1]) * ctx.g_r - i2 + i4
        f[:, 2] = i1 + i2 - i3
        return f
    (i1, *_), (i2, *_), (i3, *_), (i4, *_) = devs
    f[:, 0] = (ctx.v_bl - x[:, 0]) * ctx.g_l - i1
    f[:, 1] = i1 - i3
    f[:, 2] = (ctx.v_blb - x[:, 2]) * ctx.g_r - i2
    f[:, 3] = i2 - i4
    return f


def _jacobian(kind, x, ctx, devs):
    """d(residual)/d(node voltages), shape [B, K, K]."""
    b, k = x.shape
    jac = np.zeros((b, k, k))
    if kind is BitcellKind.ONE_T_ONE_MTJ:
        (_, _, dd, _), = devs
        jac[:, 0, 0] = -ctx.g_l - dd
        return jac
    if kind is BitcellKind.TWO_T_TWO_MTJ:
        (_, _, dd1, _), (_, _, dd2, _) = devs
        jac[:, 0, 0] = -ctx.g_l - dd1
        jac[:, 1, 1] = -ctx.g_r - dd2
        return jac
    if kind is BitcellKind.STRIDE_I:
        (_, g1g, g1d, g1s), (_, g2g, g2d, g2s), (_, _, g3d, _), \
            (_, _, g4d, g4s) = devs
        jac[:, 0, 0] = -ctx.g_l - g1d - g4d
        jac[:, 0, 1] = -g1g - g4s
        jac[:, 0, 2] = -g1s
        jac[:, 1, 0] = -g2g + g4d
        jac[:, 1, 1] = -ctx.g_r - g2d + g4s
        jac[:, 1, 2] = -g2s
        jac[:, 2, 0] = g1d + g2g
        jac[:, 2, 1] = g1g + g2d
        jac[:, 2, 2] = g1s + g2s - g3d
        return jac
    (_, g1g, g1d, g1s), (_, g2g, g2d, g2s), (_, _, g3d, _), \
        (_, _, g4d, _) = devs
    jac[:, 0, 0] = -ctx.g_l - g1d
    jac[:, 0, 1] = -g1s
    jac[:, 0, 2] = -g1g
    jac[:, 1, 0] = g1d
    jac[:, 1, 1] = g1s - g3d
    jac[:, 1, 2] = g1g
    jac[:, 2, 0] = -g2g
    jac[:, 2, 2] = -ctx.g_r - g2d
    jac[:, 2, 3] = -g2s
    jac[:, 3, 0] = g2g
    jac[:, 3, 2] = g2d
    jac[:, 3, 3] = g2s - g4d
    return jac


def _pseudo_transient(kind, x, ctx, steps, max_dv, exit_dv=1e-6,
                      r_unit=2.0e3):
    """Relax nodes along the charging direction with an active set.

    Equal node capacitances, explicit updates proportional to the net
    charging current, clipped per step.  This follows the physical settling
    race and lands in the correct basin of the bistable cells.  ``r_unit``
    (ohm) converts net current to a voltage step; smaller values keep the
    explicit update stable where the local conductance is high.
    """
    active = np.arange(x.shape[0])
    sub = ctx
    for _ in range(steps):
        xa = x[active]
        dv = np.clip(_residual(kind, xa, sub) * r_unit, -max_dv, max_dv)
        x[active] = xa + dv
        moving = np.abs(dv).max(axis=1) >= exit_dv
        if not moving.all():
            active = active[moving]
            if active.size == 0:
                break
            sub = ctx.take(active)
    return x


def _pt_adaptive(kind, x, ctx, steps, max_dv, f_exit, r0=200.0, r_max=2.0e5):
    """Relaxation with a per-element step controller.

    Drives sitting on the latch fold leave a slow "ghost" bottleneck where
    the net currents are tiny but nonzero.  Growing the step while updates
    stay co-directed crosses the bottleneck; halving it on sign reversal
    keeps high-conductance nodes stable.  Exits on the residual itself so a
    slow crawl is never mistaken for convergence.
    """
    active = np.arange(x.shape[0])
    sub = ctx
    r = np.full(x.shape[0], r0)
    prev = np.zeros_like(x)
    for _ in range(steps):
        xa = x[active]
        f = _residual(kind, xa, sub)
        keep = np.abs(f).max(axis=1) >= f_exit
        if not keep.all():
            active = active[keep]
            if active.size == 0:
                break
            sub = ctx.take(active)
            xa, f = xa[keep], f[keep]
        dv = np.clip(f * r[active][:, None], -max_dv, max_dv)
        osc = np.sum(dv * prev[active], axis=1) < 0.0
        r[active] = np.clip(np.where(osc, r[active] * 0.5, r[active] * 1.25),
                            1.0, r_max)
        x[active] = xa + dv
        prev[active] = dv
    return x


def _newton(kind, x, ctx, tol, max_iter):
    """Damped Newton with per-element backtracking on the residual norm."""
    k = x.shape[-1]
    eye = 1e-12 * np.eye(k)
    active = np.arange(x.shape[0])
    sub = ctx
    norm = np.full(x.shape[0], np.inf)
    for _ in range(max_iter):
        xa = x[active]
        devs = _devices(kind, xa, sub)
        f = _residual(kind, xa, sub, devs)
        na = np.abs(f).max(axis=1)
        norm[active] = na
        keep = na >= tol
        if not keep.all():
            active = active[keep]
            if active.size == 0:
                return x, norm
            sub = ctx.take(active)
            xa = x[active]
            devs = _devices(kind, xa, sub)
            f = _residual(kind, xa, sub, devs)
            na = np.abs(f).max(axis=1)
        # Tiny diagonal loading keeps the Jacobian invertible when every
        # attached device sits in a flat (saturated/cutoff) region.
        jac = _jacobian(kind, xa, sub, devs) - eye
        dx = np.clip(np.linalg.solve(jac, -f[..., None])[..., 0], -0.2, 0.2)
        step = np.ones(len(xa))
        best_x, best_n = xa, na
        for _ in range(8):
            trial = xa + step[:, None] * dx
            nt = np.abs(_residual(kind, trial, sub)).max(axis=1)
            better = nt < best_n
            best_x = np.where(better[:, None], trial, best_x)
            best_n = np.where(better, nt, best_n)
            if better.all():
                break
            step = np.where(better, step, 0.5 * step)
        x[active] = best_x
        norm[active] = best_n
    return x, norm


def branch_resistances(kind: BitcellKind, state, params: DeviceParams):
    """Per-branch MTJ resistance for a stored state.

    For 1T-1MTJ `state` is the single MtjState.  For the 2-MTJ cells it is
    the left MTJ's state; the right MTJ always stores the complement.
    """
    left = np.asarray(state, dtype=float)
    r_left = mtj_resistance(left, params)
    if kind is BitcellKind.ONE_T_ONE_MTJ:
        return r_left, None
    r_right = mtj_resistance(1.0 - left, params)
    return r_left, r_right


def read_voltages(kind: BitcellKind, v_read: float, params: DeviceParams,
                  wl_on: bool = True) -> TerminalVoltages:
    """Standard read drive: both bit lines at v_read, sinks grounded."""
    wl = params.v_dd if wl_on else 0.0
    if kind is BitcellKind.ONE_T_ONE_MTJ:
        return TerminalVoltages(v_bl=v_read, v_wl=wl)
    return TerminalVoltages(v_bl=v_read, v_blb=v_read, v_wl=wl)


def solve_bitcell_batch(kind: BitcellKind, state, tv: TerminalVoltages,
                        params: DeviceParams, tol: float = 1e-12,
                        max_iter: int = 200):
    """Vectorized operating-point solve.

    state / terminal voltages / params fields broadcast together.  Returns
    (i_left, i_right, node_voltages[..., K]).  Raises BitcellSolveError if
    any element fails to reach the KCL tolerance.
    """
    r_l, r_r = branch_resistances(kind, state, params)
    k = _n_internal(kind)
    shapes = [np.shape(getattr(tv, f.name)) for f in dataclasses.fields(tv)]
    shapes += [np.shape(r_l)]
    shapes += [np.shape(getattr(params, n)) for n in _FET_FIELDS]
    shape = np.broadcast_shapes(*shapes)
    ctx = _Ctx(tv, r_l, r_r, params, shape)

    x = np.zeros((ctx.n, k))  # discharged start
    x = _pseudo_transient(kind, x, ctx, steps=400, max_dv=0.02)
    x, norm = _newton(kind, x, ctx, tol, max_iter)
    if norm.max() >= tol:
        # Slower relaxation from the current state, then one more polish.
        bad = np.flatnonzero(norm >= tol)
        sub = ctx.take(bad)
        xb = _pseudo_transient(kind, x[bad].copy(), sub, steps=5000,
                               max_dv=0.002)
        xb, nb = _newton(kind, xb, sub, tol, max_iter)
        x[bad] = xb
        norm[bad] = nb
    if norm.max() >= tol:
        # Drives near the latch fold leave a residual "ghost" where a root
        # pair annihilated; the standard step size rattles there instead of
        # drifting through.  Restart the stragglers from the discharged
        # state with a small, locally stable step so the slow crossover to
        # the surviving latched root is followed to the end.
        bad = np.flatnonzero(norm >= tol)
        sub = ctx.take(bad)
        xb = np.zeros_like(x[bad])
        xb = _pt_adaptive(kind, xb, sub, steps=20000, max_dv=0.001,
                          f_exit=1e-13)
        xb, nb = _newton(kind, xb, sub, tol, max_iter)
        x[bad] = xb
        norm[bad] = nb
        if norm.max() >= tol:
            raise BitcellSolveError(
                f"{kind.value}: KCL residual {norm.max():.3e} A "
                f"after fallback relaxation")

    i_left = (ctx.v_bl - x[:, 0]) * ctx.g_l
    if kind is BitcellKind.ONE_T_ONE_MTJ:
        i_right = np.zeros_like(i_left)
    else:
        node_r = x[:, 2] if kind is BitcellKind.STRIDE_II else x[:, 1]
        i_right = (ctx.v_blb - node_r) * ctx.g_r
    return (i_left.reshape(shape), i_right.reshape(shape),
            x.reshape(shape + (k,)))


def solve_bitcell_dc(kind: BitcellKind, state, tv: TerminalVoltages,
                     params: DeviceParams, tol: float = 1e-12,
                     max_iter: int = 200) -> BranchCurrents:
    """Solve one bitcell's DC operating point.

    `state` is the stored MtjState (left MTJ for the complementary-pair
    cells).  KCL at every internal node is satisfied to `tol` amps.
    """
    tv.validate(params)
    i_l, i_r, x = solve_bitcell_batch(kind, state, tv, params, tol, max_iter)
    names = {BitcellKind.ONE_T_ONE_MTJ: ("v_n1",),
             BitcellKind.TWO_T_TWO_MTJ: ("v_n1", "v_n2"),
             BitcellKind.STRIDE_I: ("v_n1", "v_n2", "v_ns"),
             BitcellKind.STRIDE_II: ("v_n1", "v_ns1", "v_n2", "v_ns2")}[kind]
    flat = np.asarray(x).reshape(-1, x.shape[-1])[0]
    internals = {n: float(flat[i]) for i, n in enumerate(names)}
    return BranchCurrents(
        i_left=float(np.asarray(i_l).reshape(-1)[0]),
        i_right=float(np.asarray(i_r).reshape(-1)[0]),
        v_n1=internals["v_n1"],
        v_n2=internals.get("v_n2", 0.0),
        internals=internals,
    )


def on_off_currents(kind: BitcellKind, v_read: float, params: DeviceParams):
    """High and low sensed branch currents for one stored state at v_read.

    Stored state is chosen so the left branch is the high-current one:
    AP-left for the cross-coupled cells, P-left for the baselines.
    """
    state = MtjState.AP if kind in (BitcellKind.STRIDE_I, BitcellKind.STRIDE_II) \
        else MtjState.P
    tv = read_voltages(kind, v_read, params)
    res = solve_bitcell_dc(kind, state, tv, params)
    if kind is BitcellKind.ONE_T_ONE_MTJ:
        low = solve_bitcell_dc(kind, MtjState.AP, tv, params)
        return res.i_left, low.i_left
    return res.i_left, res.i_right


def sweep_vread(kind: BitcellKind, params: DeviceParams, v_grid):
    """Sweep read voltage, returning (i_high, i_low, ratio) arrays.

    For the cross-coupled cells the ratio rises steeply once the latch
    engages and falls again at large bias as drain-induced barrier
    lowering lifts the cut-off branch's leakage, so the maximum sits in
    the interior of the sweep.
    """
    v_grid = np.asarray(v_grid, dtype=float)
    wl = np.full_like(v_grid, params.v_dd)
    if kind is BitcellKind.ONE_T_ONE_MTJ:
        tv = TerminalVoltages(v_bl=v_grid, v_wl=wl)
        i_h = solve_bitcell_batch(kind, MtjState.P, tv, params)[0]
        i_l = solve_bitcell_batch(kind, MtjState.AP, tv, params)[0]
    else:
        tv = TerminalVoltages(v_bl=v_grid, v_blb=v_grid, v_wl=wl)
        state = MtjState.AP if kind in (BitcellKind.STRIDE_I,
                                        BitcellKind.STRIDE_II) else MtjState.P
        i_h, i_l, _ = solve_bitcell_batch(kind, state, tv, params)
    return i_h, i_l, i_h / np.maximum(i_l, 1e-30)


def calibrate_read_voltage(kind: BitcellKind, params: DeviceParams,
                           i_target: float, lo: float = 0.02,
                           hi: float | None = None) -> float:
    """Bisect the read voltage so the high branch current equals i_target."""
    hi = params.v_dd if hi is None else hi
    f_lo = on_off_currents(kind, lo, params)[0] - i_target
    f_hi = on_off_currents(kind, hi, params)[0] - i_target
    if f_lo * f_hi > 0:
        raise ValueError("target current not bracketed by [lo, hi]")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if (on_off_currents(kind, mid, params)[0] - i_target) * f_lo > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
