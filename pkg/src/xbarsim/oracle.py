"""Dense reference solver for small crossbar reads.

Independent route used to validate the fast lookup-table solver: the whole
array network is assembled node by node (every wire tap, every cell
internal node, optionally finite-resistance sense nodes) and solved with
Newton iterations on the analytic device equations.  No lookup tables are
involved, and Kirchhoff's current law is enforced below 0.1 pA at every
unknown node.

Columns share no nodes (ideal wordlines), so the array Jacobian is block
diagonal over columns; the network is still solved as one system for
vectorization.  Intended for instances up to N x M = 256 cells.
"""

from __future__ import annotations

import numpy as np

from .devices import BitcellKind, DeviceParams, fet_terminal_iv, \
    mtj_resistance
from .solver import ArraySolution, ArraySolveError, CrossbarInstance

_KCL_TOL = 1e-13  # amp

_N_INTERNAL = {
    BitcellKind.ONE_T_ONE_MTJ: 1,
    BitcellKind.TWO_T_TWO_MTJ: 2,
    BitcellKind.STRIDE_I: 3,
    BitcellKind.STRIDE_II: 4,
}


class _Ref:
    """Node references for vectorized stamps: unknown index or fixed volts."""

    def __init__(self, size):
        self.var = np.zeros(size, dtype=bool)
        self.idx = np.zeros(size, dtype=np.intp)
        self.val = np.zeros(size)

    @classmethod
    def fixed(cls, values, size=None):
        values = np.asarray(values, float)
        values = np.broadcast_to(values, (size if size is not None
                                          else values.size,))
        r = cls(values.size)
        r.val[:] = values
        return r

    @classmethod
    def unknown(cls, indices):
        indices = np.asarray(indices, dtype=np.intp)
        r = cls(indices.size)
        r.var[:] = True
        r.idx[:] = indices
        return r

    @classmethod
    def concat(cls, refs):
        r = cls(sum(x.var.size for x in refs))
        r.var = np.concatenate([x.var for x in refs])
        r.idx = np.concatenate([x.idx for x in refs])
        r.val = np.concatenate([x.val for x in refs])
        return r

    def take(self, sl) -> "_Ref":
        r = _Ref(0)
        r.var, r.idx, r.val = self.var[sl], self.idx[sl], self.val[sl]
        return r

    def voltages(self, x):
        return np.where(self.var, x[self.idx], self.val)


class _Net:
    """Nodal network as two merged stamp groups: resistors and FETs."""

    def __init__(self, params: DeviceParams):
        self.params = params
        self.n_var = 0
        self._res = []   # (ref_a, ref_b, conductance array)
        self._fets = []  # (ref_gate, ref_drain, ref_source)

    def alloc(self, count=1):
        idx = np.arange(self.n_var, self.n_var + count, dtype=np.intp)
        self.n_var += count
        return idx

    def add_res(self, a: _Ref, b: _Ref, g):
        self._res.append((a, b, np.broadcast_to(np.asarray(g, float),
                                                (a.var.size,)).copy()))

    def add_fet(self, gate: _Ref, drain: _Ref, source: _Ref):
        self._fets.append((gate, drain, source))

    def finalize(self):
        self.ra = _Ref.concat([r[0] for r in self._res])
        self.rb = _Ref.concat([r[1] for r in self._res])
        self.rg = np.concatenate([r[2] for r in self._res])
        self.fg = _Ref.concat([f[0] for f in self._fets])
        self.fd = _Ref.concat([f[1] for f in self._fets])
        self.fs = _Ref.concat([f[2] for f in self._fets])

    def residual(self, x):
        f = np.zeros(self.n_var)
        i = self.rg * (self.ra.voltages(x) - self.rb.voltages(x))
        np.add.at(f, self.ra.idx[self.ra.var], -i[self.ra.var])
        np.add.at(f, self.rb.idx[self.rb.var], i[self.rb.var])
        it, _, _, _ = fet_terminal_iv(self.fg.voltages(x),
                                      self.fd.voltages(x),
                                      self.fs.voltages(x), self.params)
        np.add.at(f, self.fd.idx[self.fd.var], -it[self.fd.var])
        np.add.at(f, self.fs.idx[self.fs.var], it[self.fs.var])
        return f

    def jacobian(self, x):
        jac = np.zeros((self.n_var, self.n_var))

        def stamp(rows, row_sign, cols, vals):
            sel = rows.var & cols.var
            np.add.at(jac, (rows.idx[sel], cols.idx[sel]),
                      row_sign * vals[sel])

        for rows, sign in ((self.ra, -1.0), (self.rb, 1.0)):
            stamp(rows, sign, self.ra, self.rg)
            stamp(rows, -sign, self.rb, self.rg)
        _, di_g, di_d, di_s = fet_terminal_iv(self.fg.voltages(x),
                                              self.fd.voltages(x),
                                              self.fs.voltages(x),
                                              self.params)
        for rows, sign in ((self.fd, -1.0), (self.fs, 1.0)):
            stamp(rows, sign, self.fg, di_g)
            stamp(rows, sign, self.fd, di_d)
            stamp(rows, sign, self.fs, di_s)
        return jac


def _line_refs(net: _Net, n: int, v_drive: float, r_driver: float,
               r_wire: float) -> _Ref:
    """Tap references for one driven line; merges nodes if segments are 0 ohm.

    The first cell sits at the driver output and each later cell adds one
    wire segment, matching the fast solver's line model.
    """
    if r_driver == 0.0 and r_wire == 0.0:
        return _Ref.fixed(v_drive, n)
    if r_wire == 0.0:
        node = net.alloc(1)
        net.add_res(_Ref.fixed(v_drive, 1), _Ref.unknown(node), 1.0 / r_driver)
        return _Ref.unknown(np.repeat(node, n))
    if r_driver == 0.0:
        # first tap sits on the driver output; the rest chain behind it
        refs = _Ref(n)
        refs.val[0] = v_drive
        if n > 1:
            tail = net.alloc(n - 1)
            refs.var[1:] = True
            refs.idx[1:] = tail
            net.add_res(refs.take(slice(0, n - 1)), _Ref.unknown(tail),
                        1.0 / r_wire)
        return refs
    taps = net.alloc(n)
    net.add_res(_Ref.fixed(v_drive, 1), _Ref.unknown(taps[:1]), 1.0 / r_driver)
    if n > 1:
        net.add_res(_Ref.unknown(taps[:-1]), _Ref.unknown(taps[1:]),
                    1.0 / r_wire)
    return _Ref.unknown(taps)


def _sink_ref(net: _Net, n: int, r_sink: float) -> _Ref:
    if r_sink == 0.0:
        return _Ref.fixed(0.0, n)
    node = net.alloc(1)
    net.add_res(_Ref.unknown(node), _Ref.fixed(0.0, 1), 1.0 / r_sink)
    return _Ref.unknown(np.repeat(node, n))


def _build_net(inst: CrossbarInstance, wl_row: np.ndarray):
    """Assemble the whole array; returns (net, per-column extraction refs)."""
    cfg = inst.config
    p = inst.params
    n, m = cfg.n_rows, cfg.n_cols
    kind = cfg.kind
    k_int = _N_INTERNAL[kind]
    net = _Net(p)
    two_branch = kind is not BitcellKind.ONE_T_ONE_MTJ
    wl = _Ref.fixed(wl_row, n)
    wwl = _Ref.fixed(0.0, n)
    cols = []
    internal_all = []
    for col in range(m):
        bl = _line_refs(net, n, cfg.v_read, cfg.r_driver, cfg.r_wire)
        blb = _line_refs(net, n, cfg.v_read, cfg.r_driver, cfg.r_wire) \
            if two_branch else None
        sl = _sink_ref(net, n, cfg.r_sink)
        slb = _sink_ref(net, n, cfg.r_sink) \
            if kind is BitcellKind.STRIDE_II else None
        internal = net.alloc(n * k_int).reshape(n, k_int)
        internal_all.append(internal.reshape(-1))
        ints = [_Ref.unknown(internal[:, j]) for j in range(k_int)]

        states = inst.states[:, col].astype(float)
        g_left = 1.0 / mtj_resistance(states, p)
        if kind is BitcellKind.ONE_T_ONE_MTJ:
            net.add_res(bl, ints[0], g_left)
            net.add_fet(wl, ints[0], sl)
            right_int, g_right = None, None
        else:
            g_right = 1.0 / mtj_resistance(1.0 - states, p)
            if kind is BitcellKind.TWO_T_TWO_MTJ:
                net.add_res(bl, ints[0], g_left)
                net.add_res(blb, ints[1], g_right)
                net.add_fet(wl, ints[0], sl)
                net.add_fet(wl, ints[1], sl)
                right_int = ints[1]
            elif kind is BitcellKind.STRIDE_I:
                net.add_res(bl, ints[0], g_left)     # BL - n1
                net.add_res(blb, ints[1], g_right)   # BLB - n2
                net.add_fet(ints[1], ints[0], ints[2])   # cross pair
                net.add_fet(ints[0], ints[1], ints[2])
                net.add_fet(wl, ints[2], sl)             # access to SL
                net.add_fet(wwl, ints[0], ints[1])       # write bridge
                right_int = ints[1]
            else:
                net.add_res(bl, ints[0], g_left)     # BL - n1
                net.add_res(blb, ints[2], g_right)   # BLB - n2
                net.add_fet(ints[2], ints[0], ints[1])   # cross pair
                net.add_fet(ints[0], ints[2], ints[3])
                net.add_fet(wl, ints[1], sl)             # access to SL
                net.add_fet(wl, ints[3], slb)            # access to SLB
                right_int = ints[2]
        cols.append((bl, blb, ints[0], right_int, g_left, g_right))
    net.finalize()
    return net, cols, np.concatenate(internal_all)


def _relax(net: _Net, x, steps, f_exit, r0=100.0, r_max=2.0e5, max_dv=0.005):
    """Per-node adaptive relaxation toward the physically reached state.

    The step-to-voltage scale grows while updates stay co-directed and
    halves on sign reversal, keeping low-impedance wire nodes stable while
    cell internals charge at full speed.
    """
    r = np.full(net.n_var, r0)
    prev = np.zeros(net.n_var)
    for _ in range(steps):
        f = net.residual(x)
        if np.abs(f).max() < f_exit:
            break
        dv = np.clip(f * r, -max_dv, max_dv)
        osc = dv * prev < 0.0
        r = np.clip(np.where(osc, r * 0.5, r * 1.25), 1e-3, r_max)
        x = x + dv
        prev = dv
    return x


def _newton(net: _Net, x, tol, max_iter=200):
    f = net.residual(x)
    norm = np.abs(f).max()
    for _ in range(max_iter):
        if norm < tol:
            return x, norm
        jac = net.jacobian(x)
        try:
            dx = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError as exc:
            raise ArraySolveError(f"singular Jacobian: {exc}") from exc
        dx = np.clip(dx, -0.2, 0.2)
        scale = 1.0
        for _ in range(10):
            f_try = net.residual(x + scale * dx)
            new = np.abs(f_try).max()
            if new < norm:
                break
            scale *= 0.5
        x = x + scale * dx
        f = net.residual(x)
        norm = np.abs(f).max()
    return x, norm


def _solve_net(net: _Net, x0):
    x = _relax(net, x0.copy(), steps=3000, f_exit=1e-8)
    x, norm = _newton(net, x, _KCL_TOL)
    if norm >= _KCL_TOL:
        x = _relax(net, x0.copy(), steps=40000, f_exit=1e-12, r0=10.0,
                   max_dv=0.001)
        x, norm = _newton(net, x, _KCL_TOL)
        if norm >= _KCL_TOL:
            raise ArraySolveError(
                f"reference solve: KCL residual {norm:.3e} A")
    return x


def solve_dense_oracle(inst: CrossbarInstance, wl) -> ArraySolution:
    """Full nodal-analysis read of a small array.

    Same drive and line model as the fast solver but with every node an
    explicit unknown and device currents evaluated analytically.  Finite
    sink resistance, when configured, adds one sense node per line.
    Wire taps start precharged at the read voltage and cell internals
    discharged, so the bistable cells settle into the same attractor the
    physical read reaches.
    """
    cfg = inst.config
    if cfg.n_rows * cfg.n_cols > 256:
        raise ValueError("reference solver is limited to N*M <= 256 cells")
    if inst.gain_left is not None or inst.gain_right is not None:
        raise ValueError("reference solver does not support per-cell "
                         "current gains")
    wl_arr = np.asarray(wl, dtype=float)
    batched = wl_arr.ndim == 2
    wl2 = np.atleast_2d(wl_arr)
    if wl2.shape[1] != cfg.n_rows:
        raise ValueError(f"wordline pattern length {wl2.shape[1]} != rows "
                         f"{cfg.n_rows}")

    b, n, m = wl2.shape[0], cfg.n_rows, cfg.n_cols
    two_branch = cfg.kind is not BitcellKind.ONE_T_ONE_MTJ
    v_bl = np.zeros((b, n, m))
    v_blb = np.zeros((b, n, m))
    i_l = np.zeros((b, n, m))
    i_r = np.zeros((b, n, m))
    for bi in range(b):
        net, cols, internal = _build_net(inst, wl2[bi])
        x0 = np.full(net.n_var, cfg.v_read)
        x0[internal] = 0.0
        x = _solve_net(net, x0)
        for col, (bl, blb, li, ri, g_l, g_r) in enumerate(cols):
            vb = bl.voltages(x)
            v_bl[bi, :, col] = vb
            i_l[bi, :, col] = g_l * (vb - li.voltages(x))
            if two_branch:
                vbb = blb.voltages(x)
                v_blb[bi, :, col] = vbb
                i_r[bi, :, col] = g_r * (vbb - ri.voltages(x))

    i_bl = i_l.sum(axis=-2)
    i_blb = i_r.sum(axis=-2)
    if cfg.kind is BitcellKind.STRIDE_II:
        i_sl, i_slb = i_bl.copy(), i_blb.copy()
    else:
        i_sl, i_slb = i_bl + i_blb, np.zeros_like(i_bl)
    if not batched:
        (v_bl, v_blb, i_l, i_r, i_bl, i_blb, i_sl, i_slb) = (
            a[0] for a in (v_bl, v_blb, i_l, i_r, i_bl, i_blb, i_sl, i_slb))
    return ArraySolution(v_bl=v_bl, v_blb=v_blb, i_left=i_l, i_right=i_r,
                         i_bl=i_bl, i_blb=i_blb, i_sl=i_sl, i_slb=i_slb,
                         iterations=b, max_update=0.0, converged=True)
