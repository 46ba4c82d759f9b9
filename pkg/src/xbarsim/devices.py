"""MTJ and access-transistor device models shared by every bitcell topology.

All magnetics are CGS (emu/cm^3, erg/cm^3, Oe); electrical quantities are SI.
Parameters default to a perpendicular STT-MRAM stack with a 60x60 nm^2 free
layer and a square-law/subthreshold NMOS calibrated so the cross-coupled
bitcells land in the tens-of-uA read regime.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import math

import numpy as np

# Physical constants (CGS where magnetic).
K_B_ERG = 1.380649e-16       # erg/K
HBAR_ERG_S = 1.054571817e-27  # erg*s
E_CHARGE = 1.602176634e-19   # C
V_THERMAL = 0.025852         # kT/q at 300 K, V
LN10 = math.log(10.0)


class MtjState(enum.IntEnum):
    """Magnetization of the free layer relative to the pinned layer."""

    P = 0
    AP = 1


class BitcellKind(enum.Enum):
    ONE_T_ONE_MTJ = "1t1mtj"
    TWO_T_TWO_MTJ = "2t2mtj"
    STRIDE_I = "stride1"
    STRIDE_II = "stride2"

    @property
    def n_mtj(self) -> int:
        return 1 if self is BitcellKind.ONE_T_ONE_MTJ else 2


@dataclasses.dataclass(frozen=True)
class DeviceParams:
    """Shared device parameters for the MTJ stack and NMOS transistors.

    Fields accept scalars for nominal analysis or numpy arrays of equal
    shape for batched Monte Carlo over sampled devices.

    Magnetic fields are CGS: m_s in emu/cm^3, k_u in erg/cm^3, gamma in
    MHz/Oe.  e_b_kbt is the nominal barrier in units of k_B*T and is kept
    as reported alongside the primitive stack values; thermal_stability()
    recomputes the barrier from k_u and the free-layer volume.
    """

    w_nm: float = 60.0            # free layer width
    l_nm: float = 60.0            # free layer length
    t_m_nm: float = 1.0           # free layer thickness
    t_ox_nm: float = 1.3          # MgO barrier thickness
    m_s: float = 865.0            # saturation magnetization, emu/cm^3
    k_u: float = 9.66e5           # effective uniaxial anisotropy, erg/cm^3
    e_b_kbt: float = 64.0         # nominal thermal barrier, k_B*T units
    alpha: float = 0.008          # Gilbert damping
    gamma_mhz_oe: float = 17.6    # gyromagnetic ratio
    r_p: float = 5.1e3            # parallel-state resistance, ohm
    tmr: float = 4.5              # (R_AP - R_P) / R_P
    v_th: float = 0.45            # NMOS threshold, V
    k_trans: float = 2.5e-3       # transconductance factor, A/V^2
    swing_mv_dec: float = 100.0   # subthreshold swing, mV/dec
    dibl_v_per_v: float = 0.12    # barrier lowering per volt of drain bias
    i_leak_floor: float = 2.0e-9  # drain leakage floor, A
    v_dd: float = 1.2             # supply, V
    spin_polarization: float = 0.2225  # STT efficiency, back-solved from I_CR
    temperature_k: float = 298.15
    # Effective write-path resistances.  At write bias the barrier TMR rolls
    # off, so both MTJ states are lumped into one flat per-MTJ resistance;
    # the write access device is likewise lumped as a fixed series term.
    r_mtj_write: float = 2.77e3
    r_write_access: float = 2.63e3

    def area_cm2(self):
        """Free-layer cross-section, circular with the given lateral dims."""
        return math.pi / 4.0 * (self.w_nm * 1e-7) * (self.l_nm * 1e-7)

    def volume_cm3(self):
        return self.area_cm2() * (self.t_m_nm * 1e-7)

    def h_k_oe(self):
        """Effective perpendicular anisotropy field 2*K_u/M_s."""
        return 2.0 * self.k_u / self.m_s

    def gamma_rad_s_oe(self):
        return self.gamma_mhz_oe * 1e6

    def subthreshold_n(self):
        """Ideality factor implied by the subthreshold swing."""
        return (self.swing_mv_dec * 1e-3) / (V_THERMAL * LN10)

    def params_hash(self) -> str:
        """Stable digest used to tie cached tables to the generating params."""
        payload = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, np.ndarray):
                v = v.tolist()
            payload[f.name] = v
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def mtj_resistance(state, params: DeviceParams):
    """Resistance of one MTJ in the given state (bias-independent).

    `state` may be an MtjState or an integer array with P=0, AP=1.
    R_AP = R_P * (1 + TMR) exactly.
    """
    frac = np.asarray(state, dtype=float)  # 0 for P, 1 for AP
    return params.r_p * (1.0 + frac * params.tmr)


def thermal_stability(params: DeviceParams, temperature_k: float | None = None):
    """Barrier K_u * V / (k_B * T) recomputed from the primitive stack values."""
    t = params.temperature_k if temperature_k is None else temperature_k
    return params.k_u * params.volume_cm3() / (K_B_ERG * t)


def _fet_forward(v_gs, v_ds, params: DeviceParams):
    """Drain current and partials for v_ds >= 0.

    Square law with drain saturation above threshold, exponential
    subthreshold conduction below it, plus a drain leakage floor.  The
    smooth overdrive makes the two regions one continuous expression, and
    the drain bias lowers the barrier (DIBL) so off-state leakage grows
    with v_ds the way short-channel devices do.

    Returns (i, di/dv_gs, di/dv_ds).
    """
    n2vt = 2.0 * params.subthreshold_n() * V_THERMAL
    x = (v_gs - params.v_th + params.dibl_v_per_v * v_ds) / n2vt
    # Numerically safe softplus: log1p(exp(x)) for x<0, x + log1p(exp(-x)) else.
    xs = np.clip(x, -60.0, 60.0)
    v_ov = n2vt * np.where(xs > 0.0, xs + np.log1p(np.exp(-np.abs(xs))),
                           np.log1p(np.exp(xs)))
    dvov = 1.0 / (1.0 + np.exp(-xs))

    k = params.k_trans
    triode = v_ds < v_ov
    i_ch = np.where(triode,
                    k * (v_ov * v_ds - 0.5 * v_ds * v_ds),
                    0.5 * k * v_ov * v_ov)
    di_dvov = np.where(triode, k * v_ds, k * v_ov)
    di_dvds = np.where(triode, k * (v_ov - v_ds), 0.0)

    e_ds = np.exp(-np.clip(v_ds, 0.0, None) / V_THERMAL)
    i = i_ch + params.i_leak_floor * (1.0 - e_ds)
    di_dvds = (di_dvds + di_dvov * dvov * params.dibl_v_per_v
               + params.i_leak_floor / V_THERMAL * e_ds)
    return i, di_dvov * dvov, di_dvds


def fet_current(v_gs, v_ds, params: DeviceParams):
    """NMOS drain current, source/drain symmetric.

    For v_ds < 0 the roles of source and drain swap, so the gate drive is
    referenced to the lower terminal and the current changes sign.
    """
    v_gs = np.asarray(v_gs, dtype=float)
    v_ds = np.asarray(v_ds, dtype=float)
    fwd, _, _ = _fet_forward(v_gs, np.abs(v_ds), params)
    rev, _, _ = _fet_forward(v_gs - v_ds, np.abs(v_ds), params)
    out = np.where(v_ds >= 0.0, fwd, -rev)
    if out.ndim == 0:
        return float(out)
    return out


def fet_terminal_iv(v_g, v_d, v_s, params: DeviceParams):
    """Current d->s with partials w.r.t. each terminal voltage.

    Used by the nodal solvers; handles either sign of v_d - v_s.

    Returns (i, di/dv_g, di/dv_d, di/dv_s).
    """
    v_g = np.asarray(v_g, dtype=float)
    v_d = np.asarray(v_d, dtype=float)
    v_s = np.asarray(v_s, dtype=float)
    fwd = v_d >= v_s
    lo = np.where(fwd, v_s, v_d)
    hi = np.where(fwd, v_d, v_s)
    i, dig, didh = _fet_forward(v_g - lo, hi - lo, params)
    # Forward: d=hi, s=lo.  di/dv_hi = didh; di/dv_lo = -dig - didh.
    di_dhi = didh
    di_dlo = -dig - didh
    sign = np.where(fwd, 1.0, -1.0)
    di_dvd = sign * np.where(fwd, di_dhi, di_dlo)
    di_dvs = sign * np.where(fwd, di_dlo, di_dhi)
    return sign * i, sign * dig, di_dvd, di_dvs
