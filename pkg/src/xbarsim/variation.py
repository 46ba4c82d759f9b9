"""Process-variation modeling in two stages.

Stage one perturbs device parameters per bitcell draw: additive Gaussian
threshold-voltage shift, multiplicative oxide-thickness and diameter
scatter.  The parallel MTJ resistance follows both geometric area scaling
and an exponential tunneling sensitivity to oxide thickness.  Monte Carlo
over bitcell operating points turns this into per-branch fractional
current spreads.

Stage two applies those spreads at the array level: every cell's sensed
branch currents are scaled by an independent Gaussian factor N(1, sigma),
with sigma chosen per (stored state, branch).  This keeps array-scale
Monte Carlo tractable while reproducing the bitcell-level statistics.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .bitcells import BitcellSolveError, TerminalVoltages, read_voltages, \
    solve_bitcell_batch, solve_bitcell_dc
from .devices import BitcellKind, DeviceParams, MtjState, V_THERMAL
from .solver import weight_states


@dataclasses.dataclass(frozen=True)
class VariationSpec:
    """Gaussian process spreads and the seed that reproduces a draw.

    Diameter spread is expressed as a fraction of the cell's lateral
    dimension (the absolute spread of the minimum metal width applied to
    the MTJ diameter).  ``oxide_decay_nm`` is the tunneling decay constant
    converting oxide-thickness shifts into resistance factors.
    """

    sigma_vth: float = 0.025            # volt, additive
    sigma_tox_frac: float = 0.015       # fraction of t_ox
    sigma_diam_frac: float = 0.0542     # fraction of lateral dimension
    oxide_decay_nm: float = 0.14
    seed: int = 0

    def __post_init__(self):
        for name in ("sigma_vth", "sigma_tox_frac", "sigma_diam_frac"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        if self.oxide_decay_nm <= 0.0:
            raise ValueError("oxide_decay_nm must be > 0")


def _sample_factors(spec: VariationSpec, rng: np.random.Generator, n: int,
                    max_retries: int = 100):
    """Draw (dvth, tox factor, diameter factor) arrays, resampling bad ones."""
    dvth = rng.normal(0.0, spec.sigma_vth, size=n)
    f_tox = rng.normal(1.0, spec.sigma_tox_frac, size=n)
    f_diam = rng.normal(1.0, spec.sigma_diam_frac, size=n)
    for _ in range(max_retries):
        bad = (f_tox <= 0.0) | (f_diam <= 0.0)
        if not bad.any():
            return dvth, f_tox, f_diam
        k = int(bad.sum())
        f_tox[bad] = rng.normal(1.0, spec.sigma_tox_frac, size=k)
        f_diam[bad] = rng.normal(1.0, spec.sigma_diam_frac, size=k)
    raise ValueError("could not draw physical variation factors")


def _perturbed(base: DeviceParams, spec: VariationSpec, dvth, f_tox, f_diam):
    """Parameter set (possibly array-valued) with derived R_P recomputed.

    Junction resistance scales inversely with area and exponentially with
    the oxide-thickness shift.
    """
    d_tox_nm = base.t_ox_nm * (f_tox - 1.0)
    r_p = base.r_p * np.exp(d_tox_nm / spec.oxide_decay_nm) / (f_diam ** 2)
    return dataclasses.replace(
        base,
        v_th=base.v_th + dvth,
        t_ox_nm=base.t_ox_nm * f_tox,
        w_nm=base.w_nm * f_diam,
        l_nm=base.l_nm * f_diam,
        r_p=r_p,
    )


def sample_device_params(base: DeviceParams, spec: VariationSpec,
                         rng: np.random.Generator) -> DeviceParams:
    """One Gaussian parameter draw with derived quantities recomputed."""
    dvth, f_tox, f_diam = _sample_factors(spec, rng, 1)
    out = _perturbed(base, spec, float(dvth[0]), float(f_tox[0]),
                     float(f_diam[0]))
    return out


@dataclasses.dataclass(frozen=True)
class McStats:
    """Per-branch current statistics from a bitcell Monte Carlo run."""

    mean_left: float
    mean_right: float
    sigma_frac_left: float
    sigma_frac_right: float
    n_trials: int
    n_failed: int


def bitcell_mc(kind: BitcellKind, weight, tv: TerminalVoltages,
               spec: VariationSpec, n_trials: int,
               base: DeviceParams = None,
               rng: np.random.Generator = None) -> McStats:
    """Monte Carlo branch currents of one stored weight at fixed drive.

    All trials solve in one batch through array-valued parameters; if the
    batch solve rejects a pathological draw, trials fall back to scalar
    solves and the failures are counted, aborting above a 1% failure rate.
    """
    if n_trials < 2:
        raise ValueError("need at least 2 trials")
    base = base or DeviceParams()
    rng = rng or np.random.default_rng(spec.seed)
    state = int(weight_states(kind, np.asarray([[weight]]))[0, 0])
    dvth, f_tox, f_diam = _sample_factors(spec, rng, n_trials)
    params = _perturbed(base, spec, dvth, f_tox, f_diam)
    tvb = TerminalVoltages(**{
        f.name: np.broadcast_to(getattr(tv, f.name), (n_trials,))
        for f in dataclasses.fields(tv)})
    failed = 0
    try:
        i_l, i_r, _ = solve_bitcell_batch(kind, state, tvb, params)
    except BitcellSolveError:
        i_l = np.empty(n_trials)
        i_r = np.empty(n_trials)
        ok = np.ones(n_trials, dtype=bool)
        for t in range(n_trials):
            pt = _perturbed(base, spec, float(dvth[t]), float(f_tox[t]),
                            float(f_diam[t]))
            try:
                res = solve_bitcell_dc(kind, state, tv, pt)
                i_l[t], i_r[t] = res.i_left, res.i_right
            except BitcellSolveError:
                ok[t] = False
        failed = int((~ok).sum())
        if failed > 0.01 * n_trials:
            raise BitcellSolveError(
                f"{failed}/{n_trials} variation trials failed to solve")
        i_l, i_r = i_l[ok], i_r[ok]

    def stats(i):
        mean = float(np.mean(i))
        sd = float(np.std(i, ddof=1))
        frac = sd / abs(mean) if mean != 0.0 else 0.0
        return mean, frac

    mean_l, frac_l = stats(i_l)
    mean_r, frac_r = stats(np.asarray(i_r))
    return McStats(mean_left=mean_l, mean_right=mean_r,
                   sigma_frac_left=frac_l, sigma_frac_right=frac_r,
                   n_trials=n_trials, n_failed=failed)


def apply_current_variation(i_nominal, sigma_fraction,
                            rng: np.random.Generator):
    """Scale currents by independent Gaussian factors N(1, sigma)."""
    i = np.asarray(i_nominal, dtype=float)
    if sigma_fraction < 0.0:
        raise ValueError("sigma must be >= 0")
    return i * rng.normal(1.0, sigma_fraction, size=i.shape)


def extract_sigma_table(kind: BitcellKind, v_read: float,
                        spec: VariationSpec, n_trials: int = 1000,
                        base: DeviceParams = None) -> dict:
    """Fractional current sigma per (left-MTJ state, branch) at read drive.

    Returns {state: (sigma_left, sigma_right)} for both stored states,
    extracted at the nominal read voltages with wordline on.
    """
    base = base or DeviceParams()
    tv = read_voltages(kind, v_read, base)
    table = {}
    for state in (int(MtjState.P), int(MtjState.AP)):
        if kind is BitcellKind.ONE_T_ONE_MTJ:
            weight = 1 if state == int(MtjState.P) else 0
        else:
            weight = 1 if state == int(MtjState.P) else -1
        rng = np.random.default_rng(
            np.random.SeedSequence((spec.seed, int(state))))
        st = bitcell_mc(kind, weight, tv, spec, n_trials, base, rng)
        table[state] = (st.sigma_frac_left, st.sigma_frac_right)
    return table


def variation_gains(states: np.ndarray, sigma_table: dict,
                    rng: np.random.Generator):
    """Per-cell branch gain draws for one chip instance.

    ``states`` is the instance's left-MTJ state grid; each cell draws
    independent factors with the sigma of its stored state and branch.
    """
    states = np.asarray(states)
    sig_l = np.zeros(states.shape)
    sig_r = np.zeros(states.shape)
    for state, (sl, sr) in sigma_table.items():
        mask = states == state
        sig_l[mask] = sl
        sig_r[mask] = sr
    gain_l = 1.0 + sig_l * rng.standard_normal(states.shape)
    gain_r = 1.0 + sig_r * rng.standard_normal(states.shape)
    return gain_l, gain_r
