"""Rate-constant and production-rate evaluation.

All quantities are CGS-mol: concentrations mol/cm^3, rates mol/(cm^3 s),
activation energies cal/mol.  Reverse rate constants come from equilibrium
thermodynamics, kr = kf / Kc.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constants import P_ATM, R_CAL, R_ERG
from .mechanism import ELEMENTARY, FALLOFF, THIRD_BODY, MechanismError


@dataclass
class GasState:
    """Homogeneous gas state: temperature and per-species concentrations.

    ``conc`` is aligned with ``mechanism.species``.
    """

    T: float
    conc: np.ndarray

    def __post_init__(self):
        self.conc = np.asarray(self.conc, dtype=float)
        if self.T <= 0:
            raise ValueError(f"temperature must be positive, got {self.T}")

    def pressure(self):
        """Ideal-gas pressure, dyn/cm^2."""
        return float(np.sum(self.conc)) * R_ERG * self.T


@dataclass
class RateEvaluation:
    """Per-reaction forward/reverse rate constants and net rates, plus
    per-species production rates."""

    kf: np.ndarray
    kr: np.ndarray
    q: np.ndarray
    wdot: np.ndarray
    clipped: bool = False


def arrhenius(params, T):
    """Forward rate constant k = A * T**beta * exp(-Ea / (R*T))."""
    if T <= 0:
        raise ValueError(f"temperature must be positive, got {T}")
    return params.A * T**params.beta * math.exp(-params.Ea / (R_CAL * T))


def third_body_conc(state, efficiencies, mech):
    """Effective third-body concentration M = sum_i eff_i * c_i.

    Unlisted species have efficiency 1.
    """
    total = 0.0
    for i, sp in enumerate(mech.species):
        total += efficiencies.get(sp.name, 1.0) * state.conc[i]
    return total


def troe_falloff(k_high, k_low, fc, m_eff):
    """Pressure-blended rate constant with a constant-center TROE factor.

    Pr = k_low * M / k_high;  k = k_high * Pr/(1+Pr) * F with
    log10 F = log10 fc / (1 + ((log10 Pr + c) / (n - 0.14 (log10 Pr + c)))^2),
    c = -0.4 - 0.67 log10 fc,  n = 0.75 - 1.27 log10 fc.
    """
    if k_high <= 0:
        raise ValueError("k_high must be positive")
    if not 0.0 < fc <= 1.0:
        raise ValueError(f"fc must be in (0, 1], got {fc}")
    pr = k_low * m_eff / k_high
    if pr <= 0.0:
        return 0.0
    log_fc = math.log10(fc)
    c = -0.4 - 0.67 * log_fc
    n = 0.75 - 1.27 * log_fc
    x = math.log10(pr) + c
    log_f = log_fc / (1.0 + (x / (n - 0.14 * x)) ** 2)
    return k_high * (pr / (1.0 + pr)) * 10.0**log_f


def equilibrium_constant(reaction, mech, T):
    """Concentration-based equilibrium constant Kc of one reaction.

    Kc = exp(dS/R - dH/(RT)) * (P_atm / (R T))**dnu, with dnu the net mole
    change (third bodies excluded).
    """
    from .mechanism import thermo_props

    d_h = 0.0
    d_s = 0.0
    dnu = 0
    for sp_name, nu in reaction.net_stoichiometry().items():
        props = thermo_props(mech.find_species(sp_name), T)
        d_h += nu * props.h_RT
        d_s += nu * props.s_R
        dnu += nu
    return math.exp(d_s - d_h) * (P_ATM / (R_ERG * T)) ** dnu


class KineticsEvaluator:
    """Vectorized mass-action evaluator for one (immutable) mechanism.

    Precomputes stoichiometric matrices, Arrhenius parameter arrays,
    third-body efficiency rows and NASA-7 coefficient tables so that a
    single state evaluation is a handful of numpy operations.  Instances
    are stateless after construction and safe for concurrent use.
    """

    def __init__(self, mech):
        self.mech = mech
        ns = len(mech.species)
        nr = len(mech.reactions)
        self.n_species = ns
        self.n_reactions = nr

        self.nu_f = np.zeros((nr, ns))
        self.nu_r = np.zeros((nr, ns))
        kinds = []
        eff = np.ones((nr, ns))
        low_A = np.zeros(nr)
        low_beta = np.zeros(nr)
        low_EaR = np.zeros(nr)
        troe_fc = np.ones(nr)
        reversible = np.zeros(nr, dtype=bool)
        line_A, line_beta, line_EaR, line_rxn = [], [], [], []

        for r, rxn in enumerate(mech.reactions):
            for sp, nu in rxn.reactants.items():
                self.nu_f[r, mech.species_index(sp)] += nu
            for sp, nu in rxn.products.items():
                self.nu_r[r, mech.species_index(sp)] += nu
            kinds.append(rxn.rate.kind)
            reversible[r] = rxn.reversible
            for sp, e in rxn.rate.efficiencies.items():
                eff[r, mech.species_index(sp)] = e
            if rxn.rate.kind == FALLOFF:
                low_A[r] = rxn.rate.low.A
                low_beta[r] = rxn.rate.low.beta
                low_EaR[r] = rxn.rate.low.Ea / R_CAL
                troe_fc[r] = rxn.rate.troe_fc
            for arr in rxn.arrhenius_lines:
                line_A.append(arr.A)
                line_beta.append(arr.beta)
                line_EaR.append(arr.Ea / R_CAL)
                line_rxn.append(r)

        self.nu_net = self.nu_r - self.nu_f
        self.dnu = self.nu_net.sum(axis=1)
        self.reversible = reversible
        self.eff = eff
        self.is_tb = np.array([k == THIRD_BODY for k in kinds])
        self.is_falloff = np.array([k == FALLOFF for k in kinds])
        self.needs_m = self.is_tb | self.is_falloff
        self.low_A = low_A
        self.low_beta = low_beta
        self.low_EaR = low_EaR
        self.log_fc = np.log10(troe_fc)
        self.line_A = np.array(line_A)
        self.line_beta = np.array(line_beta)
        self.line_EaR = np.array(line_EaR)
        self.line_rxn = np.array(line_rxn)

        # NASA-7 tables, one row per species and branch
        self.t_mid = np.array([sp.thermo.t_mid for sp in mech.species])
        self.t_low = np.array([sp.thermo.t_low for sp in mech.species])
        self.t_high = np.array([sp.thermo.t_high for sp in mech.species])
        self.coeffs_low = np.array([sp.thermo.coeffs_low for sp in mech.species])
        self.coeffs_high = np.array([sp.thermo.coeffs_high for sp in mech.species])
        self.molar_masses = np.array(mech.molar_masses())

        # hot-path precomputation
        self._tlow_max = float(self.t_low.max())
        self._thigh_min = float(self.t_high.min())
        self._tmid_min = float(self.t_mid.min())
        self._tmid_max = float(self.t_mid.max())
        self.falloff_idx = np.flatnonzero(self.is_falloff)
        self.tb_idx = np.flatnonzero(self.is_tb)
        self._all_reversible = bool(reversible.all())
        self._f_rxn, self._f_sp = np.nonzero(self.nu_f)
        self._f_pow = self.nu_f[self._f_rxn, self._f_sp]
        self._r_rxn, self._r_sp = np.nonzero(self.nu_r)
        self._r_pow = self.nu_r[self._r_rxn, self._r_sp]

    def thermo(self, T):
        """cp/R, h/RT and s/R arrays for all species at T."""
        if T < self._tlow_max or T > self._thigh_min:
            raise MechanismError(f"T={T} K outside the common thermo range")
        if T < self._tmid_min:
            a = self.coeffs_low
        elif T >= self._tmid_max:
            a = self.coeffs_high
        else:
            a = np.where((T < self.t_mid)[:, None], self.coeffs_low, self.coeffs_high)
        cp_R = a[:, 0] + T * (a[:, 1] + T * (a[:, 2] + T * (a[:, 3] + T * a[:, 4])))
        h_RT = (
            a[:, 0]
            + T * (a[:, 1] / 2 + T * (a[:, 2] / 3 + T * (a[:, 3] / 4 + T * a[:, 4] / 5)))
            + a[:, 5] / T
        )
        s_R = (
            a[:, 0] * math.log(T)
            + T * (a[:, 1] + T * (a[:, 2] / 2 + T * (a[:, 3] / 3 + T * a[:, 4] / 4)))
            + a[:, 6]
        )
        return cp_R, h_RT, s_R

    def forward_constants(self, T):
        """Effective forward rate constants at T given per-reaction M."""
        kf_lines = self.line_A * T**self.line_beta * np.exp(-self.line_EaR / T)
        return np.bincount(self.line_rxn, weights=kf_lines,
                           minlength=self.n_reactions)

    def evaluate(self, T, conc, thermo=None):
        """Full RateEvaluation at (T, conc); negative c clipped to zero.

        Extreme parameter values may overflow to inf; downstream failure
        handling deals with non-finite rates, so no warnings are raised.
        A precomputed ``thermo(T)`` triple may be passed to avoid evaluating
        the polynomials twice per call site.
        """
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            return self._evaluate(T, conc, thermo)

    def _evaluate(self, T, conc, thermo=None):
        conc = np.asarray(conc, dtype=float)
        clipped = bool((conc < 0.0).any())
        c = np.maximum(conc, 0.0) if clipped else conc

        kf = self.forward_constants(T)
        m_eff = self.eff @ c

        # TROE falloff blending on the affected rows
        idx = self.falloff_idx
        if idx.size:
            k_low = self.low_A[idx] * T**self.low_beta[idx] * np.exp(-self.low_EaR[idx] / T)
            pr = k_low * m_eff[idx] / kf[idx]
            keff = np.zeros(idx.size)
            pos = pr > 0.0
            if pos.any():
                log_fc = self.log_fc[idx][pos]
                cc = -0.4 - 0.67 * log_fc
                nn = 0.75 - 1.27 * log_fc
                x = np.log10(pr[pos]) + cc
                log_f = log_fc / (1.0 + (x / (nn - 0.14 * x)) ** 2)
                keff[pos] = kf[idx][pos] * (pr[pos] / (1.0 + pr[pos])) * 10.0**log_f
            kf[idx] = keff

        _, h_RT, s_R = self.thermo(T) if thermo is None else thermo
        kc = np.exp(self.nu_net @ (s_R - h_RT)) * (P_ATM / (R_ERG * T)) ** self.dnu
        if self._all_reversible:
            kr = kf / kc
        else:
            kr = np.where(self.reversible, kf / kc, 0.0)

        cf = np.ones(self.n_reactions)
        np.multiply.at(cf, self._f_rxn, c[self._f_sp] ** self._f_pow)
        cr = np.ones(self.n_reactions)
        np.multiply.at(cr, self._r_rxn, c[self._r_sp] ** self._r_pow)
        q = kf * cf - kr * cr
        tb = self.tb_idx
        if tb.size:
            q[tb] *= m_eff[tb]
        wdot = self.nu_net.T @ q
        return RateEvaluation(kf=kf, kr=kr, q=q, wdot=wdot, clipped=clipped)

    def wdot(self, T, conc):
        """Species production rates only (fast path for integrators)."""
        return self.evaluate(T, conc).wdot


def production_rates(mech, state):
    """Net rates of progress and species production rates at a state."""
    return KineticsEvaluator(mech).evaluate(state.T, state.conc)
