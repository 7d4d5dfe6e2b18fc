"""0D homogeneous adiabatic reactors (constant pressure or constant volume).

The state vector is [T, Y_1..Y_ns] with Y mass fractions.  Integration uses
the stiff BDF method of VODE (via scipy.integrate.ode) in one-step mode, so
the stored trajectory follows the solver's own adaptive steps.  Observables
(ignition delay and friends) are located by linear interpolation between
stored points and refined by bisection re-integration over the bracketing
interval.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import ode

from .constants import P_ATM, R_ERG
from .kinetics import KineticsEvaluator

CONSTANT_PRESSURE = "constant_pressure"
CONSTANT_VOLUME = "constant_volume"

OK = "ok"
NO_EVENT = "no_event"
FAILED = "failed"


@dataclass(frozen=True)
class ObservableSpec:
    """What to extract from a trajectory.

    kinds:
      ignition_delay_T_threshold  first time T crosses ``threshold`` (K)
      ignition_delay_max_dTdt     time of maximum heating rate
      time_to_fuel_fraction       first time Y_species <= fraction * Y_species(0)
      state_at_time               quantity ('T', 'p', or 'Y:<species>') at time t
    """

    kind: str
    threshold: float | None = None
    species: str | None = None
    fraction: float | None = None
    time: float | None = None
    quantity: str | None = None

    def __post_init__(self):
        if self.kind == "ignition_delay_T_threshold":
            if self.threshold is None or self.threshold <= 0:
                raise ValueError("ignition threshold must be positive")
        elif self.kind == "time_to_fuel_fraction":
            if self.species is None or not (0.0 < (self.fraction or 0.0) < 1.0):
                raise ValueError("need a species and a fraction in (0, 1)")
        elif self.kind == "state_at_time":
            if self.time is None or self.quantity is None:
                raise ValueError("need a time and a quantity")
        elif self.kind != "ignition_delay_max_dTdt":
            raise ValueError(f"unknown observable kind {self.kind!r}")


@dataclass(frozen=True)
class ReactorCase:
    """One reactor condition: mode, initial state and the observable."""

    mode: str
    T0: float
    p0_atm: float
    composition: dict  # mole fractions
    t_end: float
    observable: ObservableSpec | None = None

    def __post_init__(self):
        if self.mode not in (CONSTANT_PRESSURE, CONSTANT_VOLUME):
            raise ValueError(f"unknown reactor mode {self.mode!r}")
        if self.T0 <= 0 or self.p0_atm <= 0 or self.t_end <= 0:
            raise ValueError("T0, p0 and t_end must be positive")
        if any(x < 0 for x in self.composition.values()):
            raise ValueError("mole fractions must be nonnegative")
        total = sum(self.composition.values())
        if abs(total - 1.0) > 1e-10:
            raise ValueError(f"mole fractions sum to {total}, expected 1")


@dataclass(frozen=True)
class IntegratorConfig:
    rtol: float = 1e-8
    atol: float = 1e-14
    max_steps: int = 500_000
    initial_dt: float = 1e-12
    jacobian: str = "finite_difference"
    # stop stepping once a threshold-type observable has been bracketed;
    # the trajectory then ends just past the event instead of at t_end
    stop_at_event: bool = False
    # refine event times by bisection re-integration (1e-8 relative); when
    # False, interpolate linearly inside the bracketing step instead
    refine_events: bool = True

    def __post_init__(self):
        if not 0.0 < self.rtol <= 1e-2:
            raise ValueError("rtol must be in (0, 1e-2]")
        if self.atol <= 0 or self.max_steps < 1:
            raise ValueError("atol must be positive and max_steps >= 1")


@dataclass
class ObservableResult:
    value: float | None
    status: str  # OK / NO_EVENT / FAILED


@dataclass
class ReactorTrajectory:
    """Adaptive-step trajectory of one reactor integration."""

    times: np.ndarray
    T: np.ndarray
    Y: np.ndarray  # (n_times, n_species) mass fractions
    pressure_atm: np.ndarray
    dTdt: np.ndarray
    mode: str
    success: bool
    message: str = ""
    # references kept for observable refinement by re-integration
    mech: object = None
    case: object = None
    cfg: object = None
    _evaluator: object = None

    @property
    def n_points(self):
        return len(self.times)


def _mole_to_mass(mech, composition):
    W = np.array(mech.molar_masses())
    x = np.zeros(len(mech.species))
    for name, frac in composition.items():
        x[mech.species_index(name)] = frac
    wbar = float(x @ W)
    return x * W / wbar, wbar


class _ReactorRHS:
    """dY/dt and dT/dt for one case; holds the kinetics evaluator."""

    def __init__(self, mech, case, evaluator=None):
        self.ev = evaluator or KineticsEvaluator(mech)
        self.mode = case.mode
        self.W = self.ev.molar_masses
        self.p0 = case.p0_atm * P_ATM
        y0_mass, wbar0 = _mole_to_mass(mech, case.composition)
        self.Y0 = y0_mass
        # constant-volume density is fixed by the initial state
        self.rho0 = self.p0 * wbar0 / (R_ERG * case.T0)
        self.T0 = case.T0

    def initial_state(self):
        return np.concatenate(([self.T0], self.Y0))

    def density(self, T, Y):
        if self.mode == CONSTANT_VOLUME:
            return self.rho0
        inv_wbar = float(np.maximum(Y, 0.0) @ (1.0 / self.W))
        return self.p0 / (R_ERG * T * inv_wbar)

    def pressure(self, T, Y):
        if self.mode == CONSTANT_PRESSURE:
            return self.p0
        inv_wbar = float(np.maximum(Y, 0.0) @ (1.0 / self.W))
        return self.rho0 * inv_wbar * R_ERG * T

    def __call__(self, t, y):
        T = y[0]
        Y = y[1:]
        rho = self.density(T, Y)
        conc = rho * Y / self.W
        thermo = self.ev.thermo(T)
        wdot = self.ev.evaluate(T, conc, thermo).wdot
        cp_R, h_RT, _ = thermo
        out = np.empty_like(y)
        out[1:] = wdot * self.W / rho
        y_pos = np.maximum(Y, 0.0)
        if self.mode == CONSTANT_PRESSURE:
            # molar enthalpies, mass-based mixture cp
            h = h_RT * R_ERG * T
            cp_mass = float((y_pos / self.W) @ cp_R) * R_ERG
            out[0] = -float(h @ wdot) / (rho * cp_mass)
        else:
            u = (h_RT - 1.0) * R_ERG * T
            cv_mass = float((y_pos / self.W) @ (cp_R - 1.0)) * R_ERG
            out[0] = -float(u @ wdot) / (rho * cv_mass)
        return out


def _make_solver(rhs, t0, y0, cfg, nsteps=None):
    ns = len(y0) - 1
    atol = np.concatenate(([cfg.atol * 1e8], np.full(ns, cfg.atol)))
    r = ode(rhs)
    r.set_integrator(
        "vode",
        method="bdf",
        with_jacobian=True,
        rtol=cfg.rtol,
        atol=atol,
        first_step=cfg.initial_dt,
        nsteps=nsteps if nsteps is not None else 50_000,
    )
    r.set_initial_value(y0, t0)
    return r


def integrate(mech, case, cfg=None, evaluator=None):
    """Integrate one reactor case; never raises on stiff failure.

    Returns a ReactorTrajectory with success=False (and the partial
    trajectory) if the solver stalls, exceeds max_steps, or produces NaNs.
    """
    cfg = cfg or IntegratorConfig()
    rhs = _ReactorRHS(mech, case, evaluator)
    y0 = rhs.initial_state()

    obs = case.observable
    stop_fn = None
    if cfg.stop_at_event and obs is not None:
        if obs.kind == "ignition_delay_T_threshold":
            stop_fn = lambda y: y[0] >= obs.threshold
        elif obs.kind == "time_to_fuel_fraction":
            j = 1 + mech.species_index(obs.species)
            y_target = obs.fraction * y0[j]
            stop_fn = lambda y: y[j] <= y_target

    times = [0.0]
    states = [y0]
    success = True
    message = ""
    try:
        solver = _make_solver(rhs, 0.0, y0, cfg)
        steps = 0
        while solver.t < case.t_end:
            y = solver.integrate(case.t_end, step=True)
            steps += 1
            if not solver.successful() or not np.all(np.isfinite(y)):
                success = False
                message = "integrator step failure"
                break
            times.append(min(solver.t, case.t_end))
            states.append(y.copy())
            if stop_fn is not None and stop_fn(y):
                break
            if steps >= cfg.max_steps:
                success = False
                message = f"max_steps={cfg.max_steps} exceeded"
                break
    except Exception as exc:  # stiff blow-up inside the RHS (e.g. thermo range)
        success = False
        message = f"{type(exc).__name__}: {exc}"

    arr = np.array(states)
    times = np.array(times)
    T = arr[:, 0]
    Y = arr[:, 1:]
    pressure = np.array([rhs.pressure(T[i], Y[i]) for i in range(len(times))]) / P_ATM
    # heating rate from the stored adaptive grid; only used for argmax
    dTdt = np.gradient(T, times) if len(times) > 1 else np.zeros(1)
    return ReactorTrajectory(
        times=times, T=T, Y=Y, pressure_atm=pressure, dTdt=dTdt, mode=case.mode,
        success=success, message=message, mech=mech, case=case, cfg=cfg,
        _evaluator=rhs.ev,
    )


def _reintegrate_to(traj, i_start, t_target):
    """Re-integrate from stored point i_start to exactly t_target."""
    rhs = _ReactorRHS(traj.mech, traj.case, traj._evaluator)
    y0 = np.concatenate(([traj.T[i_start]], traj.Y[i_start]))
    if t_target <= traj.times[i_start]:
        return y0
    cfg = traj.cfg
    dt0 = min(cfg.initial_dt, max((t_target - traj.times[i_start]) * 1e-3, 1e-30))
    cfg = replace(cfg, initial_dt=dt0)
    solver = _make_solver(rhs, traj.times[i_start], y0, cfg)
    y = solver.integrate(t_target)
    if not solver.successful():
        raise RuntimeError("re-integration failure during event refinement")
    return y


def _refine_crossing(traj, i, value_fn, target, rising):
    """Bisect the crossing of value_fn(y) == target inside step [i, i+1]."""
    t_lo, t_hi = traj.times[i], traj.times[i + 1]
    v_lo = value_fn(np.concatenate(([traj.T[i]], traj.Y[i])))
    v_hi = value_fn(np.concatenate(([traj.T[i + 1]], traj.Y[i + 1])))
    if v_hi == v_lo:
        return 0.5 * (t_lo + t_hi)
    if not traj.cfg.refine_events:
        return t_lo + (t_hi - t_lo) * (target - v_lo) / (v_hi - v_lo)
    for _ in range(60):
        if (t_hi - t_lo) <= 1e-8 * max(t_hi, 1e-30):
            break
        t_mid = 0.5 * (t_lo + t_hi)
        v_mid = value_fn(_reintegrate_to(traj, i, t_mid))
        crossed = (v_mid >= target) if rising else (v_mid <= target)
        if crossed:
            t_hi = t_mid
        else:
            t_lo = t_mid
    return 0.5 * (t_lo + t_hi)


def extract_observable(traj, spec):
    """Locate the observable defined by spec on a trajectory.

    Returns an ObservableResult whose status distinguishes a successful
    extraction, an event that never occurred before t_end, and a failed
    integration that did not reach the event.
    """
    if spec.kind == "ignition_delay_T_threshold":
        crossed = np.flatnonzero(traj.T >= spec.threshold)
        if crossed.size == 0:
            return ObservableResult(None, FAILED if not traj.success else NO_EVENT)
        i = int(crossed[0])
        if i == 0:
            return ObservableResult(float(traj.times[0]), OK)
        t = _refine_crossing(traj, i - 1, lambda y: y[0], spec.threshold, rising=True)
        return ObservableResult(float(t), OK)

    if spec.kind == "ignition_delay_max_dTdt":
        if not traj.success:
            return ObservableResult(None, FAILED)
        if traj.n_points < 2:
            return ObservableResult(None, NO_EVENT)
        i = int(np.argmax(traj.dTdt))
        return ObservableResult(float(traj.times[i]), OK)

    if spec.kind == "time_to_fuel_fraction":
        j = traj.mech.species_index(spec.species)
        y_target = spec.fraction * traj.Y[0, j]
        below = np.flatnonzero(traj.Y[:, j] <= y_target)
        if below.size == 0:
            return ObservableResult(None, FAILED if not traj.success else NO_EVENT)
        i = int(below[0])
        if i == 0:
            return ObservableResult(float(traj.times[0]), OK)
        t = _refine_crossing(traj, i - 1, lambda y: y[1 + j], y_target, rising=False)
        return ObservableResult(float(t), OK)

    if spec.kind == "state_at_time":
        if traj.times[-1] < spec.time:
            return ObservableResult(None, FAILED if not traj.success else NO_EVENT)
        i = int(np.searchsorted(traj.times, spec.time, side="right")) - 1
        i = min(i, traj.n_points - 2) if traj.n_points > 1 else 0
        y = _reintegrate_to(traj, i, spec.time) if spec.time > traj.times[i] \
            else np.concatenate(([traj.T[i]], traj.Y[i]))
        rhs = _ReactorRHS(traj.mech, traj.case, traj._evaluator)
        if spec.quantity == "T":
            return ObservableResult(float(y[0]), OK)
        if spec.quantity == "p":
            return ObservableResult(float(rhs.pressure(y[0], y[1:])) / P_ATM, OK)
        if spec.quantity.startswith("Y:"):
            j = traj.mech.species_index(spec.quantity[2:])
            return ObservableResult(float(y[1 + j]), OK)
        raise ValueError(f"unknown quantity {spec.quantity!r}")

    raise ValueError(f"unknown observable kind {spec.kind!r}")


def simulate_target(mech, target, cfg=None, evaluator=None):
    """Simulate one calibration target and extract its observable.

    ``target`` carries a ReactorCase whose ObservableSpec defines the model
    output z_k.  Integration failures become a FAILED ObservableResult, not
    an exception.
    """
    case = target.case if hasattr(target, "case") else target
    traj = integrate(mech, case, cfg, evaluator=evaluator)
    return extract_observable(traj, case.observable)
