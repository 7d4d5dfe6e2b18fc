"""Active parameters, truncated-Gaussian prior, likelihood and log-posterior.

An active parameter binds one component of the flat vector theta to a
mechanism slot: a pre-exponential factor (by duplicate-line index), the
low-pressure-limit pre-exponential of a falloff reaction, or a third-body
efficiency.  Entries sharing a tie group are driven by a single theta
component.

Problem config files are line oriented:

    [active]
    R9.low_pressure_A mean=6.366e20 sigma=6.366e20 lower=0 upper=8e20
    X6.third_body_efficiency(Ar):tie=x6_rare_gas mean=0.7 sigma=0.7 lower=0 upper=3
    R14.pre_exponential[2] mean=1.3e11 sigma=1.3e11 lower=5e10 upper=4e11

    [targets]
    tgt1 kind=ignition_delay_T_threshold threshold=1600 mode=constant_pressure \
         T0=1200 p0=1 X=H2:0.2959,O2:0.1479,N2:0.5562 t_end=2e-4 d=5.2e-5 sigma=2.6e-6

    [integrator]
    rtol=1e-8 atol=1e-14
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .kinetics import KineticsEvaluator
from .mechanism import FALLOFF, MechanismError
from .reactor import OK, IntegratorConfig, ObservableSpec, ReactorCase, simulate_target

log = logging.getLogger(__name__)

PRE_EXPONENTIAL = "pre_exponential"
LOW_PRESSURE_A = "low_pressure_A"
THIRD_BODY_EFF = "third_body_efficiency"


@dataclass(frozen=True)
class ActiveEntry:
    """One mechanism slot exposed to the sampler."""

    rid: str
    kind: str
    species: str | None = None  # for third_body_efficiency
    line: int = 1  # 1-based duplicate-line index for pre_exponential
    tie: str | None = None
    mean: float = 0.0
    sigma: float = 0.0
    lower: float = 0.0
    upper: float = 0.0

    def slot_name(self):
        name = f"{self.rid}.{self.kind}"
        if self.kind == THIRD_BODY_EFF:
            name += f"({self.species})"
        elif self.kind == PRE_EXPONENTIAL and self.line != 1:
            name += f"[{self.line}]"
        return name


@dataclass(frozen=True)
class ActiveParameterMap:
    """Binding of the flat theta vector to mechanism slots.

    Tied entries share one theta component; ``theta_index[i]`` gives the
    component driving ``entries[i]``.
    """

    entries: tuple

    def __post_init__(self):
        index = {}
        order = []
        for e in self.entries:
            key = e.tie if e.tie is not None else ("#", len(order), e.slot_name())
            if key not in index:
                index[key] = len(index)
            order.append(index[key])
        object.__setattr__(self, "theta_index", tuple(order))
        object.__setattr__(self, "n_theta", len(index))

    def component_names(self):
        """One representative slot name per theta component."""
        names = [None] * self.n_theta
        for e, i in zip(self.entries, self.theta_index):
            if names[i] is None:
                names[i] = e.tie if e.tie is not None else e.slot_name()
        return names


@dataclass(frozen=True)
class PriorSpec:
    """Independent truncated Gaussians, one per theta component."""

    mean: np.ndarray
    sigma: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        for name in ("mean", "sigma", "lower", "upper"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not np.all(self.lower < self.upper):
            raise ValueError("prior bounds require lower < upper")
        if not np.all((self.mean >= self.lower) & (self.mean <= self.upper)):
            raise ValueError("prior mean must lie inside its bounds")
        if not np.all(self.sigma > 0):
            raise ValueError("prior sigma must be positive")

    @property
    def n_theta(self):
        return len(self.mean)

    def in_bounds(self, theta):
        return bool(np.all((theta >= self.lower) & (theta <= self.upper)))


@dataclass(frozen=True)
class ExperimentTarget:
    """One calibration datum: a reactor case, measured value and its sigma."""

    label: str
    case: ReactorCase
    d: float
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"target {self.label}: sigma must be positive")


@dataclass(frozen=True)
class PosteriorProblem:
    mechanism: object
    pmap: ActiveParameterMap
    prior: PriorSpec
    targets: tuple
    cfg: IntegratorConfig = field(default_factory=IntegratorConfig)

    def __post_init__(self):
        if len(self.targets) < 1:
            raise ValueError("need at least one calibration target")
        if self.pmap.n_theta != self.prior.n_theta:
            raise ValueError("parameter map and prior dimensions differ")
        # fail early on unresolvable species
        for t in self.targets:
            for sp in t.case.composition:
                self.mechanism.species_index(sp)

    def log_posterior(self, theta):
        return log_posterior(self, theta)

    def __call__(self, theta):
        return log_posterior(self, theta)


def _apply_entry(reaction, entry, value):
    rate = reaction.rate
    if entry.kind == PRE_EXPONENTIAL:
        lines = list(reaction.arrhenius_lines)
        if not 1 <= entry.line <= len(lines):
            raise MechanismError(
                f"{reaction.rid}: no duplicate line {entry.line}")
        lines[entry.line - 1] = replace(lines[entry.line - 1], A=value)
        return replace(reaction, rate=replace(rate, arrhenius=lines[0]),
                       duplicates=tuple(lines[1:]))
    if entry.kind == LOW_PRESSURE_A:
        if rate.kind != FALLOFF:
            raise MechanismError(f"{reaction.rid}: not a falloff reaction")
        return replace(reaction, rate=replace(rate, low=replace(rate.low, A=value)))
    if entry.kind == THIRD_BODY_EFF:
        if entry.species not in rate.efficiencies:
            raise MechanismError(
                f"{reaction.rid}: no third-body efficiency for {entry.species}")
        effs = dict(rate.efficiencies)
        effs[entry.species] = value
        return replace(reaction, rate=replace(rate, efficiencies=effs))
    raise ValueError(f"unknown active-parameter kind {entry.kind!r}")


def apply_parameters(mech, pmap, theta):
    """Overwrite the mapped mechanism slots with theta; everything else is
    untouched.  Tied slots receive the same component.  Idempotent."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (pmap.n_theta,):
        raise ValueError(
            f"theta has length {theta.size}, parameter map needs {pmap.n_theta}")
    by_rid = {rxn.rid: rxn for rxn in mech.reactions}
    for entry, idx in zip(pmap.entries, pmap.theta_index):
        if entry.rid not in by_rid:
            raise MechanismError(f"unknown reaction {entry.rid!r}")
        by_rid[entry.rid] = _apply_entry(by_rid[entry.rid], entry, float(theta[idx]))
    reactions = tuple(by_rid[rxn.rid] for rxn in mech.reactions)
    return replace(mech, reactions=reactions)


def log_prior(prior, theta):
    """Truncated-Gaussian log density up to its normalization constant."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (prior.n_theta,):
        raise ValueError(
            f"theta has length {theta.size}, prior needs {prior.n_theta}")
    if not prior.in_bounds(theta):
        return -math.inf
    z = (theta - prior.mean) / prior.sigma
    return -0.5 * float(z @ z)


def log_likelihood(problem, theta):
    """Gaussian mismatch over all targets; -inf if any simulation fails."""
    try:
        mech = apply_parameters(problem.mechanism, problem.pmap, theta)
        evaluator = KineticsEvaluator(mech)
    except (MechanismError, ValueError) as exc:
        log.warning("parameter application failed (%s) at theta=%s", exc, list(theta))
        return -math.inf
    total = 0.0
    for target in problem.targets:
        res = simulate_target(mech, target.case, problem.cfg, evaluator=evaluator)
        if res.status != OK:
            log.warning("target %s %s at theta=%s", target.label, res.status, list(theta))
            return -math.inf
        total -= (res.value - target.d) ** 2 / (2.0 * target.sigma**2)
    return total


def log_posterior(problem, theta):
    """log prior + log likelihood; skips all simulations out of bounds."""
    lp = log_prior(problem.prior, theta)
    if lp == -math.inf:
        return -math.inf
    return lp + log_likelihood(problem, theta)


# ---------------------------------------------------------------------------
# problem config files

class ProblemConfigError(ValueError):
    def __init__(self, message, line=None):
        super().__init__(message + (f" (line {line})" if line is not None else ""))
        self.line = line


_ACTIVE_RE = re.compile(
    r"^(?P<rid>[^.\s]+)\.(?P<kind>pre_exponential|low_pressure_A|third_body_efficiency)"
    r"(?:\((?P<species>[^)]+)\))?"
    r"(?:\[(?P<line>\d+)\])?"
    r"(?::tie=(?P<tie>\S+))?$"
)


def _split_sections(text):
    sections = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.match(r"^\[(\w+)\]$", line)
        if m:
            current = m.group(1)
            sections.setdefault(current, [])
            continue
        if current is None:
            raise ProblemConfigError(f"content before any [section]: {line!r}", lineno)
        sections[current].append((lineno, line))
    return sections


def _kv_tokens(tokens, lineno, what):
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ProblemConfigError(f"unexpected token {tok!r} in {what}", lineno)
        k, v = tok.split("=", 1)
        out[k] = v
    return out


def parse_active_entries(rows):
    entries = []
    for lineno, line in rows:
        parts = line.split()
        m = _ACTIVE_RE.match(parts[0])
        if not m:
            raise ProblemConfigError(f"bad active-parameter slot {parts[0]!r}", lineno)
        kv = _kv_tokens(parts[1:], lineno, "active entry")
        try:
            numbers = {k: float(kv[k]) for k in ("mean", "sigma", "lower", "upper")}
        except KeyError as exc:
            raise ProblemConfigError(f"active entry missing {exc}", lineno) from None
        kind = m.group("kind")
        if kind == THIRD_BODY_EFF and not m.group("species"):
            raise ProblemConfigError("third_body_efficiency needs (species)", lineno)
        entries.append(ActiveEntry(
            rid=m.group("rid"), kind=kind, species=m.group("species"),
            line=int(m.group("line") or 1), tie=m.group("tie"), **numbers))
    return entries


def _build_prior(pmap):
    n = pmap.n_theta
    mean = np.zeros(n)
    sigma = np.zeros(n)
    lower = np.zeros(n)
    upper = np.zeros(n)
    seen = [False] * n
    for e, i in zip(pmap.entries, pmap.theta_index):
        vals = (e.mean, e.sigma, e.lower, e.upper)
        if seen[i]:
            if vals != (mean[i], sigma[i], lower[i], upper[i]):
                raise ProblemConfigError(
                    f"tied entries of {e.tie!r} disagree on prior values")
        else:
            mean[i], sigma[i], lower[i], upper[i] = vals
            seen[i] = True
    return PriorSpec(mean=mean, sigma=sigma, lower=lower, upper=upper)


def _parse_observable(kv, lineno):
    kind = kv.pop("kind", None)
    if kind is None:
        raise ProblemConfigError("target needs kind=...", lineno)
    try:
        if kind == "ignition_delay_T_threshold":
            return ObservableSpec(kind=kind, threshold=float(kv.pop("threshold")))
        if kind == "ignition_delay_max_dTdt":
            return ObservableSpec(kind=kind)
        if kind == "time_to_fuel_fraction":
            return ObservableSpec(kind=kind, species=kv.pop("species"),
                                  fraction=float(kv.pop("fraction")))
        if kind == "state_at_time":
            return ObservableSpec(kind=kind, time=float(kv.pop("at")),
                                  quantity=kv.pop("quantity"))
    except KeyError as exc:
        raise ProblemConfigError(f"observable {kind} missing {exc}", lineno) from None
    raise ProblemConfigError(f"unknown observable kind {kind!r}", lineno)


def parse_target_rows(rows):
    targets = []
    for lineno, line in rows:
        parts = line.split()
        label = parts[0]
        kv = _kv_tokens(parts[1:], lineno, f"target {label}")
        obs = _parse_observable(kv, lineno)
        try:
            composition = {}
            for item in kv.pop("X").split(","):
                name, val = item.split(":", 1)
                composition[name] = float(val)
            case = ReactorCase(
                mode=kv.pop("mode", "constant_pressure"),
                T0=float(kv.pop("T0")),
                p0_atm=float(kv.pop("p0")),
                composition=composition,
                t_end=float(kv.pop("t_end")),
                observable=obs,
            )
            target = ExperimentTarget(label=label, case=case,
                                      d=float(kv.pop("d")), sigma=float(kv.pop("sigma")))
        except KeyError as exc:
            raise ProblemConfigError(f"target {label} missing {exc}", lineno) from None
        except ValueError as exc:
            raise ProblemConfigError(f"target {label}: {exc}", lineno) from None
        if kv:
            raise ProblemConfigError(
                f"target {label}: unknown keys {sorted(kv)}", lineno)
        targets.append(target)
    return targets


def _parse_integrator(rows):
    kv = {}
    for lineno, line in rows:
        kv.update(_kv_tokens(line.split(), lineno, "integrator config"))
    kwargs = {}
    for key in ("rtol", "atol", "initial_dt"):
        if key in kv:
            kwargs[key] = float(kv.pop(key))
    if "max_steps" in kv:
        kwargs["max_steps"] = int(float(kv.pop("max_steps")))
    for key in ("stop_at_event", "refine_events"):
        if key in kv:
            kwargs[key] = kv.pop(key).lower() in ("1", "true", "yes")
    if kv:
        raise ProblemConfigError(f"unknown integrator keys {sorted(kv)}")
    return IntegratorConfig(**kwargs)


def parse_active_map(text):
    """Parse a config file's [active] section into (map, prior)."""
    sections = _split_sections(text)
    entries = parse_active_entries(sections.get("active", []))
    if not entries:
        raise ProblemConfigError("no active parameters defined")
    pmap = ActiveParameterMap(entries=tuple(entries))
    return pmap, _build_prior(pmap)


def parse_problem(text, mechanism):
    """Parse a full problem config ([active] + [targets] + [integrator])."""
    sections = _split_sections(text)
    entries = parse_active_entries(sections.get("active", []))
    if not entries:
        raise ProblemConfigError("no active parameters defined")
    pmap = ActiveParameterMap(entries=tuple(entries))
    prior = _build_prior(pmap)
    targets = parse_target_rows(sections.get("targets", []))
    cfg = _parse_integrator(sections.get("integrator", []))
    return PosteriorProblem(mechanism=mechanism, pmap=pmap, prior=prior,
                            targets=tuple(targets), cfg=cfg)


def _fmt(x):
    return f"{x:.17g}"


def format_active_entries(pmap):
    lines = ["[active]"]
    for e in pmap.entries:
        slot = e.slot_name() + (f":tie={e.tie}" if e.tie is not None else "")
        lines.append(
            f"{slot} mean={_fmt(e.mean)} sigma={_fmt(e.sigma)}"
            f" lower={_fmt(e.lower)} upper={_fmt(e.upper)}")
    return lines


def format_target(target):
    case = target.case
    obs = case.observable
    parts = [target.label, f"kind={obs.kind}"]
    if obs.kind == "ignition_delay_T_threshold":
        parts.append(f"threshold={_fmt(obs.threshold)}")
    elif obs.kind == "time_to_fuel_fraction":
        parts += [f"species={obs.species}", f"fraction={_fmt(obs.fraction)}"]
    elif obs.kind == "state_at_time":
        parts += [f"at={_fmt(obs.time)}", f"quantity={obs.quantity}"]
    comp = ",".join(f"{k}:{_fmt(v)}" for k, v in case.composition.items())
    parts += [
        f"mode={case.mode}", f"T0={_fmt(case.T0)}", f"p0={_fmt(case.p0_atm)}",
        f"X={comp}", f"t_end={_fmt(case.t_end)}",
        f"d={_fmt(target.d)}", f"sigma={_fmt(target.sigma)}",
    ]
    return " ".join(parts)


def format_problem(pmap, targets, cfg):
    lines = format_active_entries(pmap)
    lines.append("")
    lines.append("[targets]")
    lines.extend(format_target(t) for t in targets)
    lines.append("")
    lines.append("[integrator]")
    lines.append(f"rtol={_fmt(cfg.rtol)} atol={_fmt(cfg.atol)} max_steps={cfg.max_steps}")
    lines.append("")
    return "\n".join(lines)


def baseline_active_map():
    """The bundled 31-parameter active map and its truncated-Gaussian prior."""
    from importlib.resources import files

    return parse_active_map(
        files("kincal.data").joinpath("h2o2_active31.cfg").read_text())
