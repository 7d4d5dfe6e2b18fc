"""Posterior uncertainty propagation.

Select thinned parameter samples from a stored chain, push each through a
prediction case (apply parameters, integrate, extract the observable) and
report the distribution of the predicted quantity.  Per-sample simulations
are independent, so any map function may evaluate them concurrently;
results are keyed by (walker, sweep) provenance, never by completion order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .calibration import apply_parameters
from .mechanism import serialize_mechanism
from .reactor import OK, extract_observable, integrate


@dataclass(frozen=True)
class ThinningSpec:
    """Deterministic chain thinning: ``n_picks`` sweeps per walker starting
    at ``start`` with the given ``stride``, yielding L * n_picks samples."""

    n_picks: int
    start: int
    stride: int

    def __post_init__(self):
        if self.n_picks < 1:
            raise ValueError("n_picks must be >= 1")
        if self.start < 0 or (self.n_picks > 1 and self.stride < 1):
            raise ValueError("start must be >= 0 and stride >= 1")

    def sweeps(self):
        return [self.start + n * self.stride for n in range(self.n_picks)]


def default_thinning(chain, n_picks):
    """Uniform picks from the second half of the chain.

    With burn-in T_b = T/2 the stride is floor((T - T_b) / n_picks), picking
    sweeps T_b + stride, ..., T_b + n_picks*stride = T.
    """
    total = chain.sweeps_completed
    burn = total // 2
    stride = (total - burn) // n_picks
    if stride < 1:
        raise ValueError(
            f"chain too short: {total} sweeps for {n_picks} picks per walker")
    return ThinningSpec(n_picks=n_picks, start=burn + stride, stride=stride)


@dataclass(frozen=True)
class ThetaSample:
    """One thinned posterior draw with its provenance in the chain."""

    walker: int
    sweep: int
    theta: np.ndarray


def thin(chain, spec):
    """Select the walker states at the sweeps given by spec.

    Returns L * n_picks ThetaSamples ordered by (sweep, walker); all
    provenance pairs are distinct by construction.
    """
    ts = chain.thin_store
    samples = []
    for sweep in spec.sweeps():
        if sweep % ts != 0:
            raise ValueError(
                f"sweep {sweep} was not stored (thin_store={ts})")
        slot = sweep // ts
        if not 0 <= slot < chain.n_stored:
            raise ValueError(
                f"sweep {sweep} outside the stored range "
                f"[0, {(chain.n_stored - 1) * ts}]")
        for k in range(chain.L):
            samples.append(ThetaSample(
                walker=k, sweep=sweep, theta=chain.walkers[slot, k].copy()))
    return samples


@dataclass
class PropagationResult:
    """Distribution of a predicted observable over posterior samples."""

    samples: list  # ThetaSample, input order
    values: np.ndarray  # nan where the simulation failed
    statuses: list
    mean: float
    std: float
    quantiles: dict
    hist_counts: np.ndarray
    hist_edges: np.ndarray
    n_failed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_samples(self):
        return len(self.samples)

    @property
    def relative_std(self):
        return self.std / abs(self.mean) if self.mean else float("inf")


QUANTILES = (0.05, 0.25, 0.50, 0.75, 0.95)


def _simulate_sample(args):
    mech, pmap, case, cfg, theta = args
    pert = apply_parameters(mech, pmap, theta)
    traj = integrate(pert, case, cfg)
    res = extract_observable(traj, case.observable)
    return res.value, res.status


def propagate(samples, case, mech, pmap, cfg=None, map_fn=map, hist_bins=30):
    """Push every sample through the prediction case and summarize.

    Failed simulations are counted, excluded from the statistics, and
    reported as nan in the per-sample values; they never abort the batch.
    """
    jobs = [(mech, pmap, case, cfg, s.theta) for s in samples]
    outcomes = list(map_fn(_simulate_sample, jobs))
    values = np.array([v if (st == OK and v is not None) else np.nan
                       for v, st in outcomes])
    statuses = [st for _, st in outcomes]
    # sort the successful values so the statistics are bit-identical under
    # any permutation of the input sample list
    good = np.sort(values[~np.isnan(values)])
    n_failed = len(samples) - good.size
    if good.size:
        mean = float(good.mean())
        if good.size == 1 or good[0] == good[-1]:
            std = 0.0
        else:
            std = float(good.std(ddof=1))
        qs = {q: float(v) for q, v in zip(QUANTILES, np.quantile(good, QUANTILES))}
        counts, edges = np.histogram(good, bins=hist_bins)
    else:
        mean = std = float("nan")
        qs = {q: float("nan") for q in QUANTILES}
        counts, edges = np.histogram([], bins=hist_bins)
    return PropagationResult(
        samples=list(samples), values=values, statuses=statuses,
        mean=mean, std=std, quantiles=qs,
        hist_counts=counts, hist_edges=edges, n_failed=n_failed,
        meta={"n_samples": len(samples), "hist_bins": hist_bins},
    )


def export_calibrations(samples, mech, pmap, out_dir):
    """Write one mechanism file per thinned sample into out_dir.

    File names encode the provenance, e.g. ``sample_w003_s07500.mech``.
    Returns the list of written paths.
    """
    import os

    os.makedirs(out_dir, exist_ok=True)
    width = max(5, len(str(max((s.sweep for s in samples), default=0))))
    paths = []
    for s in samples:
        pert = apply_parameters(mech, pmap, s.theta)
        name = f"sample_w{s.walker:03d}_s{s.sweep:0{width}d}.mech"
        path = os.path.join(out_dir, name)
        with open(path, "w") as fh:
            fh.write(serialize_mechanism(pert))
        paths.append(path)
    return paths
