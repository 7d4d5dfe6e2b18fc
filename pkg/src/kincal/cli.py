"""kincal command-line interface.

Subcommands: rates, simulate, gen-targets, sample, diagnose, propagate,
export-calibrations, chain export.  Structured input lives in config files;
flags only override scalars.  Data goes to stdout or files, logging to
stderr.  Exit codes: 0 success, 2 usage or config error, 1 internal or
numeric failure.

Every artifact-producing run writes a manifest.json recording the command,
the flags and the SHA-256 of every input file, so a run is reproducible
from its manifest alone.  Outputs of interrupted runs carry a ``.partial``
suffix until they are complete.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
from multiprocessing import Pool

import numpy as np

from . import __version__
from .calibration import (ExperimentTarget, ProblemConfigError,
                          _parse_integrator, _parse_observable, _split_sections,
                          baseline_active_map, format_problem, parse_active_map,
                          parse_problem)
from .diagnostics import autocorrelation, integrated_autocorr_time, summarize
from .kinetics import KineticsEvaluator
from .mechanism import (MechanismError, baseline_mechanism, load_mechanism)
from .propagation import (ThinningSpec, default_thinning, export_calibrations,
                          propagate, thin)
from .reactor import (OK, IntegratorConfig, ReactorCase, extract_observable,
                      integrate)
from .sampler import (SamplerConfig, load_chain, resume as resume_chain, run
                      as run_sampler, save_chain)

log = logging.getLogger("kincal")


class UsageError(Exception):
    """Bad input from the user: exits with code 2."""


# ---------------------------------------------------------------------------
# shared helpers

def _load_mech(path):
    if path is None:
        return baseline_mechanism()
    if not os.path.exists(path):
        raise UsageError(f"mechanism file not found: {path}")
    return load_mechanism(path)


def _parse_composition(text):
    comp = {}
    try:
        for item in text.split(","):
            name, val = item.split(":", 1)
            comp[name.strip()] = float(val)
    except ValueError:
        raise UsageError(f"bad composition {text!r}; expected NAME:x,NAME:x")
    return comp


def _parse_case_rows(rows):
    """Case rows use the target syntax without the d= and sigma= fields."""
    cases = []
    for lineno, line in rows:
        parts = line.split()
        label = parts[0]
        kv = {}
        for tok in parts[1:]:
            if "=" not in tok:
                raise ProblemConfigError(f"case {label}: bad token {tok!r}", lineno)
            k, v = tok.split("=", 1)
            kv[k] = v
        obs = _parse_observable(kv, lineno)
        try:
            case = ReactorCase(
                mode=kv.pop("mode", "constant_pressure"),
                T0=float(kv.pop("T0")), p0_atm=float(kv.pop("p0")),
                composition=_parse_composition(kv.pop("X")),
                t_end=float(kv.pop("t_end")), observable=obs)
        except KeyError as exc:
            raise ProblemConfigError(f"case {label} missing {exc}", lineno) from None
        if kv:
            raise ProblemConfigError(
                f"case {label}: unknown keys {sorted(kv)}", lineno)
        cases.append((label, case))
    return cases


def _load_case_file(path):
    """A case file: [case] or [cases] rows, optional [integrator]."""
    if not os.path.exists(path):
        raise UsageError(f"case file not found: {path}")
    with open(path) as fh:
        sections = _split_sections(fh.read())
    rows = sections.get("case", []) + sections.get("cases", [])
    if not rows:
        raise UsageError(f"{path}: no [case] section")
    cases = _parse_case_rows(rows)
    cfg = _parse_integrator(sections.get("integrator", []))
    return cases, cfg


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(out_dir, command, flags, input_paths):
    """Deterministic manifest: identical inputs and flags give an identical
    file (and hash); any change to either changes it."""
    manifest = {
        "tool": "kincal",
        "version": __version__,
        "command": command,
        "flags": {k: flags[k] for k in sorted(flags)},
        "inputs": {p: _sha256(p)
                   for p in sorted(p for p in set(input_paths) if p)},
    }
    blob = json.dumps(manifest, sort_keys=True, indent=2)
    manifest["config_hash"] = hashlib.sha256(blob.encode()).hexdigest()
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def _finalize(partial_paths):
    """Drop the .partial suffix once all outputs are complete."""
    for p in partial_paths:
        os.replace(p, p[: -len(".partial")])


def _pool_map(jobs):
    if jobs and jobs > 1:
        pool = Pool(processes=jobs)
        return pool, lambda fn, seq: pool.map(fn, list(seq))
    return None, map


# ---------------------------------------------------------------------------
# subcommands

def cmd_rates(args):
    mech = _load_mech(args.mech)
    comp = _parse_composition(args.X)
    try:
        names = {sp.name for sp in mech.species}
        unknown = set(comp) - names
        if unknown:
            raise UsageError(f"unknown species in composition: {sorted(unknown)}")
        x = np.array([comp.get(sp.name, 0.0) for sp in mech.species])
        total = x.sum()
        if total <= 0:
            raise UsageError("composition must have positive total")
        x /= total
        from .constants import P_ATM, R_ERG
        conc = x * (args.p * P_ATM) / (R_ERG * args.T)
        ev = KineticsEvaluator(mech)
        res = ev.evaluate(args.T, conc)
    except (ValueError, MechanismError) as exc:
        raise UsageError(str(exc))
    writer = csv.writer(sys.stdout)
    writer.writerow(["id", "kf", "kr", "q"])
    for r, rxn in enumerate(mech.reactions):
        writer.writerow([rxn.rid, f"{res.kf[r]:.10e}", f"{res.kr[r]:.10e}",
                         f"{res.q[r]:.10e}"])
    return 0


def cmd_simulate(args):
    mech = _load_mech(args.mech)
    cases, cfg = _load_case_file(args.case)
    if args.rtol:
        cfg = IntegratorConfig(rtol=args.rtol, atol=cfg.atol,
                               max_steps=cfg.max_steps)
    writer = csv.writer(sys.stdout)
    writer.writerow(["label", "value", "status"])
    worst = 0
    for label, case in cases:
        traj = integrate(mech, case, cfg)
        res = extract_observable(traj, case.observable)
        writer.writerow([label,
                         "" if res.value is None else f"{res.value:.12e}",
                         res.status])
        if res.status != OK:
            log.warning("case %s: %s", label, res.status)
            worst = 1
        if args.trajectory:
            _write_trajectory(traj, mech, args.trajectory, label,
                              multi=len(cases) > 1)
    return worst if args.strict else 0


def _write_trajectory(traj, mech, path, label, multi):
    if multi:
        root, ext = os.path.splitext(path)
        path = f"{root}_{label}{ext}"
    with open(path + ".partial", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "T", "p_atm"] + [f"Y:{sp.name}" for sp in mech.species])
        for i in range(traj.n_points):
            writer.writerow([f"{traj.times[i]:.10e}", f"{traj.T[i]:.10e}",
                             f"{traj.pressure_atm[i]:.10e}"]
                            + [f"{y:.10e}" for y in traj.Y[i]])
    _finalize([path + ".partial"])
    log.info("wrote trajectory %s", path)


def cmd_gen_targets(args):
    mech = _load_mech(args.mech)
    cases, cfg = _load_case_file(args.cases)
    if args.active:
        with open(args.active) as fh:
            pmap, _ = parse_active_map(fh.read())
    else:
        pmap, _ = baseline_active_map()
    rng = np.random.default_rng(args.seed)
    targets = []
    truth = {}
    ev = KineticsEvaluator(mech)
    for label, case in cases:
        traj = integrate(mech, case, cfg, evaluator=ev)
        res = extract_observable(traj, case.observable)
        if res.status != OK:
            raise RuntimeError(
                f"baseline simulation of case {label!r} failed: {res.status}")
        sigma = args.sigma if args.sigma else args.sigma_rel * abs(res.value)
        if sigma <= 0:
            raise UsageError("noise sigma must be positive; set --sigma or "
                             "--sigma-rel")
        d = res.value + rng.normal(0.0, sigma)
        truth[label] = res.value
        targets.append(ExperimentTarget(label=label, case=case, d=d, sigma=sigma))
        log.info("target %s: truth=%.6e d=%.6e sigma=%.3e", label, res.value,
                 d, sigma)
    text = format_problem(pmap, targets, cfg)
    with open(args.out + ".partial", "w") as fh:
        fh.write(text)
    with open(args.out + ".truth.json.partial", "w") as fh:
        json.dump({"seed": args.seed, "truth": truth}, fh, sort_keys=True,
                  indent=2)
        fh.write("\n")
    _finalize([args.out + ".partial", args.out + ".truth.json.partial"])
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    _write_manifest(out_dir, "gen-targets",
                    {"seed": args.seed, "sigma": args.sigma,
                     "sigma_rel": args.sigma_rel, "out": args.out},
                    [args.mech, args.cases, args.active])
    return 0


def cmd_sample(args):
    mech = _load_mech(args.mech)
    if not os.path.exists(args.problem):
        raise UsageError(f"problem file not found: {args.problem}")
    with open(args.problem) as fh:
        problem = parse_problem(fh.read(), mech)
    cfg = SamplerConfig(a=args.a, L=args.walkers, sweeps=args.sweeps,
                        seed=args.seed, thin_store=args.thin_store)
    os.makedirs(args.out, exist_ok=True)
    chain_path = os.path.join(args.out, "chain.kchn")
    partial = chain_path + ".partial"
    pool, map_fn = _pool_map(args.jobs)

    def progress(t, state):
        if t % max(1, args.sweeps // 20) == 0:
            log.info("sweep %d/%d  best logpost %.4g", t, args.sweeps,
                     float(state.log_post.max()))

    try:
        if args.resume and os.path.exists(chain_path):
            log.info("resuming from %s", chain_path)
            chain = resume_chain(load_chain(chain_path), problem, cfg,
                                 map_fn=map_fn, chain_path=partial,
                                 checkpoint_every=args.checkpoint_every,
                                 progress_fn=progress)
        else:
            chain = run_sampler(problem, problem.prior, cfg, map_fn=map_fn,
                                chain_path=partial,
                                checkpoint_every=args.checkpoint_every,
                                progress_fn=progress)
    finally:
        if pool is not None:
            pool.close()
            pool.join()
    chain.config["parameter_names"] = list(problem.pmap.component_names())
    save_chain(chain, chain_path)
    if os.path.exists(partial):
        os.remove(partial)
    _write_manifest(args.out, "sample",
                    {"a": args.a, "walkers": args.walkers, "sweeps": args.sweeps,
                     "seed": args.seed, "thin_store": args.thin_store},
                    [args.mech, args.problem])
    frac = chain.accept_counts.sum() / max(1, cfg.L * cfg.sweeps)
    log.info("done: %d sweeps, mean acceptance %.3f", cfg.sweeps, frac)
    return 0


def cmd_diagnose(args):
    chain = load_chain(args.chain)
    names = chain.config.get("parameter_names") or \
        [f"theta_{i}" for i in range(chain.n_theta)]
    burn = args.burn_in if args.burn_in is not None else chain.n_stored // 2
    os.makedirs(args.out, exist_ok=True)
    partials = []

    acf_path = os.path.join(args.out, "autocorr.csv.partial")
    results = []
    for i in range(chain.n_theta):
        results.append(autocorrelation(chain.walkers[:, :, i], burn_in=burn,
                                       s_max=args.s_max))
    with open(acf_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lag"] + names)
        for s in range(results[0].lags.size):
            writer.writerow([int(results[0].lags[s])]
                            + [f"{r.rho[s]:.10e}" for r in results])
    partials.append(acf_path)

    summ = summarize(chain.flat_samples(burn), names=names)
    summ_path = os.path.join(args.out, "summary.csv.partial")
    with open(summ_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["name", "mean", "std", "hist_mode"] + \
            [f"q{int(100 * q):02d}" for q in sorted(summ.parameters[0].quantiles)]
        if args.tau:
            header.append("tau_int")
        writer.writerow(header)
        for i, p in enumerate(summ.parameters):
            row = [p.name, f"{p.mean:.10e}", f"{p.std:.10e}",
                   f"{p.hist_mode:.10e}"] + \
                [f"{p.quantiles[q]:.10e}" for q in sorted(p.quantiles)]
            if args.tau:
                row.append(f"{integrated_autocorr_time(results[i]):.6g}")
            writer.writerow(row)
    partials.append(summ_path)

    corr_path = os.path.join(args.out, "correlation.csv.partial")
    with open(corr_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name"] + names)
        for i, name in enumerate(names):
            writer.writerow([name] + [f"{v:.8f}" for v in summ.correlation[i]])
    partials.append(corr_path)
    _finalize(partials)
    _write_manifest(args.out, "diagnose",
                    {"burn_in": burn, "s_max": args.s_max, "tau": args.tau},
                    [args.chain])
    log.info("diagnostics written to %s", args.out)
    return 0


def _thinned(chain, args):
    if args.start is not None or args.stride is not None:
        if args.start is None or args.stride is None:
            raise UsageError("--start and --stride must be given together")
        spec = ThinningSpec(n_picks=args.picks, start=args.start,
                            stride=args.stride)
    else:
        spec = default_thinning(chain, args.picks)
    try:
        return thin(chain, spec), spec
    except ValueError as exc:
        raise UsageError(str(exc))


def cmd_propagate(args):
    mech = _load_mech(args.mech)
    with open(args.problem) as fh:
        pmap, _ = parse_active_map(fh.read())
    chain = load_chain(args.chain)
    if chain.n_theta != pmap.n_theta:
        raise UsageError(
            f"chain has {chain.n_theta} parameters, map has {pmap.n_theta}")
    cases, cfg = _load_case_file(args.case)
    if len(cases) != 1:
        raise UsageError("propagate expects exactly one prediction case")
    label, case = cases[0]
    samples, spec = _thinned(chain, args)
    log.info("propagating %d samples through case %s", len(samples), label)
    pool, map_fn = _pool_map(args.jobs)
    try:
        result = propagate(samples, case, mech, pmap, cfg, map_fn=map_fn)
    finally:
        if pool is not None:
            pool.close()
            pool.join()
    os.makedirs(args.out, exist_ok=True)
    partials = []

    sp = os.path.join(args.out, "samples.csv.partial")
    with open(sp, "w", newline="") as fh:
        writer = csv.writer(fh)
        names = chain.config.get("parameter_names") or \
            [f"theta_{i}" for i in range(chain.n_theta)]
        writer.writerow(["walker", "sweep"] + names + ["observable", "status"])
        for s, v, st in zip(result.samples, result.values, result.statuses):
            writer.writerow([s.walker, s.sweep]
                            + [f"{x:.12e}" for x in s.theta]
                            + ["" if math.isnan(v) else f"{v:.12e}", st])
    partials.append(sp)

    mp = os.path.join(args.out, "summary.csv.partial")
    with open(mp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["statistic", "value"])
        writer.writerow(["n_samples", result.n_samples])
        writer.writerow(["n_failed", result.n_failed])
        writer.writerow(["mean", f"{result.mean:.12e}"])
        writer.writerow(["std", f"{result.std:.12e}"])
        writer.writerow(["relative_std", f"{result.relative_std:.6e}"])
        for q, v in result.quantiles.items():
            writer.writerow([f"q{int(100 * q):02d}", f"{v:.12e}"])
    partials.append(mp)

    hp = os.path.join(args.out, "hist.csv.partial")
    with open(hp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_left", "bin_right", "count"])
        for i, c in enumerate(result.hist_counts):
            writer.writerow([f"{result.hist_edges[i]:.12e}",
                             f"{result.hist_edges[i + 1]:.12e}", int(c)])
    partials.append(hp)
    _finalize(partials)
    _write_manifest(args.out, "propagate",
                    {"picks": args.picks, "start": spec.start,
                     "stride": spec.stride},
                    [args.mech, args.problem, args.chain, args.case])
    log.info("mean %.6e  std %.6e  (%.2f%% of mean), %d failures",
             result.mean, result.std, 100 * result.relative_std,
             result.n_failed)
    return 0


def cmd_export_calibrations(args):
    mech = _load_mech(args.mech)
    with open(args.problem) as fh:
        pmap, _ = parse_active_map(fh.read())
    chain = load_chain(args.chain)
    if chain.n_theta != pmap.n_theta:
        raise UsageError(
            f"chain has {chain.n_theta} parameters, map has {pmap.n_theta}")
    samples, spec = _thinned(chain, args)
    paths = export_calibrations(samples, mech, pmap, args.out)
    _write_manifest(args.out, "export-calibrations",
                    {"picks": args.picks, "start": spec.start,
                     "stride": spec.stride},
                    [args.mech, args.problem, args.chain])
    log.info("wrote %d sample calibrations to %s", len(paths), args.out)
    return 0


def cmd_chain_export(args):
    chain = load_chain(args.chain)
    names = chain.config.get("parameter_names") or \
        [f"theta_{i}" for i in range(chain.n_theta)]
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(["sweep", "walker"] + names + ["log_post"])
        sweeps = chain.stored_sweep_indices()
        for s in range(chain.n_stored):
            for k in range(chain.L):
                writer.writerow([int(sweeps[s]), k]
                                + [f"{x:.12e}" for x in chain.walkers[s, k]]
                                + [f"{chain.log_post[s, k]:.12e}"])
    finally:
        if args.out:
            out.close()
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def build_parser():
    parser = argparse.ArgumentParser(
        prog="kincal",
        description="Bayesian calibration of chemical kinetic mechanisms")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_mech(p):
        p.add_argument("--mech", default=None,
                       help="mechanism file (default: bundled H2/O2 baseline)")

    p = sub.add_parser("rates", help="per-reaction rate constants at a state")
    add_mech(p)
    p.add_argument("--T", type=float, required=True, help="temperature, K")
    p.add_argument("--p", type=float, required=True, help="pressure, atm")
    p.add_argument("--X", required=True, help="mole fractions NAME:x,NAME:x")
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser("simulate", help="run reactor cases, print observables")
    add_mech(p)
    p.add_argument("--case", required=True, help="case config file")
    p.add_argument("--rtol", type=float, default=None)
    p.add_argument("--trajectory", default=None,
                   help="also write the trajectory CSV here")
    p.add_argument("--strict", action="store_true",
                   help="nonzero exit if any observable is missing")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gen-targets",
                       help="simulate cases at the baseline and write a "
                            "problem config with noisy targets")
    add_mech(p)
    p.add_argument("--cases", required=True, help="case list config file")
    p.add_argument("--active", default=None,
                   help="active-parameter config (default: bundled 31-parameter map)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", type=float, default=None, help="absolute noise std")
    p.add_argument("--sigma-rel", type=float, default=0.1,
                   help="noise std as a fraction of the true value")
    p.add_argument("--out", required=True, help="problem config output path")
    p.set_defaults(func=cmd_gen_targets)

    p = sub.add_parser("sample", help="run the ensemble sampler")
    add_mech(p)
    p.add_argument("--problem", required=True, help="problem config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--sweeps", type=int, default=1000)
    p.add_argument("--walkers", type=int, default=64)
    p.add_argument("--a", type=float, default=1.3, help="stretch scale")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--thin-store", type=int, default=1)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--resume", action="store_true",
                   help="continue an existing chain in the output directory")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("diagnose", help="autocorrelation and posterior summary")
    p.add_argument("--chain", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--burn-in", type=int, default=None,
                   help="stored sweeps to discard (default: half)")
    p.add_argument("--s-max", type=int, default=None)
    p.add_argument("--tau", action="store_true",
                   help="also report integrated autocorrelation times "
                        "(unreliable on short chains)")
    p.set_defaults(func=cmd_diagnose)

    def add_thinning(p):
        p.add_argument("--picks", type=int, default=9,
                       help="thinned sweeps per walker")
        p.add_argument("--start", type=int, default=None)
        p.add_argument("--stride", type=int, default=None)

    p = sub.add_parser("propagate",
                       help="push thinned posterior samples through a case")
    add_mech(p)
    p.add_argument("--chain", required=True)
    p.add_argument("--problem", required=True,
                   help="config with the [active] parameter map")
    p.add_argument("--case", required=True, help="prediction case file")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    add_thinning(p)
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("export-calibrations",
                       help="write one mechanism file per thinned sample")
    add_mech(p)
    p.add_argument("--chain", required=True)
    p.add_argument("--problem", required=True)
    p.add_argument("--out", required=True)
    add_thinning(p)
    p.set_defaults(func=cmd_export_calibrations)

    p = sub.add_parser("chain", help="chain file utilities")
    chain_sub = p.add_subparsers(dest="chain_command", required=True)
    pe = chain_sub.add_parser("export", help="dump a chain as CSV")
    pe.add_argument("--chain", required=True)
    pe.add_argument("--out", default=None, help="CSV path (default: stdout)")
    pe.set_defaults(func=cmd_chain_export)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ProblemConfigError, MechanismError,
            FileNotFoundError) as exc:
        log.error("%s", exc)
        return 2
    except BrokenPipeError:
        return 0
    except Exception:
        log.exception("internal error")
        return 1


if __name__ == "__main__":
    sys.exit(main())
