"""Command-line experiment runner.

Every subcommand reads a YAML config, writes CSV files to the output
directory and records them in ``manifest.json``.  The exit status is 0 only
if no check failed and no grid point was flagged.
"""
import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .config import ParseError, config_from_raw, load_raw, read_config_text
from .env import (certificate_violations, ergodicity_certificate, stationary_distribution,
                  validate_env)
from .errors import BankerWalkError
from .homogenize import Homogenizer, effective_coeffs
from .kernel import validate_kernel
from .regimes import CovarianceParams, estimate_mean_deadlock
from .rsde import DiffusionSpec, hit_times, simulate_rsde
from .walk import (WalkConfig, covariance_with_se, free_endpoints, ks_distance, ks_noise,
                   ks_trend_ok, monte_carlo_deadlock, simulate_free, simulate_reflected)

ENV_LABELS = {"negative": "stochastic", "row_sum": "stochastic",
              "reducible": "A.2 irreducible", "periodic": "A.3 aperiodic"}


def fmt(x):
    """17-significant-digit rendering; integers and booleans stay integral."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")
    return path


def _axes(prefix, d):
    return [f"{prefix}_{k + 1}" for k in range(d)]


def _matrix_cols(prefix, d):
    return [f"{prefix}_{k + 1}{l + 1}" for k in range(d) for l in range(d)]


class Run:
    """Collects output files, checks and censoring for one subcommand."""

    def __init__(self, cfg, out_dir, workers):
        self.cfg = cfg
        self.out = out_dir
        self.workers = workers
        self.files = []
        self.failures = []
        self.censoring = {}
        self.summary = []

    def csv(self, name, header, rows):
        path = write_csv(os.path.join(self.out, name), header, rows)
        self.files.append(name)
        return path

    def check(self, ok, label, detail=""):
        line = f"{'PASS' if ok else 'FAIL'} {label}" + (f": {detail}" if detail else "")
        print(line)
        if not ok:
            self.failures.append(line)
        return ok

    def note(self, line):
        print(line)
        self.summary.append(line)


def _diffusion(cfg, lam):
    sde = cfg.sde
    if sde["a_bar"] is not None:
        return DiffusionSpec.constant(sde["a_bar"], sde["b_bar"], lam=lam)
    env = cfg.build_env()
    return DiffusionSpec.from_coeffs(effective_coeffs(env, cfg.build_kernel(env)), lam)


def _walk_config(cfg, m=None):
    w = cfg.walk
    return WalkConfig(m or w["m"], cfg.kernel["d"], w["lam"], w["horizon_steps"], w["sample_times"])


# subcommands


def cmd_validate(run):
    cfg = run.cfg
    env = cfg.build_env()
    rows = []
    bad = validate_env(env)
    codes = {v.code for v in bad}
    for code, label in (("stochastic", "stochastic"), ("reducible", "A.2 irreducible"),
                        ("periodic", "A.3 aperiodic")):
        hits = [v for v in bad if ENV_LABELS[v.code] == label]
        detail = "; ".join(f"Assumption ({label.split()[0]}): {v}" if label != "stochastic" else str(v)
                           for v in hits)
        run.check(not hits, label, detail)
        rows.append((label, int(not hits), float(len(hits)), detail or "ok"))
    mu = None
    if not codes:
        mu = stationary_distribution(env)
        try:
            cert = ergodicity_certificate(env)
        except BankerWalkError as exc:
            run.check(False, "A.3 Doeblin", f"Assumption (A.3): {exc}")
            rows.append(("A.3 Doeblin", 0, float("nan"), str(exc)))
        else:
            late = certificate_violations(env, cert, mu)
            detail = f"m={cert.m_doeblin} eta={cert.eta:.6g} gamma={cert.gamma:.6g} c={cert.c:.6g}"
            run.check(not late, "A.3 Doeblin", detail if not late else f"bound fails at n={late[:5]}")
            rows.append(("A.3 Doeblin", int(not late), cert.eta, detail))
    if cfg.kernel is not None:
        if mu is None:
            run.check(False, "kernel", "skipped: environment invalid")
            rows.append(("kernel", 0, float("nan"), "skipped: environment invalid"))
        else:
            rep = validate_kernel(cfg.build_kernel(env), mu, seed=cfg.seed & 0xFFFFFFFF)
            items = (("A.1 positivity", rep.p_min), ("A.1 Lipschitz", rep.lipschitz_worst_ratio),
                     ("A.4 centering", rep.max_centering), ("ellipticity", rep.ellipticity_floor))
            for label, value in items:
                hits = [p for p in rep.problems if p.startswith(label)]
                detail = "; ".join(f"Assumption ({label.split()[0]}): {p[len(label):].lstrip(': ')}"
                                   if label[0] == "A" else p for p in hits)
                run.check(not hits, label, detail or f"{value:.6g}")
                rows.append((label, int(not hits), value, detail or "ok"))
            norm = [p for p in rep.problems if p.startswith("normalisation")]
            run.check(not norm, "normalisation", "; ".join(norm) or f"{rep.max_row_error:.3g}")
            rows.append(("normalisation", int(not norm), rep.max_row_error, "; ".join(norm) or "ok"))
    run.csv("validate.csv", ["check", "passed", "value", "detail"],
            [(a, b, c, d.replace(",", ";")) for a, b, c, d in rows])


def cmd_coefficients(run):
    cfg = run.cfg
    env = cfg.build_env()
    kernel = cfg.build_kernel(env)
    h = Homogenizer(env, kernel)
    d = kernel.d
    axis = np.linspace(0.0, 1.0, cfg.coefficients["points"])
    grid = np.stack([g.ravel() for g in np.meshgrid(*([axis] * d), indexing="ij")], axis=1)
    a = h.a_bar(grid)
    b = h.b_bar(grid)
    s = h.sigma_bar(grid)
    low = np.linalg.eigvalsh(a)[:, 0]
    cov_floor = h.covariance_floor(grid)
    resid = h.identity_residual(grid)[0]
    rows = [tuple(grid[n]) + tuple(a[n].ravel()) + tuple(b[n]) + tuple(s[n].ravel())
            + (low[n], cov_floor[n], resid[n]) for n in range(grid.shape[0])]
    header = _axes("y", d) + _matrix_cols("a", d) + _axes("b", d) + _matrix_cols("sigma", d) \
        + ["min_eig_a", "covariance_floor", "identity_residual"]
    run.csv("coefficients.csv", header, rows)
    run.check(low.min() > 0, "ellipticity floor", f"{max(low.min(), 0.0):.6g}")
    run.check(np.all(low >= cov_floor - 1e-8), "min eig a >= covariance floor")
    run.check(resid.max() <= 1e-10, "identity residual", f"{resid.max():.3g}")


def cmd_simulate_walk(run):
    cfg = run.cfg
    env = cfg.build_env()
    kernel = cfg.build_kernel(env)
    wc = _walk_config(cfg)
    sim = simulate_reflected if cfg.walk["reflected"] else simulate_free
    path = sim(env, kernel, wc, cfg.seed, xi0=cfg.walk["xi0"])
    m = wc.m
    rows = [(n / (m * m),) + tuple(path.positions[n] / m) + (int(path.env_states[n]),)
            for n in range(path.positions.shape[0])]
    run.csv("walk_path.csv", ["t"] + _axes("x", kernel.d) + ["env_state"], rows)
    run.note(f"walk path: {len(rows)} points, m={m}")


def cmd_simulate_sde(run, as_path=False):
    cfg = run.cfg
    sde = cfg.sde
    d = cfg.kernel["d"] if sde["a_bar"] is None else sde["a_bar"].shape[0]
    lam = sde["lam"] if sde["lam"] is not None else cfg.walk["lam"]
    spec = _diffusion(cfg, lam)
    x0 = np.zeros(d) if sde["x0"] is None else sde["x0"]
    if as_path:
        p = simulate_rsde(spec, x0, sde["t_max"], sde["dt"], cfg.seed)
        rows = [(p.times[n],) + tuple(p.X[n]) + tuple(p.H[n]) + tuple(p.K[n]) for n in range(p.times.size)]
        run.csv("sde_path.csv", ["t"] + _axes("x", d) + _axes("H", d) + _axes("K", d), rows)
        run.note(f"sde path: {len(rows)} points")
        return
    hs = hit_times(spec, x0, sde["dt"], sde["t_cap"], sde["trials"], cfg.seed, workers=run.workers)
    rows = [(k, hs.t_hit[k]) + tuple(hs.x_hit[k]) + (bool(hs.censored[k]),) for k in range(hs.t_hit.size)]
    run.csv("sde_hits.csv", ["replica", "t_hit"] + _axes("x", d) + ["censored"], rows)
    run.censoring["sde_hits"] = hs.censored_fraction
    run.note(f"sde hit times: mean {hs.t_hit.mean():.6g}, censored {hs.censored_fraction:.4g}")


def cmd_deadlock(run):
    cfg = run.cfg
    env = cfg.build_env()
    kernel = cfg.build_kernel(env)
    wc = _walk_config(cfg)
    res = monte_carlo_deadlock(env, kernel, wc, cfg.walk["trials"], cfg.seed, workers=run.workers,
                               xi0=cfg.walk["xi0"])
    rows = [(k, int(res.t_raw[k]), res.t_rescaled[k]) + tuple(res.exit_points[k]) + (bool(res.censored[k]),)
            for k in range(res.n_trials)]
    run.csv("deadlock.csv", ["replica", "t_raw", "t_rescaled"] + _axes("x", kernel.d) + ["censored"], rows)
    run.censoring["deadlock"] = res.censored_fraction
    st = res.stats
    run.note(f"deadlock m={wc.m}: mean {st['mean']:.6g} se {st['se']:.3g} censored {res.censored_fraction:.4g}")


def cmd_convergence(run):
    cfg = run.cfg
    env = cfg.build_env()
    kernel = cfg.build_kernel(env)
    d = kernel.d
    w, sde = cfg.walk, cfg.sde
    spec = _diffusion(cfg, w["lam"])
    target = spec.a_bar(np.zeros((1, d)))[0]
    sample = hit_times(spec, np.zeros(d), sde["dt"], sde["t_cap"], sde["trials"], cfg.seed, workers=run.workers)
    run.censoring["sde"] = sample.censored_fraction
    # the Gaussian covariance check only applies when the kernel does not depend on y
    y_free = getattr(kernel, "freqs", np.zeros((1, d))).shape[0] == 0
    rows, ks_values = [], []
    for m in w["m_list"]:
        ends = free_endpoints(env, kernel, m, 1.0, w["trials"], cfg.seed, workers=run.workers, xi0=w["xi0"])
        cov, se = covariance_with_se(ends)
        z = float((np.abs(cov - target) / se).max())
        dl = monte_carlo_deadlock(env, kernel, _walk_config(cfg, m), w["trials"], cfg.seed,
                                  workers=run.workers, xi0=w["xi0"])
        ks = ks_distance(dl.t_rescaled, sample.t_hit)
        ks_values.append(ks)
        run.censoring[f"deadlock_m{m}"] = dl.censored_fraction
        rows.append((m, float(np.abs(cov - target).max()), z, ks, dl.stats["mean"], sample.t_hit.mean(),
                     dl.censored_fraction))
        if y_free:
            run.check(z <= 3.0, f"covariance m={m}", f"max |cov - a| / se = {z:.3g}")
        run.note(f"m={m}: KS {ks:.4g}")
    run.csv("convergence.csv", ["m", "cov_err_max", "cov_err_z", "ks", "walk_mean", "sde_mean",
                                "censored_frac"], rows)
    noise = ks_noise(w["trials"], sde["trials"])
    run.check(ks_trend_ok(ks_values, noise), "KS trend", f"{[round(k, 4) for k in ks_values]} noise {noise:.3g}")


def cmd_regimes(run):
    cfg = run.cfg
    r = cfg.regimes
    params = CovarianceParams(r["rho1"], r["rho2"], r["s"])
    spec = DiffusionSpec.constant(params.matrix(), lam=r["grid"][0])
    est = estimate_mean_deadlock(spec, r["grid"], r["trials"], r["dt"], r["t_cap"], cfg.seed, workers=run.workers)
    rows = list(zip(est.lambda_grid, est.means, est.ses, est.censored_fractions))
    run.csv("regimes.csv", ["lambda", "mean", "se", "censored_frac"], rows)
    for lam, frac in zip(est.lambda_grid[est.flagged], est.censored_fractions[est.flagged]):
        run.check(False, f"censoring at lambda={lam:.6g}", f"{frac:.3g} > 0.2, point unusable")
    run.censoring["regimes"] = dict(zip(map(fmt, est.lambda_grid), est.censored_fractions.tolist()))
    run.note(est.verdict())
    run.check(est.passes(), "regime fit", est.verdict())


COMMANDS = {
    "validate": cmd_validate,
    "coefficients": cmd_coefficients,
    "simulate-walk": cmd_simulate_walk,
    "simulate-sde": cmd_simulate_sde,
    "deadlock": cmd_deadlock,
    "convergence": cmd_convergence,
    "regimes": cmd_regimes,
}
NEEDS_KERNEL = {"coefficients", "simulate-walk", "deadlock", "convergence"}


def build_parser():
    parser = argparse.ArgumentParser(prog="bankerwalk", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--out", help="output directory (overrides output_dir)")
        if name == "simulate-sde":
            p.add_argument("--dt", type=float)
            p.add_argument("--t-cap", type=float)
            p.add_argument("--trials", type=int)
            p.add_argument("--lambda", dest="lam", type=float)
            p.add_argument("--path", action="store_true", help="emit one path instead of hit times")
        if name == "regimes":
            p.add_argument("--rho1", type=float)
            p.add_argument("--rho2", type=float)
            p.add_argument("--s", type=float)
            p.add_argument("--grid", help="comma-separated lambda values")
            p.add_argument("--trials", type=int)
            p.add_argument("--dt", type=float)
    return parser


def resolve_config(args):
    """Load the config (or an empty one) and apply command-line overrides to its raw mapping."""
    raw = load_raw(read_config_text(args.config)) if args.config else {}
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out:
        raw["output_dir"] = args.out
    if args.command == "simulate-sde":
        block = dict(raw.get("sde") or {})
        for key, val in (("dt", args.dt), ("t_cap", args.t_cap), ("trials", args.trials), ("lam", args.lam)):
            if val is not None:
                block[key] = val
        raw["sde"] = block
    if args.command == "regimes":
        block = dict(raw.get("regimes") or {})
        for key in ("rho1", "rho2", "s", "trials", "dt"):
            val = getattr(args, key)
            if val is not None:
                block[key] = val
        if args.grid:
            block["grid"] = [float(x) for x in args.grid.split(",")]
        raw["regimes"] = block
    if "seed" not in raw:
        raise ParseError("missing required value (give it in the config or with --seed)", "seed")
    return config_from_raw(raw)


def _update_manifest(out_dir, command, cfg, run, runtime):
    path = os.path.join(out_dir, "manifest.json")
    manifest = {"version": __version__, "runs": {}}
    if os.path.exists(path):
        with open(path) as fh:
            manifest.update(json.load(fh))
    manifest["version"] = __version__
    manifest["runs"][command] = {
        "config_hash": cfg.canonical_hash(),
        "seed": cfg.seed,
        "workers": run.workers,
        "files": run.files,
        "runtime_s": round(runtime, 3),
        "censoring": run.censoring,
        "summary": run.summary,
        "failures": run.failures,
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command in NEEDS_KERNEL and cfg.kernel is None:
            raise ParseError("missing required block", "kernel")
        if args.command == "simulate-sde" and cfg.sde["a_bar"] is None and cfg.kernel is None:
            raise ParseError("give sde.a_bar or a kernel block", "sde.a_bar")
    except ParseError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_dir = cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    run = Run(cfg, out_dir, max(1, args.workers))
    t0 = time.perf_counter()
    try:
        if args.command == "simulate-sde":
            cmd_simulate_sde(run, as_path=args.path)
        else:
            COMMANDS[args.command](run)
    except BankerWalkError as exc:
        run.check(False, "error", str(exc))
    _update_manifest(out_dir, args.command, cfg, run, time.perf_counter() - t0)
    return 1 if run.failures else 0


if __name__ == "__main__":
    sys.exit(main())
