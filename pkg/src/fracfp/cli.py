"""Command line harness: one verb per experiment family, deterministic outputs.

Exit codes: 0 success, 1 configuration or I/O error, 2 assumptions fail,
3 degenerate fit, 4 other numerical failure.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import RunConfig, defaults, load_config
from .errors import ConfigError, FitDegenerate, FracFPError

EXIT_OK, EXIT_IO, EXIT_ASSUMPTIONS, EXIT_FIT, EXIT_NUMERIC = 0, 1, 2, 3, 4
VERBS = ("check", "eigensweep", "limit-kappa", "drift", "propagate", "montecarlo", "report")


class StageFailure(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# -- shared helpers ---------------------------------------------------------------------

def build_model(cfg: RunConfig):
    from .equilibria import make_anisotropic, make_oscillatory, make_power_law
    eq = cfg["equilibrium"]
    d, g = eq["d"], cfg.gamma
    if eq["family"] == "classical":
        return make_power_law(d, g, eq["asymmetry_plus"], eq["asymmetry_minus"])
    if eq["family"] == "anisotropic":
        return make_anisotropic(d, g)
    return make_oscillatory(d, g, eq["sigma_osc"], eq["amplitude"])


def _failed_report(cfg: RunConfig, why: str) -> dict:
    d = cfg.d
    return {"a1": {"c1": None, "c2": None, "pass": False}, "a2": {"integral": None, "pass": False},
            "a3": {"samples": [], "pass": False}, "a5": {"sigma": None, "pass": False},
            "beta": 2.0 * cfg.gamma, "d": d, "pass": False, "notes": [why]}


def assumptions(cfg: RunConfig):
    """(report dict, model or None)."""
    from .equilibria import check_assumptions
    try:
        model = build_model(cfg)
    except FracFPError as exc:
        return _failed_report(cfg, f"{type(exc).__name__}: {exc}"), None
    return check_assumptions(model).to_dict(), model


def require_model(cfg: RunConfig):
    rep, model = assumptions(cfg)
    if model is None or (not rep["pass"] and not cfg["equilibrium"]["allow_out_of_range"]):
        raise StageFailure(EXIT_ASSUMPTIONS, "assumptions fail: " + "; ".join(rep["notes"]) if rep["notes"]
                           else "assumptions fail")
    return model


def grid_policy(cfg: RunConfig):
    from .eigensolver import GridPolicy
    g = cfg["grid"]
    return GridPolicy(n=g["n"], stretch=g["stretch"], r0=g["r0"], c=g["c"], vmax=g["vmax"])


def sweep_etas(cfg: RunConfig):
    from .eigensolver import default_etas
    s = cfg["sweep"]
    return np.asarray(s["etas"], dtype=float) if s["etas"] is not None else default_etas(s["n_points"], s["eta_top"])


def run_eigensweep(cfg: RunConfig, model, threads: int):
    """(rows, fit dict, DiffusionFit or None)."""
    from .eigensolver import fit_sweep, run_sweep
    from .limit_problem import drift_j
    etas = sweep_etas(cfg)
    points = run_sweep(model, etas, grid_policy(cfg), tol=cfg["sweep"]["tol"], threads=threads)
    rows, failures, ok, drifts = [], [], [], []
    for p in points:
        j1 = drift_j(model, p.eta).j1 if 0 < p.eta < 1 else float("nan")
        r = p.result
        if r is None:
            failures.append({"eta": p.eta, "error": p.error})
            rows.append([p.eta] + [float("nan")] * 2 + [j1] + [float("nan")] * 2 + ["nan", float("nan")])
            continue
        ok.append(p)
        drifts.append(j1)
        rows.append([p.eta, r.mu.real, r.mu.imag, j1, r.dirichlet, float(np.sqrt(r.norm2)), r.iterations,
                     r.residual])
    vmax = max((p.result.vmax for p in ok), default=float("nan"))
    grid = {"N": cfg["grid"]["n"], "vmax": vmax}
    try:
        fit = fit_sweep(model, [p.eta for p in ok], [p.result.mu for p in ok], drifts)
    except FitDegenerate as exc:
        return rows, {"error": "FitDegenerate", "message": str(exc), "alpha_ref": model.alpha, "grid": grid,
                      "failures": failures}, None
    out = {"alpha_hat": fit.alpha_hat, "alpha_ref": fit.alpha_ref, "kappa_hat": fit.kappa_hat,
           "fit_residual": fit.fit_residual, "grid": grid, "used": fit.used,
           "full": {"alpha": fit.full.alpha, "kappa": fit.full.kappa, "residual": fit.full.residual},
           "lower": None if fit.lower is None else {"alpha": fit.lower.alpha, "kappa": fit.lower.kappa,
                                                    "residual": fit.lower.residual},
           "failures": failures}
    return rows, out, fit


def run_limit(cfg: RunConfig, model, threads: int, kappa_sweep=None):
    from .limit_problem import RescaledGrid, solve_H0_1d
    if model.d != 1:
        raise StageFailure(EXIT_NUMERIC, "limit-kappa solves the one-dimensional limit problem only")
    lim = cfg["limit"]
    grid = RescaledGrid(lim["s_min"], lim["s_max"], lim["n"])
    sol = solve_H0_1d(model, grid, check_real=False, cut=lim["cut"])
    kb = sol.kappa_branch
    out = {"kappa_unified": sol.kappa_unified, "kappa_branch": {"re": kb.real, "im": kb.imag},
           "regime": sol.regime, "kappa_sweep": kappa_sweep,
           "grid": {"s_min": lim["s_min"], "s_max": lim["s_max"], "n": lim["n"]},
           "branch_real": bool(abs(kb.imag) <= 0.01 * abs(kb.real)),
           "residual": max(sol.plus.residual, sol.minus.residual)}
    return out, sol


def run_drift(cfg: RunConfig, model):
    from .limit_problem import drift_j, jm_limit, regime_of
    eps = sorted(cfg["drift"]["eps"], reverse=True)
    vals = [drift_j(model, e) for e in eps]
    reg = regime_of(model)
    jm = float(jm_limit(model)[0]) if reg == "critical" else None
    return {"regime": reg, "beta": model.beta, "d": model.d, "symmetric": model.symmetric,
            "j1": vals[-1].j1, "jm": jm,
            "log_ratio": vals[-1].ratio if reg == "critical" else None,
            "values": [{"eps": v.eps, "j1": v.j1, "asymptote": v.asymptote, "ratio": v.ratio} for v in vals]}


def run_propagate(cfg: RunConfig, model, threads: int, fit=None):
    from .propagator import StepControl, convergence_study, limit_reference
    pc = cfg["propagator"]
    ref = limit_reference(model, pc["reference"], fit)
    study = convergence_study(model, pc["xi"], pc["t"], pc["eps"], ref, policy=grid_policy(cfg),
                              control=StepControl(rel_change=pc["rel_change"]), threads=threads)
    rows = [[c.eps, c.xi, c.t, c.rho.real, c.rho.imag, c.ref.real, c.ref.imag, c.abs_err] for c in study.cells]
    summary = dict(study.summary())
    summary.update({"max_projection_error": study.max_projection_error,
                    "reference": {"kappa": ref.kappa, "alpha": ref.alpha, "source": ref.source},
                    "failures": [{"eps": c.eps, "xi": c.xi, "t": c.t, "error": c.error}
                                 for c in study.cells if c.error]})
    return rows, summary


def run_montecarlo(cfg: RunConfig, model, threads: int, seed: int, fit):
    from .montecarlo import (EquilibriumCDF, empirical_cf, ks_distance, macro_horizon, rescaled_displacement,
                             simulate_sde)
    mc = cfg["montecarlo"]
    T = macro_horizon(model, mc["eps"], mc["t_macro"])
    ens = simulate_sde(model, mc["n"], mc["dt"], T, seed, threads=threads)
    x = rescaled_displacement(ens, model, mc["eps"], mc["t_macro"])
    cf = empirical_cf(x, mc["xi"], n_boot=mc["n_boot"], seed=seed, min_samples=min(10_000, mc["n"]))
    cdf = EquilibriumCDF(model)
    ks0, ks1 = ks_distance(ens.V0, cdf), ks_distance(ens.V, cdf)
    slack = cfg["tolerances"]["cf_slack"]
    checks = []
    for c in cf:
        target = float(np.exp(-fit.kappa_hat * mc["t_macro"] * abs(c.xi) ** fit.alpha_hat))
        dev = abs(c.value - target)
        checks.append({"xi": c.xi, "target": target, "deviation": dev,
                       "pass": bool(dev <= c.ci_radius + slack * target)})
    out = {"cf": [c.to_dict() for c in cf], "checks": checks,
           "kappa_hat": fit.kappa_hat, "alpha_hat": fit.alpha_hat,
           "ks_initial": ks0, "ks_final": ks1, "ks_pass": bool(ks1 < cfg["tolerances"]["ks"]),
           "n": ens.n, "dt": ens.dt, "T": ens.T, "n_steps": ens.n_steps, "seed": ens.seed, "eps": mc["eps"],
           "t_macro": mc["t_macro"]}
    rows = [[i, float(v), float(xx)] for i, (v, xx) in enumerate(zip(ens.V, ens.X))] if mc["snapshot"] else None
    return out, rows


# -- verbs ---------------------------------------------------------------------------------

def cmd_check(cfg, out: Path, threads: int, seed: int) -> int:
    rep, _ = assumptions(cfg)
    io.write_json(out / "assumptions.json", rep)
    return EXIT_OK if rep["pass"] else EXIT_ASSUMPTIONS


def cmd_eigensweep(cfg, out: Path, threads: int, seed: int) -> int:
    model = require_model(cfg)
    rows, fit, _ = run_eigensweep(cfg, model, threads)
    io.write_csv(out / "sweep.csv", ["eta", "re_mu", "im_mu", "j1", "dirichlet", "norm_Meta", "newton_iters",
                                     "residual"], rows)
    io.write_json(out / "fit.json", fit)
    return EXIT_FIT if "error" in fit else EXIT_OK


def cmd_limit_kappa(cfg, out: Path, threads: int, seed: int) -> int:
    model = require_model(cfg)
    _, fit, _ = run_eigensweep(cfg, model, threads)
    res, sol = run_limit(cfg, model, threads, fit.get("kappa_hat"))
    io.write_json(out / "kappa.json", res)
    io.write_csv(out / "H0.csv", ["s", "re_H0", "im_H0", "m"],
                 [[float(s), float(h.real), float(h.imag), float(m)] for s, h, m in zip(sol.s, sol.H0, sol.m)])
    return EXIT_OK


def cmd_drift(cfg, out: Path, threads: int, seed: int) -> int:
    model = require_model(cfg)
    io.write_json(out / "drift.json", run_drift(cfg, model))
    return EXIT_OK


def cmd_propagate(cfg, out: Path, threads: int, seed: int) -> int:
    model = require_model(cfg)
    fit = None
    if cfg["propagator"]["reference"] == "fitted":
        _, _, fit = run_eigensweep(cfg, model, threads)
        if fit is None:
            raise StageFailure(EXIT_FIT, "fitted reference requested but the sweep fit is degenerate")
    rows, summary = run_propagate(cfg, model, threads, fit)
    io.write_csv(out / "propagate.csv", ["eps", "xi", "t", "re_rho", "im_rho", "ref_re", "ref_im", "abs_err"], rows)
    io.write_json(out / "propagate.json", summary)
    return EXIT_OK


def cmd_montecarlo(cfg, out: Path, threads: int, seed: int) -> int:
    model = require_model(cfg)
    _, _, fit = run_eigensweep(cfg, model, threads)
    if fit is None:
        raise StageFailure(EXIT_FIT, "Monte Carlo target needs a non-degenerate sweep fit")
    res, rows = run_montecarlo(cfg, model, threads, seed, fit)
    io.write_json(out / "montecarlo.json", res)
    if rows is not None:
        io.write_csv(out / "ensemble.csv", ["particle", "V", "X"], rows)
    return EXIT_OK


def _stage(fn):
    try:
        return fn()
    except StageFailure as exc:
        return {"missing": True, "reason": str(exc)}
    except FracFPError as exc:
        return {"missing": True, "reason": f"{type(exc).__name__}: {exc}"}


def _read_stage(path: Path, name: str):
    if not path.exists():
        return {"missing": True, "reason": f"run `fracfp {name}` first ({path.name} not found)"}
    try:
        return io.read_json(path)
    except (OSError, ValueError) as exc:
        return {"missing": True, "reason": f"unreadable {path.name}: {exc}"}


def build_report(cfg, out: Path, threads: int) -> dict:
    tol = cfg["tolerances"]
    rep, model = assumptions(cfg)
    report = {"assumptions": rep}
    usable = model is not None and (rep["pass"] or cfg["equilibrium"]["allow_out_of_range"])
    fit = None
    if usable:
        sweep = _stage(lambda: run_eigensweep(cfg, model, threads))
        if isinstance(sweep, tuple):
            _, fitd, fit = sweep
        else:
            fitd = sweep
        if fit is not None:
            report["alpha"] = {"alpha_hat": fit.alpha_hat, "alpha_ref": fit.alpha_ref,
                               "rel_err": abs(fit.alpha_hat - fit.alpha_ref) / fit.alpha_ref,
                               "pass": bool(abs(fit.alpha_hat - fit.alpha_ref) <= tol["alpha_rel"] * fit.alpha_ref)}
        else:
            report["alpha"] = {"missing": True, "reason": fitd.get("message", fitd.get("reason", "fit failed"))}
        lim = _stage(lambda: run_limit(cfg, model, threads, None if fit is None else fit.kappa_hat)[0])
        report["kappa"] = lim
        report["drift"] = _stage(lambda: run_drift(cfg, model))
    else:
        why = "assumptions fail"
        for key in ("alpha", "kappa", "drift"):
            report[key] = {"missing": True, "reason": why}
    report["propagator"] = _read_stage(out / "propagate.json", "propagate")
    report["montecarlo"] = _read_stage(out / "montecarlo.json", "montecarlo")

    kap = report["kappa"]
    if not kap.get("missing") and fit is not None:
        vals = [fit.kappa_hat, kap["kappa_unified"], kap["kappa_branch"]["re"]]
        spread = max(abs(a - b) / min(abs(a), abs(b)) for i, a in enumerate(vals) for b in vals[i + 1:])
        report["consistency"] = {"kappa_spread": spread, "kappa_positive": bool(min(vals) > 0),
                                 "branch_real": kap["branch_real"],
                                 "pass": bool(spread <= tol["kappa_spread"] and min(vals) > 0 and kap["branch_real"])}
    else:
        report["consistency"] = {"missing": True, "reason": "kappa routes unavailable"}
    return report


def _text_summary(report: dict) -> str:
    lines = ["fractional diffusion pipeline report", ""]
    a = report["assumptions"]
    lines.append(f"assumptions: {'pass' if a['pass'] else 'FAIL'} (beta={io.fmt(a['beta'])}, d={a['d']})")
    for key, label in (("alpha", "exponent"), ("kappa", "kappa"), ("drift", "drift"), ("consistency", "consistency"),
                       ("propagator", "propagator"), ("montecarlo", "monte carlo")):
        sec = report[key]
        if sec.get("missing"):
            lines.append(f"{label}: missing ({sec['reason']})")
        elif key == "alpha":
            lines.append(f"{label}: alpha_hat={sec['alpha_hat']:.6f} vs {sec['alpha_ref']:.6f} "
                         f"(rel err {sec['rel_err']:.2e})")
        elif key == "kappa":
            lines.append(f"{label}: unified={sec['kappa_unified']:.6f} branch={sec['kappa_branch']['re']:.6f}"
                         f"{sec['kappa_branch']['im']:+.2e}i sweep={sec['kappa_sweep']:.6f} ({sec['regime']})")
        elif key == "drift":
            extra = f" log_ratio={sec['log_ratio']:.4f}" if sec["log_ratio"] is not None else ""
            lines.append(f"{label}: regime={sec['regime']} j1={sec['j1']:.6g}{extra}")
        elif key == "consistency":
            lines.append(f"{label}: kappa spread={sec['kappa_spread']:.3e} pass={sec['pass']}")
        elif key == "propagator":
            lines.append(f"{label}: monotone fraction={sec['monotone_fraction']:.3f} "
                         f"max err at smallest eps={sec['max_err_at_smallest_eps']:.3e}")
        else:
            c = sec["checks"][0]
            lines.append(f"{label}: cf({c['xi']:g}) deviation={c['deviation']:.3e} pass={c['pass']} "
                         f"ks={sec['ks_final']:.4f}")
    return "\n".join(lines) + "\n"


def cmd_report(cfg, out: Path, threads: int, seed: int) -> int:
    report = build_report(cfg, out, threads)
    io.write_json(out / "report.json", report)
    (out / "report.txt").write_text(_text_summary(report))
    return EXIT_OK


COMMANDS = {"check": cmd_check, "eigensweep": cmd_eigensweep, "limit-kappa": cmd_limit_kappa, "drift": cmd_drift,
            "propagate": cmd_propagate, "montecarlo": cmd_montecarlo, "report": cmd_report}


# -- entry point -------------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS, help="run configuration file")
    common.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--threads", metavar="K", type=int, default=argparse.SUPPRESS,
                        help="worker threads (FP_THREADS overrides)")
    common.add_argument("--seed", metavar="S", type=int, default=argparse.SUPPRESS, help="Monte Carlo seed")
    p = argparse.ArgumentParser(prog="fracfp", parents=[common],
                                description="Fractional diffusion limit of kinetic equations with heavy tails.")
    sub = p.add_subparsers(dest="verb", required=True)
    for v in VERBS:
        sub.add_parser(v, parents=[common], help=COMMANDS[v].__doc__ or v.replace("-", " "))
    return p


def _threads(arg) -> int:
    env = os.environ.get("FP_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"FP_THREADS must be an integer, got {env!r}") from None
    return max(1, int(arg)) if arg else 1


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if getattr(args, "config", None) else defaults()
        threads = _threads(getattr(args, "threads", None))
        seed = getattr(args, "seed", None)
        seed = cfg["montecarlo"]["seed"] if seed is None else seed
        out = Path(getattr(args, "out", None) or cfg["output"]["dir"])
        out.mkdir(parents=True, exist_ok=True)
    except ConfigError as exc:
        print(f"fracfp: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"fracfp: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        from threadpoolctl import threadpool_limits
        # outputs must not depend on BLAS threading; parallelism comes from the stages themselves
        with threadpool_limits(limits=1):
            return COMMANDS[args.verb](cfg, out, threads, seed)
    except StageFailure as exc:
        print(f"fracfp {args.verb}: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"fracfp {args.verb}: {exc}", file=sys.stderr)
        return EXIT_IO
    except FracFPError as exc:
        print(f"fracfp {args.verb}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
