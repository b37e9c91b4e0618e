"""Single runs and replicated experiments: instance, reference optimum, solve, theory checks."""

from __future__ import annotations

import concurrent.futures as cf
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import theory
from .ensembles import EnsembleSpec, gen_instance, save_instance
from .exceptions import ConfigurationError
from .losses import dual_score
from .regularizers import project_subspace, reg_value
from .solvers import IterateTrace, SolverConfig, reference_optimum, solve

SUMMARY_VERSION = 1
THREADS_ENV = "RESTRICTED_GRADIENT_THREADS"


@dataclass(frozen=True)
class SolverOptions:
    """How to solve an instance.

    ``step`` is "recommended" (the instance's gamma_u), "auto" (doubling from
    ``initial_step``) or a number.  ``lam`` is None for the instance's
    recommended lambda_n, "dual2" for 2 R*(grad L(theta*)), or a number.
    """

    method: str = "projected"
    step: object = "recommended"
    initial_step: float = 1.0
    lam: object = None
    max_iters: int = 1000
    stop_tol: float = 1e-12
    record_every: int = 1

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown solver fields {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class Checks:
    cone: bool = False
    probe: bool = False
    corollary: bool = True
    probe_samples: int = 1000
    floor_guard: float = 3.0

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown check fields {sorted(unknown)}")
        return cls(**data)


def build_config(inst, opts, keep_iterates=False):
    if opts.step == "recommended":
        step, auto = inst.step, False
    elif opts.step == "auto":
        step, auto = None, True
    else:
        step, auto = float(opts.step), False
    common = dict(step=step, auto_step=auto, initial_step=opts.initial_step,
                  max_iters=opts.max_iters, stop_tol=opts.stop_tol,
                  record_every=opts.record_every, keep_iterates=keep_iterates)
    if opts.method == "projected":
        return SolverConfig(method="projected", constraint=inst.constraint,
                            regularizer=inst.regularizer, **common)
    if opts.method != "composite":
        raise ConfigurationError(f"unknown method {opts.method!r}")
    if inst.regularizer.kind == "block":
        raise ConfigurationError("the composite method is not available for matrix decomposition")
    if opts.lam is None:
        lam = inst.lam
    elif opts.lam == "dual2":
        lam = 2 * dual_score(inst.model, inst.truth, inst.regularizer)
    else:
        lam = float(opts.lam)
    return SolverConfig(method="composite", lam=lam, regularizer=inst.regularizer,
                        radius=inst.radius, **common)


def tau_scale(inst):
    """The corollary scaling of tau: zeta log d / n (vectors), d / n (sensing),
    d log d / n (completion), 1 / (d1 d2) (decomposition)."""
    fam, d, n = inst.spec.family, inst.spec.d, inst.n
    if fam in ("sparse_linear", "logistic_sparse"):
        return inst.sigma.zeta * math.log(d) / n
    if fam == "matrix_cs":
        return d / n
    if fam == "matcomp":
        return d * math.log(d) / n
    return 1.0 / n


def corollary_kind(inst, method):
    fam = inst.spec.family
    if fam in ("sparse_linear", "logistic_sparse"):
        if method == "composite":
            return "lasso_lag"
        return "sparse_exact" if inst.spec.q == 0 else "sparse_weak"
    return fam


def corollary_report(inst, method, err_star):
    sp = inst.spec
    meta = {"d": sp.d, "n": inst.n, "q": sp.q, "sigma_min": inst.sigma.sigma_min,
            "sigma_max": inst.sigma.sigma_max, "zeta": inst.sigma.zeta, "err_star": err_star,
            "nu": sp.nu}
    if sp.s is not None:
        meta["s"] = sp.s
    if sp.R_q is not None:
        meta["R_q"] = sp.R_q
    if sp.rank is not None:
        meta["rank"] = sp.rank
    if "spikiness" in inst.meta:
        meta["spikiness"] = inst.meta["spikiness"]
    if sp.family == "matdecomp":
        meta["d2"] = sp.d2 or sp.d
    if sp.family in ("sparse_linear", "logistic_sparse") and sp.q > 0:
        meta.setdefault("s", sp.sparsity)
    return theory.corollary_constants(corollary_kind(inst, method), meta)


@dataclass
class RunResult:
    instance: object
    config: SolverConfig
    reference: object
    result: object
    fit: theory.RateFit
    report: dict = field(default_factory=dict)

    @property
    def trace(self):
        return self.result.trace


def run_single(spec, opts=None, checks=None):
    """Generate the instance, compute the reference optimum, solve and check."""
    opts = opts or SolverOptions()
    checks = checks or Checks()
    inst = gen_instance(spec)
    keep = checks.cone or checks.probe
    cfg = build_config(inst, opts, keep_iterates=keep)
    ref = reference_optimum(inst.model, cfg)
    res = solve(inst.model, cfg, theta_hat=ref.theta, theta_star=inst.truth)
    errs = res.trace.column("err_to_opt")
    fit = theory.fit_geometric_rate(errs, res.trace.column("t"), checks.floor_guard)
    spec_r = inst.regularizer
    d_star = ref.theta - inst.truth
    err_star = float(np.linalg.norm(d_star))
    report = {
        "status": res.status,
        "iterations": res.iterations,
        "n": inst.n,
        "step": res.step,
        "lam": cfg.lam,
        "radius": inst.radius,
        "reference": {"iterations": ref.iterations, "converged": ref.converged,
                      "mapping_residual": ref.mapping_residual,
                      "vi_violation": ref.vi_violation,
                      "reg_ratio": reg_value(spec_r, ref.theta) / inst.radius},
        "stat_error": err_star,
        "initial_error": float(errs[0]),
        "final_error": float(errs[-1]),
        "rate": asdict(fit),
    }
    if checks.corollary:
        report["corollary"] = corollary_report(inst, cfg.method, err_star).to_dict()
    psi = theory.cone_compat(spec_r, inst.pair)
    r_perp = reg_value(spec_r, project_subspace(inst.pair, inst.truth, "perp", spec_r))
    report["psi"] = psi
    report["r_perp"] = r_perp
    if checks.cone:
        report["cone"] = cone_summary(inst, cfg, ref, res)
    if checks.probe:
        report["probe"] = probe_summary(inst, cfg, ref, res, psi, r_perp, err_star,
                                        reg_value(spec_r, d_star), checks)
    return RunResult(inst, cfg, ref, res, fit, report)


def cone_summary(inst, cfg, ref, res):
    its = res.trace.iterates
    spec, pair = inst.regularizer, inst.pair
    out = {}
    if cfg.method == "projected":
        # the cone inequality needs the constraint active at the optimum
        active = reg_value(spec, ref.theta) >= inst.radius * (1 - 1e-6)
        c = theory.cone_check(its, spec, pair, inst.truth, ref.theta, "thm1")
        out["thm1"] = {"violations": c.violations, "worst_margin": c.worst, "checked": len(c.margins),
                       "constraint_active": bool(active)}
    else:
        phi_hat = cfg.objective(inst.model, ref.theta)
        c = theory.cone_check(its, spec, pair, inst.truth, ref.theta, "icb",
                              objectives=res.trace.objective, opt_objective=phi_hat,
                              lam=cfg.lam, radius=cfg.radius)
        out["icb"] = {"violations": c.violations, "worst_margin": c.worst, "checked": len(c.margins)}
    c = theory.cone_check(None, spec, pair, inst.truth, ref.theta, "stat")
    out["stat"] = {"violations": c.violations, "worst_margin": c.worst}
    return out


def probe_samples_for(inst, ref, res, n_samples, seed=0):
    its = res.trace.iterates
    extra = [its[i + 1] - its[i] for i in range(len(its) - 1)]
    extra += [x - ref.theta for x in its[:-1]]
    rng = np.random.default_rng(seed)
    dirs = theory.sample_directions(inst.regularizer, inst.pair, rng, n_samples, extra)
    scale = max(float(np.linalg.norm(its[0] - ref.theta)), 1e-3)
    return theory.probe_samples(inst.model, inst.regularizer, dirs, ref.theta, scale)


def probe_summary(inst, cfg, ref, res, psi, r_perp, err_star, r_err_star, checks):
    samples = probe_samples_for(inst, ref, res, checks.probe_samples)
    tau0 = tau_scale(inst)
    gamma_u = res.step
    errs = res.trace.column("err_to_opt")
    out = {"tau0": tau0, "samples": int(samples.taylor.size)}
    if cfg.method == "projected":
        fitc = theory.fit_constants_thm1(samples, gamma_u, tau0, psi)
        out["c"] = fitc.c
        if fitc.params is None:
            out["status"] = theory.OUT_OF_REGIME
            return out
        rep = theory.thm1_report(fitc.params, psi, r_perp, err_star, r_err_star)
        frac, checked, failed = theory.recursion_audit(errs, rep.kappa, rep.eps2, checks.floor_guard)
        out.update(theorem1=rep.to_dict(), audit={"fraction": frac, "checked": checked,
                                                  "failed": failed})
        out["status"] = "ok"
        return out
    lam, radius = cfg.lam, cfg.radius
    fitc = theory.fit_constants_thm2(samples, gamma_u, tau0, psi, radius, lam)
    out["c"] = fitc.c
    if fitc.params is None:
        out["status"] = theory.OUT_OF_REGIME
        return out
    score = dual_score(inst.model, inst.truth, inst.regularizer)
    rep = theory.thm2_report(fitc.params, psi, err_star, r_perp, radius, lam, score)
    c2 = theory.contraction_thm2(fitc.params, psi)
    out["theorem2"] = rep.to_dict()
    out["epochs"] = epoch_check(res.trace, cfg.objective(inst.model, ref.theta), c2, fitc.params,
                                rep.eps2, radius, lam, psi, r_perp)
    out["status"] = rep.status
    return out


def epoch_check(trace, phi_hat, c2, params, eps2, radius, lam, psi, r_perp):
    """Excess-objective hitting time versus the iteration bound, and the parameter-error bound.

    The tolerance is delta^2 = eps^2 / (1 - kappa), the smallest value the
    iteration bound allows.
    """
    delta2 = eps2 / (1 - c2.kappa)
    obj = np.asarray(trace.objective)
    excess = obj - phi_hat
    bound = theory.thm2_iteration_bound(c2, max(excess[0], 0.0), delta2, radius, lam)
    t = np.asarray(trace.t)
    hit = np.flatnonzero(excess <= delta2)
    first = int(t[hit[0]]) if hit.size else None
    perr_bound = theory.thm2_param_error_bound(c2, params, delta2, lam, psi, r_perp)
    errs = np.asarray(trace.err_to_opt)
    after = excess <= delta2
    perr_ok = bool(np.all(errs[after] ** 2 <= perr_bound)) if after.any() else None
    return {"delta2": delta2, "iteration_bound": bound, "first_hit": first,
            "param_error_bound": perr_bound, "param_error_ok": perr_ok,
            "max_param_error2_after_hit": float(np.max(errs[after] ** 2)) if after.any() else None}


# -- replicated experiments --------------------------------------------------


@dataclass
class Experiment:
    name: str
    ensemble: EnsembleSpec
    solver: SolverOptions
    checks: Checks
    reps: int = 1
    output_dir: str | None = None
    save_instances: bool = False

    def __post_init__(self):
        if self.reps < 1:
            raise ConfigurationError("reps must be at least 1")


def rep_seed(base, rep):
    return int(base) ^ int(rep)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not serializable: {type(o)}")


def _sanitize(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {k: _sanitize(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_sanitize(x) for x in v]
    if isinstance(v, (np.floating, np.integer)):
        return _sanitize(v.item())
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def write_json(path, data):
    with open(path, "w") as fh:
        json.dump(_sanitize(data), fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _run_rep(args):
    exp, rep, out_dir = args
    spec = exp.ensemble.replace(seed=rep_seed(exp.ensemble.seed, rep))
    run = run_single(spec, exp.solver, exp.checks)
    trace_path = Path(out_dir) / f"rep{rep}_trace.csv"
    run.trace.to_csv(trace_path)
    if exp.save_instances:
        save_instance(run.instance, Path(out_dir) / f"rep{rep}_instance")
    theory_path = Path(out_dir) / f"rep{rep}_theory.json"
    write_json(theory_path, {"seed": spec.seed, **run.report})
    return {"rep": rep, "seed": spec.seed, "trace": trace_path.name, "theory": theory_path.name,
            "status": run.report["status"], "rate": run.report["rate"],
            "stat_error": run.report["stat_error"], "final_error": run.report["final_error"],
            "initial_error": run.report["initial_error"]}


def pool_size():
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return os.cpu_count() or 1
    try:
        return max(1, int(raw))
    except ValueError as exc:
        raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc


def mean_log_curve(traces):
    """Mean over replications of log err_to_opt, truncated to the shortest trace."""
    length = min(len(tr) for tr in traces)
    logs = np.array([np.log(np.maximum(tr.column("err_to_opt")[:length], 1e-300)) for tr in traces])
    return np.asarray(traces[0].t[:length]), logs.mean(axis=0)


def run_experiment(exp, out_dir, workers=None):
    """Run all replications, write traces, the averaged curve and summary.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    workers = pool_size() if workers is None else workers
    jobs = [(exp, rep, str(out)) for rep in range(exp.reps)]
    if workers > 1 and exp.reps > 1:
        with cf.ProcessPoolExecutor(max_workers=min(workers, exp.reps)) as ex:
            reps = list(ex.map(_run_rep, jobs))
    else:
        reps = [_run_rep(j) for j in jobs]
    traces = [IterateTrace.from_csv(out / r["trace"]) for r in reps]
    t, curve = mean_log_curve(traces)
    with open(out / "curve.csv", "w") as fh:
        fh.write("t,mean_log_err_to_opt\n")
        for ti, ci in zip(t, curve):
            fh.write(f"{int(ti)},{ci!r}\n")
    fit = theory.fit_geometric_rate(np.exp(curve), t, exp.checks.floor_guard)
    summary = {
        "version": SUMMARY_VERSION,
        "name": exp.name,
        "ensemble": exp.ensemble.to_dict(),
        "solver": asdict(exp.solver),
        "checks": asdict(exp.checks),
        "reps": reps,
        "curve": "curve.csv",
        "averaged_rate": asdict(fit),
        "kappa_table": [{"rep": r["rep"], "kappa": r["rate"]["kappa"], "status": r["rate"]["status"],
                         "r2": r["rate"]["r2"]} for r in reps],
    }
    write_json(out / "summary.json", summary)
    return summary


def gnuplot_script(curve_files, path):
    lines = ["set datafile separator ','", "set xlabel 'iteration t'",
             "set ylabel 'mean log ||theta^t - theta_hat||'", "set key outside"]
    plots = [f"'{f}' using 1:2 every ::1 with lines title '{Path(f).parent.name}'" for f in curve_files]
    lines.append("plot " + ", \\\n     ".join(plots) if plots else "# no curves")
    Path(path).write_text("\n".join(lines) + "\n")


# -- config files -------------------------------------------------------------


def _line_of(text, needle):
    idx = text.find(needle)
    return text.count("\n", 0, idx) + 1 if idx >= 0 else None


def load_config(path):
    """Parse an experiment config; errors carry line numbers where possible."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}:1: top level must be an object")
    base_out = data.get("output_dir", "out")
    exps = []
    for i, item in enumerate(data.get("experiments", [])):
        name = item.get("name", f"exp{i}")
        try:
            ens = EnsembleSpec.from_dict(item["ensemble"])
            solver = SolverOptions.from_dict(item.get("solver", {}))
            checks = Checks.from_dict(item.get("checks", {}))
            exps.append(Experiment(name, ens, solver, checks, int(item.get("reps", 1)),
                                   item.get("output_dir"), bool(item.get("save_instances", False))))
        except (KeyError, TypeError, ConfigurationError) as exc:
            line = _line_of(text, f'"{name}"') if "name" in item else None
            where = f"{path}:{line}" if line else str(path)
            raise ConfigurationError(f"{where}: experiment {name!r}: {exc}") from exc
    return base_out, exps
