"""Contraction coefficients, tolerances, RSC/RSM probes, cone checks and rate fits."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import ConfigurationError
from .regularizers import project_subspace, reg_value, subspace_compat

OUT_OF_REGIME = "out_of_regime"


@dataclass(frozen=True)
class RscRsmParams:
    """Curvature (gamma_l, gamma_u), tolerances (tau_l, tau_u) and slack delta."""

    gamma_l: float
    gamma_u: float
    tau_l: float = 0.0
    tau_u: float = 0.0
    delta: float = 0.0

    def __post_init__(self):
        if not (self.gamma_l > 0 and self.gamma_u > 0):
            raise ConfigurationError("curvature constants must be positive")
        if min(self.tau_l, self.tau_u, self.delta) < 0:
            raise ConfigurationError("tolerances must be nonnegative")


@dataclass
class TheoryReport:
    kappa: float | None
    eps2: float | None
    status: str = "ok"
    inputs: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def in_regime(self):
        return self.status == "ok"

    def to_dict(self):
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return None
            if isinstance(v, (np.floating, np.integer)):
                return clean(v.item())
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            return v
        return clean(asdict(self))


# -- projected gradient: contraction and tolerance ---------------------------


def contraction_thm1(params, psi):
    """kappa = [1 - gl/gu + 16 Psi^2 (tu + tl)/gu] / [1 - 16 Psi^2 tu/gu].

    Returns None when the denominator is not positive or kappa is outside (0, 1).
    ``contraction_thm1_raw`` gives the unchecked value.
    """
    k = contraction_thm1_raw(params, psi)
    if k is None or not 0 <= k < 1:
        return None
    return k


def contraction_thm1_raw(params, psi):
    p = params
    den = 1 - 16 * psi ** 2 * p.tau_u / p.gamma_u
    if den <= 0:
        return None
    return (1 - p.gamma_l / p.gamma_u + 16 * psi ** 2 * (p.tau_u + p.tau_l) / p.gamma_u) / den


def tolerance_thm1(params, psi, r_perp, err_star, r_err_star):
    """eps^2 = 32 (tu + tl) (2 R(Pi_perp theta*) + Psi ||Delta*|| + 2 R(Delta*))^2 / gu."""
    if min(psi, r_perp, err_star, r_err_star) < 0:
        raise ConfigurationError("tolerance inputs must be nonnegative")
    p = params
    return 32 * (p.tau_u + p.tau_l) * (2 * r_perp + psi * err_star + 2 * r_err_star) ** 2 / p.gamma_u


def thm1_report(params, psi, r_perp, err_star, r_err_star):
    kappa = contraction_thm1(params, psi)
    eps2 = tolerance_thm1(params, psi, r_perp, err_star, r_err_star)
    return TheoryReport(
        kappa, eps2, "ok" if kappa is not None else OUT_OF_REGIME,
        inputs={"psi": psi, "r_perp": r_perp, "err_star": err_star, "r_err_star": r_err_star,
                **asdict(params)},
        extra={"kappa_raw": contraction_thm1_raw(params, psi)})


# -- composite gradient: compound contraction and tolerance -----------------


@dataclass
class Thm2Constants:
    gamma_bar: float
    xi: float
    beta: float
    kappa: float | None
    status: str


def contraction_thm2(params, psi):
    """Effective RSC gamma_bar, xi, beta and the compound contraction kappa."""
    p = params
    psi2 = psi ** 2
    gbar = p.gamma_l - 64 * p.tau_l * psi2
    if gbar <= 0:
        return Thm2Constants(gbar, math.nan, math.nan, None, OUT_OF_REGIME)
    inner = 1 - 64 * p.tau_u * psi2 / gbar
    if inner <= 0:
        return Thm2Constants(gbar, math.nan, math.nan, None, OUT_OF_REGIME)
    xi = 1 / inner
    beta = 2 * (gbar / (4 * p.gamma_u) + 128 * p.tau_u * psi2 / gbar) * p.tau_l \
        + 8 * p.tau_u + 2 * p.tau_l
    kappa = (1 - gbar / (4 * p.gamma_u) + 64 * psi2 * p.tau_u / gbar) * xi
    if not 0 <= kappa < 1:
        return Thm2Constants(gbar, xi, beta, kappa, OUT_OF_REGIME)
    return Thm2Constants(gbar, xi, beta, kappa, "ok")


def tolerance_thm2(c2, psi, err_star, r_perp):
    """Compound tolerance 8 xi beta (6 Psi ||Delta*|| + 8 R(Pi_perp theta*))^2."""
    return 8 * c2.xi * c2.beta * (6 * psi * err_star + 8 * r_perp) ** 2


def thm2_lambda_ok(c2, radius, lam):
    """32 rho_bar xi beta / (1 - kappa) <= lambda_n."""
    if c2.kappa is None or c2.status != "ok":
        return False
    return 32 * radius * c2.xi * c2.beta / (1 - c2.kappa) <= lam


def thm2_iteration_bound(c2, excess0, delta2, radius, lam):
    """Iterations after which the excess objective is at most delta^2."""
    k = c2.kappa
    if k is None or not 0 < k < 1 or delta2 <= 0:
        return math.inf
    lk = math.log(1 / k)
    first = 2 * math.log(max(excess0 / delta2, 1.0)) / lk
    inner = radius * lam / delta2
    second = 0.0
    if inner > 2:
        second = math.log2(math.log2(inner)) * (1 + math.log(2) / lk)
    return first + max(second, 0.0)


def thm2_param_error_bound(c2, params, delta2, lam, psi, r_perp):
    """Squared parameter error implied by an excess objective of at most delta^2.

    Implements the bound as printed:
    2 d^2/gbar + 16 d^2 tl/(gbar lam^2) + 4 tl (6 Psi + 8 R(Pi_perp theta*))^2 / gbar.
    """
    g = c2.gamma_bar
    tl = params.tau_l
    return 2 * delta2 / g + 16 * delta2 * tl / (g * lam ** 2) + 4 * tl * (6 * psi + 8 * r_perp) ** 2 / g


def thm2_report(params, psi, err_star, r_perp, radius, lam, dual_score=None):
    c2 = contraction_thm2(params, psi)
    eps2 = tolerance_thm2(c2, psi, err_star, r_perp) if c2.status == "ok" else None
    status = c2.status
    lam_ok = thm2_lambda_ok(c2, radius, lam)
    if status == "ok" and not lam_ok:
        status = "lambda_too_small"
    if dual_score is not None and lam < 2 * dual_score:
        status = "dual_condition_failed"
    return TheoryReport(
        c2.kappa, eps2, status,
        inputs={"psi": psi, "err_star": err_star, "r_perp": r_perp, "radius": radius,
                "lam": lam, "dual_score": dual_score, **asdict(params)},
        extra={"gamma_bar": c2.gamma_bar, "xi": c2.xi, "beta": c2.beta, "lambda_ok": lam_ok})


# -- corollaries ------------------------------------------------------------


COROLLARY_KINDS = ("sparse_exact", "sparse_weak", "lasso_lag", "matrix_cs", "matcomp", "matdecomp")


def corollary_constants(kind, meta, constants=None):
    """Closed-form constants of the statistical corollaries.

    ``meta`` supplies what the formula needs among sigma_min, sigma_max,
    zeta, s, q, R_q, d, n, gamma_bar, err_star (||theta_hat - theta*||),
    spikiness.  Universal constants c0..c3 default to 1 and are echoed in
    the report.
    """
    if kind not in COROLLARY_KINDS:
        raise ConfigurationError(f"unknown corollary {kind!r}")
    c = {"c0": 1.0, "c1": 1.0, "c2": 1.0, "c3": 1.0}
    c.update(constants or {})
    m = dict(meta)
    err2 = m.get("err_star", 0.0) ** 2
    extra = {"constants": c}

    if kind == "matdecomp":
        extra["tolerance_factor"] = m.get("spikiness", 0.0) ** 2 * m.get("s", 0) / m.get("d2", m.get("d", 1))
        return TheoryReport(0.75, c["c2"] * (err2 + extra["tolerance_factor"]), "ok", m, extra)

    if kind == "matcomp":
        q = m.get("q", 0.0)
        rq = m.get("R_q", m.get("rank"))
        d, n, a = m["d"], m["n"], m.get("spikiness", 1.0)
        term = rq * (a ** 2 * d * math.log(d) / n) ** (1 - q / 2)
        extra["stat_term"] = term
        # no closed-form contraction for this family; only the tolerance is reported
        return TheoryReport(None, c["c2"] * (term + err2), "no_closed_form", m, extra)

    smin, smax, zeta = m["sigma_min"], m["sigma_max"], m["zeta"]
    d, n = m["d"], m["n"]
    q = m.get("q", 0.0)

    if kind == "lasso_lag":
        s = m["s"]
        rate = s * math.log(d) / n
        gbar = m.get("gamma_bar")
        if gbar is None:
            gbar = smin / 2 - c["c0"] * rate * zeta
        extra["gamma_bar"] = gbar
        if gbar <= 0:
            return TheoryReport(None, None, OUT_OF_REGIME, m, extra)
        chi = zeta / gbar * rate
        extra["chi"] = chi
        den = 1 - c["c2"] * chi
        kappa = (1 - smin / (16 * smax) + c["c1"] * chi) / den if den > 0 else None
        tden = 1 - c["c3"] * chi
        eps2 = (5 + c["c2"] * chi) / tden * zeta * rate * err2 if tden > 0 else None
        extra["lambda"] = 6 * math.sqrt(m.get("nu", 0.5) * math.log(d) / n)
        ok = kappa is not None and 0 <= kappa < 1 and eps2 is not None
        return TheoryReport(kappa if ok else None, eps2, "ok" if ok else OUT_OF_REGIME, m, extra)

    if kind in ("sparse_exact", "sparse_weak"):
        scale = math.log(d) / n
        if kind == "sparse_exact":
            chi = c["c0"] * zeta / smax * m["s"] * scale
            tol_inner = err2
        else:
            chi = c["c0"] * zeta / smax * m["R_q"] * scale ** (1 - q / 2)
            tol_inner = m["R_q"] * scale ** (1 - q / 2) + err2
    else:  # matrix_cs
        scale = d / n
        rq = m.get("R_q", m.get("rank"))
        chi = c["c1"] * zeta / smax * rq * scale ** (1 - q / 2)
        tol_inner = (rq * scale ** (1 - q / 2) if q > 0 else 0.0) + err2
    extra["chi"] = chi
    if chi >= 1:
        return TheoryReport(None, None, OUT_OF_REGIME, m, extra)
    kappa = (1 - smin / (4 * smax) + chi) / (1 - chi)
    eps2 = c["c2"] * chi * tol_inner
    ok = 0 <= kappa < 1
    return TheoryReport(kappa if ok else None, eps2, "ok" if ok else OUT_OF_REGIME, m, extra)


def lemma6_params(sigma_min, sigma_max, zeta, d, n, c1=1.0):
    """Population-level RSC/RSM constants for Gaussian designs: (sigma_min/2, 2 sigma_max, c1 zeta log d / n)."""
    tau = c1 * zeta * math.log(d) / n
    return RscRsmParams(sigma_min / 2, 2 * sigma_max, tau, tau)


# -- direction sampling and RSC/RSM probes ----------------------------------


def cone_compat(spec, pair):
    """Psi over the enlarged subspace Mbar: sqrt(2r) for nuclear pairs, sqrt(|S|) otherwise."""
    if spec.kind == "block":
        return math.sqrt(sum(cone_compat(b, p) ** 2 for b, p in zip(spec.blocks, pair.parts)))
    if spec.kind == "nuclear":
        return math.sqrt(min(2 * pair.size, min(spec.shape)))
    return subspace_compat(spec, pair)


def _random_structured(spec, k, rng):
    """A random direction with k active coordinates, groups, columns or rank."""
    shape = spec.shape
    if spec.kind == "block":
        return np.stack([_random_structured(b, k, rng) for b in spec.blocks])
    if spec.kind == "nuclear":
        k = min(k, min(shape))
        return rng.standard_normal((shape[0], k)) @ rng.standard_normal((k, shape[1]))
    out = np.zeros(shape)
    if spec.kind == "l1":
        idx = rng.choice(shape[0], size=min(k, shape[0]), replace=False)
        out[idx] = rng.standard_normal(idx.size)
    elif spec.kind == "group":
        for gi in rng.choice(len(spec.groups), size=min(k, len(spec.groups)), replace=False):
            out[list(spec.groups[gi])] = rng.standard_normal(len(spec.groups[gi]))
    else:
        idx = rng.choice(shape[1], size=min(k, shape[1]), replace=False)
        out[:, idx] = rng.standard_normal((shape[0], idx.size))
    return out


def sample_directions(spec, pair, rng, n_samples=1000, extra=()):
    """Unit-norm directions: cone-constrained, structured of several sizes, and dense.

    Cone directions put a model-subspace component next to a perturbation
    component with R(perp) <= 3 R(model).  ``extra`` directions (e.g. iterate
    differences) are appended after normalization.
    """
    k0 = max(pair.size if pair is not None else 1, 1)
    out = []
    for i in range(n_samples):
        kind = i % 3
        if kind == 0 and pair is not None:
            g = rng.standard_normal(spec.shape)
            m = project_subspace(pair, g, "model_bar", spec)
            p = project_subspace(pair, _random_structured(spec, 2 * k0, rng), "perp", spec)
            rm, rp = reg_value(spec, m), reg_value(spec, p)
            if rp > 0:
                p *= rng.uniform(0, 3) * rm / rp
            v = m + p
        elif kind == 1:
            v = _random_structured(spec, int(k0 * rng.choice([1, 2, 4])), rng)
        else:
            v = rng.standard_normal(spec.shape)
        nv = np.linalg.norm(v)
        if nv > 0:
            out.append(v / nv)
    for v in extra:
        nv = np.linalg.norm(v)
        if nv > 0:
            out.append(np.asarray(v) / nv)
    return out


@dataclass
class ProbeSamples:
    """Taylor errors T, squared norms and squared regularizer values of probed directions."""

    taylor: np.ndarray
    norm2: np.ndarray
    reg2: np.ndarray


def probe_samples(model, spec, directions, base, scale=1.0):
    """Evaluate T_L(base + scale*u; base) for each direction u."""
    if getattr(model, "gram", None) is not None:
        mat = np.stack([np.ravel(u) for u in directions]) * scale
        taylor = np.einsum("ij,ij->i", mat @ model.gram, mat) / (2 * model.n)
    elif hasattr(getattr(model, "op", None), "flat") and model.family == "quadratic":
        mat = np.stack([np.ravel(u) for u in directions]) * scale
        img = model.op.flat @ mat.T
        taylor = np.einsum("ij,ij->j", img, img) / (2 * model.n)
    else:
        taylor = np.array([model.taylor_error(base + scale * u, base) for u in directions])
    norm2 = np.array([float(np.sum(u * u)) for u in directions]) * scale ** 2
    reg2 = np.array([reg_value(spec, u) ** 2 for u in directions]) * scale ** 2
    return ProbeSamples(np.asarray(taylor, dtype=float), norm2, reg2)


@dataclass
class ProbeReport:
    n_samples: int
    rsc_violations: int
    rsm_violations: int
    rsc_worst_margin: float
    rsm_worst_margin: float

    @property
    def rsc_fraction(self):
        return self.rsc_violations / max(self.n_samples, 1)

    @property
    def rsm_fraction(self):
        return self.rsm_violations / max(self.n_samples, 1)


def rsc_rsm_probe(samples, params, tol=1e-12):
    """Check T >= (gl/2)||D||^2 - tl R^2(D) - delta and T <= (gu/2)||D||^2 + tu R^2(D)."""
    s, p = samples, params
    lower = 0.5 * p.gamma_l * s.norm2 - p.tau_l * s.reg2 - p.delta
    upper = 0.5 * p.gamma_u * s.norm2 + p.tau_u * s.reg2
    rsc_margin = s.taylor - lower
    rsm_margin = upper - s.taylor
    scale = np.maximum(s.norm2, 1e-300)
    return ProbeReport(
        len(s.taylor),
        int(np.sum(rsc_margin < -tol * scale)),
        int(np.sum(rsm_margin < -tol * scale)),
        float(np.min(rsc_margin / scale)) if len(s.taylor) else math.nan,
        float(np.min(rsm_margin / scale)) if len(s.taylor) else math.nan)


def fit_gamma_l(samples, tau_l, gamma_u=None):
    """Largest gamma_l with T >= (gamma_l/2)||D||^2 - tau_l R^2(D) on every sample."""
    ratio = 2 * (samples.taylor + tau_l * samples.reg2) / samples.norm2
    g = float(np.min(ratio))
    if gamma_u is not None:
        g = min(g, gamma_u)
    return g


def rsm_holds(samples, gamma_u, tau_u):
    return bool(np.all(samples.taylor <= 0.5 * gamma_u * samples.norm2 + tau_u * samples.reg2
                       + 1e-12 * samples.norm2))


TAU_GRID = tuple(4.0 ** -k for k in range(0, 13))


@dataclass
class FittedConstants:
    params: RscRsmParams | None
    c: float | None
    tau0: float
    kappa: float | None
    table: list


def fit_constants_thm1(samples, gamma_u, tau0, psi, grid=TAU_GRID):
    """Search tau_l = tau_u = c * tau0 over ``grid``; fit gamma_l at each c; keep the smallest kappa.

    RSM is checked at the algorithm's gamma_u.
    """
    table = []
    best = None
    for c in grid:
        tau = c * tau0
        if not rsm_holds(samples, gamma_u, tau):
            table.append({"c": c, "rsm": False})
            continue
        gl = fit_gamma_l(samples, tau, gamma_u)
        if gl <= 0:
            table.append({"c": c, "rsm": True, "gamma_l": gl})
            continue
        params = RscRsmParams(gl, gamma_u, tau, tau)
        k = contraction_thm1(params, psi)
        table.append({"c": c, "rsm": True, "gamma_l": gl, "kappa": k})
        if k is not None and (best is None or k < best[2]):
            best = (params, c, k)
    if best is None:
        return FittedConstants(None, None, tau0, None, table)
    return FittedConstants(best[0], best[1], tau0, best[2], table)


def fit_constants_thm2(samples, gamma_u, tau0, psi, radius, lam, grid=TAU_GRID):
    """Largest c on the grid meeting every Theorem-2 regime condition, including
    32 rho_bar xi beta / (1 - kappa) <= lambda_n."""
    table = []
    for c in grid:
        tau = c * tau0
        if not rsm_holds(samples, gamma_u, tau):
            table.append({"c": c, "rsm": False})
            continue
        gl = fit_gamma_l(samples, tau, gamma_u)
        if gl <= 0:
            table.append({"c": c, "rsm": True, "gamma_l": gl})
            continue
        params = RscRsmParams(gl, gamma_u, tau, tau)
        c2 = contraction_thm2(params, psi)
        ok = c2.status == "ok" and thm2_lambda_ok(c2, radius, lam)
        table.append({"c": c, "rsm": True, "gamma_l": gl, "kappa": c2.kappa, "ok": ok})
        if ok:
            return FittedConstants(params, c, tau0, c2.kappa, table)
    return FittedConstants(None, None, tau0, None, table)


# -- cone checks ------------------------------------------------------------


@dataclass
class ConeResult:
    mode: str
    margins: np.ndarray
    violations: int
    worst: float


def _cone_terms(spec, pair, theta_star, theta_hat, psi):
    perp = project_subspace(pair, theta_star, "perp", spec)
    r_perp = reg_value(spec, perp)
    d_star = theta_hat - theta_star
    return r_perp, float(np.linalg.norm(d_star)), reg_value(spec, d_star)


def cone_check(iterates, spec, pair, theta_star, theta_hat, mode="thm1", psi=None,
               objectives=None, opt_objective=None, lam=None, radius=None, tol=1e-8):
    """Slack of a cone inequality at each iterate (negative slack = violation).

    thm1:  R(D_t) <= 2 Psi ||D_t|| + 2 R(Pi_perp theta*) + 2 R(D*) + Psi ||D*||
    icb:   R(D_t) <= 4 Psi ||D_t|| + 8 Psi ||D*|| + 8 R(Pi_perp theta*) + 2 min(eta/lam, rho_bar),
           with eta the current excess objective
    stat:  R(D*) <= 2 Psi ||D*|| + R(Pi_perp theta*)  (single value)

    where D_t = theta^t - theta_hat and D* = theta_hat - theta*.
    """
    if psi is None:
        psi = cone_compat(spec, pair)
    r_perp, e_star, r_star = _cone_terms(spec, pair, theta_star, theta_hat, psi)
    if mode == "stat":
        m = np.array([2 * psi * e_star + r_perp - r_star])
    else:
        if iterates is None or len(iterates) == 0:
            raise ConfigurationError("cone checks need stored iterates (keep_iterates=True)")
        margins = []
        for i, th in enumerate(iterates):
            dt = th - theta_hat
            lhs = reg_value(spec, dt)
            nd = float(np.linalg.norm(dt))
            if mode == "thm1":
                rhs = 2 * psi * nd + 2 * r_perp + 2 * r_star + psi * e_star
            elif mode == "icb":
                if objectives is None or opt_objective is None or lam is None or radius is None:
                    raise ConfigurationError("icb needs objectives, opt_objective, lam and radius")
                eta = max(objectives[i] - opt_objective, 0.0)
                slack = min(eta / lam, radius) if lam > 0 else radius
                rhs = 4 * psi * nd + 8 * psi * e_star + 8 * r_perp + 2 * slack
            else:
                raise ConfigurationError(f"unknown cone mode {mode!r}")
            margins.append(rhs - lhs)
        m = np.asarray(margins)
    return ConeResult(mode, m, int(np.sum(m < -tol)), float(m.min()))


# -- rate fitting -----------------------------------------------------------


@dataclass
class RateFit:
    status: str
    kappa: float | None
    floor: float
    r2: float | None
    n_points: int
    slope: float | None = None
    intercept: float | None = None

    @property
    def geometric(self):
        return self.status == "geometric"


def fit_geometric_rate(errors, t=None, floor_guard=3.0, min_points=10):
    """Least-squares fit of log error against t.

    Points within ``floor_guard`` times the final error are excluded.
    kappa = exp(2 slope) refers to squared errors.  Status is
    ``no_geometric_phase`` when the final error exceeds half the initial
    one or the fitted slope is not negative, ``insufficient_points`` when
    fewer than ``min_points`` lie above the floor.
    """
    err = np.asarray(errors, dtype=float)
    tt = np.arange(err.size, dtype=float) if t is None else np.asarray(t, dtype=float)
    keep = np.isfinite(err)
    err, tt = err[keep], tt[keep]
    if err.size == 0:
        return RateFit("insufficient_points", None, math.nan, None, 0)
    floor = float(err[-1])
    if err[0] <= 0 or floor > 0.5 * err[0]:
        return RateFit("no_geometric_phase", None, floor, None, 0)
    above = err > floor_guard * floor
    if floor == 0:
        above = err > 0
    n = int(above.sum())
    if n < min_points:
        return RateFit("insufficient_points", None, floor, None, n)
    x, y = tt[above], np.log(err[above])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1 - float(np.sum(resid ** 2)) / ss if ss > 0 else 1.0
    if slope >= 0:
        return RateFit("no_geometric_phase", None, floor, r2, n, float(slope), float(intercept))
    return RateFit("geometric", math.exp(2 * slope), floor, r2, n, float(slope), float(intercept))


def recursion_audit(errors, kappa, eps2, floor_guard=3.0):
    """Check ||D_{t+1}||^2 <= kappa ||D_t||^2 + eps^2 on consecutive errors above the floor.

    Returns (fraction holding, number checked, indices that failed).
    """
    e = np.asarray(errors, dtype=float)
    floor = e[-1]
    idx = [i for i in range(e.size - 1) if e[i] > floor_guard * floor]
    failed = [i for i in idx if e[i + 1] ** 2 > kappa * e[i] ** 2 + eps2 + 1e-15]
    frac = 1 - len(failed) / len(idx) if idx else math.nan
    return frac, len(idx), failed
