"""Projected and composite gradient descent with step-size doubling."""

from __future__ import annotations

import csv
import math
import weakref
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, NumericError
from .projections import BlockProduct, Intersection, RegBall, composite_prox
from .regularizers import RegularizerSpec, block, reg_value

TRACE_COLUMNS = ("t", "objective", "err_to_opt", "err_to_truth", "reg_value", "step")


@dataclass(frozen=True)
class SolverConfig:
    """Algorithm parameters.

    ``step`` is the fixed smoothness constant gamma_u (the step is 1/step).
    With ``auto_step`` and no fixed step, gamma_u starts at ``initial_step``
    and is doubled until the local smoothness check passes.  A fixed step
    takes precedence over ``auto_step``.
    """

    method: str = "projected"
    step: float | None = None
    auto_step: bool = False
    initial_step: float = 1.0
    lam: float = 0.0
    constraint: object = None
    regularizer: RegularizerSpec | None = None
    radius: float = math.inf
    max_iters: int = 1000
    stop_tol: float = 1e-10
    record_every: int = 1
    keep_iterates: bool = False
    step_ceiling: float = 2.0 ** 40

    def __post_init__(self):
        if self.method not in ("projected", "composite"):
            raise ConfigurationError(f"unknown method {self.method!r}")
        if self.max_iters < 1 or not self.stop_tol > 0 or self.record_every < 1:
            raise ConfigurationError("need max_iters >= 1, stop_tol > 0, record_every >= 1")
        if self.step is None and not self.auto_step:
            raise ConfigurationError("give a fixed step or enable auto_step")
        if self.step is not None and not self.step > 0:
            raise ConfigurationError("step must be positive")
        if self.method == "projected" and self.constraint is None:
            raise ConfigurationError("projected method needs a constraint set")
        if self.method == "composite":
            if self.regularizer is None:
                raise ConfigurationError("composite method needs a regularizer")
            if self.lam < 0:
                raise ConfigurationError("lambda must be nonnegative")
            if not self.radius > 0:
                raise ConfigurationError("radius must be positive")

    @property
    def fixed_step(self):
        return self.step is not None

    @property
    def spec(self):
        """Regularizer used to report R(theta)."""
        if self.regularizer is not None:
            return self.regularizer
        return constraint_spec(self.constraint)

    def objective(self, model, theta, loss=None):
        v = model.value(theta) if loss is None else loss
        if self.method == "composite" and self.lam > 0:
            v += self.lam * reg_value(self.regularizer, theta)
        return v

    def project(self, theta):
        if self.method == "projected":
            return self.constraint.project(theta)
        return composite_prox(theta, 0.0, self.regularizer, self.radius)

    def feasible(self, theta):
        if self.method == "projected":
            return self.constraint.contains(theta)
        return math.isinf(self.radius) or reg_value(self.regularizer, theta) <= self.radius * (1 + 1e-8)


def constraint_spec(constraint):
    """The regularizer behind the first norm ball in a constraint, if any."""
    if isinstance(constraint, RegBall):
        return constraint.spec
    if isinstance(constraint, Intersection):
        for s in constraint.sets:
            spec = constraint_spec(s)
            if spec is not None:
                return spec
    if isinstance(constraint, BlockProduct):
        specs = [constraint_spec(s) for s in constraint.sets]
        if all(s is not None for s in specs):
            return block(*specs)
    return None


def pgd_step(model, theta, step, constraint, grad=None):
    """Projection of theta - grad / step onto the constraint."""
    if not step > 0:
        raise ConfigurationError("step must be positive")
    g = model.gradient(theta) if grad is None else grad
    return constraint.project(theta - g / step)


def composite_step(model, theta, step, lam, spec, radius=math.inf, grad=None):
    """Minimizer of the regularized local model over {R <= radius}."""
    if not step > 0:
        raise ConfigurationError("step must be positive")
    if lam < 0:
        raise ConfigurationError("lambda must be nonnegative")
    g = model.gradient(theta) if grad is None else grad
    return composite_prox(theta - g / step, lam / step, spec, radius)


def _take_step(model, theta, grad, step, config):
    if config.method == "projected":
        return pgd_step(model, theta, step, config.constraint, grad)
    return composite_step(model, theta, step, config.lam, config.regularizer, config.radius, grad)


def smoothness_ok(model, theta, candidate, step):
    """Check L(cand) <= L(theta) + <grad, delta> + (step/2)||delta||^2."""
    delta = candidate - theta
    return model.taylor_error(candidate, theta) <= 0.5 * step * float(np.sum(delta * delta)) * (1 + 1e-9) + 1e-15


def auto_stepsize(model, theta, candidate, step, config=None, grad=None, ceiling=None):
    """Double ``step`` until the smoothness inequality holds at the recomputed candidate.

    Returns ``(accepted_step, candidate)``.  ``config`` tells how to recompute
    the candidate; without it ``candidate`` is only checked, never recomputed,
    and the first passing step is returned.
    """
    if not step > 0:
        raise ConfigurationError("step must be positive")
    limit = (ceiling if ceiling is not None else 2.0 ** 40) * step
    if config is not None and ceiling is None:
        limit = config.step_ceiling * step
    g = model.gradient(theta) if grad is None else grad
    while not smoothness_ok(model, theta, candidate, step):
        step *= 2
        if step > limit:
            raise NumericError(f"step-size doubling exceeded the ceiling ({limit:.3g})")
        if config is not None:
            candidate = _take_step(model, theta, g, step, config)
    return step, candidate


@dataclass
class IterateTrace:
    t: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    err_to_opt: list = field(default_factory=list)
    err_to_truth: list = field(default_factory=list)
    reg_value: list = field(default_factory=list)
    step: list = field(default_factory=list)
    iterates: list = field(default_factory=list)

    def __len__(self):
        return len(self.t)

    def append(self, t, objective, err_opt, err_truth, reg, step, theta=None):
        self.t.append(int(t))
        self.objective.append(float(objective))
        self.err_to_opt.append(float(err_opt))
        self.err_to_truth.append(float(err_truth))
        self.reg_value.append(float(reg))
        self.step.append(float(step))
        if theta is not None:
            self.iterates.append(np.array(theta, copy=True))

    def column(self, name):
        return np.asarray(getattr(self, name), dtype=float)

    def fill_opt(self, theta_hat):
        """Recompute err_to_opt from stored iterates."""
        if not self.iterates:
            raise ConfigurationError("trace has no stored iterates")
        self.err_to_opt = [float(np.linalg.norm(x - theta_hat)) for x in self.iterates]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for row in zip(self.t, self.objective, self.err_to_opt, self.err_to_truth,
                           self.reg_value, self.step):
                w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])

    @classmethod
    def from_csv(cls, path):
        tr = cls()
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(TRACE_COLUMNS) - set(reader.fieldnames or ())
            if "t" in missing or ("err_to_opt" in missing and "err_to_truth" in missing):
                raise ConfigurationError(f"trace CSV is missing columns {sorted(missing)}")
            for row in reader:
                get = lambda k: float(row[k]) if row.get(k) not in (None, "") else math.nan
                tr.append(int(float(row["t"])), get("objective"), get("err_to_opt"),
                          get("err_to_truth"), get("reg_value"), get("step"))
        return tr


@dataclass
class SolveResult:
    theta: np.ndarray
    trace: IterateTrace
    status: str
    iterations: int
    step: float


def _err(theta, ref):
    return math.nan if ref is None else float(np.linalg.norm(theta - ref))


def solve(model, config, theta0=None, theta_hat=None, theta_star=None):
    """Run the configured method from ``theta0`` (default 0).

    Stops when ||theta^{t+1} - theta^t|| <= stop_tol or after max_iters.
    Non-convergence is reported through ``status`` ("converged",
    "max_iters" or "diverged"), never raised.
    """
    theta = np.zeros(model.shape) if theta0 is None else np.array(theta0, dtype=float)
    if theta.shape != tuple(model.shape):
        raise ConfigurationError("theta0 has the wrong shape")
    if not config.feasible(theta):
        theta = config.project(theta)
    spec = config.spec
    step = config.step if config.fixed_step else config.initial_step
    trace = IterateTrace()

    def record(t, th, loss):
        trace.append(t, config.objective(model, th, loss), _err(th, theta_hat),
                     _err(th, theta_star), reg_value(spec, th) if spec is not None else math.nan,
                     step, th if config.keep_iterates else None)

    status = "max_iters"
    t = 0
    last_recorded = -1
    for t in range(config.max_iters + 1):
        loss, grad = model.value_and_gradient(theta)
        if t % config.record_every == 0:
            record(t, theta, loss)
            last_recorded = t
        if t == config.max_iters:
            break
        cand = _take_step(model, theta, grad, step, config)
        if not config.fixed_step:
            step, cand = auto_stepsize(model, theta, cand, step, config, grad)
        if not np.all(np.isfinite(cand)):
            status = "diverged"
            break
        change = float(np.linalg.norm(cand - theta))
        theta = cand
        if change <= config.stop_tol:
            status = "converged"
            t += 1
            break
    if last_recorded != t and status != "diverged":
        record(t, theta, None)
    return SolveResult(theta, trace, status, t, step)


# -- reference optimum ------------------------------------------------------


@dataclass
class ReferenceResult:
    theta: np.ndarray
    iterations: int
    converged: bool
    last_change: float
    mapping_residual: float
    vi_violation: float


_REFERENCE_CACHE = weakref.WeakKeyDictionary()


def _config_key(config):
    return (config.method, config.lam, config.radius, repr(config.constraint),
            repr(config.regularizer), config.step, config.initial_step)


def reference_optimum(model, config, stop_tol=1e-14, max_iters=100_000, n_samples=200, seed=0):
    """High-accuracy solution of the same program, cached per (model, program).

    Stops once an update moves theta by at most ``stop_tol * max(1, ||theta||)``,
    well below the default tolerance of :func:`solve`, so that the error to the
    reference reflects the solver rather than the reference itself.

    Runs the configured method from 0 with step doubling started at the
    configured gamma_u, so that the reference converges even when the fixed
    step of the experiment does not.  Reports the gradient-mapping residual
    and the worst sampled violation of the first-order optimality condition
    <grad L(theta_hat), z - theta_hat> + lam (R(z) - R(theta_hat)) >= 0.
    """
    key = (_config_key(config), stop_tol, max_iters)
    per_model = _REFERENCE_CACHE.setdefault(model, {})
    if key in per_model:
        return per_model[key]
    start = config.step if config.fixed_step else config.initial_step
    ref_cfg = SolverConfig(
        method=config.method, step=None, auto_step=True, initial_step=start, lam=config.lam,
        constraint=config.constraint, regularizer=config.regularizer, radius=config.radius,
        max_iters=max_iters, stop_tol=stop_tol, record_every=max_iters,
        step_ceiling=config.step_ceiling)
    theta = np.zeros(model.shape)
    step = start
    converged = False
    change = math.inf
    it = 0
    for it in range(1, max_iters + 1):
        grad = model.gradient(theta)
        cand = _take_step(model, theta, grad, step, ref_cfg)
        step, cand = auto_stepsize(model, theta, cand, step, ref_cfg, grad)
        change = float(np.linalg.norm(cand - theta))
        theta = cand
        if change <= stop_tol * max(1.0, float(np.linalg.norm(theta))):
            converged = True
            break
    grad = model.gradient(theta)
    mapping = step * float(np.linalg.norm(theta - _take_step(model, theta, grad, step, ref_cfg)))
    vi = _vi_violation(model, ref_cfg, theta, grad, n_samples, seed)
    result = ReferenceResult(theta, it, converged, change, mapping, vi)
    per_model[key] = result
    return result


def _vi_violation(model, config, theta, grad, n_samples, seed):
    rng = np.random.default_rng(seed)
    spec = config.regularizer
    base = config.lam * reg_value(spec, theta) if config.method == "composite" and config.lam > 0 else 0.0
    scale = max(float(np.linalg.norm(theta)), 1.0)
    worst = 0.0
    for k in range(n_samples):
        z = rng.standard_normal(model.shape)
        z *= (scale if k % 2 else 1e-2 * scale) / np.linalg.norm(z)
        z = config.project(theta + z if k % 2 == 0 else z)
        val = float(np.sum(grad * (z - theta)))
        if base or (config.method == "composite" and config.lam > 0):
            val += config.lam * reg_value(spec, z) - base
        dist = float(np.linalg.norm(z - theta))
        if dist > 0:
            worst = max(worst, -val / dist)
    return worst
