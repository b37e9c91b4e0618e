"""Seeded random instances: correlated designs, sparse and low-rank truths, noise.

Every instance draws from a Philox generator.  The base seed feeds a
``SeedSequence`` that is split into independent streams for the design,
the truth and the noise, so changing e.g. the noise level leaves the
design untouched.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal
from scipy.signal import lfilter

from .exceptions import ConfigurationError
from .losses import (DecompositionLoss, DenseMatrixDesign, DenseVectorDesign, EntrySampler,
                     LogisticLoss, QuadraticLoss, load_model, save_model)
from .projections import BlockProduct, Col2Box, Intersection, L2Ball, LinfBox, RegBall
from .regularizers import (block, block_pair, column12, l1, nuclear, reg_value, support_pair,
                           svd, truth_pair)

FAMILIES = ("sparse_linear", "logistic_sparse", "matrix_cs", "matcomp", "matdecomp")


def make_rng(seed):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def spawn_rngs(seed, k=3):
    """Independent Philox streams split from one base seed."""
    return [np.random.Generator(np.random.Philox(s))
            for s in np.random.SeedSequence(int(seed)).spawn(k)]


# -- designs ----------------------------------------------------------------


@dataclass
class DesignSummary:
    sigma_min: float
    sigma_max: float
    zeta: float
    interval: tuple
    empirical_min: float | None = None
    empirical_max: float | None = None


def ar1_spectrum(d, omega):
    """Exact (sigma_min, sigma_max) of the stationary AR(1) covariance.

    The precision matrix is tridiagonal with diagonal (1, 1+w^2, ..., 1+w^2, 1)
    and off-diagonal -w, so its extreme eigenvalues are cheap.
    """
    if d == 1:
        v = 1.0 / (1 - omega ** 2)
        return v, v
    diag = np.full(d, 1 + omega ** 2)
    diag[0] = diag[-1] = 1.0
    off = np.full(d - 1, -omega)
    lo = eigvalsh_tridiagonal(diag, off, select="i", select_range=(0, 0))[0]
    hi = eigvalsh_tridiagonal(diag, off, select="i", select_range=(d - 1, d - 1))[0]
    return 1.0 / float(hi), 1.0 / float(lo)


def ar1_interval(omega):
    return 1.0 / (1 + omega) ** 2, 2.0 / ((1 - omega) ** 2 * (1 + omega))


def gen_design_ar1(d, n, omega, rng, empirical=False):
    """n i.i.d. rows of a stationary AR(1) process with correlation omega.

    x_1 = z_1 / sqrt(1 - w^2) and x_{t+1} = w x_t + z_{t+1}.  Returns the
    design and a summary of Sigma = cov(x_i).
    """
    if not 0 <= omega < 1:
        raise ConfigurationError(f"omega must lie in [0, 1), got {omega}")
    if d < 1 or n < 1:
        raise ConfigurationError("need d >= 1 and n >= 1")
    if isinstance(rng, (int, np.integer)):
        rng = make_rng(rng)
    z = rng.standard_normal((n, d))
    if omega > 0:
        z[:, 0] /= math.sqrt(1 - omega ** 2)
        x = lfilter([1.0], [1.0, -omega], z, axis=1)
    else:
        x = z
    smin, smax = ar1_spectrum(d, omega)
    summary = DesignSummary(smin, smax, 1.0 / (1 - omega ** 2), ar1_interval(omega))
    if empirical:
        ev = np.linalg.eigvalsh(x.T @ x / n)
        summary.empirical_min, summary.empirical_max = float(ev[0]), float(ev[-1])
    return x, summary


def ar1_covariance(d, omega):
    """Sigma_jk = w^|j-k| / (1 - w^2)."""
    idx = np.arange(d)
    return omega ** np.abs(idx[:, None] - idx[None, :]) / (1 - omega ** 2)


# -- truths -----------------------------------------------------------------


def weak_sparse_profile(d, q, radius):
    """Decreasing magnitudes C j^{-1/q}, j = 1..d, with sum of q-th powers equal to radius."""
    if not 0 < q <= 1:
        raise ConfigurationError("q must lie in (0, 1]")
    j = np.arange(1, d + 1, dtype=float)
    c = (radius / np.sum(1.0 / j)) ** (1.0 / q)
    return c * j ** (-1.0 / q)


def gen_truth_sparse(d, s=None, q=0.0, radius=None, rng=0):
    """Exact s-sparse vector with +-1 entries (q = 0) or a weakly sparse vector on the
    boundary of the l_q ball of the given radius (0 < q <= 1)."""
    if isinstance(rng, (int, np.integer)):
        rng = make_rng(rng)
    if q == 0:
        if s is None or not 1 <= s <= d:
            raise ConfigurationError(f"need 1 <= s <= d, got s={s}, d={d}")
        theta = np.zeros(d)
        pos = rng.choice(d, size=s, replace=False)
        theta[pos] = rng.choice([-1.0, 1.0], size=s)
        return theta
    if radius is None or radius <= 0:
        raise ConfigurationError("weak sparsity needs a positive radius R_q")
    mags = weak_sparse_profile(d, q, radius)
    theta = np.zeros(d)
    theta[rng.permutation(d)] = mags * rng.choice([-1.0, 1.0], size=d)
    return theta


def random_orthonormal(d, r, rng):
    q, rr = np.linalg.qr(rng.standard_normal((d, r)))
    return q * np.sign(np.diag(rr))


def gen_low_rank(d1, d2, rank, rng, decay=0.0, q=0.0, radius=None):
    """Random matrix with orthonormal factors.

    For q = 0 the rank-``rank`` spectrum is proportional to j^{-decay} (flat by
    default) with unit Frobenius norm; for q > 0 the full spectrum follows the
    weak-sparsity profile with sum sigma_j^q = radius.
    """
    if q == 0:
        if not 1 <= rank <= min(d1, d2):
            raise ConfigurationError(f"rank must lie in 1..{min(d1, d2)}")
        sv = np.arange(1, rank + 1, dtype=float) ** (-decay)
        sv /= np.linalg.norm(sv)
    else:
        rank = min(d1, d2)
        sv = weak_sparse_profile(rank, q, radius)
    u = random_orthonormal(d1, rank, rng)
    v = random_orthonormal(d2, rank, rng)
    return (u * sv) @ v.T


# -- ensemble spec ----------------------------------------------------------


@dataclass(frozen=True)
class EnsembleSpec:
    """Recipe for a random instance.

    ``n`` may be given directly or through the order parameter ``alpha``:
    n = ceil(alpha s log d) for the vector families, ceil(alpha r d) for
    matrix sensing and ceil(alpha r d log d) for matrix completion.  For
    weak sparsity the nominal sparsity in that formula is ceil(R_q).
    """

    family: str
    d: int
    s: int | None = None
    q: float = 0.0
    R_q: float | None = None
    rank: int | None = None
    d2: int | None = None
    n: int | None = None
    alpha: float | None = None
    omega: float = 0.0
    nu: float = 0.5
    spikiness: float | None = None
    decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.d < 1:
            raise ConfigurationError("d must be positive")
        if not 0 <= self.omega < 1:
            raise ConfigurationError("omega must lie in [0, 1)")
        if self.nu < 0:
            raise ConfigurationError("nu must be nonnegative")
        if self.q != 0 and not 0 < self.q <= 1:
            raise ConfigurationError("q must be 0 or lie in (0, 1]")
        if self.family in ("sparse_linear", "logistic_sparse"):
            if self.q == 0 and (self.s is None or not 1 <= self.s <= self.d):
                raise ConfigurationError(f"need 1 <= s <= d, got s={self.s}")
            if self.q > 0 and (self.R_q is None or self.R_q <= 0):
                raise ConfigurationError("weak sparsity needs R_q > 0")
        if self.family in ("matrix_cs", "matcomp", "matdecomp") and self.q == 0:
            if self.rank is None or not 1 <= self.rank <= min(self.d, self.d2 or self.d):
                raise ConfigurationError(f"need 1 <= rank <= d, got rank={self.rank}")
        if self.family == "matrix_cs" and self.q > 0 and (self.R_q is None or self.R_q <= 0):
            raise ConfigurationError("weak low rank needs R_q > 0")
        if self.family == "matdecomp" and (self.s is None or not 1 <= self.s <= (self.d2 or self.d)):
            raise ConfigurationError("matdecomp needs 1 <= s <= d2 corrupted columns")
        if self.family != "matdecomp" and self.n is None and self.alpha is None:
            raise ConfigurationError("give n or alpha")
        if self.n is not None and self.n < 1:
            raise ConfigurationError("n must be positive")

    @property
    def sparsity(self):
        return self.s if self.q == 0 else int(math.ceil(self.R_q))

    @property
    def sample_size(self):
        if self.family == "matdecomp":
            return self.d * (self.d2 or self.d)
        if self.n is not None:
            return int(self.n)
        d, a = self.d, self.alpha
        if self.family in ("sparse_linear", "logistic_sparse"):
            return int(math.ceil(a * self.sparsity * math.log(d)))
        r = self.rank if self.q == 0 else int(math.ceil(self.R_q))
        if self.family == "matrix_cs":
            return int(math.ceil(a * r * d))
        return int(math.ceil(a * r * d * math.log(d)))

    def replace(self, **kw):
        data = asdict(self)
        data.update(kw)
        return EnsembleSpec(**data)

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown ensemble fields {sorted(unknown)}")
        return cls(**data)


@dataclass
class Instance:
    """A generated problem with its truth and recommended solver settings."""

    spec: EnsembleSpec
    model: object
    truth: np.ndarray
    regularizer: object
    pair: object
    radius: float
    constraint: object
    lam: float
    step: float
    sigma: DesignSummary
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.meta["n"]


def lasso_lambda(nu, d, n):
    """lambda_n = 6 sqrt(nu log d / n)."""
    return 6.0 * math.sqrt(nu * math.log(d) / n)


def gen_instance(spec):
    """Build the loss, truth, subspace pair and recommended radius, lambda and step."""
    rng_design, rng_truth, rng_noise = spawn_rngs(spec.seed)
    fam = spec.family
    n = spec.sample_size
    nu = spec.nu
    d = spec.d
    meta = {"n": n, "nu": nu, "family": fam}

    if fam in ("sparse_linear", "logistic_sparse"):
        x, summary = gen_design_ar1(d, n, spec.omega, rng_design)
        theta = gen_truth_sparse(d, spec.s, spec.q, spec.R_q, rng_truth)
        reg = l1(d)
        if spec.q == 0:
            pair = truth_pair(reg, theta)
        else:
            mu = math.sqrt(math.log(d) / n)
            pair = truth_pair(reg, theta, threshold=mu)
            meta["truncation"] = mu
        radius = reg_value(reg, theta)
        op = DenseVectorDesign(x)
        if fam == "sparse_linear":
            y = x @ theta + nu * rng_noise.standard_normal(n)
            model = QuadraticLoss(op, y)
            constraint = RegBall(reg, radius)
            step = 2.0 * summary.sigma_max
        else:
            prob = 1.0 / (1.0 + np.exp(-(x @ theta)))
            y = (rng_noise.random(n) < prob).astype(float)
            model = LogisticLoss(op, y)
            constraint = Intersection((RegBall(reg, radius), L2Ball(2.0 * np.linalg.norm(theta))))
            step = 0.5 * summary.sigma_max
        lam = lasso_lambda(nu, d, n)
        meta["s"] = spec.sparsity
        return Instance(spec, model, theta, reg, pair, radius, constraint, lam, step, summary, meta)

    if fam == "matrix_cs":
        theta = gen_low_rank(d, d, spec.rank, rng_truth, spec.decay, spec.q, spec.R_q)
        xs = rng_design.standard_normal((n, d * d))
        y = xs @ theta.ravel() + nu * rng_noise.standard_normal(n)
        model = QuadraticLoss(DenseMatrixDesign(xs, (d, d)), y)
        reg = nuclear(d, d)
        if spec.q == 0:
            pair = truth_pair(reg, theta, rank=spec.rank)
        else:
            mu = math.sqrt(d / n)
            pair = truth_pair(reg, theta, threshold=mu)
            meta["truncation"] = mu
        radius = reg_value(reg, theta)
        summary = DesignSummary(1.0, 1.0, 1.0, (1.0, 1.0))
        meta["rank"] = spec.rank if spec.q == 0 else pair.size
        return Instance(spec, model, theta, reg, pair, radius, RegBall(reg, radius),
                        lasso_lambda(nu, d, n), 2.0, summary, meta)

    if fam == "matcomp":
        spike = spec.spikiness if spec.spikiness is not None else 8.0
        theta = gen_low_rank(d, d, spec.rank, rng_truth, spec.decay)
        bound = spike / d
        peak = np.abs(theta).max()
        if peak > bound:
            theta *= bound / peak
        rows = rng_design.integers(0, d, size=n)
        cols = rng_design.integers(0, d, size=n)
        op = EntrySampler(rows, cols, (d, d))
        y = theta[rows, cols] + nu * rng_noise.standard_normal(n)
        model = QuadraticLoss(op, y)
        reg = nuclear(d, d)
        pair = truth_pair(reg, theta, rank=spec.rank)
        radius = reg_value(reg, theta)
        constraint = Intersection((RegBall(reg, radius), LinfBox(bound)))
        step = float(op.counts.max()) / n
        summary = DesignSummary(1.0 / d ** 2, 1.0 / d ** 2, 1.0 / d ** 2, (1.0 / d ** 2,) * 2)
        meta.update(rank=spec.rank, spikiness=spike, max_count=int(op.counts.max()),
                    observed_fraction=float(np.mean(op.counts > 0)))
        return Instance(spec, model, theta, reg, pair, radius, constraint, 0.0, step, summary, meta)

    # matdecomp
    d1, d2 = d, spec.d2 or d
    spike = spec.spikiness if spec.spikiness is not None else 4.0
    low = gen_low_rank(d1, d2, spec.rank, rng_truth, spec.decay)
    bound = spike / math.sqrt(d2)
    peak = np.linalg.norm(low, axis=0).max()
    if peak > bound:
        low *= bound / peak
    sparse = np.zeros((d1, d2))
    cols = np.sort(rng_truth.choice(d2, size=spec.s, replace=False))
    g = rng_truth.standard_normal((d1, spec.s))
    sparse[:, cols] = g / np.linalg.norm(g, axis=0)
    y = low + sparse + nu * rng_noise.standard_normal((d1, d2))
    model = DecompositionLoss(y)
    reg = block(nuclear(d1, d2), column12(d1, d2))
    pair = block_pair(truth_pair(reg.blocks[0], low, rank=spec.rank),
                      support_pair(reg.blocks[1], cols))
    radii = (reg_value(reg.blocks[0], low), reg_value(reg.blocks[1], sparse))
    constraint = BlockProduct((
        Intersection((RegBall(reg.blocks[0], radii[0]), Col2Box(bound))),
        RegBall(reg.blocks[1], radii[1])))
    truth = np.stack([low, sparse])
    summary = DesignSummary(1.0, 1.0, 1.0, (1.0, 1.0))
    meta.update(rank=spec.rank, s=spec.s, spikiness=spike, radii=list(radii),
                corrupted_columns=cols.tolist())
    return Instance(spec, model, truth, reg, pair, float(sum(radii)), constraint, 0.0, 2.0,
                    summary, meta)


def check_truth(inst):
    """Structural checks on a generated truth; returns a dict of booleans."""
    spec, truth = inst.spec, inst.truth
    out = {"radius_matches": abs(inst.radius - reg_value(inst.regularizer, truth))
           <= 1e-12 * max(1.0, inst.radius)}
    if spec.family in ("sparse_linear", "logistic_sparse"):
        if spec.q == 0:
            out["exact_sparsity"] = int(np.count_nonzero(truth)) == spec.s
        else:
            out["lq_ball"] = float(np.sum(np.abs(truth) ** spec.q)) <= spec.R_q * (1 + 1e-12)
    elif spec.family == "matcomp":
        out["spikiness"] = float(np.abs(truth).max()) <= inst.meta["spikiness"] / spec.d * (1 + 1e-12)
    elif spec.family == "matdecomp":
        d2 = spec.d2 or spec.d
        out["spikiness"] = float(np.linalg.norm(truth[0], axis=0).max()) <= \
            inst.meta["spikiness"] / math.sqrt(d2) * (1 + 1e-12)
        out["column_support"] = int(np.count_nonzero(np.linalg.norm(truth[1], axis=0))) == spec.s
    elif spec.family == "matrix_cs" and spec.q == 0:
        out["rank"] = int(np.sum(svd(truth)[1] > 1e-10)) == spec.rank
    return out


# -- persistence --------------------------------------------------------------


def save_instance(inst, prefix):
    """Write ``<prefix>.npz`` (loss model and design) and ``<prefix>.json`` (spec, truth, metadata)."""
    prefix = str(prefix)
    save_model(prefix + ".npz", inst.model)
    record = {"spec": inst.spec.to_dict(), "truth": inst.truth.tolist(),
              "shape": list(inst.truth.shape), "radius": inst.radius, "lam": inst.lam,
              "step": inst.step, "sigma": asdict(inst.sigma), "meta": inst.meta}
    with open(prefix + ".json", "w") as fh:
        json.dump(record, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_instance(prefix):
    """Read back a saved instance as (model, truth, record).

    The record holds the spec, so ``gen_instance(EnsembleSpec.from_dict(record["spec"]))``
    rebuilds the constraint set and subspace pair.
    """
    prefix = str(prefix)
    model = load_model(prefix + ".npz")
    with open(prefix + ".json") as fh:
        record = json.load(fh)
    truth = np.asarray(record["truth"], dtype=float).reshape(record["shape"])
    return model, truth, record
