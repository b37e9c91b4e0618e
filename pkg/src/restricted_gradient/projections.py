"""Euclidean projections, proximal maps and constraint sets."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, NonConvergenceError
from .regularizers import RegularizerSpec, reg_value, svd

DYKSTRA_TOL = 1e-10
DYKSTRA_MAX_CYCLES = 10_000


def soft_threshold(v, lam):
    """Componentwise sign(v) * max(|v| - lam, 0)."""
    if lam < 0:
        raise ValueError(f"threshold must be nonnegative, got {lam}")
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)


def l1_threshold(v, radius):
    """Threshold lam >= 0 with ||soft_threshold(v, lam)||_1 = radius (0 if already inside)."""
    a = np.abs(np.ravel(v))
    if a.sum() <= radius:
        return 0.0
    u = np.sort(a)[::-1]
    css = np.cumsum(u) - radius
    k = np.arange(1, u.size + 1)
    rho = np.flatnonzero(u - css / k > 0)[-1]
    return float(css[rho] / (rho + 1))


def project_l1(v, radius):
    """Projection onto the l1 ball of the given radius (sort-based threshold)."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    v = np.asarray(v, dtype=float)
    lam = l1_threshold(v, radius)
    if lam == 0.0:
        return v.copy()
    return soft_threshold(v, lam)


def _rescale_groups(v, groups, norms, new_norms):
    out = np.zeros_like(v)
    for g, old, new in zip(groups, norms, new_norms):
        if old > 0 and new > 0:
            idx = list(g)
            out[idx] = v[idx] * (new / old)
    return out


def project_group_l1(v, groups, radius):
    """Projection onto {sum_g ||x_g||_2 <= radius}.

    The l1 projection is applied to the vector of group norms and each group
    is rescaled radially.
    """
    v = np.asarray(v, dtype=float)
    if any(len(g) == 0 for g in groups):
        raise ConfigurationError("empty group")
    norms = np.array([np.linalg.norm(v[list(g)]) for g in groups])
    if norms.sum() <= radius:
        return v.copy()
    return _rescale_groups(v, groups, norms, project_l1(norms, radius))


def project_columns_l1(m, radius):
    """Projection onto the columnwise (1,2)-norm ball."""
    m = np.asarray(m, dtype=float)
    norms = np.linalg.norm(m, axis=0)
    if norms.sum() <= radius:
        return m.copy()
    new = project_l1(norms, radius)
    scale = np.divide(new, norms, out=np.zeros_like(norms), where=norms > 0)
    return m * scale


def project_nuclear(m, radius):
    """Projection onto the nuclear-norm ball: l1-project the singular values."""
    u, s, vt = svd(np.asarray(m, dtype=float))
    if s.sum() <= radius:
        return np.array(m, dtype=float)
    return (u * project_l1(s, radius)) @ vt


def project_l2(v, radius):
    v = np.asarray(v, dtype=float)
    nv = np.linalg.norm(v)
    return v * (radius / nv) if nv > radius else v.copy()


# -- constraint sets --------------------------------------------------------


@dataclass(frozen=True)
class RegBall:
    spec: RegularizerSpec
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigurationError("ball radius must be positive")
        if self.spec.kind == "block":
            raise ConfigurationError("use BlockProduct for stacked parameters")

    def project(self, v):
        if math.isinf(self.radius):
            return np.array(v, dtype=float)
        kind = self.spec.kind
        if kind == "l1":
            return project_l1(v, self.radius)
        if kind == "group":
            return project_group_l1(v, self.spec.groups, self.radius)
        if kind == "column12":
            return project_columns_l1(v, self.radius)
        return project_nuclear(v, self.radius)

    def contains(self, v, tol=1e-8):
        return reg_value(self.spec, v) <= self.radius * (1 + tol)


@dataclass(frozen=True)
class LinfBox:
    bound: float

    def project(self, v):
        return np.clip(v, -self.bound, self.bound)

    def contains(self, v, tol=1e-8):
        return float(np.abs(v).max()) <= self.bound * (1 + tol)


@dataclass(frozen=True)
class Col2Box:
    """Each column has l2 norm at most ``bound``."""

    bound: float

    def project(self, v):
        v = np.asarray(v, dtype=float)
        norms = np.linalg.norm(v, axis=0)
        scale = np.minimum(1.0, self.bound / np.maximum(norms, 1e-300))
        return v * scale

    def contains(self, v, tol=1e-8):
        return float(np.linalg.norm(v, axis=0).max()) <= self.bound * (1 + tol)


@dataclass(frozen=True)
class L2Ball:
    radius: float

    def project(self, v):
        return project_l2(v, self.radius)

    def contains(self, v, tol=1e-8):
        return float(np.linalg.norm(v)) <= self.radius * (1 + tol)


@dataclass(frozen=True)
class Intersection:
    """Intersection of convex sets, projected onto with Dykstra's algorithm in list order."""

    sets: tuple
    tol: float = DYKSTRA_TOL
    max_cycles: int = DYKSTRA_MAX_CYCLES

    def __post_init__(self):
        object.__setattr__(self, "sets", tuple(self.sets))
        if not self.sets:
            raise ConfigurationError("intersection needs at least one set")

    def project(self, v):
        return project_intersection(v, self, self.tol, self.max_cycles)[0]

    def contains(self, v, tol=1e-8):
        return all(s.contains(v, tol) for s in self.sets)


@dataclass(frozen=True)
class BlockProduct:
    """Cartesian product of sets acting on the leading axis of a stacked parameter."""

    sets: tuple

    def __post_init__(self):
        object.__setattr__(self, "sets", tuple(self.sets))

    def project(self, v):
        v = np.asarray(v, dtype=float)
        return np.stack([s.project(v[i]) for i, s in enumerate(self.sets)])

    def contains(self, v, tol=1e-8):
        return all(s.contains(v[i], tol) for i, s in enumerate(self.sets))


def project_box(m, box):
    """Projection onto a LinfBox or Col2Box."""
    if not isinstance(box, (LinfBox, Col2Box)):
        raise ConfigurationError("project_box expects a LinfBox or Col2Box")
    return box.project(m)


def project_intersection(v, sets, tol=DYKSTRA_TOL, max_cycles=DYKSTRA_MAX_CYCLES):
    """Dykstra's cyclic projection onto an intersection.

    Returns ``(point, cycles)``.  Stops when a full cycle moves both the
    iterate and the correction terms by at most ``tol`` in l2 (the iterate
    alone can stall while the corrections still change); raises
    NonConvergenceError after ``max_cycles``.
    """
    members = sets.sets if isinstance(sets, Intersection) else tuple(sets)
    x = np.array(v, dtype=float)
    if len(members) == 1:
        return members[0].project(x), 1
    incr = [np.zeros_like(x) for _ in members]
    for cycle in range(1, max_cycles + 1):
        start = x
        moved = 0.0
        for i, s in enumerate(members):
            y = s.project(x + incr[i])
            new_incr = x + incr[i] - y
            moved += float(np.sum((new_incr - incr[i]) ** 2))
            incr[i] = new_incr
            x = y
        if np.linalg.norm(x - start) <= tol and math.sqrt(moved) <= tol:
            return x, cycle
    raise NonConvergenceError(
        f"Dykstra did not converge in {max_cycles} cycles", last=x, iterations=max_cycles)


# -- composite prox ---------------------------------------------------------


def group_shrink(v, groups, lam):
    """Prox of lam * sum of group l2 norms."""
    v = np.asarray(v, dtype=float)
    out = np.zeros_like(v)
    for g in groups:
        idx = list(g)
        ng = np.linalg.norm(v[idx])
        if ng > lam:
            out[idx] = v[idx] * (1 - lam / ng)
    return out


def composite_prox(v, threshold, spec, radius=math.inf):
    """argmin over {R(x) <= radius} of 0.5||x - v||^2 + threshold * R(x).

    Computed as the norm prox followed by a ball projection when the prox
    output lies outside the ball.  Both steps shrink the same norm profile,
    so the composition is exact.  ``threshold`` is lambda_n / gamma_u.
    """
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    if not radius > 0:
        raise ConfigurationError("radius must be positive")
    v = np.asarray(v, dtype=float)
    kind = spec.kind
    if kind == "l1":
        x = soft_threshold(v, threshold)
        return x if np.abs(x).sum() <= radius else project_l1(x, radius)
    if kind == "group":
        x = group_shrink(v, spec.groups, threshold)
        return project_group_l1(x, spec.groups, radius) if not math.isinf(radius) else x
    if kind == "column12":
        norms = np.linalg.norm(v, axis=0)
        shrunk = np.maximum(norms - threshold, 0.0)
        if shrunk.sum() > radius:
            shrunk = project_l1(shrunk, radius)
        scale = np.divide(shrunk, norms, out=np.zeros_like(norms), where=norms > 0)
        return v * scale
    if kind == "nuclear":
        u, s, vt = svd(v)
        s = np.maximum(s - threshold, 0.0)
        if s.sum() > radius:
            s = project_l1(s, radius)
        return (u * s) @ vt
    raise ConfigurationError(f"composite prox is not defined for {kind}")
