"""Norm regularizers, their duals, and decomposable subspace pairs.

Parameters are plain float64 numpy arrays: a vector of shape ``(d,)`` or a
matrix of shape ``(d1, d2)``.  The matrix-decomposition family uses a
stacked array of shape ``(2, d1, d2)`` together with a ``block`` spec.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, NumericError

KINDS = ("l1", "group", "nuclear", "column12", "block")


def as_point(theta, shape=None):
    """Return ``theta`` as a finite float64 array, optionally checking its shape."""
    arr = np.asarray(theta, dtype=float)
    if shape is not None and arr.shape != tuple(shape):
        raise ConfigurationError(f"expected shape {tuple(shape)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError("parameter has non-finite entries")
    return arr


def svd(a, check=False):
    """Thin SVD with singular values in nonincreasing order.

    With ``check=True`` the reconstruction error is verified against
    ``1e-8 * ||a||_F``.
    """
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD failed: {exc}") from exc
    if check:
        err = np.linalg.norm(a - (u * s) @ vt)
        if err > 1e-8 * max(np.linalg.norm(a), 1.0):
            raise NumericError(f"SVD reconstruction error {err:.3e}")
    return u, s, vt


def _validate_groups(groups, d):
    seen = np.zeros(d, dtype=int)
    for g in groups:
        if len(g) == 0:
            raise ConfigurationError("empty group")
        for j in g:
            if not 0 <= j < d:
                raise ConfigurationError(f"group index {j} outside 0..{d - 1}")
            seen[j] += 1
    if np.any(seen != 1):
        bad = np.flatnonzero(seen != 1)[:5].tolist()
        raise ConfigurationError(f"groups must partition 0..{d - 1}; bad coordinates {bad}")


@dataclass(frozen=True)
class RegularizerSpec:
    """A norm on parameters of a fixed shape.

    kind is one of ``l1``, ``group`` (sum of group l2 norms over a partition),
    ``nuclear``, ``column12`` (sum of column l2 norms) or ``block`` (sum of
    per-block norms over a stacked parameter).
    """

    kind: str
    shape: tuple
    groups: tuple | None = None
    blocks: tuple = field(default=())

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown regularizer kind {self.kind!r}")
        object.__setattr__(self, "shape", tuple(int(x) for x in self.shape))
        if self.kind in ("l1", "group") and len(self.shape) != 1:
            raise ConfigurationError(f"{self.kind} needs a vector shape")
        if self.kind in ("nuclear", "column12") and len(self.shape) != 2:
            raise ConfigurationError(f"{self.kind} needs a matrix shape")
        if self.kind == "group":
            if self.groups is None:
                raise ConfigurationError("group regularizer needs groups")
            groups = tuple(tuple(int(j) for j in g) for g in self.groups)
            _validate_groups(groups, self.shape[0])
            object.__setattr__(self, "groups", groups)
        if self.kind == "block":
            if not self.blocks:
                raise ConfigurationError("block regularizer needs sub-specs")
            inner = self.blocks[0].shape
            if any(b.shape != inner for b in self.blocks):
                raise ConfigurationError("block sub-specs must share a shape")
            if self.shape != (len(self.blocks),) + inner:
                raise ConfigurationError("block shape must be (n_blocks, *inner)")

    def to_dict(self):
        out = {"kind": self.kind, "shape": list(self.shape)}
        if self.kind == "group":
            out["groups"] = [list(g) for g in self.groups]
        if self.kind == "block":
            out["blocks"] = [b.to_dict() for b in self.blocks]
        return out

    @classmethod
    def from_dict(cls, data):
        kind = data.get("kind")
        shape = data.get("shape")
        if shape is None:
            raise ConfigurationError("regularizer needs 'shape'")
        if kind == "group":
            if "groups" in data:
                groups = data["groups"]
            elif "group_boundaries" in data:
                b = list(data["group_boundaries"])
                groups = [list(range(b[i], b[i + 1])) for i in range(len(b) - 1)]
            else:
                raise ConfigurationError("group regularizer needs 'groups' or 'group_boundaries'")
            return cls("group", tuple(shape), groups=groups)
        if kind == "block":
            blocks = tuple(cls.from_dict(b) for b in data.get("blocks", ()))
            return cls("block", tuple(shape), blocks=blocks)
        return cls(kind, tuple(shape))


def l1(d):
    return RegularizerSpec("l1", (d,))


def group_l1(groups, d):
    return RegularizerSpec("group", (d,), groups=tuple(tuple(g) for g in groups))


def nuclear(d1, d2):
    return RegularizerSpec("nuclear", (d1, d2))


def column12(d1, d2):
    return RegularizerSpec("column12", (d1, d2))


def block(*specs):
    return RegularizerSpec("block", (len(specs),) + specs[0].shape, blocks=tuple(specs))


def _check(spec, theta):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != spec.shape:
        raise ConfigurationError(f"{spec.kind} regularizer expects shape {spec.shape}, got {theta.shape}")
    return theta


def group_norms(spec, theta):
    return np.array([np.linalg.norm(theta[list(g)]) for g in spec.groups])


def reg_value(spec, theta):
    """R(theta)."""
    theta = _check(spec, theta)
    if spec.kind == "l1":
        return float(np.abs(theta).sum())
    if spec.kind == "group":
        return float(group_norms(spec, theta).sum())
    if spec.kind == "nuclear":
        return float(svd(theta)[1].sum())
    if spec.kind == "column12":
        return float(np.linalg.norm(theta, axis=0).sum())
    return float(sum(reg_value(b, theta[i]) for i, b in enumerate(spec.blocks)))


def dual_value(spec, theta):
    """R*(theta), the dual norm."""
    theta = _check(spec, theta)
    if spec.kind == "l1":
        return float(np.abs(theta).max())
    if spec.kind == "group":
        return float(group_norms(spec, theta).max())
    if spec.kind == "nuclear":
        return float(svd(theta)[1][0])
    if spec.kind == "column12":
        return float(np.linalg.norm(theta, axis=0).max())
    return float(max(dual_value(b, theta[i]) for i, b in enumerate(spec.blocks)))


# -- subspace pairs ---------------------------------------------------------


@dataclass(frozen=True)
class SubspacePair:
    """A decomposable pair (M, Mbar-perp) for a regularizer.

    For ``l1`` the support holds coordinate indices, for ``group`` group
    indices, for ``column12`` column indices.  For ``nuclear`` the pair is
    described by orthonormal factors ``u`` (d1 x r) and ``v`` (d2 x r).
    For ``block`` it holds one pair per block.
    """

    kind: str
    shape: tuple
    support: tuple = ()
    u: np.ndarray | None = None
    v: np.ndarray | None = None
    parts: tuple = ()

    @property
    def size(self):
        if self.kind == "nuclear":
            return 0 if self.u is None else self.u.shape[1]
        return len(self.support)


def support_pair(spec, support):
    """Coordinate/group/column pair spanned by ``support``."""
    if spec.kind not in ("l1", "group", "column12"):
        raise ConfigurationError(f"support pairs are not defined for {spec.kind}")
    support = tuple(sorted(int(j) for j in support))
    if spec.kind == "l1":
        limit = spec.shape[0]
    elif spec.kind == "column12":
        limit = spec.shape[1]
    else:
        limit = len(spec.groups)
    if any(not 0 <= j < limit for j in support):
        raise ConfigurationError("support index out of range")
    return SubspacePair(spec.kind, spec.shape, support=support)


def low_rank_pair(u, v):
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.ndim != 2 or v.ndim != 2 or u.shape[1] != v.shape[1]:
        raise ConfigurationError("u and v must be matrices with equal column counts")
    return SubspacePair("nuclear", (u.shape[0], v.shape[0]), u=u, v=v)


def block_pair(*pairs):
    return SubspacePair("block", (len(pairs),) + pairs[0].shape, parts=tuple(pairs))


def truth_pair(spec, theta_star, rank=None, threshold=0.0):
    """The natural pair for a truth: its support above ``threshold`` or its top-``rank`` factors.

    ``threshold`` is the truncation level used for weakly sparse vectors; the
    default keeps the exact support.
    """
    theta_star = _check(spec, theta_star)
    if spec.kind == "l1":
        return support_pair(spec, np.flatnonzero(np.abs(theta_star) > threshold))
    if spec.kind == "group":
        return support_pair(spec, np.flatnonzero(group_norms(spec, theta_star) > threshold))
    if spec.kind == "column12":
        return support_pair(spec, np.flatnonzero(np.linalg.norm(theta_star, axis=0) > threshold))
    if spec.kind == "nuclear":
        u, s, vt = svd(theta_star)
        if rank is None:
            rank = int(np.sum(s > max(threshold, 1e-10 * max(s[0], 1e-300))))
        return low_rank_pair(u[:, :rank], vt[:rank].T)
    raise ConfigurationError("use block_pair for block regularizers")


def _mask(pair):
    if pair.kind == "l1":
        m = np.zeros(pair.shape, dtype=bool)
        m[list(pair.support)] = True
        return m
    if pair.kind == "column12":
        m = np.zeros(pair.shape, dtype=bool)
        m[:, list(pair.support)] = True
        return m
    raise AssertionError(pair.kind)


def project_subspace(pair, theta, which="model", spec=None):
    """Orthogonal projection onto M (``model``), Mbar (``model_bar``) or Mbar-perp (``perp``).

    For the sparse kinds Mbar equals M.  For the nuclear pair M holds
    matrices whose row and column spaces lie in span(v), span(u), while
    Mbar-perp holds those with both spaces orthogonal to them; Mbar is the
    orthogonal complement of Mbar-perp and strictly contains M.
    Group pairs need the ``spec`` to know the partition.
    """
    theta = np.asarray(theta, dtype=float)
    if which not in ("model", "model_bar", "perp"):
        raise ConfigurationError(f"unknown subspace {which!r}")
    if pair.kind == "block":
        return np.stack([
            project_subspace(p, theta[i], which,
                             spec.blocks[i] if spec is not None else None)
            for i, p in enumerate(pair.parts)])
    if pair.kind in ("l1", "column12"):
        keep = _mask(pair)
        if which == "perp":
            keep = ~keep
        return np.where(keep, theta, 0.0)
    if pair.kind == "group":
        if spec is None:
            raise ConfigurationError("group pairs need the regularizer spec")
        keep = np.zeros(theta.shape, dtype=bool)
        for gi in pair.support:
            keep[list(spec.groups[gi])] = True
        if which == "perp":
            keep = ~keep
        return np.where(keep, theta, 0.0)
    # nuclear
    pu = pair.u @ pair.u.T
    pv = pair.v @ pair.v.T
    if which == "model":
        return pu @ theta @ pv
    perp = theta - pu @ theta - theta @ pv + pu @ theta @ pv
    if which == "perp":
        return perp
    return theta - perp


def subspace_compat(spec, pair):
    """Psi = sup R(theta)/||theta||_2 over the model subspace of ``pair``.

    Closed forms: sqrt of the support size for the sparse kinds and sqrt(r)
    for a rank-r nuclear pair (the value for M itself; the enlarged Mbar
    contains rank-2r matrices, see :func:`sampled_compat`).  Psi({0}) = 0.
    """
    if pair.kind == "block":
        return math.sqrt(sum(subspace_compat(b, p) ** 2 for b, p in zip(spec.blocks, pair.parts)))
    if spec.kind != pair.kind:
        raise ConfigurationError("pair does not match regularizer kind")
    return math.sqrt(pair.size)


def sampled_compat(spec, pair, rng, n_samples=1000, which="model_bar"):
    """Largest sampled ratio R(theta)/||theta|| over random theta in a subspace.

    A lower bound on Psi for that subspace.
    """
    best = 0.0
    for _ in range(n_samples):
        z = project_subspace(pair, rng.standard_normal(spec.shape), which, spec)
        nz = np.linalg.norm(z)
        if nz > 0:
            best = max(best, reg_value(spec, z) / nz)
    return best
