"""Observation operators and differentiable losses.

Every loss exposes ``value``, ``gradient`` and ``taylor_error`` where the
Taylor error is L(theta) - L(theta') - <grad L(theta'), theta - theta'>.
"""

from __future__ import annotations

import json

import numpy as np
from scipy.special import expit

from .exceptions import ConfigurationError
from .regularizers import dual_value


# -- observation operators --------------------------------------------------


class DenseVectorDesign:
    """Rows x_i of an n x d matrix acting on vectors."""

    kind = "dense_vector"

    def __init__(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ConfigurationError("design must be a nonempty n x d matrix")
        self.x = x
        self.n = x.shape[0]
        self.param_shape = (x.shape[1],)

    @property
    def flat(self):
        return self.x

    def apply(self, theta):
        return self.x @ theta

    def adjoint(self, y):
        return self.x.T @ y


class DenseMatrixDesign:
    """Trace-regression operator theta -> (<X_i, theta>)_i, stored flat as n x (d1*d2)."""

    kind = "dense_matrix"

    def __init__(self, x, shape=None):
        x = np.asarray(x, dtype=float)
        if x.ndim == 3:
            shape = x.shape[1:]
            x = x.reshape(x.shape[0], -1)
        if shape is None or x.ndim != 2 or x.shape[1] != shape[0] * shape[1]:
            raise ConfigurationError("matrix design needs n matrices or a flat array with a shape")
        self.x = x
        self.n = x.shape[0]
        self.param_shape = tuple(int(s) for s in shape)

    @property
    def flat(self):
        return self.x

    def apply(self, theta):
        return self.x @ np.ravel(theta)

    def adjoint(self, y):
        return (self.x.T @ y).reshape(self.param_shape)


class EntrySampler:
    """Observes entries theta[a_i, b_i]; the adjoint accumulates into those entries."""

    kind = "entries"

    def __init__(self, rows, cols, shape):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        shape = tuple(int(s) for s in shape)
        if rows.shape != cols.shape or rows.ndim != 1 or rows.size < 1:
            raise ConfigurationError("rows and cols must be equal-length nonempty index lists")
        if rows.min() < 0 or cols.min() < 0 or rows.max() >= shape[0] or cols.max() >= shape[1]:
            raise ConfigurationError("sampled index out of bounds")
        self.rows, self.cols = rows, cols
        self.n = rows.size
        self.param_shape = shape
        self._lin = rows * shape[1] + cols
        self.counts = np.bincount(self._lin, minlength=shape[0] * shape[1]).reshape(shape)

    def apply(self, theta):
        return np.asarray(theta)[self.rows, self.cols]

    def adjoint(self, y):
        size = self.param_shape[0] * self.param_shape[1]
        return np.bincount(self._lin, weights=y, minlength=size).reshape(self.param_shape)


class Identity:
    kind = "identity"

    def __init__(self, shape):
        self.param_shape = tuple(int(s) for s in shape)
        self.n = int(np.prod(self.param_shape))

    def apply(self, theta):
        return np.ravel(theta).astype(float)

    def adjoint(self, y):
        return np.asarray(y, dtype=float).reshape(self.param_shape)


def _check_shape(theta, shape):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != tuple(shape):
        raise ConfigurationError(f"parameter shape {theta.shape} does not match {tuple(shape)}")
    return theta


# -- losses -----------------------------------------------------------------


class QuadraticLoss:
    """(1/2n) ||y - X(theta)||^2.

    With a dense design and n >= 3p the Gram matrix X^T X is formed once and
    reused; pass ``use_gram`` to force either path.
    """

    family = "quadratic"

    def __init__(self, op, y, use_gram=None):
        y = np.asarray(y, dtype=float)
        if y.shape != (op.n,):
            raise ConfigurationError(f"expected {op.n} responses, got shape {y.shape}")
        self.op, self.y, self.n = op, y, op.n
        self.shape = op.param_shape
        p = int(np.prod(self.shape))
        if use_gram is None:
            use_gram = hasattr(op, "flat") and op.n >= 3 * p
        self.gram = None
        if use_gram:
            xf = op.flat
            self.gram = xf.T @ xf
            self.xty = xf.T @ y
            self.yy = float(y @ y)

    def residual(self, theta):
        return self.y - self.op.apply(theta)

    def value(self, theta):
        theta = _check_shape(theta, self.shape)
        if self.gram is not None:
            t = theta.ravel()
            v = (t @ (self.gram @ t) - 2 * t @ self.xty + self.yy) / (2 * self.n)
            return max(float(v), 0.0)
        r = self.residual(theta)
        return float(r @ r) / (2 * self.n)

    def gradient(self, theta):
        theta = _check_shape(theta, self.shape)
        if self.gram is not None:
            return ((self.gram @ theta.ravel() - self.xty) / self.n).reshape(self.shape)
        return -self.op.adjoint(self.residual(theta)) / self.n

    def value_and_gradient(self, theta):
        theta = _check_shape(theta, self.shape)
        if self.gram is not None:
            t = theta.ravel()
            gt = self.gram @ t
            v = max(float((t @ gt - 2 * t @ self.xty + self.yy) / (2 * self.n)), 0.0)
            return v, ((gt - self.xty) / self.n).reshape(self.shape)
        r = self.residual(theta)
        return float(r @ r) / (2 * self.n), -self.op.adjoint(r) / self.n

    def taylor_error(self, theta, theta_ref):
        delta = _check_shape(theta, self.shape) - _check_shape(theta_ref, self.shape)
        if self.gram is not None:
            dt = delta.ravel()
            return float(dt @ (self.gram @ dt)) / (2 * self.n)
        xd = self.op.apply(delta)
        return float(xd @ xd) / (2 * self.n)


def log1pexp(t):
    """Phi(t) = log(1 + e^t), overflow safe."""
    return np.logaddexp(0.0, t)


class LogisticLoss:
    """(1/n) sum_i [Phi(<theta, x_i>) - y_i <theta, x_i>] with y_i in {0, 1}."""

    family = "logistic"

    def __init__(self, op, y):
        y = np.asarray(y, dtype=float)
        if y.shape != (op.n,):
            raise ConfigurationError(f"expected {op.n} responses, got shape {y.shape}")
        if not np.all((y == 0) | (y == 1)):
            raise ConfigurationError("logistic responses must be 0 or 1")
        self.op, self.y, self.n = op, y, op.n
        self.shape = op.param_shape

    def value(self, theta):
        t = self.op.apply(_check_shape(theta, self.shape))
        return float(np.mean(log1pexp(t) - self.y * t))

    def gradient(self, theta):
        t = self.op.apply(_check_shape(theta, self.shape))
        return self.op.adjoint(expit(t) - self.y) / self.n

    def value_and_gradient(self, theta):
        t = self.op.apply(_check_shape(theta, self.shape))
        v = float(np.mean(log1pexp(t) - self.y * t))
        return v, self.op.adjoint(expit(t) - self.y) / self.n

    def taylor_error(self, theta, theta_ref):
        t = self.op.apply(_check_shape(theta, self.shape))
        t0 = self.op.apply(_check_shape(theta_ref, self.shape))
        # the linear y-terms cancel; what is left is the Bregman divergence of Phi
        terms = log1pexp(t) - log1pexp(t0) - expit(t0) * (t - t0)
        return float(np.mean(terms))


class DecompositionLoss:
    """0.5 ||Y - Theta - Gamma||_F^2 on the stacked parameter (Theta, Gamma).

    ``raw=True`` drops the 0.5.
    """

    family = "decomposition"

    def __init__(self, y, raw=False):
        y = np.asarray(y, dtype=float)
        if y.ndim != 2:
            raise ConfigurationError("decomposition observation must be a matrix")
        self.y = y
        self.raw = raw
        self.scale = 1.0 if raw else 0.5
        self.shape = (2,) + y.shape
        self.n = y.size

    def value(self, theta):
        theta = _check_shape(theta, self.shape)
        r = self.y - theta[0] - theta[1]
        return self.scale * float(np.sum(r * r))

    def gradient(self, theta):
        theta = _check_shape(theta, self.shape)
        g = -2 * self.scale * (self.y - theta[0] - theta[1])
        return np.stack([g, g])

    def value_and_gradient(self, theta):
        return self.value(theta), self.gradient(theta)

    def taylor_error(self, theta, theta_ref):
        d = _check_shape(theta, self.shape) - _check_shape(theta_ref, self.shape)
        s = d[0] + d[1]
        return self.scale * float(np.sum(s * s))


def loss_value(model, theta):
    return model.value(theta)


def loss_gradient(model, theta):
    return model.gradient(theta)


def taylor_error(model, theta, theta_ref):
    return model.taylor_error(theta, theta_ref)


def dual_score(model, theta_star, spec):
    """R*(grad L(theta_star)), the quantity that sets lambda_n."""
    return dual_value(spec, model.gradient(theta_star))


# -- persistence ------------------------------------------------------------


def save_model(path, model):
    """Write a loss model to an ``.npz`` container."""
    arrays = {}
    meta = {"family": model.family}
    if model.family == "decomposition":
        arrays["y"] = model.y
        meta["raw"] = model.raw
    else:
        op = model.op
        arrays["y"] = model.y
        meta["operator"] = op.kind
        meta["shape"] = list(op.param_shape)
        if op.kind in ("dense_vector", "dense_matrix"):
            arrays["x"] = op.flat
        elif op.kind == "entries":
            arrays["rows"], arrays["cols"] = op.rows, op.cols
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_model(path):
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta["family"] == "decomposition":
            return DecompositionLoss(data["y"], raw=meta["raw"])
        kind, shape = meta["operator"], tuple(meta["shape"])
        if kind == "dense_vector":
            op = DenseVectorDesign(data["x"])
        elif kind == "dense_matrix":
            op = DenseMatrixDesign(data["x"], shape)
        elif kind == "entries":
            op = EntrySampler(data["rows"], data["cols"], shape)
        else:
            op = Identity(shape)
        cls = QuadraticLoss if meta["family"] == "quadratic" else LogisticLoss
        return cls(op, data["y"])
