import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import (cvxpy_projection, group_oracle, l1_box_oracle, l1_composite_gap,
                     l1_composite_oracle, l1_l2_oracle, l1_sort_oracle, l1_vi_gap)
from restricted_gradient.exceptions import ConfigurationError, NonConvergenceError
from restricted_gradient.projections import (
    BlockProduct, Col2Box, Intersection, L2Ball, LinfBox, RegBall, composite_prox, group_shrink,
    l1_threshold, project_box, project_columns_l1, project_group_l1, project_intersection,
    project_l1, project_nuclear, soft_threshold)
from restricted_gradient.regularizers import column12, group_l1, l1, nuclear, reg_value

finite = st.floats(-100, 100, allow_nan=False, allow_infinity=False)


def test_soft_threshold_basic():
    assert np.allclose(soft_threshold([3.0, -0.5, -2.0], 1.0), [2.0, 0.0, -1.0])
    with pytest.raises(ValueError):
        soft_threshold([1.0], -1.0)


def test_project_l1_inside_is_identity():
    v = np.array([0.1, -0.2])
    assert np.array_equal(project_l1(v, 1.0), v)
    assert l1_threshold(v, 1.0) == 0.0


def test_project_l1_known():
    assert np.allclose(project_l1(np.array([2.0, 0.0]), 1.0), [1.0, 0.0])
    assert np.allclose(project_l1(np.array([1.0, 1.0]), 1.0), [0.5, 0.5])


@settings(max_examples=200, deadline=None)
@given(arrays(float, st.integers(1, 20), elements=finite), st.floats(1e-3, 50))
def test_project_l1_matches_sort_oracle(v, r):
    x = project_l1(v, r)
    assert np.linalg.norm(x - l1_sort_oracle(v, r)) < 1e-10 * max(1.0, np.abs(v).max())
    assert np.abs(x).sum() <= r * (1 + 1e-12) + 1e-12
    assert l1_vi_gap(v, x, r) <= 1e-9 * max(1.0, float(v @ v))


@settings(max_examples=100, deadline=None)
@given(arrays(float, st.integers(1, 20), elements=finite), st.floats(1e-3, 50))
def test_projection_nonexpansive_and_idempotent(v, r):
    x = project_l1(v, r)
    assert np.allclose(project_l1(x, r), x, atol=1e-9)
    w = v + 1.0
    assert np.linalg.norm(project_l1(w, r) - x) <= np.linalg.norm(w - v) + 1e-9


def test_group_l1_matches_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        d = int(rng.integers(2, 21))
        cuts = np.sort(rng.choice(np.arange(1, d), size=int(rng.integers(0, d - 1)), replace=False))
        bounds = [0, *cuts.tolist(), d]
        groups = [list(range(bounds[i], bounds[i + 1])) for i in range(len(bounds) - 1)]
        v = rng.standard_normal(d) * rng.uniform(0.1, 5)
        r = rng.uniform(0.05, 3)
        x = project_group_l1(v, groups, r)
        assert np.linalg.norm(x - group_oracle(v, groups, r)) < 1e-6


def test_group_with_singletons_equals_l1():
    rng = np.random.default_rng(1)
    v = rng.standard_normal(12)
    assert np.allclose(project_group_l1(v, [[i] for i in range(12)], 1.3), project_l1(v, 1.3))


def test_nuclear_projection_vs_cvxpy():
    pytest.importorskip("cvxpy")
    import cvxpy as cp
    rng = np.random.default_rng(2)
    v = rng.standard_normal((4, 3))
    x = project_nuclear(v, 1.0)
    ref = cvxpy_projection(v, lambda z: [cp.normNuc(z) <= 1.0])
    assert np.linalg.norm(x - ref) < 1e-5
    s = np.linalg.svd(x, compute_uv=False)
    assert s.sum() == pytest.approx(1.0)


def test_columns_l1():
    rng = np.random.default_rng(3)
    m = rng.standard_normal((5, 4))
    x = project_columns_l1(m, 1.5)
    assert reg_value(column12(5, 4), x) == pytest.approx(1.5)
    # columns are rescaled, never rotated
    for j in range(4):
        if np.linalg.norm(x[:, j]) > 0:
            assert abs(np.dot(x[:, j], m[:, j]) - np.linalg.norm(x[:, j]) * np.linalg.norm(m[:, j])) < 1e-10


def test_composite_prox_l1_vs_oracle_and_certificate():
    rng = np.random.default_rng(4)
    for _ in range(100):
        d = int(rng.integers(1, 21))
        v = rng.standard_normal(d) * rng.uniform(0.1, 5)
        t = rng.uniform(0, 1)
        r = rng.uniform(0.05, 5) if rng.random() < 0.7 else math.inf
        x = composite_prox(v, t, l1(d), r)
        if math.isinf(r):
            assert np.allclose(x, soft_threshold(v, t))
            continue
        assert np.linalg.norm(x - l1_composite_oracle(v, t, r)) < 1e-6
        assert l1_composite_gap(v, x, t, r) <= 1e-9


def test_composite_prox_group_and_nuclear():
    rng = np.random.default_rng(5)
    groups = [[0, 1, 2], [3, 4], [5]]
    v = rng.standard_normal(6) * 3
    x = composite_prox(v, 0.4, group_l1(groups, 6), 1.0)
    assert reg_value(group_l1(groups, 6), x) <= 1.0 + 1e-12
    # shrinking then projecting equals a single larger shrink
    assert np.allclose(x, group_oracle(group_shrink(v, groups, 0.4), groups, 1.0), atol=1e-8)
    m = rng.standard_normal((5, 4))
    y = composite_prox(m, 0.3, nuclear(5, 4))
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    assert np.allclose(y, (u * np.maximum(s - 0.3, 0)) @ vt)


def test_composite_prox_vs_cvxpy():
    pytest.importorskip("cvxpy")
    import cvxpy as cp
    rng = np.random.default_rng(6)
    for _ in range(5):
        m = rng.standard_normal((4, 4)) * 2
        x = composite_prox(m, 0.2, column12(4, 4), 2.0)
        z = cp.Variable((4, 4))
        obj = 0.5 * cp.sum_squares(z - m) + 0.2 * cp.sum(cp.norm(z, 2, axis=0))
        cp.Problem(cp.Minimize(obj), [cp.sum(cp.norm(z, 2, axis=0)) <= 2.0]).solve(solver=cp.CLARABEL)
        assert np.linalg.norm(x - z.value) < 1e-5


def test_composite_prox_block_rejected():
    from restricted_gradient.regularizers import block
    with pytest.raises(ConfigurationError):
        composite_prox(np.zeros((2, 2, 2)), 0.1, block(nuclear(2, 2), column12(2, 2)))


def test_intersection_l1_box_vs_oracle():
    rng = np.random.default_rng(7)
    for _ in range(100):
        d = int(rng.integers(1, 21))
        v = rng.standard_normal(d) * rng.uniform(0.5, 4)
        r, b = rng.uniform(0.2, 4), rng.uniform(0.1, 2)
        x, cycles = project_intersection(v, [RegBall(l1(d), r), LinfBox(b)])
        assert cycles >= 1
        assert np.linalg.norm(x - l1_box_oracle(v, r, b)) < 1e-6


def test_intersection_l1_l2_vs_kkt_oracle():
    rng = np.random.default_rng(8)
    for _ in range(100):
        d = int(rng.integers(2, 21))
        v = rng.standard_normal(d) * rng.uniform(0.5, 3)
        r1, r2 = rng.uniform(0.3, 3), rng.uniform(0.2, 2)
        x = Intersection([RegBall(l1(d), r1), L2Ball(r2)]).project(v)
        assert np.linalg.norm(x - l1_l2_oracle(v, r1, r2)) < 1e-6


def test_intersection_nonconvergence_carries_last():
    v = np.array([5.0, -3.0, 2.0])
    with pytest.raises(NonConvergenceError) as info:
        project_intersection(v, [RegBall(l1(3), 1.0), LinfBox(0.4)], tol=0.0, max_cycles=3)
    assert info.value.last.shape == (3,)


def test_box_and_block_product():
    rng = np.random.default_rng(9)
    m = rng.standard_normal((3, 4)) * 3
    assert np.abs(project_box(m, LinfBox(0.5))).max() <= 0.5
    assert np.linalg.norm(project_box(m, Col2Box(1.0)), axis=0).max() <= 1.0 + 1e-12
    with pytest.raises(ConfigurationError):
        project_box(m, L2Ball(1.0))
    prod = BlockProduct([RegBall(nuclear(3, 4), 1.0), RegBall(column12(3, 4), 2.0)])
    x = prod.project(np.stack([m, m]))
    assert prod.contains(x)
    assert reg_value(nuclear(3, 4), x[0]) == pytest.approx(1.0)


def test_regball_validation():
    with pytest.raises(ConfigurationError):
        RegBall(l1(3), 0.0)
    assert np.array_equal(RegBall(l1(2), math.inf).project(np.array([5.0, 5.0])), [5.0, 5.0])
