import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from restricted_gradient.exceptions import ConfigurationError
from restricted_gradient.regularizers import (
    RegularizerSpec, block, block_pair, column12, dual_value, group_l1, l1, low_rank_pair,
    nuclear, project_subspace, reg_value, sampled_compat, subspace_compat, support_pair,
    truth_pair)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_l1_and_dual():
    spec = l1(4)
    v = np.array([1.0, -2.0, 0.5, 0.0])
    assert reg_value(spec, v) == 3.5
    assert dual_value(spec, v) == 2.0


def test_group_values():
    spec = group_l1([[0, 1], [2], [3, 4]], 5)
    v = np.array([3.0, 4.0, -1.0, 0.0, 0.0])
    assert reg_value(spec, v) == pytest.approx(6.0)
    assert dual_value(spec, v) == pytest.approx(5.0)


def test_nuclear_matches_singular_values():
    rng = np.random.default_rng(0)
    m = rng.standard_normal((5, 3))
    s = np.linalg.svd(m, compute_uv=False)
    spec = nuclear(5, 3)
    assert reg_value(spec, m) == pytest.approx(s.sum())
    assert dual_value(spec, m) == pytest.approx(s[0])


def test_column12():
    m = np.array([[3.0, 0.0], [4.0, 1.0]])
    assert reg_value(column12(2, 2), m) == pytest.approx(6.0)
    assert dual_value(column12(2, 2), m) == pytest.approx(5.0)


def test_block_sums_parts():
    spec = block(nuclear(3, 3), column12(3, 3))
    rng = np.random.default_rng(1)
    th = rng.standard_normal((2, 3, 3))
    assert reg_value(spec, th) == pytest.approx(reg_value(nuclear(3, 3), th[0])
                                                + reg_value(column12(3, 3), th[1]))


@pytest.mark.parametrize("groups", [[[0, 1], [1, 2]], [[0], [2]], [[0, 1], []]])
def test_bad_groups_rejected(groups):
    with pytest.raises(ConfigurationError):
        group_l1(groups, 3)


def test_shape_mismatch():
    with pytest.raises(ConfigurationError):
        reg_value(l1(3), np.zeros(4))
    with pytest.raises(ConfigurationError):
        RegularizerSpec("nuclear", (3,))
    with pytest.raises(ConfigurationError):
        RegularizerSpec("bogus", (3,))


def test_dict_roundtrip_and_boundaries():
    spec = group_l1([[0, 1], [2, 3, 4]], 5)
    assert RegularizerSpec.from_dict(spec.to_dict()) == spec
    alt = RegularizerSpec.from_dict({"kind": "group", "shape": [5], "group_boundaries": [0, 2, 5]})
    assert alt == spec
    b = block(nuclear(2, 3), column12(2, 3))
    assert RegularizerSpec.from_dict(b.to_dict()) == b


@settings(max_examples=50, deadline=None)
@given(arrays(float, 8, elements=finite), arrays(float, 8, elements=finite))
def test_l1_norm_axioms(a, b):
    spec = l1(8)
    assert reg_value(spec, a + b) <= reg_value(spec, a) + reg_value(spec, b) + 1e-9
    assert reg_value(spec, -2.5 * a) == pytest.approx(2.5 * reg_value(spec, a))
    # Hoelder: <a, b> <= R(a) R*(b)
    assert float(a @ b) <= reg_value(spec, a) * dual_value(spec, b) + 1e-9


@settings(max_examples=30, deadline=None)
@given(arrays(float, (4, 3), elements=finite), arrays(float, (4, 3), elements=finite))
def test_nuclear_holder(a, b):
    spec = nuclear(4, 3)
    assert float(np.sum(a * b)) <= reg_value(spec, a) * dual_value(spec, b) + 1e-8


def test_decomposability_sparse():
    spec = l1(10)
    pair = support_pair(spec, [1, 4, 7])
    rng = np.random.default_rng(2)
    v = rng.standard_normal(10)
    a = project_subspace(pair, v, "model")
    b = project_subspace(pair, v, "perp")
    assert np.allclose(a + b, v)
    assert reg_value(spec, a + b) == pytest.approx(reg_value(spec, a) + reg_value(spec, b))


def test_decomposability_nuclear():
    rng = np.random.default_rng(3)
    spec = nuclear(6, 5)
    u = np.linalg.qr(rng.standard_normal((6, 2)))[0]
    v = np.linalg.qr(rng.standard_normal((5, 2)))[0]
    pair = low_rank_pair(u, v)
    g = rng.standard_normal((6, 5))
    a = project_subspace(pair, g, "model")
    b = project_subspace(pair, g, "perp")
    assert reg_value(spec, a + b) == pytest.approx(reg_value(spec, a) + reg_value(spec, b))
    # Mbar and Mbar-perp are orthogonal complements
    mb = project_subspace(pair, g, "model_bar")
    assert np.allclose(mb + b, g)
    assert abs(np.sum(mb * b)) < 1e-10
    # M is contained in Mbar
    assert np.allclose(project_subspace(pair, a, "model_bar"), a)


def test_projections_idempotent():
    rng = np.random.default_rng(4)
    spec = group_l1([[0, 1], [2, 3], [4]], 5)
    pair = support_pair(spec, [0, 2])
    v = rng.standard_normal(5)
    for which in ("model", "model_bar", "perp"):
        p = project_subspace(pair, v, which, spec)
        assert np.allclose(project_subspace(pair, p, which, spec), p)


def test_compat_closed_form_vs_sampling():
    rng = np.random.default_rng(5)
    spec = l1(20)
    pair = support_pair(spec, range(6))
    psi = subspace_compat(spec, pair)
    assert psi == pytest.approx(math.sqrt(6))
    lb = sampled_compat(spec, pair, rng, 2000, which="model")
    assert lb <= psi + 1e-12
    assert lb > 0.85 * psi
    u = np.linalg.qr(rng.standard_normal((8, 3)))[0]
    v = np.linalg.qr(rng.standard_normal((7, 3)))[0]
    npair = low_rank_pair(u, v)
    assert subspace_compat(nuclear(8, 7), npair) == pytest.approx(math.sqrt(3))
    assert sampled_compat(nuclear(8, 7), npair, rng, 300, which="model") <= math.sqrt(3) + 1e-9
    # the enlarged subspace holds rank-2r matrices
    assert sampled_compat(nuclear(8, 7), npair, rng, 300) <= math.sqrt(6) + 1e-9


def test_compat_empty_support():
    spec = l1(5)
    assert subspace_compat(spec, support_pair(spec, [])) == 0.0


def test_truth_pair_kinds():
    spec = l1(6)
    th = np.array([0.0, 2.0, 0.0, 0.01, -1.0, 0.0])
    assert truth_pair(spec, th).support == (1, 3, 4)
    assert truth_pair(spec, th, threshold=0.1).support == (1, 4)
    rng = np.random.default_rng(6)
    m = rng.standard_normal((6, 2)) @ rng.standard_normal((2, 5))
    assert truth_pair(nuclear(6, 5), m).size == 2
    bp = block_pair(truth_pair(nuclear(6, 5), m), support_pair(column12(6, 5), [0]))
    assert subspace_compat(block(nuclear(6, 5), column12(6, 5)), bp) == pytest.approx(math.sqrt(3))


def test_support_out_of_range():
    with pytest.raises(ConfigurationError):
        support_pair(l1(3), [3])
    with pytest.raises(ConfigurationError):
        support_pair(nuclear(3, 3), [0])
