import math

import numpy as np
import pytest

from restricted_gradient.ensembles import (
    EnsembleSpec, ar1_covariance, ar1_interval, ar1_spectrum, check_truth, gen_design_ar1,
    gen_instance, gen_low_rank, gen_truth_sparse, lasso_lambda, make_rng, spawn_rngs)
from restricted_gradient.exceptions import ConfigurationError


@pytest.mark.parametrize("omega", [0.0, 0.3, 0.5, 0.8, 0.95])
@pytest.mark.parametrize("d", [1, 2, 7, 60])
def test_ar1_spectrum_vs_dense_eigenvalues(d, omega):
    ev = np.linalg.eigvalsh(ar1_covariance(d, omega))
    lo, hi = ar1_spectrum(d, omega)
    assert lo == pytest.approx(ev[0], rel=1e-9)
    assert hi == pytest.approx(ev[-1], rel=1e-9)
    a, b = ar1_interval(omega)
    assert a <= lo * (1 + 1e-12) and hi <= b * (1 + 1e-12)


def test_ar1_interval_values():
    assert ar1_interval(0.5) == pytest.approx((1 / 2.25, 2 / (0.25 * 1.5)))


def test_ar1_design_covariance():
    x, summ = gen_design_ar1(5, 200_000, 0.6, make_rng(0))
    emp = x.T @ x / x.shape[0]
    assert np.allclose(emp, ar1_covariance(5, 0.6), atol=0.03)
    assert summ.zeta == pytest.approx(1 / (1 - 0.36))
    with pytest.raises(ConfigurationError):
        gen_design_ar1(5, 10, 1.0, 0)


def test_design_empirical_summary():
    _, summ = gen_design_ar1(4, 50, 0.0, 3, empirical=True)
    assert 0 < summ.empirical_min <= summ.empirical_max


def test_spawned_streams_differ_and_repeat():
    a = [r.standard_normal(3) for r in spawn_rngs(5)]
    b = [r.standard_normal(3) for r in spawn_rngs(5)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(a[0], a[1])


def test_sparse_truth():
    th = gen_truth_sparse(100, 7, rng=1)
    assert np.count_nonzero(th) == 7
    assert set(np.abs(th[th != 0])) == {1.0}
    weak = gen_truth_sparse(100, q=0.5, radius=4.0, rng=2)
    assert np.sum(np.abs(weak) ** 0.5) == pytest.approx(4.0)
    with pytest.raises(ConfigurationError):
        gen_truth_sparse(5, 6)


def test_low_rank_truth():
    rng = make_rng(0)
    m = gen_low_rank(10, 8, 3, rng)
    s = np.linalg.svd(m, compute_uv=False)
    assert np.sum(s > 1e-10) == 3
    assert np.linalg.norm(m) == pytest.approx(1.0)
    weak = gen_low_rank(10, 8, None, rng, q=0.5, radius=2.0)
    assert np.sum(np.linalg.svd(weak, compute_uv=False) ** 0.5) == pytest.approx(2.0)


def test_sample_sizes():
    e = EnsembleSpec("sparse_linear", d=1000, s=31, alpha=25)
    assert e.sample_size == math.ceil(25 * 31 * math.log(1000))
    assert EnsembleSpec("sparse_linear", d=1000, q=0.5, R_q=47.3, alpha=2).sample_size == \
        math.ceil(2 * 48 * math.log(1000))
    assert EnsembleSpec("matrix_cs", d=60, rank=5, alpha=25).sample_size == 7500
    assert EnsembleSpec("matcomp", d=60, rank=5, alpha=2).sample_size == math.ceil(600 * math.log(60))
    assert EnsembleSpec("matdecomp", d=8, d2=6, rank=2, s=2).sample_size == 48
    assert EnsembleSpec("sparse_linear", d=10, s=2, n=33).sample_size == 33


@pytest.mark.parametrize("kw", [
    dict(family="nope", d=5, alpha=1),
    dict(family="sparse_linear", d=5, s=0, alpha=1),
    dict(family="sparse_linear", d=5, s=2),
    dict(family="sparse_linear", d=5, s=2, alpha=1, omega=1.0),
    dict(family="sparse_linear", d=5, q=0.5, alpha=1),
    dict(family="matrix_cs", d=5, rank=6, alpha=1),
    dict(family="matdecomp", d=5, rank=1, s=9),
])
def test_spec_validation(kw):
    with pytest.raises(ConfigurationError):
        EnsembleSpec(**kw)


def test_spec_dict_roundtrip():
    e = EnsembleSpec("matcomp", d=20, rank=2, alpha=3, seed=4)
    assert EnsembleSpec.from_dict(e.to_dict()) == e
    with pytest.raises(ConfigurationError):
        EnsembleSpec.from_dict({"family": "matcomp", "d": 20, "rank": 2, "alpha": 3, "extra": 1})


@pytest.mark.parametrize("spec", [
    EnsembleSpec("sparse_linear", d=50, s=5, alpha=10, omega=0.5, seed=1),
    EnsembleSpec("sparse_linear", d=50, q=0.5, R_q=3.0, alpha=10, seed=1),
    EnsembleSpec("logistic_sparse", d=30, s=3, alpha=10, seed=2),
    EnsembleSpec("matrix_cs", d=8, rank=2, alpha=5, seed=3),
    EnsembleSpec("matcomp", d=12, rank=2, alpha=3, seed=4),
    EnsembleSpec("matdecomp", d=10, d2=12, rank=2, s=3, seed=5),
], ids=lambda s: s.family)
def test_instances_are_consistent_and_reproducible(spec):
    inst = gen_instance(spec)
    assert all(check_truth(inst).values())
    assert inst.constraint.contains(inst.truth)
    assert inst.model.shape == inst.truth.shape
    again = gen_instance(spec)
    assert np.array_equal(again.model.y, inst.model.y)
    other = gen_instance(spec.replace(seed=spec.seed + 100))
    assert not np.array_equal(other.model.y, inst.model.y)


def test_lasso_lambda():
    assert lasso_lambda(0.5, 1000, 2000) == pytest.approx(6 * math.sqrt(0.5 * math.log(1000) / 2000))


def test_identity_design_covariance_close():
    d, n = 10, 20_000
    x, summ = gen_design_ar1(d, n, 0.0, make_rng(9))
    assert np.linalg.norm(x.T @ x / n - np.eye(d), 2) < 3 * math.sqrt(d / n)
    assert ar1_interval(0.0) == (1.0, 2.0)


def test_ar1_half_correlation_inside_interval():
    lo, hi = ar1_spectrum(50, 0.5)
    a, b = ar1_interval(0.5)
    assert a <= lo and hi <= b


def test_weak_sparse_two_coordinates():
    th = gen_truth_sparse(2, q=1.0, radius=1.0, rng=0)
    assert sorted(np.abs(th)) == pytest.approx([1 / 3, 2 / 3])


def test_dense_exact_sparsity():
    th = gen_truth_sparse(6, 6, rng=0)
    assert np.all(np.abs(th) == 1.0)


def test_noise_scale():
    inst = gen_instance(EnsembleSpec("sparse_linear", d=5, s=2, n=20_000, nu=0.5, seed=0))
    w = inst.model.y - inst.model.op.apply(inst.truth)
    assert abs(w.std() / 0.5 - 1) < 0.05


def test_matcomp_indices_and_spikiness():
    inst = gen_instance(EnsembleSpec("matcomp", d=60, rank=5, alpha=25, seed=0))
    op = inst.model.op
    assert op.rows.max() < 60 and op.cols.max() < 60 and op.rows.min() >= 0
    assert np.abs(inst.truth).max() <= inst.meta["spikiness"] / 60 * (1 + 1e-12)
    assert inst.n == math.ceil(25 * 5 * 60 * math.log(60))


def test_save_and_load_instance(tmp_path):
    from restricted_gradient.ensembles import load_instance, save_instance
    inst = gen_instance(EnsembleSpec("matdecomp", d=6, rank=1, s=2, seed=3))
    save_instance(inst, tmp_path / "inst")
    model, truth, record = load_instance(tmp_path / "inst")
    assert np.array_equal(truth, inst.truth)
    assert np.array_equal(model.y, inst.model.y)
    rebuilt = gen_instance(EnsembleSpec.from_dict(record["spec"]))
    assert np.array_equal(rebuilt.truth, truth)
