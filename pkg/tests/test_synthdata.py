import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from powconv import synthdata as sd
from powconv.errors import ConfigurationError, DataError, DimensionError
from powconv.tensor import read_tensor


# -- GND sampler ------------------------------------------------------------

def test_standard_normal_at_kappa_zero():
    x = sd.gnd_sample(sd.GndConfig(), 100_000, seed=1)
    assert abs(x.mean()) < 0.02 and abs(x.std() - 1) < 0.02


def test_support_bound_for_positive_kappa():
    x = sd.gnd_sample(sd.GndConfig(kappa=0.5), 100_000, seed=2)
    assert np.all(x < 2.0)


@pytest.mark.parametrize("kappa,sign", [(0.8, -1), (-0.8, 1)])
def test_skew_direction(kappa, sign):
    x = sd.gnd_sample(sd.GndConfig(kappa=kappa), 100_000, seed=3)
    assert np.sign(stats.skew(x)) == sign


def test_inverse_transform_matches_cdf():
    # the sampler's CDF, evaluated through the forward link, is uniform on the samples
    for kappa in (-0.7, 0.3):
        x = sd.gnd_sample(sd.GndConfig(kappa=kappa, xi=0.5, scale=2.0), 20_000, seed=4)
        u = sd.gnd_cdf(x, kappa, 0.5, 2.0)
        assert stats.kstest(u, "uniform").pvalue > 0.01


def test_transform_is_continuous_in_kappa():
    z = np.linspace(-3, 3, 13)
    np.testing.assert_allclose(sd.gnd_transform(z, 1e-9), sd.gnd_transform(z, 0.0), atol=1e-8)


def test_ks_statistic_against_scipy():
    x = np.random.default_rng(5).standard_normal(5000)
    d, p, ok = sd.ks_test_normal(x)
    ref = stats.kstest(x, "norm")
    assert d == pytest.approx(ref.statistic, rel=1e-12)
    assert p == pytest.approx(ref.pvalue, rel=1e-6)
    assert ok == (p > 0.01)


def test_gnd_config_validation():
    with pytest.raises(ConfigurationError):
        sd.GndConfig(scale=0)
    with pytest.raises(ConfigurationError):
        sd.GndConfig(kappa=1.5)
    with pytest.raises(ConfigurationError):
        sd.gnd_sample(sd.GndConfig(), 0)


def test_sampler_is_deterministic():
    a = sd.gnd_sample(sd.GndConfig(kappa=0.4), 100, seed=9)
    assert np.array_equal(a, sd.gnd_sample(sd.GndConfig(kappa=0.4), 100, seed=9))


# -- labels -----------------------------------------------------------------

def test_label_examples():
    assert sd.assign_label([0.7], 1) == 1
    assert sd.assign_label([-0.1, 0.4, 3.0], 2) == 2
    assert sd.assign_label([0.0, -1.0, 0.0, 5.0], 3) == 5


@given(st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_label_bit_flip(N, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((20, 10)) + 1e-3
    base = sd.assign_label(x, N)
    assert base.min() >= 0 and base.max() < 2 ** N
    for n in range(N):
        flipped = x.copy()
        flipped[:, n] = -flipped[:, n]
        assert np.all(np.abs(sd.assign_label(flipped, N) - base) == 2 ** n)


def test_label_needs_enough_features():
    with pytest.raises(DimensionError):
        sd.assign_label(np.zeros(2), 3)


# -- classification data ----------------------------------------------------

def test_shared_kappa_without_divergence():
    spec = sd.SyntheticClassSpec(16, 2, 50, 40, seed=3)
    train, test = sd.make_classification_dataset(spec, diverged=False)
    assert np.array_equal(train.kappa, test.kappa)
    assert train.x.shape == (50, 16) and test.x.shape == (40, 16)
    np.testing.assert_array_equal(train.y, sd.assign_label(train.x, 2))


def test_label_range_n8():
    spec = sd.SyntheticClassSpec(128, 8, 2000, 10, seed=1)
    train, _ = sd.make_classification_dataset(spec, diverged=True)
    assert spec.n_classes == 256
    assert set(np.unique(train.y)) <= set(range(256))


def test_diverged_kappa_gap_is_two_thirds():
    gaps = []
    for seed in range(200):
        tr, te = sd.make_classification_dataset(sd.SyntheticClassSpec(128, 1, 1, 1, seed), True)
        gaps.append(np.mean(np.abs(tr.kappa - te.kappa)))
    assert np.mean(gaps) == pytest.approx(2 / 3, abs=0.01)


def test_datasets_bit_reproducible():
    spec = sd.SyntheticClassSpec(8, 2, 30, 30, seed=11)
    a = sd.make_classification_dataset(spec, True)
    b = sd.make_classification_dataset(spec, True)
    for u, v in zip(a, b):
        assert np.array_equal(u.x, v.x) and np.array_equal(u.y, v.y)
    c = sd.make_classification_dataset(sd.SyntheticClassSpec(8, 2, 30, 30, seed=12), True)
    assert not np.array_equal(a[0].x, c[0].x)


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        sd.SyntheticClassSpec(4, 5)


# -- power regression -------------------------------------------------------

def test_forced_identity_exponent():
    d = sd.make_power_regression_dataset(16, 100, seed=0, exponents=1.0)
    assert np.array_equal(d.x, d.y)


def test_regression_range_and_means():
    d = sd.make_power_regression_dataset(8, 100_000, seed=1)
    assert d.y.min() >= 0 and d.y.max() <= 1
    assert np.all((d.exponents >= 0) & (d.exponents <= 2))
    np.testing.assert_allclose(d.y.mean(axis=0), 1 / (d.exponents + 1), atol=0.02)


def test_ratio_metric_examples(rng):
    t = rng.uniform(0.1, 1, (5, 4))
    assert np.all(sd.ratio_metric(t, t)[0] == 0)
    np.testing.assert_allclose(sd.ratio_metric(np.zeros_like(t), t)[0], 100.0, rtol=1e-14)
    r, mean, std = sd.ratio_metric(t * 1.1, t)
    np.testing.assert_allclose(r, 10.0, rtol=1e-12)
    assert mean == pytest.approx(10.0) and std == pytest.approx(0.0, abs=1e-12)


def test_ratio_metric_errors():
    with pytest.raises(DataError):
        sd.ratio_metric(np.zeros((2, 2)), np.array([[1.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(DimensionError):
        sd.ratio_metric(np.zeros((2, 2)), np.ones((2, 3)))


# -- moments and divergence -------------------------------------------------

def test_two_point_moments():
    s = sd.dist_moments(np.tile([-1.0, 1.0], 50))
    assert s.skewness == pytest.approx(0, abs=1e-15)
    assert s.excess_kurtosis == pytest.approx(-2, abs=1e-14)
    assert s.counts.sum() == pytest.approx(1, abs=1e-9)


def test_normal_and_exponential_moments():
    rng = np.random.default_rng(8)
    n = sd.dist_moments(rng.standard_normal(100_000))
    assert abs(n.skewness) < 0.05 and abs(n.excess_kurtosis) < 0.1
    e = sd.dist_moments(rng.exponential(1.0, 100_000))
    assert abs(e.skewness - 2) < 0.1


@given(st.lists(st.floats(-100, 100), min_size=4, max_size=60), st.integers(1, 50))
def test_moments_match_scipy(values, bins):
    x = np.array(values)
    if np.ptp(x) < 1e-6:
        return
    s = sd.dist_moments(x, bins=bins)
    assert s.variance >= 0
    assert s.mean == pytest.approx(x.mean(), rel=1e-9, abs=1e-9)
    assert s.skewness == pytest.approx(stats.skew(x), rel=1e-7, abs=1e-7)
    assert s.excess_kurtosis == pytest.approx(stats.kurtosis(x), rel=1e-7, abs=1e-7)
    assert s.counts.sum() == pytest.approx(1, abs=1e-9)


def test_degenerate_moments():
    with pytest.raises(sd.DegenerateDistributionError):
        sd.dist_moments(np.ones(10))
    with pytest.raises(DataError):
        sd.dist_moments(np.arange(3.0))


def test_jsd_examples():
    p = np.array([0.2, 0.3, 0.5])
    assert sd.js_divergence(p, p) == 0.0
    assert sd.js_divergence([1.0, 0.0], [0.0, 1.0]) == pytest.approx(math.log(2), abs=1e-15)


def test_jsd_matches_two_term_kl_oracle():
    p = np.array([0.1, 0.4, 0.0, 0.5])
    q = np.array([0.3, 0.3, 0.2, 0.2])
    m = (p + q) / 2
    kl_pm = sum(pi * math.log(pi / mi) for pi, mi in zip(p, m) if pi > 0)
    kl_qm = sum(qi * math.log(qi / mi) for qi, mi in zip(q, m) if qi > 0)
    assert sd.js_divergence(p, q) == pytest.approx(0.5 * kl_pm + 0.5 * kl_qm, abs=1e-12)


@given(st.lists(st.floats(0, 1), min_size=2, max_size=30), st.integers(0, 2**31 - 1))
def test_jsd_symmetric_and_bounded(raw, seed):
    p = np.array(raw)
    if p.sum() == 0:
        return
    q = np.random.default_rng(seed).permutation(p)
    p, q = p / p.sum(), q / q.sum()
    assert sd.js_divergence(p, q) == sd.js_divergence(q, p)
    assert 0 <= sd.js_divergence(p, q) <= math.log(2) + 1e-12


def test_jsd_bin_mismatch():
    with pytest.raises(DimensionError):
        sd.js_divergence([0.5, 0.5], [1.0])
    with pytest.raises(DimensionError):
        sd.js_divergence([0.5, 0.5], [0.5, 0.5], [0, 1, 2], [0, 1, 3])


# -- export and streams -----------------------------------------------------

def test_export_dataset(tmp_path):
    spec = sd.SyntheticClassSpec(4, 1, 5, 5, seed=2)
    train, _ = sd.make_classification_dataset(spec, False)
    sd.export_dataset(tmp_path, "train", train.x, train.y, sd.spec_provenance(spec))
    np.testing.assert_array_equal(read_tensor(tmp_path / "train.y.pct"), train.y)
    text = (tmp_path / "train.provenance.txt").read_text()
    assert "seed = 2" in text and "n_determinant = 1" in text


def test_substreams_are_stable_and_distinct():
    a = sd.substream(5, "x", 1).integers(0, 2**32, 4)
    assert np.array_equal(a, sd.substream(5, "x", 1).integers(0, 2**32, 4))
    assert not np.array_equal(a, sd.substream(5, "x", 2).integers(0, 2**32, 4))
    assert not np.array_equal(a, sd.substream(6, "x", 1).integers(0, 2**32, 4))
