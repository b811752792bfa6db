import json

import numpy as np
import pytest

from vmincqr import synth
from vmincqr.dataset import FeatureKind, load_csv, load_schema
from vmincqr.errors import InvalidConfig
from vmincqr.regressors import fit_ols, predict


def test_default_dimensions():
    cfg = synth.SynthConfig()
    assert cfg.n_features == 1800 + 168 * 6 + 10 * 6 == 2868
    ds = synth.generate(n_chips=4)
    assert ds.d == 2868
    d = synth.describe(ds)
    assert d["columns_by_kind"] == {"param": 1800, "rod": 168 * 6, "cpd": 10 * 6}
    assert len(d["label_keys"]) == 18
    assert json.loads(json.dumps(d)) == d


def test_invalid_config():
    for bad in ({"n_chips": 0}, {"n_rod": 0}, {"anomaly_fraction": 1.0}, {"read_points": (24, 48)}):
        with pytest.raises(InvalidConfig):
            synth.SynthConfig(**bad)


def test_deterministic_and_prefix_stable():
    a = synth.generate(n_chips=20, n_parametric=10, n_rod=4, n_cpd=2, seed=5)
    b = synth.generate(n_chips=20, n_parametric=10, n_rod=4, n_cpd=2, seed=5)
    c = synth.generate(n_chips=30, n_parametric=10, n_rod=4, n_cpd=2, seed=5)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.features, c.features[:20])
    for k in a.labels:
        np.testing.assert_array_equal(a.labels[k], c.labels[k][:20])


def test_homoscedastic_residual_variance_ratio():
    ds, truth = synth.generate_with_truth(synth.SynthConfig(n_chips=1000, n_parametric=4, n_rod=2, n_cpd=1,
                                                            seed=2))
    y = ds.labels[(168, 25)]
    Z = np.column_stack([truth.z, truth.aging_rate * np.log1p(168)])
    res = y - predict(fit_ols(Z, y), Z)
    order = np.argsort(predict(fit_ols(Z, y), Z))
    dec = len(y) // 10
    ratio = np.var(res[order[-dec:]]) / np.var(res[order[:dec]])
    assert max(ratio, 1 / ratio) < 2


def test_time_zero_labels_ignore_aging():
    ds, truth = synth.generate_with_truth(synth.SynthConfig(n_chips=1000, n_parametric=4, n_rod=2, n_cpd=1,
                                                            seed=4))
    for T in (-45, 25, 125):
        r = np.corrcoef(ds.labels[(0, T)], truth.aging_rate)[0, 1]
        assert abs(r) < 0.1


def test_mean_vmin_nondecreasing_in_stress():
    ds = synth.generate(n_chips=1000, n_parametric=4, n_rod=2, n_cpd=1, seed=6)
    for T in (-45, 25, 125):
        means = [ds.labels[(t, T)].mean() for t in ds.read_points]
        assert all(b >= a for a, b in zip(means, means[1:]))


def test_heteroscedastic_noise_follows_latent():
    ds, truth = synth.generate_with_truth(synth.SynthConfig(n_chips=800, n_parametric=4, n_rod=2, n_cpd=1,
                                                            heteroscedastic=True, seed=1))
    y = ds.labels[(0, 25)]
    Z = truth.z
    res = y - predict(fit_ols(Z, y), Z)
    assert np.corrcoef(np.abs(res), truth.noise_sd(True))[0, 1] > 0.4


def test_anomalies_shift_vmin():
    ds, truth = synth.generate_with_truth(synth.SynthConfig(n_chips=600, n_parametric=4, n_rod=2, n_cpd=1,
                                                            anomaly_fraction=0.1, seed=3))
    y = ds.labels[(0, 25)]
    assert 0.05 < truth.anomalous.mean() < 0.15
    assert y[truth.anomalous].mean() - y[~truth.anomalous].mean() > 100


def test_population_scale():
    ds = synth.generate(n_chips=500, n_parametric=4, n_rod=2, n_cpd=1)
    y = ds.labels[(0, 25)]
    assert 450 < y.mean() < 550
    assert 25 < y.std() < 75


def test_onchip_columns_drift_with_stress():
    ds = synth.generate(n_chips=300, n_parametric=4, n_rod=3, n_cpd=2, seed=9)
    rods = {t: [j for j, c in enumerate(ds.columns) if c.kind is FeatureKind.RING_OSCILLATOR_DELAY
                and c.read_point_hours == t] for t in ds.read_points}
    early = ds.features[:, rods[0]]
    late = ds.features[:, rods[1008]]
    assert np.all(np.abs((late - early).mean(axis=0)) > 0)


def test_save_round_trip(tmp_path):
    ds = synth.generate(n_chips=6, n_parametric=5, n_rod=2, n_cpd=1, read_points=(0, 10), temperatures=(25,))
    csv_path, schema_path = synth.save(ds, tmp_path, "pop")
    back = load_csv(csv_path, load_schema(schema_path))
    np.testing.assert_array_equal(back.features, ds.features)
    assert back.read_points == (0, 10)
    first = csv_path.read_bytes()
    synth.save(synth.generate(n_chips=6, n_parametric=5, n_rod=2, n_cpd=1, read_points=(0, 10),
                              temperatures=(25,)), tmp_path, "pop")
    assert csv_path.read_bytes() == first
