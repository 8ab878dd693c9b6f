import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from ctrp.simlab import (
    BenchRow, ScenarioConfig, bench, bias_variance_decomposition, compressed_shape, distance_to_mean,
    efficiency_score, generate_dataset, make_coefficient, parse_projection_type, projection_factory,
    rmse_per_point, run_scenario, scenario_data, write_bench_csv,
)


def test_patterns_are_binary():
    for pattern in ("CI", "CR", "L", "B"):
        b = make_coefficient(pattern, (20, 20))
        assert set(np.unique(b)) == {0.0, 1.0}


def test_block_is_one_rectangle():
    b = make_coefficient("B", (20, 20))
    labels, count = ndimage.label(b)
    assert count == 1
    rows, cols = np.nonzero(b)
    assert b[rows.min():rows.max() + 1, cols.min():cols.max() + 1].all()
    assert b.sum() == 100


@pytest.mark.parametrize("p", [10, 11, 20, 25, 60])
def test_cross_is_rotation_symmetric(p):
    b = make_coefficient("CR", (p, p))
    np.testing.assert_array_equal(np.rot90(b), b)
    np.testing.assert_array_equal(b[::-1], b)


def test_band_width_and_annulus():
    b = make_coefficient("L", (20, 20))
    assert b.sum(axis=1).tolist().count(20) == 2
    ci = make_coefficient("CI", (40, 40))
    assert ci[20, 20] == 0 and ci[0, 0] == 0
    assert ci[20, 20 + 13] == 1  # normalized radius 13.5 / 40 inside [0.25, 0.4]
    np.testing.assert_array_equal(ci, ci.T)


def test_unstructured_fraction():
    n = 200 * 200
    b = make_coefficient("unstructured", (200, 200), sparsity=0.75, rng=1)
    assert abs(b.mean() - 0.75) < 3 * np.sqrt(0.75 * 0.25 / n)


def test_pattern_errors():
    with pytest.raises(ValueError):
        make_coefficient("CR", (4, 20))
    with pytest.raises(ValueError):
        make_coefficient("star", (20, 20))
    with pytest.raises(ValueError):
        make_coefficient("unstructured", (5, 5), sparsity=1.5)


def test_noise_free_data_fit_exactly():
    b0 = make_coefficient("CR", (10, 10))
    x, y = generate_dataset(b0, 50, 0.0, 2.0, 0)
    np.testing.assert_allclose(y - 2.0 - np.einsum("tij,ij->t", x, b0), 0.0, atol=1e-12)


def test_response_variance_identity():
    b0 = make_coefficient("CR", (10, 10))
    _, y = generate_dataset(b0, 10_000, 1.5, 0.0, 1)
    assert y.var(ddof=1) == pytest.approx(np.sum(b0**2) + 1.5**2, rel=0.05)


def test_null_coefficient_gives_uncorrelated_response():
    x, y = generate_dataset(np.zeros((5, 5)), 5000, 1.0, 0.0, 2)
    functional = x[:, 1, 2] - x[:, 3, 0]
    assert abs(np.corrcoef(functional, y)[0, 1]) < 3 / np.sqrt(5000)


def test_metric_examples():
    np.testing.assert_array_equal(distance_to_mean(np.full(5, 3.0)), 0.0)
    y = np.arange(4.0)
    np.testing.assert_array_equal(rmse_per_point(y, y[None, :]), 0.0)
    assert rmse_per_point([0.0], [[3.0], [4.0]])[0] == pytest.approx(np.sqrt(12.5))
    var, bias = bias_variance_decomposition([0.0], [[-1.0], [1.0]])
    assert (var[0], bias[0]) == (1.0, 0.0)
    var, bias = bias_variance_decomposition([1.0, 2.0], [[0.5, 0.5], [0.5, 0.5]])
    np.testing.assert_array_equal(var, 0.0)
    with pytest.raises(ValueError):
        bias_variance_decomposition([0.0], [[1.0]])


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6), st.integers(1, 10), st.integers(0, 2**31))
def test_decomposition_identity(n_proj, n, seed):
    rng = np.random.default_rng(seed)
    y = rng.normal(size=n)
    preds = rng.normal(size=(n_proj, n)) * rng.uniform(0.1, 10)
    var, bias = bias_variance_decomposition(y, preds)
    mse = np.mean((preds - y) ** 2, axis=0)
    np.testing.assert_allclose(var * mse + bias * mse, mse, rtol=1e-12)
    np.testing.assert_allclose(var + bias, 1.0, atol=1e-12)
    assert np.all((var >= 0) & (var <= 1) & (bias >= 0) & (bias <= 1))


def test_efficiency_score():
    assert efficiency_score(0.05, 2.0) == pytest.approx(10.0)
    assert efficiency_score(0.3, 4.0) == pytest.approx(efficiency_score(0.3, 2.0) / 2)
    with pytest.raises(ValueError):
        efficiency_score(0.0, 1.0)


def test_compression_shapes():
    assert compressed_shape((20, 20), 0.36, "MW") == (12, 12)
    assert compressed_shape((20, 20), 0.36, "TW") == (144,)
    assert compressed_shape((60, 60), 0.09, "MW") == (18, 18)
    assert compressed_shape((8, 10, 6), 0.25, "MW(2)") == (4, 10, 3)
    assert parse_projection_type("MW(1,3)") == ("MW", (0, 2))
    with pytest.raises(ValueError):
        parse_projection_type("XW")
    with pytest.raises(ValueError):
        compressed_shape((20, 20), 0.0, "MW")
    spec = projection_factory((20, 20), 0.36, "MW", 3.0)(4)
    assert spec.output_shape == (12, 12)
    assert projection_factory((20, 20), 0.36, "TW", 3.0)(4).output_shape == (144,)


def test_test_split_does_not_depend_on_training_size():
    a = scenario_data(ScenarioConfig(n_train=50, n_test=20, seed=3))
    b = scenario_data(ScenarioConfig(n_train=80, n_test=20, seed=3))
    np.testing.assert_array_equal(a[2][0], b[2][0])
    np.testing.assert_array_equal(a[2][1], b[2][1])


SMALL = dict(coefficient="CR", shape=(10, 10), n_train=80, n_test=30, r=0.36, L=2,
             iterations=60, burn_in=20, seed=1)


def test_run_scenario_reproducible(tmp_path):
    config = ScenarioConfig(prior="gaussian", **SMALL)
    first = run_scenario(config, workers=1)
    second = run_scenario(config, workers=2)
    assert first.content_hash() == second.content_hash()
    assert first.member_predictions.shape == (2, 30)
    assert first.compressed_shape == (6, 6)
    np.testing.assert_allclose(first.variance_share + first.bias_share, 1.0, atol=1e-12)
    first.save(tmp_path)
    lines = (tmp_path / "predictions.csv").read_text().splitlines()
    assert len(lines) == 31
    assert lines[0].startswith("index,y,pooled,rmse_across_projections")


def test_null_scenario_forecasts_near_intercept():
    config = ScenarioConfig(**{**SMALL, "coefficient": "zero", "sigma": 0.1, "mu0": 2.0, "prior": "gaussian",
                               "projection_type": "TW"})
    report = run_scenario(config, workers=1)
    assert np.all(np.abs(report.pooled - 2.0) < 3 * 0.1 + 0.1)


def test_scenario_config_validation():
    with pytest.raises(ValueError):
        ScenarioConfig(r=1.5)
    with pytest.raises(ValueError):
        ScenarioConfig(prior="lasso")
    with pytest.raises(ValueError):
        ScenarioConfig(projection_type="MX")


def test_bench_rows(tmp_path):
    rows = bench(shape=(10, 10), n_train=60, n_test=20, rates=(0.25,), iterations=30, burn_in=10)
    assert [r.model for r in rows] == ["CBTR", "BTR"]
    assert all(isinstance(r, BenchRow) and r.cpu_hours > 0 and r.rmse > 0 for r in rows)
    write_bench_csv(tmp_path / "bench.csv", rows)
    header = (tmp_path / "bench.csv").read_text().splitlines()[0]
    assert header == "model,r,cpu_hours,rmse,efficiency_score"
