import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from ctrp.ensemble import (
    EnsembleModel, McmcSettings, Member, RLRConvergenceError, conditional_means, cross_evaluations,
    fit_ensemble, log_unnormalized_posterior, pooled_point_forecast, pooled_quantile,
    predictive_draws, rlr_objective, rlr_weights, weighted_quantile, write_forecast_report,
)
from ctrp.gibbs import ChainOutput, GaussianPriorConfig, ParafacPriorConfig, RegressionData
from ctrp.projection import build_gtrp, identity_spec
from ctrp.tensor import ShapeError


def fixed_member(shape, coefs, mu, sigma2, spec=None, data=None):
    coefs = np.asarray(coefs, dtype=float).reshape((-1,) + tuple(shape))
    s = coefs.shape[0]
    chain = ChainOutput(coefs, np.broadcast_to(np.asarray(mu, float), (s,)).copy(),
                        np.broadcast_to(np.asarray(sigma2, float), (s,)).copy(),
                        s, 0, 1, 0, "gaussian")
    spec = spec or identity_spec(shape)
    if data is None:
        data = RegressionData(np.zeros((1,) + tuple(shape)), np.zeros(1))
    return Member(spec, chain, data)


def random_h(rng, n_models=3, n_draws=40):
    # draws of each member score highest under their own density
    h = rng.normal(size=(n_models, n_draws, n_models))
    for l in range(n_models):
        h[l, :, l] += 1.0
    return h


def test_identical_members_get_equal_weights():
    rng = np.random.default_rng(0)
    base = rng.normal(size=(1, 50, 1))
    for n_models in (2, 3, 5):
        h = np.broadcast_to(base, (n_models, 50, n_models)).copy()
        w, eta = rlr_weights(h)
        np.testing.assert_allclose(w, 1 / n_models, atol=1e-6)
        assert w.sum() == pytest.approx(1.0, abs=1e-12)


def test_constant_log_ratio_gives_closed_form_weights():
    rng = np.random.default_rng(1)
    h = np.empty((2, 60, 2))
    h[:, :, 0] = rng.normal(size=(2, 60))
    h[:, :, 1] = h[:, :, 0] + math.log(9)
    w, eta = rlr_weights(h)
    np.testing.assert_allclose(w, [0.1, 0.9], atol=1e-6)
    assert eta[0] == 0.0
    assert eta[1] == pytest.approx(-math.log(9), abs=1e-6)


def test_weights_invariant_to_common_shift_and_equivariant_to_relabeling():
    rng = np.random.default_rng(2)
    h = random_h(rng, 4)
    w, _ = rlr_weights(h)
    w_shift, _ = rlr_weights(h + 123.4)
    np.testing.assert_allclose(w_shift, w, atol=1e-9)
    perm = np.array([2, 0, 3, 1])
    w_perm, _ = rlr_weights(h[perm][:, :, perm])
    np.testing.assert_allclose(w_perm, w[perm], atol=1e-8)


def test_rlr_optimum_has_zero_gradient():
    rng = np.random.default_rng(3)
    h = random_h(rng, 3)
    w, eta = rlr_weights(h)
    _, grad, hess = rlr_objective(eta, h)
    assert np.max(np.abs(grad[1:])) < 1e-8
    assert np.all(np.linalg.eigvalsh(hess[1:, 1:]) < 0)


def test_rlr_objective_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    h = random_h(rng, 3, 10)
    eta = rng.normal(size=3)
    _, grad, hess = rlr_objective(eta, h)
    step = 1e-6
    for k in range(3):
        e = np.zeros(3)
        e[k] = step
        up, g_up, _ = rlr_objective(eta + e, h)
        dn, g_dn, _ = rlr_objective(eta - e, h)
        assert (up - dn) / (2 * step) == pytest.approx(grad[k], rel=1e-5, abs=1e-6)
        np.testing.assert_allclose((g_up - g_dn) / (2 * step), hess[:, k], rtol=1e-5, atol=1e-6)


def test_rlr_separated_members_still_converge():
    # draws of each member are far more likely under their own density
    rng = np.random.default_rng(5)
    h = random_h(rng, 3)
    for l in range(3):
        h[l, :, l] += 200.0
    w, _ = rlr_weights(h)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)


def test_rlr_reports_non_convergence():
    rng = np.random.default_rng(6)
    with pytest.raises(RLRConvergenceError) as info:
        rlr_weights(random_h(rng, 3), max_iter=0)
    assert info.value.grad_norm > 0
    with pytest.raises(ValueError):
        rlr_weights(np.zeros((2, 5, 3)))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2**31))
def test_weights_on_simplex(n_models, seed):
    w, _ = rlr_weights(random_h(np.random.default_rng(seed), n_models, 20))
    assert np.all(w >= 0)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)


def test_log_posterior_single_point_by_hand():
    x = np.array([[[2.0]]])
    data = RegressionData(x, np.array([3.0]))
    prior = GaussianPriorConfig.isotropic((1, 1), 2.0, a_sigma=3.0, b_sigma=1.0, sigma2_mu=1.0)
    member = fixed_member((1, 1), [0.5], 0.2, 0.5, data=data)
    value = log_unnormalized_posterior(member, member.chain, prior)[0]
    lik = stats.norm.logpdf(3.0, 0.2 + 2.0 * 0.5, math.sqrt(0.5))
    ig = -(3.0 + 1) * math.log(0.5) - 1.0 / 0.5
    mu_prior = stats.norm.logpdf(0.2, 0.0, 1.0)
    coef_prior = stats.norm.logpdf(0.5, 0.0, math.sqrt(2.0))
    assert value == pytest.approx(lik + ig + mu_prior + coef_prior, rel=1e-12)


def test_log_posterior_decreases_with_rss_and_checks_domain():
    rng = np.random.default_rng(7)
    z = rng.standard_normal((20, 2, 2))
    data = RegressionData(z, np.einsum("tij,ij->t", z, np.ones((2, 2))))
    prior = GaussianPriorConfig.isotropic((2, 2), 1e6)
    good = fixed_member((2, 2), np.ones((1, 2, 2)), 0.0, 1.0, data=data)
    bad = fixed_member((2, 2), np.zeros((1, 2, 2)), 0.0, 1.0, data=data)
    assert (log_unnormalized_posterior(good, good.chain, prior)[0]
            > log_unnormalized_posterior(good, bad.chain, prior)[0])
    neg = fixed_member((2, 2), np.ones((1, 2, 2)), 0.0, -1.0, data=data)
    with pytest.raises(ValueError):
        log_unnormalized_posterior(good, neg.chain, prior)
    other = fixed_member((3, 2), np.ones((1, 3, 2)), 0.0, 1.0)
    with pytest.raises(ShapeError):
        log_unnormalized_posterior(good, other.chain, prior)


def test_predictive_draws():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((2, 3))
    coefs = rng.standard_normal((30, 2, 3))
    member = fixed_member((2, 3), coefs, 0.4, 0.0)
    np.testing.assert_array_equal(predictive_draws(member, x, rng), conditional_means(member, x))
    np.testing.assert_allclose(conditional_means(member, x), 0.4 + np.einsum("sij,ij->s", coefs, x))
    null = fixed_member((2, 3), np.zeros((5000, 2, 3)), 1.5, 4.0)
    draws = predictive_draws(null, x, np.random.default_rng(9))
    assert stats.kstest(draws, "norm", args=(1.5, 2.0)).pvalue > 0.001
    a = predictive_draws(null, x, np.random.default_rng(10))
    b = predictive_draws(null, x, np.random.default_rng(10))
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ShapeError):
        conditional_means(null, np.ones((3, 2)))


def two_member_model(means, weights):
    members = [fixed_member((1, 2), np.zeros((4, 1, 2)), m, 1.0) for m in means]
    return EnsembleModel(members, np.asarray(weights), np.zeros(len(means)), None)


def test_pooled_point_forecast_examples():
    x = np.ones((1, 2))
    assert pooled_point_forecast(two_member_model([1.0, 3.0], [0.5, 0.5]), x) == pytest.approx(2.0)
    assert pooled_point_forecast(two_member_model([0.0, 10.0], [0.1, 0.9]), x) == pytest.approx(9.0)
    assert pooled_point_forecast(two_member_model([7.0], [1.0]), x) == pytest.approx(7.0)
    batch = pooled_point_forecast(two_member_model([0.0, 10.0], [0.1, 0.9]), np.ones((3, 1, 2)))
    np.testing.assert_allclose(batch, 9.0)


def test_ensemble_invariants():
    with pytest.raises(ValueError):
        two_member_model([0.0, 1.0], [0.7, 0.7])
    a = fixed_member((1, 2), np.zeros((2, 1, 2)), 0.0, 1.0)
    b = fixed_member((2, 2), np.zeros((2, 2, 2)), 0.0, 1.0)
    with pytest.raises(ShapeError):
        EnsembleModel([a, b], np.array([0.5, 0.5]), np.zeros(2), None)


def test_weighted_quantile_examples():
    q = weighted_quantile([np.array([0.0]), np.array([1.0])], [0.5, 0.5], [0.25, 0.5, 0.75])
    np.testing.assert_array_equal(q, [0.0, 0.0, 1.0])
    v = np.arange(10.0)
    np.testing.assert_array_equal(weighted_quantile([v], [1.0], [0.1, 0.5, 0.95]), [0.0, 4.0, 9.0])
    with pytest.raises(ValueError):
        weighted_quantile([np.array([])], [1.0], [0.5])
    with pytest.raises(ValueError):
        weighted_quantile([v], [1.0], [1.0])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(st.floats(-100, 100), min_size=1, max_size=20), min_size=1, max_size=4),
       st.data())
def test_weighted_quantile_brackets_probability(samples, data):
    n = len(samples)
    raw = data.draw(st.lists(st.floats(0.01, 1.0), min_size=n, max_size=n))
    weights = np.array(raw) / sum(raw)
    probs = np.sort(data.draw(st.lists(st.floats(0.001, 0.999), min_size=1, max_size=5)))
    values = [np.array(s) for s in samples]
    q = weighted_quantile(values, weights, probs)

    def cdf(t, strict=False):
        return sum(w * np.mean(v < t if strict else v <= t) for v, w in zip(values, weights))

    for p, qp in zip(probs, q):
        assert cdf(qp) >= p - 1e-9
        assert cdf(qp, strict=True) < p + 1e-9
    assert np.all(np.diff(q) >= 0)


def test_pooled_quantile_single_member_is_empirical():
    model = two_member_model([0.0], [1.0])
    model.members[0].chain.sigma2[:] = 0.0
    model.members[0].chain.mu[:] = [1.0, 2.0, 3.0, 4.0]
    q = pooled_quantile(model, np.ones((1, 2)), [0.25, 0.5, 1 - 1e-9], np.random.default_rng(0))
    np.testing.assert_array_equal(q, [1.0, 2.0, 4.0])


def make_problem(seed=0, n=60):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 4, 4))
    b0 = np.zeros((4, 4))
    b0[1:3, :] = 1.0
    y = 0.5 + np.einsum("tij,ij->t", x, b0) + 0.3 * rng.standard_normal(n)
    return x, y


def test_fit_ensemble_gaussian_end_to_end(tmp_path):
    x, y = make_problem()
    factory = lambda seed: build_gtrp((4, 4), (3, 3), 2, seed=seed)
    prior = GaussianPriorConfig.isotropic((3, 3), 1.0)
    mcmc = McmcSettings(60, 20, 1)
    model = fit_ensemble(x, y, factory, 3, prior, mcmc, master_seed=5, workers=1)
    again = fit_ensemble(x, y, factory, 3, prior, mcmc, master_seed=5, workers=2)
    np.testing.assert_array_equal(model.weights, again.weights)
    assert [m.chain.draws_hash() for m in model.members] == [m.chain.draws_hash() for m in again.members]
    assert model.weights.sum() == pytest.approx(1.0, abs=1e-12)
    h = cross_evaluations(model.members, prior)
    assert h.shape == (3, 40, 3)
    pred = model.point_forecast(x[:5])
    assert pred.shape == (5,)
    path = tmp_path / "forecast.csv"
    write_forecast_report(path, model, x[:5], [0.1, 0.9], np.random.default_rng(0), y[:5])
    rows = path.read_text().splitlines()
    assert rows[0].split(",") == ["index", "pooled_mean", "q0.1", "q0.9", "member1_mean",
                                  "member2_mean", "member3_mean", "y"]
    assert len(rows) == 6
    manifest = model.manifest()
    assert len(manifest["projections"]) == 3


def test_fit_ensemble_parafac_uses_surrogate_scales():
    x, y = make_problem(1)
    factory = lambda seed: build_gtrp((4, 4), (3, 3), 2, seed=seed)
    model = fit_ensemble(x, y, factory, 2, ParafacPriorConfig(rank=2), McmcSettings(40, 10, 1), master_seed=1)
    scales = model.members[0].scales
    assert set(scales) == {"tau", "zeta", "w1", "w2"}
    assert scales["w1"].shape == (3, 2)
    assert np.all(np.isfinite(model.etas))
