"""Bayesian model averaging over independently projected CBTR fits.

Each member pairs one random projection with a posterior sample obtained on
the data compressed by that projection. Members are weighted by estimated
normalizing constants ``c_l`` of their unnormalized posteriors, obtained by
reverse logistic regression on the pooled draws:

    maximize  sum_l sum_s log[ exp(h_l(theta_sl) + eta_l) / sum_k exp(h_k(theta_sl) + eta_k) ]

over ``eta`` with ``eta_1 = 0``. With equal draw counts, ``c_l`` is
proportional to ``exp(-eta_l)``, so the weights are ``softmax(-eta)``.

Cross-evaluation ``h_k(theta)`` needs every member to share the coefficient
shape and prior. For the hierarchical PARAFAC prior the margins are scored
under ``N(0, tau zeta_d W)`` with the member's posterior-mean scales plugged
in; this is a surrogate for the intractable collapsed prior.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from . import distributions as dist
from .gibbs import (
    ChainOutput, GaussianPriorConfig, RegressionData,
    run_gaussian_chain, run_parafac_chain,
)
from .projection import GtrpSpec, apply, derive_seed
from .tensor import ShapeError

LOG_2PI = math.log(2 * math.pi)


class RLRConvergenceError(RuntimeError):
    def __init__(self, grad_norm: float, iterations: int):
        super().__init__(f"reverse logistic regression did not converge in {iterations} "
                         f"iterations (gradient inf-norm {grad_norm:.3g})")
        self.grad_norm = grad_norm


@dataclass
class Member:
    spec: GtrpSpec
    chain: ChainOutput
    data: RegressionData  # training data compressed by ``spec``
    # posterior-mean scales used by the PARAFAC surrogate prior
    scales: dict = field(default_factory=dict)


# -- unnormalized posterior -------------------------------------------------------


def _log_lik(data: RegressionData, coefs: np.ndarray, mu: np.ndarray, sigma2: np.ndarray) -> np.ndarray:
    """Gaussian log-likelihood of every draw, shape ``(S,)``."""
    if np.any(sigma2 <= 0):
        raise ValueError("sigma2 must be positive")
    s = coefs.shape[0]
    flat = coefs.reshape(s, -1, order="F")
    resid = data.y[None, :] - mu[:, None] - flat @ data.design().T
    rss = np.sum(resid**2, axis=1)
    t = data.n_obs
    return -0.5 * t * (LOG_2PI + np.log(sigma2)) - 0.5 * rss / sigma2


def _log_prior_common(mu, sigma2, a_sigma, b_sigma, sigma2_mu):
    return (dist.inverse_gamma_logpdf(sigma2, a_sigma, b_sigma)
            + dist.normal_logpdf(mu, 0.0, sigma2_mu))


def _gaussian_coef_logprior(coefs: np.ndarray, config: GaussianPriorConfig) -> np.ndarray:
    s = coefs.shape[0]
    flat = coefs.reshape(s, -1, order="F")
    cov = config.prior_covariance()
    chol = np.linalg.cholesky(cov)
    white = np.linalg.solve(chol, flat.T)
    logdet = 2 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (flat.shape[1] * LOG_2PI + logdet) - 0.5 * np.sum(white**2, axis=0)


def _parafac_margin_logprior(chain: ChainOutput, scales: dict) -> np.ndarray:
    tau, zeta = scales["tau"], scales["zeta"]
    out = np.zeros(chain.n_draws)
    m = 1
    while f"factor{m}" in chain.extras:
        gam = chain.extras[f"factor{m}"]            # (S, q_m, D)
        var = tau * zeta[None, :] * scales[f"w{m}"]  # (q_m, D)
        out += np.sum(-0.5 * (LOG_2PI + np.log(var)) - 0.5 * gam**2 / var, axis=(1, 2))
        m += 1
    return out


def log_unnormalized_posterior(member: Member, chain: ChainOutput, prior) -> np.ndarray:
    """``h_k`` of ``member`` evaluated at every draw of ``chain``.

    The value is ``log p(y | projected X, theta) + log p(theta)`` up to a
    constant common to all members.
    """
    if chain.coefficients.shape[1:] != member.data.shape:
        raise ShapeError(f"draws of shape {chain.coefficients.shape[1:]} do not fit member shape {member.data.shape}")
    out = _log_lik(member.data, chain.coefficients, chain.mu, chain.sigma2)
    out += _log_prior_common(chain.mu, chain.sigma2, prior.a_sigma, prior.b_sigma, prior.sigma2_mu)
    if isinstance(prior, GaussianPriorConfig):
        out += _gaussian_coef_logprior(chain.coefficients, prior)
    else:
        out += _parafac_margin_logprior(chain, member.scales)
    return out


def cross_evaluations(members: Sequence[Member], prior) -> np.ndarray:
    """``h[l, s, k] = h_k(theta_s^(l))`` with draws subsampled to a common count."""
    s = min(m.chain.n_draws for m in members)
    chains = [m.chain.subsample(s) for m in members]
    n = len(members)
    h = np.empty((n, s, n))
    for l, chain in enumerate(chains):
        for k, member in enumerate(members):
            h[l, :, k] = log_unnormalized_posterior(member, chain, prior)
    return h


# -- reverse logistic regression ---------------------------------------------------


def rlr_objective(eta: np.ndarray, h: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Value, gradient and Hessian of the reverse-logistic log-likelihood in ``eta``."""
    n_models = h.shape[2]
    z = h + eta[None, None, :]
    lse = logsumexp(z, axis=2, keepdims=True)
    logp = z - lse
    own = np.arange(n_models)
    value = float(np.sum(logp[own, :, own]))
    p = np.exp(logp).reshape(-1, n_models)
    counts = np.full(n_models, h.shape[1], dtype=float)
    grad = counts - p.sum(axis=0)
    hess = -(np.diag(p.sum(axis=0)) - p.T @ p)
    return value, grad, hess


def rlr_weights(h: np.ndarray, tol: float = 1e-8, max_iter: int = 500) -> tuple[np.ndarray, np.ndarray]:
    """Posterior model weights and fitted offsets from cross-evaluations.

    ``h`` has shape ``(L, S, L)``: ``h[l, s, k]`` is member ``k``'s
    unnormalized log posterior at draw ``s`` of member ``l``. The objective
    is concave; it is maximized by damped Newton steps in ``eta[1:]``
    until the gradient's infinity norm drops below ``tol``.
    """
    h = np.asarray(h, dtype=float)
    if h.ndim != 3 or h.shape[0] != h.shape[2]:
        raise ValueError(f"expected an (L, S, L) array, got shape {h.shape}")
    n_models = h.shape[0]
    eta = np.zeros(n_models)
    if n_models == 1:
        return np.ones(1), eta
    # start from matched mean log-densities of each member's own draws
    own = np.array([h[l, :, l].mean() for l in range(n_models)])
    eta[1:] = own[0] - own[1:]
    value, grad, hess = rlr_objective(eta, h)
    # Levenberg-Marquardt damped Newton ascent: the objective is concave but
    # nearly flat when members' draws barely overlap, so the Hessian can be
    # close to singular
    damping = 1e-6
    eye = np.eye(n_models - 1)
    for it in range(max_iter):
        g = grad[1:]
        if np.max(np.abs(g)) < tol:
            break
        neg_h = -hess[1:, 1:]
        scale = max(float(np.mean(np.diag(neg_h))), 1e-12)
        while True:
            step = np.linalg.solve(neg_h + damping * scale * eye, g)
            trial = eta.copy()
            trial[1:] += step
            new_value, new_grad, new_hess = rlr_objective(trial, h)
            if new_value >= value:
                damping = max(damping / 3, 1e-12)
                break
            damping *= 4
            if np.max(np.abs(step)) < 1e-14 * (1 + np.max(np.abs(eta))):
                raise RLRConvergenceError(float(np.max(np.abs(g))), it)
        eta, value, grad, hess = trial, new_value, new_grad, new_hess
    else:
        raise RLRConvergenceError(float(np.max(np.abs(grad[1:]))), max_iter)
    logc = -eta
    weights = np.exp(logc - logsumexp(logc))
    weights /= weights.sum()
    return weights, eta


# -- prediction ------------------------------------------------------------------


def conditional_means(member: Member, x_new: np.ndarray) -> np.ndarray:
    """``mu_s + <B_s, projected x_new>`` for every draw; ``x_new`` may be batched.

    Returns shape ``(S,)`` for one tensor or ``(n, S)`` for a batch.
    """
    x_new = np.asarray(x_new, dtype=float)
    p = member.spec.input_shape
    batched = x_new.ndim == len(p) + 1
    if x_new.shape[batched:] != p:
        raise ShapeError(f"input shape {x_new.shape} does not match {p}")
    z = apply(member.spec, x_new if batched else x_new[None])
    flat = z.reshape(z.shape[0], -1, order="F")
    chain = member.chain
    means = flat @ chain.flat_coefficients().T + chain.mu[None, :]
    return means if batched else means[0]


def predictive_draws(member: Member, x_new: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One predictive draw per retained posterior draw (batched like :func:`conditional_means`)."""
    means = conditional_means(member, x_new)
    sd = np.sqrt(member.chain.sigma2)
    return means + sd * rng.standard_normal(means.shape)


def weighted_quantile(values: Sequence[np.ndarray], weights: Sequence[float], probs) -> np.ndarray:
    """Quantiles of a mixture of empirical distributions.

    Member ``l`` puts mass ``weights[l] / len(values[l])`` on each of its
    values. The quantile at ``p`` is the smallest value whose mixture CDF is
    at least ``p`` (left-continuous inverse).
    """
    probs = np.atleast_1d(np.asarray(probs, dtype=float))
    if np.any((probs <= 0) | (probs >= 1)):
        raise ValueError("probabilities must lie in (0, 1)")
    pts, mass = [], []
    for v, w in zip(values, weights):
        v = np.asarray(v, dtype=float).ravel()
        if v.size == 0:
            raise ValueError("empty predictive sample")
        pts.append(v)
        mass.append(np.full(v.size, w / v.size))
    pts = np.concatenate(pts)
    mass = np.concatenate(mass)
    order = np.argsort(pts, kind="stable")
    pts, cdf = pts[order], np.cumsum(mass[order])
    cdf /= cdf[-1]
    idx = np.searchsorted(cdf, probs - 1e-12, side="left")
    return pts[np.minimum(idx, pts.size - 1)]


# -- the ensemble ------------------------------------------------------------------


@dataclass
class EnsembleModel:
    members: list[Member]
    weights: np.ndarray
    etas: np.ndarray
    prior: object

    def __post_init__(self):
        if not self.members:
            raise ValueError("ensemble needs at least one member")
        shapes = {(m.spec.input_shape, m.spec.output_shape) for m in self.members}
        if len(shapes) != 1:
            raise ShapeError("ensemble members must share input and output shapes")
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.weights) != len(self.members):
            raise ValueError("one weight per member required")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1) > 1e-12:
            raise ValueError("weights must lie on the simplex")

    @property
    def size(self) -> int:
        return len(self.members)

    def member_means(self, x_new: np.ndarray, rng=None) -> np.ndarray:
        """Per-member predictive means; last axis indexes members.

        Without ``rng`` the mean of the conditional means is used (the
        expectation of the predictive-draw average); with ``rng`` the
        average of actual predictive draws.
        """
        if rng is None:
            cols = [conditional_means(m, x_new).mean(axis=-1) for m in self.members]
        else:
            cols = [predictive_draws(m, x_new, rng).mean(axis=-1) for m in self.members]
        return np.stack(cols, axis=-1)

    def point_forecast(self, x_new: np.ndarray, rng=None) -> np.ndarray | float:
        out = self.member_means(x_new, rng) @ self.weights
        return float(out) if np.ndim(out) == 0 else out

    def quantiles(self, x_new: np.ndarray, probs, rng: np.random.Generator) -> np.ndarray:
        """Mixture quantiles for one tensor (``(len(probs),)``) or a batch (``(n, len(probs))``)."""
        draws = [predictive_draws(m, x_new, rng) for m in self.members]
        if draws[0].ndim == 1:
            return weighted_quantile(draws, self.weights, probs)
        return np.stack([weighted_quantile([d[i] for d in draws], self.weights, probs)
                         for i in range(draws[0].shape[0])])

    def manifest(self) -> dict:
        return {
            "size": self.size,
            "weights": self.weights.tolist(),
            "etas": self.etas.tolist(),
            "projections": [m.spec.to_dict() for m in self.members],
            "chains": [m.chain.manifest() for m in self.members],
        }


def pooled_point_forecast(model: EnsembleModel, x_new: np.ndarray, rng=None):
    """``sum_l w_l * mean_s y_s^(l)``."""
    return model.point_forecast(x_new, rng)


def pooled_quantile(model: EnsembleModel, x_new: np.ndarray, probs, rng: np.random.Generator) -> np.ndarray:
    return model.quantiles(x_new, probs, rng)


def _posterior_scales(chain: ChainOutput) -> dict:
    if chain.model != "parafac":
        return {}
    scales = {"tau": float(chain.extras["tau"].mean()), "zeta": chain.extras["zeta"].mean(axis=0)}
    m = 1
    while f"w{m}" in chain.extras:
        scales[f"w{m}"] = chain.extras[f"w{m}"].mean(axis=0)
        m += 1
    return scales


@dataclass(frozen=True)
class McmcSettings:
    iterations: int = 1000
    burn_in: int = 200
    thin: int = 1


def _fit_member(args) -> Member:
    spec, x, y, prior, mcmc, chain_seed = args
    data = RegressionData(apply(spec, x), y)
    pid = spec.content_hash()[:16]
    if isinstance(prior, GaussianPriorConfig):
        chain = run_gaussian_chain(data, prior, mcmc.iterations, mcmc.burn_in, mcmc.thin, chain_seed, pid)
    else:
        chain = run_parafac_chain(data, prior, mcmc.iterations, mcmc.burn_in, mcmc.thin, chain_seed, pid)
    return Member(spec, chain, data, _posterior_scales(chain))


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("CTRP_THREADS", "1")))
    except ValueError:
        return 1


def fit_ensemble(
    x: np.ndarray,
    y: np.ndarray,
    spec_factory: Callable[[int], GtrpSpec],
    size: int,
    prior,
    mcmc: McmcSettings = McmcSettings(),
    master_seed: int = 0,
    workers: int | None = None,
) -> EnsembleModel:
    """Fit ``size`` members and weight them.

    Member ``l`` uses projection seed ``derive_seed(master_seed, l)`` and
    chain seed ``derive_seed(projection seed, 0)``, so results do not depend
    on the number of workers.
    """
    if size < 1:
        raise ValueError("ensemble size must be >= 1")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    jobs = []
    for l in range(size):
        pseed = derive_seed(master_seed, l)
        jobs.append((spec_factory(pseed), x, y, prior, mcmc, derive_seed(pseed, 0)))
    workers = default_workers() if workers is None else workers
    if workers > 1 and size > 1:
        with ProcessPoolExecutor(max_workers=min(workers, size)) as pool:
            members = list(pool.map(_fit_member, jobs))
    else:
        members = [_fit_member(job) for job in jobs]
    return weight_members(members, prior)


def weight_members(members: list[Member], prior) -> EnsembleModel:
    weights, etas = rlr_weights(cross_evaluations(members, prior))
    return EnsembleModel(members, weights, etas, prior)


def write_forecast_report(
    path: str | Path, model: EnsembleModel, x_new: np.ndarray, probs, rng, y_true=None
) -> None:
    """CSV with one row per test point: pooled mean, quantiles, member means."""
    means = model.member_means(x_new)
    pooled = means @ model.weights
    quant = model.quantiles(x_new, probs, rng)
    header = ["index", "pooled_mean"] + [f"q{p:g}" for p in np.atleast_1d(probs)]
    header += [f"member{l + 1}_mean" for l in range(model.size)]
    if y_true is not None:
        header.append("y")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(means.shape[0]):
            row = [i + 1, repr(float(pooled[i]))] + [repr(float(v)) for v in quant[i]]
            row += [repr(float(v)) for v in means[i]]
            if y_true is not None:
                row.append(repr(float(y_true[i])))
            writer.writerow(row)
    Path(str(path) + ".json").write_text(json.dumps({"weights": model.weights.tolist()}, indent=2))
