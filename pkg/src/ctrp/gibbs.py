"""Gibbs samplers for compressed Bayesian tensor regression.

The model is ``y_t = mu + <B, Z_t> + sigma * eps_t`` where ``Z_t`` is the
already-projected covariate tensor of shape ``(q_1, ..., q_M)``. All
full-conditional dimensions use the compressed sizes ``q_m``.

Two priors are supported.

Hierarchical PARAFAC prior (``run_parafac_chain``)::

    B = sum_d gamma_1^(d) o ... o gamma_M^(d)
    gamma_m^(d) ~ N(0, tau zeta_d W_m^(d)),  W_m^(d) = diag(w_m^(d))
    w_{m,j}^(d) ~ Exp(lambda_m^(d)^2 / 2),   lambda_m^(d) ~ Gamma(a_lambda, b_lambda)
    zeta ~ Dirichlet(alpha, ..., alpha),     tau ~ Gamma(a_tau, b_tau) (see below)
    sigma^2 ~ InverseGamma(a_sigma, b_sigma), mu ~ N(0, sigma2_mu)

One sweep updates, in order: every margin (components outer, modes inner),
zeta, tau, lambda, w, sigma^2, mu.

The tau conditional ``GIG(a_tau - D sum q / 2, 2 b_tau, ...)`` corresponds to
a prior kernel ``tau^(a_tau - 1) exp(-b_tau tau)``, i.e. a Gamma prior, and
that is the default (``tau_prior="gamma"``). ``tau_prior="inverse_gamma"``
uses ``InverseGamma(a_tau, b_tau)`` with its own conditional.

zeta has two update schemes. ``"renormalize"`` draws each zeta_d from its
unconstrained GIG conditional and rescales the vector onto the simplex; it
is simple but does not leave the posterior invariant. ``"joint"`` (default)
updates ``(tau, zeta)`` together through ``phi_d = tau zeta_d``: the
independent GIG laws of ``phi_d`` serve as an independence Metropolis
proposal whose acceptance ratio only involves ``tau = sum phi``. It is exact.

Gaussian prior (``run_gaussian_chain``)::

    B ~ TN(0; Sigma_1, ..., Sigma_M),  sigma^2 ~ IG(a_sigma, b_sigma),  mu ~ N(0, sigma2_mu)

``Cov(B[i], B[j]) = prod_m Sigma_m[i_m, j_m]``, so with first-mode-fastest
vectorization ``Cov(vec B) = Sigma_M kron ... kron Sigma_1``.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, asdict
from functools import cached_property, reduce
from pathlib import Path
from typing import Sequence

import numpy as np

from . import distributions as dist
from .distributions import GigParams, TINY
from .tensor import parafac_compose, partial_parafac_contract, vec


class SamplerError(RuntimeError):
    """A Gibbs block failed numerically."""

    def __init__(self, block: str, iteration: int, cause: Exception):
        super().__init__(f"block {block!r} failed at iteration {iteration}: {cause}")
        self.block = block
        self.iteration = iteration


@dataclass(frozen=True)
class RegressionData:
    """Compressed covariates ``z`` with shape ``(T, q_1, ..., q_M)`` and responses ``y``."""

    z: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        y = np.asarray(self.y, dtype=float).ravel()
        if z.shape[0] != y.shape[0]:
            raise ValueError(f"{z.shape[0]} covariate tensors but {y.shape[0]} responses")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "y", y)

    @property
    def n_obs(self) -> int:
        return self.y.shape[0]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.z.shape[1:]

    def design(self) -> np.ndarray:
        """Rows ``vec(Z_t)``."""
        return self.z.reshape(self.n_obs, -1, order="F")

    @cached_property
    def gram(self) -> np.ndarray:
        x = self.design()
        return x.T @ x

    def linear_predictor(self, coef: np.ndarray) -> np.ndarray:
        return self.design() @ vec(coef)


# -- PARAFAC prior -----------------------------------------------------------


@dataclass(frozen=True)
class ParafacPriorConfig:
    rank: int = 5
    alpha: float | None = None  # defaults to rank**-2
    a_tau: float = 3.0
    b_tau: float = 100.0
    a_lambda: float = 20.0
    b_lambda: float = 2.0
    a_sigma: float = 3.0
    b_sigma: float = 1.0
    sigma2_mu: float = 1.0
    tau_prior: str = "gamma"
    zeta_update: str = "joint"

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.alpha is None:
            object.__setattr__(self, "alpha", self.rank**-2.0)
        for name in ("alpha", "a_tau", "b_tau", "a_lambda", "b_lambda", "a_sigma", "b_sigma", "sigma2_mu"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.tau_prior not in ("gamma", "inverse_gamma"):
            raise ValueError(f"unknown tau_prior {self.tau_prior!r}")
        if self.zeta_update not in ("joint", "renormalize"):
            raise ValueError(f"unknown zeta_update {self.zeta_update!r}")


@dataclass
class ParafacState:
    factors: list[np.ndarray]  # factors[m]: (q_m, D), column d is gamma_m^(d)
    zeta: np.ndarray           # (D,)
    tau: float
    lam: np.ndarray            # (M, D)
    w: list[np.ndarray]        # w[m]: (q_m, D)
    mu: float
    sigma2: float

    @property
    def rank(self) -> int:
        return self.zeta.shape[0]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.factors)

    def coefficient(self) -> np.ndarray:
        return parafac_compose(self.factors)

    def copy(self) -> "ParafacState":
        return ParafacState(
            [f.copy() for f in self.factors], self.zeta.copy(), float(self.tau),
            self.lam.copy(), [x.copy() for x in self.w], float(self.mu), float(self.sigma2),
        )

    def check(self) -> None:
        if not (self.tau > 0 and self.sigma2 > 0):
            raise ValueError("tau and sigma2 must be positive")
        if np.any(self.zeta < 0) or abs(self.zeta.sum() - 1) > 1e-9:
            raise ValueError("zeta must lie on the simplex")
        if np.any(self.lam <= 0) or any(np.any(x <= 0) for x in self.w):
            raise ValueError("lambda and w must be positive")


def _quad_forms(state: ParafacState) -> np.ndarray:
    """``C_d = sum_m gamma_m^(d)' W_m^(d)^-1 gamma_m^(d)`` for every d."""
    return sum(np.sum(f**2 / w, axis=0) for f, w in zip(state.factors, state.w))


def fc_zeta(d: int, state: ParafacState, config: ParafacPriorConfig) -> GigParams:
    """Unconstrained conditional of zeta_d: ``GIG(alpha - sum q/2, 0, C_d / tau)``."""
    q_sum = sum(state.shape)
    b = _quad_forms(state)[d] / state.tau
    return GigParams(config.alpha - q_sum / 2, 0.0, max(b, TINY))


def fc_phi(d: int, state: ParafacState, config: ParafacPriorConfig) -> GigParams:
    """Proposal law of ``phi_d = tau zeta_d`` in the joint (tau, zeta) update."""
    q_sum = sum(state.shape)
    a = 2 * config.b_tau if config.tau_prior == "gamma" else 0.0
    return GigParams(config.alpha - q_sum / 2, a, max(_quad_forms(state)[d], TINY))


def fc_tau(state: ParafacState, config: ParafacPriorConfig) -> GigParams:
    """``GIG(a_tau - D sum q / 2, 2 b_tau, sum_d C_d / zeta_d)`` under the Gamma kernel."""
    q_sum = sum(state.shape)
    b = float(np.sum(_quad_forms(state) / state.zeta))
    if config.tau_prior == "gamma":
        return GigParams(config.a_tau - state.rank * q_sum / 2, 2 * config.b_tau, max(b, TINY))
    return GigParams(-config.a_tau - state.rank * q_sum / 2, 0.0, b + 2 * config.b_tau)


def fc_lambda(d: int, m: int, state: ParafacState, config: ParafacPriorConfig) -> tuple[float, float]:
    """Shape and rate of lambda_m^(d) given the margin (w integrated out)."""
    gamma = state.factors[m][:, d]
    shape = config.a_lambda + gamma.shape[0]
    rate = np.sum(np.abs(gamma)) / np.sqrt(state.tau * state.zeta[d]) + config.b_lambda
    return float(shape), float(rate)


def fc_w(d: int, m: int, j: int, state: ParafacState) -> GigParams:
    gamma = state.factors[m][j, d]
    return GigParams(0.5, float(state.lam[m, d] ** 2), float(gamma**2 / (state.tau * state.zeta[d])))


def _component_predictions(state: ParafacState, data: RegressionData) -> np.ndarray:
    """``<B^(d), Z_t>`` as a ``(T, D)`` array."""
    z = data.z
    out = np.empty((data.n_obs, state.rank))
    for d in range(state.rank):
        psi = partial_parafac_contract(z, state.factors, d, 0)
        out[:, d] = psi @ state.factors[0][:, d]
    return out


def fc_margin(
    d: int, m: int, state: ParafacState, data: RegressionData, comp: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Precision ``P``, mean term ``h`` and design ``psi`` (T, q_m) of gamma_m^(d).

    ``comp`` may pass cached component predictions from :func:`_component_predictions`.
    """
    if comp is None:
        comp = _component_predictions(state, data)
    psi = partial_parafac_contract(data.z, state.factors, d, m)
    rest = comp.sum(axis=1) - comp[:, d]
    resid = data.y - state.mu - rest
    prior_prec = 1.0 / (state.tau * state.zeta[d] * state.w[m][:, d])
    # with a single mode psi is the raw design, whose Gram matrix is cached
    cross = data.gram if len(state.factors) == 1 else psi.T @ psi
    prec = cross / state.sigma2 + np.diag(prior_prec)
    h = psi.T @ resid / state.sigma2
    return prec, h, psi


def fc_sigma2(state_or_coef, data: RegressionData, mu: float, a_sigma: float, b_sigma: float) -> tuple[float, float]:
    """``(a_sigma + T/2, b_sigma + RSS/2)``; the first argument is a state or a coefficient tensor."""
    coef = state_or_coef.coefficient() if isinstance(state_or_coef, ParafacState) else state_or_coef
    resid = data.y - data.linear_predictor(coef) - mu
    return a_sigma + data.n_obs / 2, b_sigma + 0.5 * float(resid @ resid)


def fc_mu(state_or_coef, data: RegressionData, sigma2: float, sigma2_mu: float) -> tuple[float, float]:
    """Posterior mean and variance of the intercept."""
    coef = state_or_coef.coefficient() if isinstance(state_or_coef, ParafacState) else state_or_coef
    var = 1.0 / (data.n_obs / sigma2 + 1.0 / sigma2_mu)
    if data.n_obs == 0:
        return 0.0, var
    mean = var * float(np.sum(data.y - data.linear_predictor(coef))) / sigma2
    return mean, var


def _sample_gig(params: GigParams, rng) -> float:
    return max(float(dist.sample_gig(params.p, params.a, params.b, rng)), TINY)


def sample_parafac_prior(shape: Sequence[int], config: ParafacPriorConfig, rng: np.random.Generator) -> ParafacState:
    """Draw every parameter from the prior (used to start chains and in Geweke tests)."""
    d_rank = config.rank
    if config.tau_prior == "gamma":
        tau = float(dist.sample_gamma(config.a_tau, config.b_tau, rng))
    else:
        tau = float(dist.sample_inverse_gamma(config.a_tau, config.b_tau, rng))
    zeta = dist.sample_dirichlet(np.full(d_rank, config.alpha), rng)
    zeta = np.maximum(zeta, TINY)
    zeta /= zeta.sum()
    lam = rng.gamma(config.a_lambda, 1.0 / config.b_lambda, size=(len(shape), d_rank))
    w = [rng.exponential(2.0 / lam[m] ** 2, size=(q, d_rank)) for m, q in enumerate(shape)]
    factors = [rng.standard_normal((q, d_rank)) * np.sqrt(tau * zeta * w[m]) for m, q in enumerate(shape)]
    sigma2 = float(dist.sample_inverse_gamma(config.a_sigma, config.b_sigma, rng))
    mu = float(rng.normal(0.0, np.sqrt(config.sigma2_mu)))
    return ParafacState(factors, zeta, tau, lam, w, mu, sigma2)


def cp_als(t: np.ndarray, rank: int, rng, iterations: int = 50) -> list[np.ndarray]:
    """Rank-``rank`` PARAFAC approximation of ``t`` by alternating least squares.

    Column norms are balanced across modes within each component.
    """
    factors = [rng.standard_normal((q, rank)) for q in t.shape]
    for _ in range(iterations):
        for m in range(t.ndim):
            v = np.stack([partial_parafac_contract(t, factors, d, m) for d in range(rank)], axis=1)
            gram = np.ones((rank, rank))
            for k, f in enumerate(factors):
                if k != m:
                    gram *= f.T @ f
            factors[m] = v @ np.linalg.pinv(gram)
    norms = np.array([np.linalg.norm(f, axis=0) for f in factors])  # (M, D)
    target = np.prod(norms, axis=0) ** (1.0 / t.ndim)
    return [f * np.where(n > 0, target / np.where(n > 0, n, 1.0), 0.0) for f, n in zip(factors, norms)]


def initial_parafac_state(data: RegressionData, config: ParafacPriorConfig, rng) -> ParafacState:
    """Data-driven starting point, deterministic given ``rng``.

    Margins come from a PARAFAC fit to a ridge estimate of the coefficient and
    the scales are set to match their size. Under strong shrinkage priors a
    start near zero is a trap for the multiplicative model: the likelihood
    information on one margin is proportional to the others, so every margin
    stays at zero.
    """
    shape = data.shape
    d_rank = config.rank
    lam = np.full((len(shape), d_rank), config.a_lambda / config.b_lambda)
    if data.n_obs < 2:
        factors = [0.1 * rng.standard_normal((q, d_rank)) for q in shape]
        w = [np.full((q, d_rank), 2.0 / lam[0, 0] ** 2) for q in shape]
        mu = float(np.mean(data.y)) if data.n_obs else 0.0
        return ParafacState(factors, np.full(d_rank, 1.0 / d_rank), 1.0, lam, w, mu, 1.0)

    y = data.y
    mu = float(np.mean(y))
    x = data.design()
    ridge = np.linalg.solve(data.gram + np.eye(x.shape[1]), x.T @ (y - mu))
    coef = ridge.reshape(shape, order="F")
    factors = cp_als(coef, d_rank, rng)
    resid = y - mu - x @ vec(parafac_compose(factors))
    sigma2 = max(float(np.var(resid)), 1e-3 * float(np.var(y)), TINY)

    comp = np.array([sum(np.sum(f[:, d] ** 2) for f in factors) for d in range(d_rank)])
    total = float(comp.sum())
    if not total > 0:
        comp, total = np.ones(d_rank), float(d_rank)
    # keep every component's share away from zero
    zeta = comp / total + 0.05
    zeta /= zeta.sum()
    tau = max(total / sum(shape), TINY)
    w = [np.ones((q, d_rank)) for q in shape]
    return ParafacState(factors, zeta, tau, lam, w, mu, sigma2)


def _update_tau_zeta(state: ParafacState, config: ParafacPriorConfig, rng) -> None:
    d_rank = state.rank
    if config.zeta_update == "renormalize":
        draws = np.array([_sample_gig(fc_zeta(d, state, config), rng) for d in range(d_rank)])
        state.zeta = draws / draws.sum()
    else:
        params = [fc_phi(d, state, config) for d in range(d_rank)]
        phi = np.maximum(dist.sample_gig([p.p for p in params], [p.a for p in params], [p.b for p in params], rng), TINY)
        tau_new = float(phi.sum())
        if config.tau_prior == "gamma":
            log_ratio = (config.a_tau - d_rank * config.alpha) * (np.log(tau_new) - np.log(state.tau))
        else:
            log_ratio = (-config.a_tau - d_rank * config.alpha) * (np.log(tau_new) - np.log(state.tau)) \
                - config.b_tau * (1.0 / tau_new - 1.0 / state.tau)
        if np.log(rng.random()) < log_ratio:
            state.tau = tau_new
            state.zeta = phi / tau_new
    state.zeta = np.maximum(state.zeta, TINY)
    state.zeta /= state.zeta.sum()
    state.tau = _sample_gig(fc_tau(state, config), rng)


def parafac_sweep(
    state: ParafacState, data: RegressionData, config: ParafacPriorConfig, rng, iteration: int = 0
) -> ParafacState:
    """One full Gibbs cycle, updating ``state`` in place (and returning it)."""
    n_modes = len(state.factors)
    block = "margins"
    try:
        comp = _component_predictions(state, data)
        for d in range(state.rank):
            for m in range(n_modes):
                prec, h, psi = fc_margin(d, m, state, data, comp)
                state.factors[m][:, d] = dist.sample_mvn_from_precision(h, prec, rng)
                comp[:, d] = psi @ state.factors[m][:, d]

        block = "tau_zeta"
        _update_tau_zeta(state, config, rng)

        block = "lambda"
        for m in range(n_modes):
            gam = state.factors[m]
            shape = config.a_lambda + gam.shape[0]
            rate = np.sum(np.abs(gam), axis=0) / np.sqrt(state.tau * state.zeta) + config.b_lambda
            state.lam[m] = np.maximum(rng.gamma(shape, 1.0 / rate), TINY)

        block = "w"
        for m in range(n_modes):
            gam = state.factors[m]
            b = gam**2 / (state.tau * state.zeta)
            a = np.broadcast_to(state.lam[m] ** 2, b.shape)
            state.w[m] = np.maximum(dist.sample_gig(0.5, a, b, rng), TINY)

        block = "sigma2"
        fitted = comp.sum(axis=1)
        resid = data.y - fitted - state.mu
        state.sigma2 = max(float(dist.sample_inverse_gamma(
            config.a_sigma + data.n_obs / 2, config.b_sigma + 0.5 * resid @ resid, rng)), TINY)

        block = "mu"
        var = 1.0 / (data.n_obs / state.sigma2 + 1.0 / config.sigma2_mu)
        mean = var * float(np.sum(data.y - fitted)) / state.sigma2
        state.mu = float(rng.normal(mean, np.sqrt(var)))
    except (np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
        raise SamplerError(block, iteration, exc) from exc
    return state


# -- chain output -------------------------------------------------------------


@dataclass
class ChainOutput:
    coefficients: np.ndarray  # (S, q_1, ..., q_M)
    mu: np.ndarray            # (S,)
    sigma2: np.ndarray        # (S,)
    iterations: int
    burn_in: int
    thin: int
    seed: int | None
    model: str
    projection_id: str = ""
    config: dict = field(default_factory=dict)
    # per-draw latent quantities (PARAFAC: factors, zeta, tau, lam, w)
    extras: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.mu.shape[0]

    def flat_coefficients(self) -> np.ndarray:
        """(S, q(M)) in canonical layout."""
        return self.coefficients.reshape(self.n_draws, -1, order="F")

    def posterior_mean(self) -> np.ndarray:
        return self.coefficients.mean(axis=0)

    def subsample(self, n: int) -> "ChainOutput":
        """Keep ``n`` evenly spaced draws."""
        if n >= self.n_draws:
            return self
        idx = np.linspace(0, self.n_draws - 1, n).round().astype(int)
        extras = {k: v[idx] for k, v in self.extras.items()}
        return ChainOutput(self.coefficients[idx], self.mu[idx], self.sigma2[idx], self.iterations,
                           self.burn_in, self.thin, self.seed, self.model, self.projection_id,
                           self.config, extras)

    def manifest(self) -> dict:
        return {
            "model": self.model,
            "iterations": self.iterations,
            "burn_in": self.burn_in,
            "thin": self.thin,
            "seed": self.seed,
            "projection_id": self.projection_id,
            "n_draws": self.n_draws,
            "coefficient_shape": list(self.coefficients.shape[1:]),
            "config": self.config,
            "draws_sha256": self.draws_hash(),
        }

    def draws_hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.coefficients, self.mu, self.sigma2):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def to_csv(self, path: str | Path) -> None:
        """One row per draw: flattened coefficient (canonical layout), mu, sigma2."""
        flat = self.flat_coefficients()
        header = [f"b{k + 1}" for k in range(flat.shape[1])] + ["mu", "sigma2"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for s in range(self.n_draws):
                writer.writerow([repr(float(v)) for v in flat[s]] + [repr(float(self.mu[s])), repr(float(self.sigma2[s]))])

    def save(self, directory: str | Path, stem: str = "chain") -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.to_csv(directory / f"{stem}.csv")
        (directory / f"{stem}.json").write_text(json.dumps(self.manifest(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, directory: str | Path, stem: str = "chain") -> "ChainOutput":
        directory = Path(directory)
        meta = json.loads((directory / f"{stem}.json").read_text())
        rows = np.loadtxt(directory / f"{stem}.csv", delimiter=",", skiprows=1, ndmin=2)
        shape = tuple(meta["coefficient_shape"])
        coefs = rows[:, :-2].reshape((rows.shape[0],) + shape, order="F")
        return cls(coefs, rows[:, -2], rows[:, -1], meta["iterations"], meta["burn_in"],
                   meta["thin"], meta["seed"], meta["model"], meta["projection_id"], meta["config"])


def _n_kept(iterations: int, burn_in: int, thin: int) -> int:
    if iterations < 0 or burn_in < 0 or thin < 1 or burn_in > iterations:
        raise ValueError(f"invalid run lengths: iterations={iterations}, burn_in={burn_in}, thin={thin}")
    return (iterations - burn_in) // thin


def run_parafac_chain(
    data: RegressionData,
    config: ParafacPriorConfig = ParafacPriorConfig(),
    iterations: int = 1000,
    burn_in: int = 200,
    thin: int = 1,
    seed: int | None = 0,
    projection_id: str = "",
    init: ParafacState | None = None,
) -> ChainOutput:
    rng = np.random.default_rng(seed)
    kept = _n_kept(iterations, burn_in, thin)
    state = init.copy() if init is not None else initial_parafac_state(data, config, rng)
    shape = data.shape
    d_rank = config.rank
    coefs = np.empty((kept,) + shape)
    mus, sig = np.empty(kept), np.empty(kept)
    extras = {
        "tau": np.empty(kept),
        "zeta": np.empty((kept, d_rank)),
        "lam": np.empty((kept, len(shape), d_rank)),
    }
    for m, q in enumerate(shape):
        extras[f"factor{m + 1}"] = np.empty((kept, q, d_rank))
        extras[f"w{m + 1}"] = np.empty((kept, q, d_rank))
    k = 0
    for it in range(iterations):
        parafac_sweep(state, data, config, rng, it)
        if it >= burn_in and (it - burn_in) % thin == 0 and k < kept:
            coefs[k] = state.coefficient()
            mus[k], sig[k] = state.mu, state.sigma2
            extras["tau"][k] = state.tau
            extras["zeta"][k] = state.zeta
            extras["lam"][k] = state.lam
            for m in range(len(shape)):
                extras[f"factor{m + 1}"][k] = state.factors[m]
                extras[f"w{m + 1}"][k] = state.w[m]
            k += 1
    return ChainOutput(coefs, mus, sig, iterations, burn_in, thin, seed, "parafac",
                       projection_id, asdict(config), extras)


# -- Gaussian prior ---------------------------------------------------------------


@dataclass(frozen=True)
class GaussianPriorConfig:
    mode_covariances: tuple[np.ndarray, ...]
    a_sigma: float = 3.0
    b_sigma: float = 1.0
    sigma2_mu: float = 1.0

    def __post_init__(self):
        covs = tuple(np.atleast_2d(np.asarray(c, dtype=float)) for c in self.mode_covariances)
        for c in covs:
            if c.shape[0] != c.shape[1] or not np.allclose(c, c.T):
                raise ValueError("mode covariances must be symmetric")
            np.linalg.cholesky(c)  # raises if not positive definite
        object.__setattr__(self, "mode_covariances", covs)
        if not (self.a_sigma > 0 and self.b_sigma > 0 and self.sigma2_mu > 0):
            raise ValueError("hyperparameters must be positive")

    @classmethod
    def isotropic(cls, shape: Sequence[int], variance: float = 1.0, **kw) -> "GaussianPriorConfig":
        """``Sigma_m = variance^(1/M) I`` so that every entry of B has prior variance ``variance``."""
        scale = variance ** (1.0 / len(shape))
        return cls(tuple(scale * np.eye(q) for q in shape), **kw)

    def prior_precision(self) -> np.ndarray:
        """Precision of ``vec(B)``: ``Sigma_M^-1 kron ... kron Sigma_1^-1``."""
        inverses = [np.linalg.inv(c) for c in self.mode_covariances]
        return reduce(lambda acc, s: np.kron(s, acc), inverses[1:], inverses[0])

    def prior_covariance(self) -> np.ndarray:
        covs = list(self.mode_covariances)
        return reduce(lambda acc, s: np.kron(s, acc), covs[1:], covs[0])

    def to_dict(self) -> dict:
        return {"mode_covariances": [c.tolist() for c in self.mode_covariances],
                "a_sigma": self.a_sigma, "b_sigma": self.b_sigma, "sigma2_mu": self.sigma2_mu}


def fc_coefficient(data: RegressionData, mu: float, sigma2: float, prior_precision: np.ndarray,
                   gram: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Precision and mean term of ``vec(B)``: ``X'X/sigma^2 + Sigma0^-1`` and ``X'(y - mu)/sigma^2``."""
    x = data.design()
    if gram is None:
        gram = x.T @ x
    return gram / sigma2 + prior_precision, x.T @ (data.y - mu) / sigma2


def run_gaussian_chain(
    data: RegressionData,
    config: GaussianPriorConfig,
    iterations: int = 1000,
    burn_in: int = 200,
    thin: int = 1,
    seed: int | None = 0,
    projection_id: str = "",
    fix_sigma2: float | None = None,
    fix_mu: float | None = None,
) -> ChainOutput:
    """Cycle ``vec(B) | rest``, ``sigma^2 | rest``, ``mu | rest``.

    ``fix_sigma2`` / ``fix_mu`` hold those parameters at given values (their
    blocks are skipped), which turns the coefficient block into exact
    conjugate sampling.
    """
    rng = np.random.default_rng(seed)
    kept = _n_kept(iterations, burn_in, thin)
    shape = data.shape
    if tuple(c.shape[0] for c in config.mode_covariances) != shape:
        raise ValueError(f"prior covariances do not match coefficient shape {shape}")
    x = data.design()
    gram = x.T @ x
    xty = x.T @ data.y
    x_sum = x.sum(axis=0)
    prior_prec = config.prior_precision()
    t_obs = data.n_obs
    mu = fix_mu if fix_mu is not None else (float(np.mean(data.y)) if t_obs else 0.0)
    sigma2 = fix_sigma2 if fix_sigma2 is not None else (float(np.var(data.y)) if t_obs > 1 else 1.0)
    sigma2 = max(sigma2, TINY)
    coefs = np.empty((kept,) + shape)
    mus, sig = np.empty(kept), np.empty(kept)
    beta = np.zeros(x.shape[1])
    k = 0
    for it in range(iterations):
        block = "coefficient"
        try:
            prec = gram / sigma2 + prior_prec
            h = (xty - mu * x_sum) / sigma2
            beta = dist.sample_mvn_from_precision(h, prec, rng)
            fitted = x @ beta
            if fix_sigma2 is None:
                block = "sigma2"
                resid = data.y - fitted - mu
                sigma2 = max(float(dist.sample_inverse_gamma(
                    config.a_sigma + t_obs / 2, config.b_sigma + 0.5 * resid @ resid, rng)), TINY)
            if fix_mu is None:
                block = "mu"
                var = 1.0 / (t_obs / sigma2 + 1.0 / config.sigma2_mu)
                mu = float(rng.normal(var * float(np.sum(data.y - fitted)) / sigma2, np.sqrt(var)))
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise SamplerError(block, it, exc) from exc
        if it >= burn_in and (it - burn_in) % thin == 0 and k < kept:
            coefs[k] = beta.reshape(shape, order="F")
            mus[k], sig[k] = mu, sigma2
            k += 1
    return ChainOutput(coefs, mus, sig, iterations, burn_in, thin, seed, "gaussian",
                       projection_id, config.to_dict())
