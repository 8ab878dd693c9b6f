"""Synthetic tensor-regression experiments.

A scenario draws a binary coefficient matrix, Gaussian covariates and
responses ``y = mu0 + <B0, X> + sigma * eps``, fits an ensemble of compressed
regressions on a training split and scores pooled forecasts on a test split.

Coefficient patterns on a ``p1 x p2`` grid (cell centres at ``i + 1/2``):

* ``CI``: annulus, normalized distance to the centre in ``[0.25, 0.4]``;
* ``CR``: a horizontal and a vertical band through the centre, width ``ceil(p/10)``;
* ``L``: one horizontal band through the centre;
* ``B``: the top-left quadrant;
* ``unstructured``: i.i.d. Bernoulli indicator with success probability ``sparsity``;
* ``zero``: all zeros (null model).
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import re
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .ensemble import EnsembleModel, McmcSettings, fit_ensemble
from .gibbs import GaussianPriorConfig, ParafacPriorConfig, RegressionData, run_gaussian_chain
from .projection import GtrpSpec, apply, build_gtrp, identity_spec

PATTERNS = ("CI", "CR", "L", "B", "unstructured", "zero")


def _band(p: int) -> tuple[int, int]:
    """Centred band ``[start, stop)`` of width ``ceil(p/10)``, widened by one
    when needed so that it is symmetric about the centre."""
    w = math.ceil(p / 10)
    if (p - w) % 2:
        w += 1
    start = (p - w) // 2
    return start, start + w


def make_coefficient(pattern: str, shape: Sequence[int], sparsity: float = 0.5, rng=None) -> np.ndarray:
    shape = tuple(int(s) for s in shape)
    if pattern not in PATTERNS:
        raise ValueError(f"unknown pattern {pattern!r}; expected one of {PATTERNS}")
    if len(shape) != 2:
        raise ValueError("coefficient patterns are defined for matrices")
    p1, p2 = shape
    if pattern == "unstructured":
        if not 0 <= sparsity <= 1:
            raise ValueError("sparsity must lie in [0, 1]")
        rng = np.random.default_rng(rng)
        return (rng.random(shape) < sparsity).astype(float)
    if pattern == "zero":
        return np.zeros(shape)
    if min(shape) < 5:
        raise ValueError(f"structured patterns need at least 5 x 5, got {shape}")
    b = np.zeros(shape)
    if pattern == "CI":
        u = (np.arange(p1) + 0.5 - p1 / 2) / p1
        v = (np.arange(p2) + 0.5 - p2 / 2) / p2
        rho = np.sqrt(u[:, None] ** 2 + v[None, :] ** 2)
        b[(rho >= 0.25) & (rho <= 0.4)] = 1.0
    elif pattern == "CR":
        r0, r1 = _band(p1)
        c0, c1 = _band(p2)
        b[r0:r1, :] = 1.0
        b[:, c0:c1] = 1.0
    elif pattern == "L":
        r0, r1 = _band(p1)
        b[r0:r1, :] = 1.0
    elif pattern == "B":
        b[: p1 // 2, : p2 // 2] = 1.0
    return b


def generate_dataset(b0: np.ndarray, n: int, sigma: float, mu0: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Standard-normal covariates and responses ``mu0 + <B0, X_j> + sigma eps_j``."""
    rng = np.random.default_rng(rng)
    b0 = np.asarray(b0, dtype=float)
    x = rng.standard_normal((n,) + b0.shape)
    y = mu0 + np.tensordot(x, b0, axes=b0.ndim) + sigma * rng.standard_normal(n)
    return x, y


# -- metrics ------------------------------------------------------------------


def distance_to_mean(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return (y - y.mean()) ** 2


def rmse_per_point(y: np.ndarray, predictions: np.ndarray) -> np.ndarray:
    """RMSE of each test point across projections; ``predictions`` is ``(L, n)``."""
    preds = np.atleast_2d(np.asarray(predictions, dtype=float))
    return np.sqrt(np.mean((np.asarray(y, dtype=float)[None, :] - preds) ** 2, axis=0))


def bias_variance_decomposition(y: np.ndarray, predictions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Variance and squared-bias shares of the per-point MSE across projections.

    ``MSE_j = var_l(yhat_j) + (y_j - mean_l yhat_j)^2`` exactly (population
    variance). Points with zero MSE get ``nan`` shares.
    """
    preds = np.atleast_2d(np.asarray(predictions, dtype=float))
    if preds.shape[0] < 2:
        raise ValueError("decomposition needs at least two projections")
    y = np.asarray(y, dtype=float)
    var = preds.var(axis=0)
    bias2 = (y - preds.mean(axis=0)) ** 2
    mse = var + bias2
    with np.errstate(invalid="ignore", divide="ignore"):
        return var / mse, bias2 / mse


def efficiency_score(rmse: float, cost_hours: float) -> float:
    if not (rmse > 0 and cost_hours > 0):
        raise ValueError("rmse and cost must be positive")
    return 1.0 / (rmse * cost_hours)


def rmse(y: np.ndarray, yhat: np.ndarray) -> float:
    return float(np.sqrt(np.mean((np.asarray(y) - np.asarray(yhat)) ** 2)))


# -- projections from a compression rate ------------------------------------------


_MW_PATTERN = re.compile(r"^MW(?:\((\d+(?:\s*,\s*\d+)*)\))?$")


def parse_projection_type(kind: str) -> tuple[str, tuple[int, ...]]:
    """``"TW"`` -> ("TW", ()), ``"MW(1,2)"`` -> ("MW", (0, 1)) with zero-based preserved modes."""
    kind = kind.strip().upper()
    if kind == "TW":
        return "TW", ()
    m = _MW_PATTERN.match(kind)
    if not m:
        raise ValueError(f"unknown projection type {kind!r}")
    preserved = tuple(sorted({int(v) - 1 for v in m.group(1).split(",")})) if m.group(1) else ()
    if any(k < 0 for k in preserved):
        raise ValueError("mode numbers are one-based")
    return "MW", preserved


def compressed_shape(shape: Sequence[int], r: float, kind: str) -> tuple[int, ...]:
    """Output shape for compression rate ``r``.

    TW: ``(round(r * p(N)),)``. MW: preserved modes keep ``p_m``; the others
    get ``round(p_m * r**(1/k))`` with ``k`` the number of compressed modes.
    """
    if not 0 < r <= 1:
        raise ValueError(f"compression rate must lie in (0, 1], got {r}")
    shape = tuple(int(s) for s in shape)
    family, preserved = parse_projection_type(kind)
    if family == "TW":
        return (max(1, round(r * math.prod(shape))),)
    if any(k >= len(shape) for k in preserved):
        raise ValueError(f"preserved mode out of range for {len(shape)} modes")
    free = [m for m in range(len(shape)) if m not in preserved]
    if not free:
        return shape
    factor = r ** (1.0 / len(free))
    return tuple(shape[m] if m in preserved else max(1, round(shape[m] * factor)) for m in range(len(shape)))


def projection_factory(shape: Sequence[int], r: float, kind: str, psi: float):
    """Map a seed to a projection of the requested type and rate."""
    shape = tuple(int(s) for s in shape)
    family, preserved = parse_projection_type(kind)
    out = compressed_shape(shape, r, kind)

    def make(seed: int) -> GtrpSpec:
        if family == "TW":
            return build_gtrp(shape, out, 0, psi=psi, seed=seed, kind=kind)
        return build_gtrp(shape, out, len(shape), psi=psi, seed=seed, preserve_modes=preserved, kind=kind)

    return make


# -- scenarios ---------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioConfig:
    coefficient: str = "CR"
    shape: tuple[int, ...] = (20, 20)
    n_train: int = 1000
    n_test: int = 500
    sigma: float = 1.0
    mu0: float = 0.0
    r: float = 0.36
    psi: float = 3.0
    projection_type: str = "MW"
    L: int = 10
    seed: int = 0
    sparsity: float = 0.5
    prior: str = "parafac"
    rank: int = 5
    prior_variance: float = 1.0  # Gaussian prior only
    iterations: int = 1000
    burn_in: int = 200
    thin: int = 1

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        if not 0 < self.r <= 1:
            raise ValueError("r must lie in (0, 1]")
        if self.n_train < 1 or self.n_test < 1 or self.L < 1:
            raise ValueError("n_train, n_test and L must be >= 1")
        if self.prior not in ("parafac", "gaussian"):
            raise ValueError(f"unknown prior {self.prior!r}")
        parse_projection_type(self.projection_type)

    def prior_config(self, out_shape):
        if self.prior == "parafac":
            return ParafacPriorConfig(rank=self.rank)
        return GaussianPriorConfig.isotropic(out_shape, self.prior_variance)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shape"] = list(self.shape)
        return d


def scenario_data(config: ScenarioConfig):
    """Coefficient, training and test sets. The test set is drawn first, so
    it does not depend on ``n_train``."""
    ss = np.random.SeedSequence([int(config.seed), 7])
    coef_rng, test_rng, train_rng = (np.random.default_rng(s) for s in ss.spawn(3))
    b0 = make_coefficient(config.coefficient, config.shape, config.sparsity, coef_rng)
    x_test, y_test = generate_dataset(b0, config.n_test, config.sigma, config.mu0, test_rng)
    x_train, y_train = generate_dataset(b0, config.n_train, config.sigma, config.mu0, train_rng)
    return b0, (x_train, y_train), (x_test, y_test)


def _cpu_seconds() -> float:
    # process_time has sub-tick resolution; os.times adds finished worker processes
    t = os.times()
    return time.process_time() + t.children_user + t.children_system


@dataclass
class ScenarioReport:
    config: dict
    rmse: float
    member_rmse: np.ndarray         # (L,)
    rmse_per_point: np.ndarray      # (n_test,)
    distance_to_mean: np.ndarray    # (n_test,)
    variance_share: np.ndarray | None
    bias_share: np.ndarray | None
    cpu_hours: float
    wall_seconds: float
    efficiency: float
    weights: np.ndarray
    y_test: np.ndarray
    pooled: np.ndarray
    member_predictions: np.ndarray  # (L, n_test)
    compressed_shape: tuple[int, ...] = ()

    def content_hash(self) -> str:
        h = hashlib.sha256(json.dumps(self.config, sort_keys=True).encode())
        for arr in (self.pooled, self.member_predictions, self.weights):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def summary(self) -> dict:
        return {
            "rmse": self.rmse,
            "mean_member_rmse": float(self.member_rmse.mean()),
            "cpu_hours": self.cpu_hours,
            "wall_seconds": self.wall_seconds,
            "efficiency": self.efficiency,
            "weights": self.weights.tolist(),
            "compressed_shape": list(self.compressed_shape),
            "mean_variance_share": None if self.variance_share is None else float(np.nanmean(self.variance_share)),
            "mean_bias_share": None if self.bias_share is None else float(np.nanmean(self.bias_share)),
        }

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "report.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            s = self.summary()
            writer.writerow(["metric", "value"])
            for k in ("rmse", "mean_member_rmse", "cpu_hours", "efficiency", "mean_variance_share", "mean_bias_share"):
                writer.writerow([k, repr(s[k])])
        with open(directory / "predictions.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            n_members = self.member_predictions.shape[0]
            writer.writerow(["index", "y", "pooled", "rmse_across_projections", "distance_to_mean",
                             "variance_share", "bias_share"] + [f"member{l + 1}" for l in range(n_members)])
            for j in range(len(self.y_test)):
                vs = "" if self.variance_share is None else repr(float(self.variance_share[j]))
                bs = "" if self.bias_share is None else repr(float(self.bias_share[j]))
                writer.writerow([j + 1, repr(float(self.y_test[j])), repr(float(self.pooled[j])),
                                 repr(float(self.rmse_per_point[j])), repr(float(self.distance_to_mean[j])), vs, bs]
                                + [repr(float(v)) for v in self.member_predictions[:, j]])


def run_scenario(config: ScenarioConfig, workers: int | None = None) -> ScenarioReport:
    """Generate data, fit an ensemble of compressed regressions and score it."""
    _, (x_train, y_train), (x_test, y_test) = scenario_data(config)
    factory = projection_factory(config.shape, config.r, config.projection_type, config.psi)
    out_shape = compressed_shape(config.shape, config.r, config.projection_type)
    prior = config.prior_config(out_shape)
    mcmc = McmcSettings(config.iterations, config.burn_in, config.thin)

    wall0, cpu0 = time.perf_counter(), _cpu_seconds()
    try:
        model = fit_ensemble(x_train, y_train, factory, config.L, prior, mcmc, config.seed, workers)
    except Exception as exc:
        raise RuntimeError(f"scenario {config.coefficient}/{config.projection_type} seed {config.seed}: {exc}") from exc
    cpu_hours = (_cpu_seconds() - cpu0) / 3600
    wall = time.perf_counter() - wall0
    return score_ensemble(model, config.to_dict(), x_test, y_test, cpu_hours, wall, out_shape)


def score_ensemble(model: EnsembleModel, config: dict, x_test, y_test, cpu_hours: float,
                   wall: float, out_shape=()) -> ScenarioReport:
    member = model.member_means(x_test).T  # (L, n_test)
    pooled = model.weights @ member
    score = rmse(y_test, pooled)
    if member.shape[0] >= 2:
        var_share, bias_share = bias_variance_decomposition(y_test, member)
    else:
        var_share = bias_share = None
    return ScenarioReport(
        config=config,
        rmse=score,
        member_rmse=np.sqrt(np.mean((member - y_test[None, :]) ** 2, axis=1)),
        rmse_per_point=rmse_per_point(y_test, member),
        distance_to_mean=distance_to_mean(y_test),
        variance_share=var_share,
        bias_share=bias_share,
        cpu_hours=cpu_hours,
        wall_seconds=wall,
        efficiency=efficiency_score(score, cpu_hours) if cpu_hours > 0 and score > 0 else float("nan"),
        weights=model.weights,
        y_test=np.asarray(y_test),
        pooled=pooled,
        member_predictions=member,
        compressed_shape=tuple(out_shape),
    )


# -- timing benchmark -------------------------------------------------------------


@dataclass
class BenchRow:
    model: str
    r: float
    cpu_hours: float
    rmse: float
    efficiency_score: float
    wall_seconds: float = 0.0


def _timed_gaussian_fit(spec: GtrpSpec, x, y, x_test, y_test, variance, iterations, burn_in, seed):
    cpu0, wall0 = _cpu_seconds(), time.perf_counter()
    data = RegressionData(apply(spec, x), y)
    prior = GaussianPriorConfig.isotropic(spec.output_shape, variance)
    chain = run_gaussian_chain(data, prior, iterations, burn_in, 1, seed, spec.content_hash()[:16])
    cpu = (_cpu_seconds() - cpu0) / 3600
    wall = time.perf_counter() - wall0
    z_test = apply(spec, x_test).reshape(len(y_test), -1, order="F")
    pred = z_test @ chain.flat_coefficients().mean(axis=0) + chain.mu.mean()
    return cpu, wall, rmse(y_test, pred)


def bench(
    shape: Sequence[int] = (60, 60),
    n_train: int = 2000,
    n_test: int = 500,
    rates: Sequence[float] = (0.09, 0.16, 0.25, 0.36),
    coefficient: str = "CR",
    projection_type: str = "MW",
    psi: float = 3.0,
    iterations: int = 1000,
    burn_in: int = 200,
    prior_variance: float = 1.0,
    sigma: float = 1.0,
    mu0: float = 0.0,
    seed: int = 0,
    include_baseline: bool = True,
) -> list[BenchRow]:
    """CPU cost and accuracy of single Gaussian-prior fits: compressed (CBTR)
    at each rate and, optionally, uncompressed (BTR, identity projection)."""
    cfg = ScenarioConfig(coefficient=coefficient, shape=tuple(shape), n_train=n_train, n_test=n_test,
                         sigma=sigma, mu0=mu0, seed=seed, psi=psi)
    _, (x, y), (x_test, y_test) = scenario_data(cfg)
    rows = []
    for r in rates:
        spec = projection_factory(shape, r, projection_type, psi)(seed)
        cpu, wall, err = _timed_gaussian_fit(spec, x, y, x_test, y_test, prior_variance, iterations, burn_in, seed)
        rows.append(BenchRow("CBTR", float(r), cpu, err, efficiency_score(err, cpu), wall))
    if include_baseline:
        spec = identity_spec(shape)
        cpu, wall, err = _timed_gaussian_fit(spec, x, y, x_test, y_test, prior_variance, iterations, burn_in, seed)
        rows.append(BenchRow("BTR", 1.0, cpu, err, efficiency_score(err, cpu), wall))
    return rows


def write_bench_csv(path: str | Path, rows: Sequence[BenchRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "r", "cpu_hours", "rmse", "efficiency_score"])
        for row in rows:
            writer.writerow([row.model, repr(row.r), repr(row.cpu_hours), repr(row.rmse), repr(row.efficiency_score)])
