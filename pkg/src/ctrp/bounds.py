"""Embedding-dimension bounds for tensor random projections and an empirical
distortion harness.

All logarithms are natural. Bounds are returned as reals; callers take the
ceiling when they need an integer dimension.

The mode-wise bound evaluated at ``N = 1`` gives a cubic coefficient of
``7/24`` rather than the ``1/3`` of the tensor-wise bound, so the two
formulas do not coincide at order one. Both are implemented as stated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .projection import GtrpSpec, apply, build_gtrp, derive_seed

VARIANTS = ("tensorwise", "modewise", "hypercontractive", "cp", "tt")


class BoundDomainError(ValueError):
    """Raised when a bound's denominator is not positive."""


def _check(eps: float, beta: float, n: float) -> None:
    if not 0 < eps < 1:
        raise BoundDomainError(f"epsilon must lie in (0, 1), got {eps}")
    if not beta > 0:
        raise BoundDomainError(f"beta must be positive, got {beta}")
    if not n >= 2:
        raise BoundDomainError(f"need at least 2 points, got n={n}")


def q0_tensorwise(eps: float, beta: float, n: float) -> float:
    """``(4 + 2 beta) / (eps^2/2 - eps^3/3) * log n``."""
    _check(eps, beta, n)
    denom = eps**2 / 2 - eps**3 / 3
    if denom <= 0:
        raise BoundDomainError(f"eps^2/2 - eps^3/3 = {denom} <= 0")
    return (4 + 2 * beta) / denom * math.log(n)


def q0_modewise(eps: float, beta: float, n: float, order: int) -> float:
    """Bound on ``q(N)`` for a pure mode-wise projection of an order-``N`` tensor."""
    _check(eps, beta, n)
    if order < 1:
        raise BoundDomainError(f"order must be >= 1, got {order}")
    k = 3**order - 1
    denom = eps**2 / k - (3 ** (order + 1) - 2) * eps**3 / (3 * k**3)
    if denom <= 0:
        raise BoundDomainError(f"mode-wise denominator {denom} <= 0 at eps={eps}, N={order}")
    return (4 + 2 * beta) / denom * math.log(n)


def q0_hypercontractive(eps: float, beta: float, n: float, order: int, const: float = 1.0) -> float:
    """``C eps^-2 3^N (2 + beta)^(2N) log^(2N) n``, up to the absolute constant ``C``."""
    _check(eps, beta, n)
    if const <= 0:
        raise BoundDomainError("constant must be positive")
    return const * eps**-2 * 3**order * (2 + beta) ** (2 * order) * math.log(n) ** (2 * order)


def _low_rank_core(eps: float, beta: float, n: float, order: int, rank: int, const: float) -> float:
    _check(eps, beta, n)
    if rank < 1:
        raise BoundDomainError(f"rank must be >= 1, got {rank}")
    if const <= 0:
        raise BoundDomainError("constant must be positive")
    log_term = (2 + beta) * math.log(n) - math.log(2)
    return const * eps**-2 * (1 + 2 / rank) ** order * log_term ** (2 * order)


def q0_cp(eps: float, beta: float, n: float, order: int, rank: int, const: float = 1.0) -> float:
    """CP projection bound; carries an extra ``3^(N-1)`` relative to TT."""
    return 3 ** (order - 1) * _low_rank_core(eps, beta, n, order, rank, const)


def q0_tt(eps: float, beta: float, n: float, order: int, rank: int, const: float = 1.0) -> float:
    return _low_rank_core(eps, beta, n, order, rank, const)


@dataclass(frozen=True)
class BoundQuery:
    epsilon: float
    beta: float
    n: float
    order: int = 1
    variant: str = "tensorwise"
    rank: int = 1
    const: float = 1.0

    def evaluate(self) -> float:
        if self.variant == "tensorwise":
            return q0_tensorwise(self.epsilon, self.beta, self.n)
        if self.variant == "modewise":
            return q0_modewise(self.epsilon, self.beta, self.n, self.order)
        if self.variant == "hypercontractive":
            return q0_hypercontractive(self.epsilon, self.beta, self.n, self.order, self.const)
        if self.variant == "cp":
            return q0_cp(self.epsilon, self.beta, self.n, self.order, self.rank, self.const)
        if self.variant == "tt":
            return q0_tt(self.epsilon, self.beta, self.n, self.order, self.rank, self.const)
        raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")


def bound_curve(eps_grid: Iterable[float], beta: float, n: float, order: int) -> list[dict]:
    """Rows ``{"epsilon", "q0_tensorwise", "q0_modewise"}`` over an epsilon grid."""
    return [
        {
            "epsilon": float(eps),
            "q0_tensorwise": q0_tensorwise(eps, beta, n),
            "q0_modewise": q0_modewise(eps, beta, n, order),
        }
        for eps in eps_grid
    ]


# -- empirical distortion ----------------------------------------------------


@dataclass
class DistortionReport:
    epsilon: float
    n_points: int
    n_pairs: int
    # fraction of pairs preserved within (1 +- eps), one entry per trial
    preserved_fraction: np.ndarray
    worst_ratio_low: np.ndarray
    worst_ratio_high: np.ndarray

    @property
    def trials(self) -> int:
        return len(self.preserved_fraction)

    @property
    def successes(self) -> int:
        """Trials in which every pair was preserved (a JL embedding)."""
        return int(np.sum(self.preserved_fraction == 1.0))

    @property
    def success_rate(self) -> float:
        return self.successes / self.trials if self.trials else float("nan")


def tensorwise_family(input_shape: Sequence[int], q1: int, psi: float = 3.0) -> Callable[[int], GtrpSpec]:
    """Spec factory: seed -> scaled ``R = 0, M = 1`` projection."""
    def make(seed: int) -> GtrpSpec:
        return build_gtrp(input_shape, (q1,), 0, psi=psi, seed=seed, scale_on_apply=True)
    return make


def modewise_family(input_shape: Sequence[int], output_shape: Sequence[int], psi: float = 3.0) -> Callable[[int], GtrpSpec]:
    def make(seed: int) -> GtrpSpec:
        n = len(input_shape)
        return build_gtrp(input_shape, output_shape, n, psi=psi, seed=seed, scale_on_apply=True)
    return make


def pair_distortion_ratios(points: np.ndarray, projected: np.ndarray) -> np.ndarray:
    """Squared-distance ratios ``|f(U)-f(V)|^2 / |U-V|^2`` over all pairs."""
    n = points.shape[0]
    flat = points.reshape(n, -1)
    proj = projected.reshape(n, -1)
    i, j = np.triu_indices(n, k=1)
    orig = np.sum((flat[i] - flat[j]) ** 2, axis=1)
    new = np.sum((proj[i] - proj[j]) ** 2, axis=1)
    return new / orig


def distortion_experiment(
    points: np.ndarray,
    family: Callable[[int], GtrpSpec],
    eps: float,
    trials: int,
    master_seed: int = 0,
) -> DistortionReport:
    """Project a point set with ``trials`` independent scaled projections.

    ``points`` has shape ``(n, p_1, ..., p_N)``; ``family`` maps a seed to a
    projection with ``scale_on_apply`` set.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if n < 2:
        raise ValueError("need at least two points")
    fractions, lows, highs = [], [], []
    for trial in range(trials):
        spec = family(derive_seed(master_seed, trial))
        ratios = pair_distortion_ratios(points, apply(spec, points))
        ok = (ratios >= 1 - eps) & (ratios <= 1 + eps)
        fractions.append(ok.mean())
        lows.append(ratios.min())
        highs.append(ratios.max())
    return DistortionReport(
        epsilon=eps,
        n_points=n,
        n_pairs=math.comb(n, 2),
        preserved_fraction=np.array(fractions),
        worst_ratio_low=np.array(lows),
        worst_ratio_high=np.array(highs),
    )


def expected_isometry(x: np.ndarray, family: Callable[[int], GtrpSpec], draws: int, master_seed: int = 0) -> np.ndarray:
    """Ratios ``|f(x)|^2 / |x|^2`` for ``draws`` independent scaled projections."""
    x = np.asarray(x, dtype=float)
    norm2 = float(np.sum(x**2))
    out = np.empty(draws)
    for k in range(draws):
        out[k] = np.sum(apply(family(derive_seed(master_seed, k)), x) ** 2) / norm2
    return out


__all__ = [
    "BoundDomainError", "BoundQuery", "DistortionReport", "VARIANTS",
    "bound_curve", "distortion_experiment", "expected_isometry",
    "modewise_family", "pair_distortion_ratios", "q0_cp", "q0_hypercontractive",
    "q0_modewise", "q0_tensorwise", "q0_tt", "tensorwise_family",
]
