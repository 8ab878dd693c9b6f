"""Samplers and unnormalized log-densities used by the Gibbs blocks.

Conventions
-----------
* ``Gamma(shape, rate)`` has density proportional to ``x^(shape-1) exp(-rate x)``.
* ``InverseGamma(shape, scale)`` has density proportional to
  ``x^(-shape-1) exp(-scale / x)``.
* ``GIG(p, a, b)`` has density proportional to ``x^(p-1) exp(-(a x + b / x) / 2)``.
  ``b = 0`` is the Gamma(p, a/2) limit, ``a = 0`` the InverseGamma(-p, b/2) limit.

GIG draws use a vectorized rejection sampler. After standardizing to
``y^(lam-1) exp(-omega (y + 1/y) / 2)`` with ``lam = |p| >= 0`` (negative
indices are handled through ``1/X``) the parameter space is split into four
regions:

* ``lam >= 1, omega <= 1/2``: Gamma(lam, omega/2) proposal accepted with
  probability ``exp(-omega / (2 y))``.
* ``lam > 1`` or ``omega > 1``: ratio-of-uniforms with mode shift; the
  bounding rectangle comes from the two positive roots of a cubic.
* ``lam <= 1``, moderate ``omega``: ratio-of-uniforms without mode shift.
* ``lam < 1``, small ``omega``: three-piece hat (constant, power, exponential).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

# floor for variance-like parameters and GIG scale arguments
TINY = 1e-300


class ParameterError(ValueError):
    """Raised when distribution parameters are outside their domain."""


@dataclass(frozen=True)
class GigParams:
    p: float
    a: float
    b: float

    def __post_init__(self):
        if self.a < 0 or self.b < 0:
            raise ParameterError(f"GIG needs a, b >= 0, got a={self.a}, b={self.b}")
        if self.a == 0 and self.b == 0:
            raise ParameterError("GIG with a = b = 0 is improper")
        if self.a == 0 and self.p >= 0:
            raise ParameterError(f"GIG with a = 0 needs p < 0, got p={self.p}")
        if self.b == 0 and self.p <= 0:
            raise ParameterError(f"GIG with b = 0 needs p > 0, got p={self.p}")

    def floored(self) -> "GigParams":
        """Replace a vanishing ``b`` by ``TINY`` where ``b = 0`` would be improper."""
        if self.b == 0 and self.p <= 0:
            return GigParams(self.p, self.a, TINY)
        return self


def gig_logpdf(x, p, a, b):
    """Unnormalized GIG log-density."""
    x = np.asarray(x, dtype=float)
    return (p - 1) * np.log(x) - 0.5 * (a * x + b / x)


def gig_log_normalizer(p, a, b):
    """Log of the integral of ``x^(p-1) exp(-(a x + b/x)/2)`` for ``a, b > 0``."""
    omega = np.sqrt(a * b)
    return np.log(2.0) + np.log(special.kve(p, omega)) - omega + 0.5 * p * np.log(b / a)


def gig_mean(p, a, b):
    omega = np.sqrt(a * b)
    return np.sqrt(b / a) * special.kve(p + 1, omega) / special.kve(p, omega)


# -- standardized GIG regimes -------------------------------------------------


def _log_h(y, lam, omega):
    return (lam - 1) * np.log(y) - 0.5 * omega * (y + 1 / y)


def _rejection_loop(n, propose, rng):
    """Run ``propose(idx, rng) -> (values, accepted)`` until all ``n`` slots accept."""
    out = np.empty(n)
    todo = np.arange(n)
    while todo.size:
        vals, ok = propose(todo, rng)
        out[todo[ok]] = vals[ok]
        todo = todo[~ok]
    return out


def _gig_gamma_hat(lam, omega, rng):
    # density ∝ y^(lam-1) e^(-omega y/2) * e^(-omega/(2y)); the last factor is <= 1
    def propose(idx, rng):
        y = rng.gamma(lam[idx], 2.0 / omega[idx])
        with np.errstate(divide="ignore", over="ignore"):
            ok = np.log(rng.random(idx.size)) <= -0.5 * omega[idx] / y
        return y, ok & (y > 0)
    return _rejection_loop(lam.size, propose, rng)


def _gig_rou_shift(lam, omega, rng):
    # ratio-of-uniforms around the mode m; h is normalized so h(m) = 1
    lm1 = lam - 1
    m = (np.sqrt(lm1**2 + omega**2) + lm1) / omega
    a = -2 * (lam + 1) / omega - m
    b = 2 * lm1 * m / omega - 1
    c = m
    p = b - a**2 / 3
    q = 2 * a**3 / 27 - a * b / 3 + c
    phi = np.arccos(np.clip(-q / 2 * np.sqrt(-27 / p**3), -1.0, 1.0))
    r = np.sqrt(-4 * p / 3)
    x_minus = r * np.cos(phi / 3 + 4 * np.pi / 3) - a / 3
    x_plus = r * np.cos(phi / 3) - a / 3
    log_hm = _log_h(m, lam, omega)
    u_minus = (x_minus - m) * np.exp(0.5 * (_log_h(x_minus, lam, omega) - log_hm))
    u_plus = (x_plus - m) * np.exp(0.5 * (_log_h(x_plus, lam, omega) - log_hm))

    def propose(idx, rng):
        u = u_minus[idx] + (u_plus[idx] - u_minus[idx]) * rng.random(idx.size)
        v = rng.random(idx.size)
        y = u / v + m[idx]
        ok = y > 0
        y_safe = np.where(ok, y, 1.0)
        ok &= 2 * np.log(v) <= _log_h(y_safe, lam[idx], omega[idx]) - log_hm[idx]
        return y_safe, ok
    return _rejection_loop(lam.size, propose, rng)


def _gig_rou_noshift(lam, omega, rng):
    m = omega / (np.sqrt((1 - lam) ** 2 + omega**2) + 1 - lam)
    x_plus = ((1 + lam) + np.sqrt((1 + lam) ** 2 + omega**2)) / omega
    log_hm = _log_h(m, lam, omega)
    u_plus = x_plus * np.exp(0.5 * (_log_h(x_plus, lam, omega) - log_hm))

    def propose(idx, rng):
        u = u_plus[idx] * rng.random(idx.size)
        v = rng.random(idx.size)
        with np.errstate(divide="ignore"):
            y = u / v
        ok = (y > 0) & np.isfinite(y)
        y_safe = np.where(ok, y, 1.0)
        ok &= 2 * np.log(v) <= _log_h(y_safe, lam[idx], omega[idx]) - log_hm[idx]
        return y_safe, ok
    return _rejection_loop(lam.size, propose, rng)


def _gig_three_piece(lam, omega, rng):
    # hat: f(m) on (0, x0], e^-omega y^(lam-1) on (x0, 2/omega], x*^(lam-1) e^(-omega y/2) beyond
    m = omega / ((1 - lam) + np.sqrt((1 - lam) ** 2 + omega**2))
    x0 = omega / (1 - lam)
    x_star = np.maximum(x0, 2 / omega)
    k1 = np.exp(_log_h(m, lam, omega))
    area1 = k1 * x0
    mid = x0 < 2 / omega
    k2 = np.where(mid, np.exp(-omega), 0.0)
    pos = lam > 0
    lam_safe = np.where(pos, lam, 1.0)
    area2_pos = k2 * ((2 / omega) ** lam - x0**lam) / lam_safe
    area2_zero = k2 * np.log(2 / omega**2)
    area2 = np.where(mid, np.where(pos, area2_pos, area2_zero), 0.0)
    k3 = x_star ** (lam - 1)
    area3 = 2 * k3 * np.exp(-x_star * omega / 2) / omega
    total = area1 + area2 + area3

    def propose(idx, rng):
        lm, om = lam[idx], omega[idx]
        u = rng.random(idx.size)
        v = total[idx] * rng.random(idx.size)
        a1, a2 = area1[idx], area2[idx]
        y = np.empty(idx.size)
        log_hat = np.empty(idx.size)
        s1 = v <= a1
        s2 = ~s1 & (v <= a1 + a2)
        s3 = ~(s1 | s2)
        y[s1] = x0[idx][s1] * v[s1] / a1[s1]
        log_hat[s1] = np.log(k1[idx][s1])
        if s2.any():
            vv = v[s2] - a1[s2]
            l2, kk2, xx0 = lm[s2], k2[idx][s2], x0[idx][s2]
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                y_pos = (xx0**l2 + vv * l2 / kk2) ** (1 / np.where(l2 > 0, l2, 1.0))
                y_zero = om[s2] * np.exp(vv * np.exp(om[s2]))
            y[s2] = np.where(l2 > 0, y_pos, y_zero)
            log_hat[s2] = np.log(kk2) + (l2 - 1) * np.log(y[s2])
        if s3.any():
            vv = v[s3] - a1[s3] - a2[s3]
            o3, xs, kk3 = om[s3], x_star[idx][s3], k3[idx][s3]
            y[s3] = -2 / o3 * np.log(np.exp(-xs * o3 / 2) - vv * o3 / (2 * kk3))
            log_hat[s3] = np.log(kk3) - y[s3] * o3 / 2
        ok = (y > 0) & np.isfinite(y)
        y_safe = np.where(ok, y, 1.0)
        ok &= np.log(u) + log_hat <= _log_h(y_safe, lm, om)
        return y_safe, ok
    return _rejection_loop(lam.size, propose, rng)


def _standard_gig(lam: np.ndarray, omega: np.ndarray, rng) -> np.ndarray:
    """Draws from ``y^(lam-1) exp(-omega (y + 1/y)/2)`` for ``lam >= 0, omega > 0``."""
    out = np.empty(lam.shape)
    gamma_hat = (lam >= 1) & (omega <= 0.5)
    shift = ~gamma_hat & ((lam > 1) | (omega > 1))
    small = np.minimum(0.5, 2.0 / 3.0 * np.sqrt(np.clip(1 - lam, 0, None)))
    three_piece = ~gamma_hat & ~shift & (lam < 1) & (omega < small)
    noshift = ~(gamma_hat | shift | three_piece)
    for mask, sampler in (
        (gamma_hat, _gig_gamma_hat),
        (shift, _gig_rou_shift),
        (noshift, _gig_rou_noshift),
        (three_piece, _gig_three_piece),
    ):
        if mask.any():
            out[mask] = sampler(lam[mask], omega[mask], rng)
    return out


def sample_gig(p, a, b, rng: np.random.Generator, size=None) -> np.ndarray | float:
    """Draw from ``GIG(p, a, b)``; parameters broadcast against each other and ``size``.

    Limits ``b = 0`` (with ``p > 0``) and ``a = 0`` (with ``p < 0``) are sampled
    exactly as Gamma and inverse Gamma laws.
    """
    p, a, b = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (p, a, b)))
    if size is not None:
        p, a, b = (np.broadcast_to(v, size) for v in (p, a, b))
    out_shape = p.shape
    p, a, b = (np.atleast_1d(v).ravel() for v in (p, a, b))
    if np.any(a < 0) or np.any(b < 0) or np.any(~np.isfinite(p)):
        raise ParameterError("GIG needs finite p and a, b >= 0")
    gamma_limit = b == 0
    invgamma_limit = (a == 0) & ~gamma_limit
    if np.any(gamma_limit & ((p <= 0) | (a == 0))):
        raise ParameterError("GIG with b = 0 needs p > 0 and a > 0")
    if np.any(invgamma_limit & (p >= 0)):
        raise ParameterError("GIG with a = 0 needs p < 0")
    out = np.empty(p.shape)
    if gamma_limit.any():
        out[gamma_limit] = rng.gamma(p[gamma_limit], 2.0 / a[gamma_limit])
    if invgamma_limit.any():
        pi, bi = p[invgamma_limit], b[invgamma_limit]
        out[invgamma_limit] = (bi / 2.0) / rng.gamma(-pi)
    general = ~(gamma_limit | invgamma_limit)
    if general.any():
        pg, ag, bg = p[general], a[general], b[general]
        lam = np.abs(pg)
        omega = np.sqrt(ag * bg)
        y = _standard_gig(lam, omega, rng)
        y = np.where(pg < 0, 1.0 / y, y)
        out[general] = y * np.sqrt(bg / ag)
    return float(out[0]) if out_shape == () else out.reshape(out_shape)


def sample_gamma(shape, rate, rng: np.random.Generator, size=None):
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    if np.any(shape <= 0) or np.any(rate <= 0):
        raise ParameterError("Gamma needs positive shape and rate")
    return rng.gamma(shape, 1.0 / rate, size=size)


def sample_inverse_gamma(shape, scale, rng: np.random.Generator, size=None):
    shape = np.asarray(shape, dtype=float)
    scale = np.asarray(scale, dtype=float)
    if np.any(shape <= 0) or np.any(scale <= 0):
        raise ParameterError("inverse Gamma needs positive shape and scale")
    return scale / rng.gamma(shape, 1.0, size=size)


def sample_dirichlet(alpha, rng: np.random.Generator) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha <= 0):
        raise ParameterError("Dirichlet needs positive concentrations")
    g = rng.gamma(alpha)
    # tiny concentrations can underflow every component to zero
    while not np.any(g > 0):
        g = rng.gamma(alpha)
    return g / g.sum()


def sample_mvn_from_precision(h: np.ndarray, precision: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw from ``N(P^-1 h, P^-1)`` without forming ``P^-1``."""
    try:
        chol = np.linalg.cholesky(precision)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"precision matrix is not positive definite: {exc}") from None
    mean = _chol_solve(chol, h)
    z = rng.standard_normal(np.shape(h))
    # L^T x = z gives x ~ N(0, (L L^T)^-1)
    return mean + _solve_triangular(chol.T, z, lower=False)


def _solve_triangular(mat, rhs, lower):
    from scipy.linalg import solve_triangular
    return solve_triangular(mat, rhs, lower=lower, check_finite=False)


def _chol_solve(chol, rhs):
    return _solve_triangular(chol.T, _solve_triangular(chol, rhs, lower=True), lower=False)


# -- unnormalized log-densities ------------------------------------------------


def gamma_logpdf(x, shape, rate):
    return (shape - 1) * np.log(x) - rate * x


def inverse_gamma_logpdf(x, shape, scale):
    return -(shape + 1) * np.log(x) - scale / x


def normal_logpdf(x, mean, var):
    """Normalized Gaussian log-density (needed where variances differ across terms)."""
    return -0.5 * (np.log(2 * np.pi * var) + (x - mean) ** 2 / var)


def inverse_gamma_lognorm(x, shape, scale):
    """Normalized inverse Gamma log-density."""
    return shape * np.log(scale) - special.gammaln(shape) + inverse_gamma_logpdf(x, shape, scale)


def gamma_lognorm(x, shape, rate):
    return shape * np.log(rate) - special.gammaln(shape) + gamma_logpdf(x, shape, rate)


def floor_positive(x):
    """Clamp variance-like quantities away from zero."""
    return np.maximum(x, TINY)


__all__ = [
    "GigParams", "ParameterError", "TINY", "floor_positive", "gamma_logpdf",
    "gamma_lognorm", "gig_log_normalizer", "gig_logpdf", "gig_mean",
    "inverse_gamma_lognorm", "inverse_gamma_logpdf", "normal_logpdf",
    "sample_dirichlet", "sample_gamma", "sample_gig", "sample_inverse_gamma",
    "sample_mvn_from_precision",
]
