"""Shared building blocks of the OAMP iteration.

One iteration splits into a linear estimator that decorrelates the residual,
a symbol-wise MMSE denoiser under a spike-plus-constellation prior, and
moment-matching updates of the interface variances. All likelihood work is
done in the log domain with per-entry shifts, so tiny effective variances are
safe.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.stats import norm

from .exceptions import ConfigurationError
from .kernels import expit_stable, likelihood_stats, logit_clipped
from .model import Constellation, SpreadingMatrix

__all__ = [
    "Likelihoods",
    "symbol_likelihoods",
    "linear_estimate",
    "posterior_sparsity",
    "posterior_moments",
    "clamp_mean_variance",
    "nonlinear_estimate",
    "empirical_tau_variance",
    "sparsity_init",
    "noise_var_init",
    "GAMMA_FLOOR",
    "V_FLOOR",
    "TAU_FLOOR",
]

GAMMA_FLOOR = 1e-12
V_FLOOR = 1e-12
TAU_FLOOR = 1e-30
LAMBDA_EPS = 1e-12


@dataclass(eq=False)
class Likelihoods:
    """Per-entry symbol likelihood table in shifted log form.

    log_shifted[k, t, l] has its maximum over l at zero; offset[k, t] is the
    subtracted maximum, so the true log weight is log_shifted + offset. The
    shift cancels in posterior ratios and is restored where the absolute
    scale matters (activity evidence).
    """

    log_shifted: np.ndarray
    offset: np.ndarray

    @property
    def evidence(self) -> np.ndarray:
        """log of the mean true likelihood over symbols."""
        w = np.exp(self.log_shifted)
        return self.offset + np.log(w.mean(axis=-1))

    def shifted_by(self, delta: np.ndarray) -> "Likelihoods":
        """Equivalent table with the stored split moved by delta."""
        delta = np.asarray(delta)[..., None]
        return Likelihoods(
            log_shifted=self.log_shifted + delta,
            offset=self.offset - delta[..., 0],
        )


def symbol_likelihoods(r: np.ndarray, tau: np.ndarray, constellation: Constellation) -> Likelihoods:
    """Likelihood of each constellation symbol for every entry of r.

    The weight of symbol a is exp(-(|a|^2 - 2 Re(a^* r)) / tau); tau is one
    effective variance per column of r.
    """
    r = np.asarray(r, dtype=np.complex128)
    tau = np.maximum(np.asarray(tau, dtype=np.float64), TAU_FLOOR)
    points = constellation.points
    pa2 = points.real**2 + points.imag**2
    log_q = -(
        pa2[None, None, :]
        - 2.0 * (r.real[..., None] * points.real + r.imag[..., None] * points.imag)
    ) / tau[None, :, None]
    offset = log_q.max(axis=-1)
    return Likelihoods(log_shifted=log_q - offset[..., None], offset=offset)


def linear_estimate(
    u: np.ndarray,
    v: np.ndarray,
    Y: np.ndarray,
    codes: SpreadingMatrix,
    sigma2: float,
    residual: np.ndarray | None = None,
):
    """Decorrelated linear stage.

    Returns (r, tau) with r = u + (K/M) S^H (Y - S u) and per-column
    tau = ((K - M)/M) v + (K/M) sigma2. A precomputed residual Y - S u may
    be passed to avoid one forward application.
    """
    K = codes.n_codes
    M = codes.n_obs
    if residual is None:
        residual = Y - codes.forward(u)
    r = u + (K / M) * codes.adjoint(residual)
    tau = np.maximum((K - M) / M * np.asarray(v, dtype=np.float64) + (K / M) * sigma2, TAU_FLOOR)
    return r, tau


def posterior_sparsity(mix: np.ndarray, lik: Likelihoods) -> np.ndarray:
    """Posterior probability that an entry is nonzero.

    mix is the prior nonzero probability (sparsity ratio or its extrinsic
    replacement), broadcastable against the entry grid. Computed as a
    logistic of logit(mix) + evidence; exact 0/1 priors pin the posterior
    regardless of the evidence.
    """
    mix = np.broadcast_to(np.asarray(mix, dtype=np.float64), lik.offset.shape)
    pi = expit_stable(logit_clipped(mix) + lik.evidence)
    return np.where(mix <= 0.0, 0.0, np.where(mix >= 1.0, 1.0, pi))


def posterior_moments(pi: np.ndarray, lik: Likelihoods, constellation: Constellation):
    """Posterior mean and variance of each entry given nonzero probability pi."""
    points = constellation.points
    pa2 = points.real**2 + points.imag**2
    w = np.exp(lik.log_shifted)
    sw = w.sum(axis=-1)
    sym_mean = (w * points).sum(axis=-1) / sw
    sym_pow = (w * pa2).sum(axis=-1) / sw
    mu = pi * sym_mean
    gamma = np.maximum(pi * sym_pow - (mu.real**2 + mu.imag**2), 0.0)
    return mu, gamma


def clamp_mean_variance(gamma_bar: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """Keep the column-mean posterior variance inside (0, tau)."""
    return np.minimum(np.maximum(gamma_bar, GAMMA_FLOOR), (1.0 - 1e-6) * tau)


def nonlinear_estimate(mu: np.ndarray, r: np.ndarray, gamma_bar: np.ndarray, tau: np.ndarray):
    """Divergence-free recombination of the denoised mean with its input.

    Returns (u, v): u = C (mu - (gamma_bar/tau) r) with C = tau/(tau -
    gamma_bar), and v = 1 / (1/gamma_bar - 1/tau) floored away from zero.
    gamma_bar is clamped into (0, tau) first.
    """
    gb = clamp_mean_variance(np.asarray(gamma_bar, dtype=np.float64), tau)
    C = tau / (tau - gb)
    u = C * (mu - (gb / tau) * r)
    v = np.maximum(gb * tau / (tau - gb), V_FLOOR)
    return u, v


def empirical_tau_variance(
    Y: np.ndarray, codes: SpreadingMatrix, u: np.ndarray, sigma2: float,
    residual: np.ndarray | None = None, floor: float = V_FLOOR
) -> np.ndarray:
    """Residual-based per-column signal variance estimate.

    v_t = max((||y_t - S u_t||^2 - M sigma2) / M, floor). Useful in place of
    the model-based variance when observations are scarce.
    """
    if residual is None:
        residual = Y - codes.forward(u)
    M = codes.n_obs
    power = np.sum(residual.real**2 + residual.imag**2, axis=0)
    return np.maximum((power - M * sigma2) / M, floor)


# ---------------------------------------------------------------------------
# hyperparameter initialisation


def _init_objective(c: float, M: int, K: int) -> float:
    g = (1.0 + c) ** 2 * norm.cdf(-c) - c * norm.pdf(c)
    den = 1.0 + c * c - 2.0 * g
    if den <= 1e-9:
        # the ratio has a pole where the denominator crosses zero; only the
        # positive-denominator branch yields a valid sparsity level
        return -np.inf
    return (1.0 - 2.0 * K * g / M) / den


def sparsity_init(n_obs: int, n_codes: int) -> float:
    """Data-free initial sparsity ratio from the observation ratio M/K.

    Maximises a normal-tail expression of the undercompleteness over the
    threshold parameter c > 0; the result is the same for every entry.
    """
    if not 1 <= n_obs <= n_codes:
        raise ConfigurationError("need 1 <= n_obs <= n_codes")
    grid = np.logspace(-2, 1.6, 400)
    vals = np.array([_init_objective(c, n_obs, n_codes) for c in grid])
    i = int(np.argmax(vals))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, len(grid) - 1)]
    res = minimize_scalar(
        lambda c: -_init_objective(c, n_obs, n_codes),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-12},
    )
    best = max(vals[i], _init_objective(res.x, n_obs, n_codes))
    lam = (n_obs / n_codes) * best
    return float(np.clip(lam, LAMBDA_EPS, 1.0 - LAMBDA_EPS))


def noise_var_init(Y: np.ndarray, n_obs: int, snr_guess: float = 100.0) -> float:
    """Initial noise variance from the received energy and a nominal SNR."""
    T = Y.shape[1]
    return float(np.sum(Y.real**2 + Y.imag**2) / T / ((snr_guess + 1.0) * n_obs))
