"""Joint activity and data detectors built on the OAMP iteration.

Two structure-learning flavours share one engine:

* SSL (simplified): the sparsity ratio of each device is refitted every
  iteration from the posterior nonzero probabilities, averaged over the
  symbols of the slot.
* ASL (accurate): each symbol instead receives an extrinsic activity
  message formed from the evidence of the other symbols in the slot,
  which is more robust to a poor initial sparsity ratio.

Both learn the noise variance alongside. With a single symbol per slot the
extrinsic exchange is empty and ASL degenerates to SSL exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import core
from .exceptions import ConfigurationError, NumericalFailure
from .kernels import expit_stable, likelihood_stats, logit_clipped
from .model import Constellation, SpreadingMatrix

__all__ = [
    "DetectorConfig",
    "DetectorTrace",
    "DetectionResult",
    "detect_ssl",
    "detect_asl",
    "decide_activity",
    "activity_message",
    "extrinsic_sparsity",
    "em_update_sparsity_ssl",
    "em_update_sparsity_asl",
    "em_update_noise",
    "init_hyperparams",
]


@dataclass(frozen=True)
class DetectorConfig:
    """Knobs of the OAMP detectors.

    empirical_variance switches the model-based interface variance to a
    residual-energy estimate (helps when observations are scarce).
    lambda_init / sigma2_init override the data-driven initialisation.
    sigma2_known freezes the noise variance at sigma2_init instead of
    refitting it each iteration (for runs where it is genuinely known).
    tol = 0 disables early stopping. record_history keeps a copy of the
    denoised mean per iteration for diagnostics.
    """

    max_iters: int = 50
    tol: float = 1e-10
    empirical_variance: bool = False
    lambda_init: float | None = None
    sigma2_init: float | None = None
    sigma2_known: bool = False
    snr_guess: float = 100.0
    record_history: bool = False


@dataclass(eq=False)
class DetectorTrace:
    """Per-iteration interface quantities, one row per iteration."""

    tau: np.ndarray  # (iters, T)
    v: np.ndarray  # (iters, T)
    sigma2: np.ndarray  # (iters,)
    mean_lambda: np.ndarray  # (iters,)
    mean_xi: np.ndarray | None = None  # (iters,) accurate structure only
    mu_history: list | None = None


@dataclass(eq=False)
class DetectionResult:
    """Output of one detector run."""

    x_hat: np.ndarray  # (K, T) posterior-mean signal estimate
    sparsity_ratio: np.ndarray  # (K,) final activity score in [0, 1]
    support: np.ndarray  # sorted indices scoring above 1/2
    indicators: np.ndarray  # (K,) 0/1
    iterations: int
    sigma2: float
    trace: DetectorTrace
    detector: str


def decide_activity(score: np.ndarray) -> np.ndarray:
    """Threshold activity scores at 1/2; exact ties count as inactive."""
    return (np.asarray(score) > 0.5).astype(np.int8)


# ---------------------------------------------------------------------------
# structure-learning updates (granular forms used by tests and state
# evolution; the engine below computes the same quantities in bulk)


def activity_message(lik: core.Likelihoods) -> np.ndarray:
    """Per-entry activity probability implied by the evidence alone."""
    return expit_stable(lik.evidence)


def extrinsic_sparsity(lambda_k: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Combine each device's prior with the messages of the other symbols.

    For symbol t the message eta[t] is left out, so the result stays useful
    when one symbol's message is wrong. Computed in the logit domain; a
    simultaneous hard 0 and hard 1 among the other messages cancel, which
    resolves the 0/0 corner to the prior itself. With one symbol the result
    is the prior.
    """
    lam_logit = logit_clipped(np.asarray(lambda_k, dtype=np.float64))
    eta_logit = logit_clipped(np.asarray(eta, dtype=np.float64))
    total = eta_logit.sum(axis=-1, keepdims=True)
    return expit_stable(lam_logit[..., None] + (total - eta_logit))


def em_update_sparsity_ssl(pi: np.ndarray) -> np.ndarray:
    """Refit the per-device sparsity ratio as the symbol-mean posterior."""
    return pi.mean(axis=-1)


def em_update_sparsity_asl(xi: np.ndarray) -> np.ndarray:
    """Refit the per-device sparsity ratio as the symbol-mean extrinsic."""
    return xi.mean(axis=-1)


def em_update_noise(
    Y: np.ndarray,
    codes: SpreadingMatrix,
    mu: np.ndarray,
    gamma_bar: np.ndarray,
    residual: np.ndarray | None = None,
) -> float:
    """Refit the noise variance from the fit residual plus posterior spread."""
    if residual is None:
        residual = Y - codes.forward(mu)
    M = codes.n_obs
    per_col = np.sum(residual.real**2 + residual.imag**2, axis=0) / M
    return float(np.mean(per_col + gamma_bar))


def init_hyperparams(Y: np.ndarray, codes: SpreadingMatrix, config: DetectorConfig):
    """Initial sparsity ratio and noise variance, honouring overrides."""
    lam0 = config.lambda_init
    if lam0 is None:
        lam0 = core.sparsity_init(codes.n_obs, codes.n_codes)
    sigma2 = config.sigma2_init
    if sigma2 is None:
        sigma2 = core.noise_var_init(Y, codes.n_obs, config.snr_guess)
    return float(lam0), float(sigma2)


# ---------------------------------------------------------------------------
# engine


def _run_oamp(
    Y: np.ndarray,
    codes: SpreadingMatrix,
    constellation: Constellation,
    config: DetectorConfig,
    structure: str,
    name: str,
    pinned_pi: np.ndarray | None = None,
    pinned_sigma2: float | None = None,
) -> DetectionResult:
    if config.max_iters < 1:
        raise ConfigurationError("need at least one iteration")
    if config.tol < 0:
        raise ConfigurationError("tolerance must be non-negative")
    if pinned_sigma2 is None and config.sigma2_known:
        if config.sigma2_init is None:
            raise ConfigurationError("sigma2_known requires sigma2_init")
        pinned_sigma2 = float(config.sigma2_init)
    M, T = Y.shape
    K = codes.n_codes
    points = constellation.points
    points_abs2 = points.real**2 + points.imag**2

    lam0, sigma2 = init_hyperparams(Y, codes, config)
    if pinned_sigma2 is not None:
        sigma2 = float(pinned_sigma2)
    lam_kt = np.full((K, T), lam0)  # simplified structure
    lam_k = np.full(K, lam0)  # accurate structure
    u = np.zeros((K, T), dtype=np.complex128)
    v = np.ones(T)
    mu_prev = None
    pi = np.full((K, T), lam0)

    tr_tau = []
    tr_v = []
    tr_sigma2 = []
    tr_lam = []
    tr_xi = []
    history = [] if config.record_history else None

    n_done = 0
    for it in range(1, config.max_iters + 1):
        residual_u = Y - codes.forward(u)
        if config.empirical_variance and it > 1:
            # iteration one keeps the unit initialisation; the residual only
            # reflects the estimate once u has been formed
            v = core.empirical_tau_variance(Y, codes, u, sigma2, residual=residual_u)
        r, tau = core.linear_estimate(u, v, Y, codes, sigma2, residual=residual_u)

        evidence, sym_mean, sym_pow = likelihood_stats(r, tau, points, points_abs2)
        if pinned_pi is not None:
            pi = pinned_pi
            xi = None
        elif structure == "simplified":
            pi = expit_stable(logit_clipped(lam_kt) + evidence)
            xi = None
        else:
            total = evidence.sum(axis=1, keepdims=True)
            mix_logit = logit_clipped(lam_k)[:, None] + (total - evidence)
            pi = expit_stable(mix_logit + evidence)
            xi = expit_stable(mix_logit)
        mu = pi * sym_mean
        gamma = np.maximum(pi * sym_pow - (mu.real**2 + mu.imag**2), 0.0)
        u, v = core.nonlinear_estimate(mu, r, gamma.mean(axis=0), tau)
        gamma_bar = core.clamp_mean_variance(gamma.mean(axis=0), tau)

        if pinned_pi is None:
            if structure == "simplified":
                lam_k = em_update_sparsity_ssl(pi)
                lam_kt = np.broadcast_to(lam_k[:, None], (K, T))
            elif T > 1:
                lam_k = em_update_sparsity_asl(xi)
            else:
                # a single symbol has no extrinsic information; fall back to
                # the posterior refit, which matches the simplified update
                lam_k = em_update_sparsity_ssl(pi)
        if pinned_sigma2 is None:
            sigma2 = em_update_noise(Y, codes, mu, gamma_bar)

        tr_tau.append(tau.copy())
        tr_v.append(np.broadcast_to(v, (T,)).copy())
        tr_sigma2.append(sigma2)
        tr_lam.append(float(lam_k.mean()) if pinned_pi is None else float(pi.mean()))
        if structure == "accurate" and xi is not None:
            tr_xi.append(float(xi.mean()))
        if history is not None:
            history.append(mu.copy())

        if not (np.all(np.isfinite(mu)) and np.isfinite(sigma2) and np.all(np.isfinite(v))):
            raise NumericalFailure(f"{name}: non-finite update at iteration {it}", iteration=it)
        n_done = it
        if mu_prev is not None and config.tol > 0:
            delta = mu - mu_prev
            if np.mean(delta.real**2 + delta.imag**2) < config.tol:
                mu_prev = mu
                break
        mu_prev = mu

    if pinned_pi is not None:
        score = pinned_pi[:, 0].astype(np.float64)
    else:
        score = lam_k
    indicators = decide_activity(score)
    trace = DetectorTrace(
        tau=np.array(tr_tau),
        v=np.array(tr_v),
        sigma2=np.array(tr_sigma2),
        mean_lambda=np.array(tr_lam),
        mean_xi=np.array(tr_xi) if tr_xi else None,
        mu_history=history,
    )
    return DetectionResult(
        x_hat=mu,
        sparsity_ratio=np.asarray(score, dtype=np.float64).copy(),
        support=np.flatnonzero(indicators).astype(np.int64),
        indicators=indicators,
        iterations=n_done,
        sigma2=float(sigma2),
        trace=trace,
        detector=name,
    )


def detect_ssl(
    Y: np.ndarray,
    codes: SpreadingMatrix,
    constellation: Constellation,
    config: DetectorConfig = DetectorConfig(),
) -> DetectionResult:
    """Detector with the simplified (posterior-refit) structure learning."""
    return _run_oamp(Y, codes, constellation, config, "simplified", "ssl")


def detect_asl(
    Y: np.ndarray,
    codes: SpreadingMatrix,
    constellation: Constellation,
    config: DetectorConfig = DetectorConfig(),
) -> DetectionResult:
    """Detector with the accurate (extrinsic) structure learning."""
    return _run_oamp(Y, codes, constellation, config, "accurate", "asl")
